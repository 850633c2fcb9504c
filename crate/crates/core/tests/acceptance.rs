//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary (`harness = false`).

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use grbf::experiment::{run_experiment, ExperimentConfig, ExperimentKind, PointSummary};
use grbf::linalg::{max_abs, real_trace, CMat, CVec, C64};
use grbf::linksim::{empirical_sinr, LinkConfig, UserLinkStats};
use grbf::ostbc::{build_code, CODE_DIMENSIONS};
use grbf::pipeline::{max_constraints_for, phase_rotate, relax, solve_downlink, SolveOptions};
use grbf::randomize::{randomization_search, RANDOMIZATION_K};
use grbf::rankred::{max_row_drift, rank_reduce};
use grbf::scenario::presets::{self, Geometry};
use grbf::scenario::{linear_to_db, Scenario};
use grbf::sdr::{self, Tolerances};
use grbf::Error;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    let timing = if in_time { String::new() } else { format!(" — over the {:.0?} budget", limit) };
    println!(
        "{} [{id:2}] {name}: {}{timing} ({:.2?})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed
    );
    pass
}

fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|v| C64::new(v, 0.0))
}

fn real_gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn code_dimension_bounds() -> Outcome {
    let got: Vec<usize> = CODE_DIMENSIONS.iter().map(|k| max_constraints_for(*k).unwrap()).collect();
    outcome(got == [2, 7, 23, 79], format!("{got:?}"))
}

fn orthogonality() -> Outcome {
    let mut rng = common::rng(101);
    let mut worst = 0.0f64;
    for k in CODE_DIMENSIONS {
        let code = build_code(k).unwrap();
        for _ in 0..1000 {
            let u = real_gaussian(&mut rng, k);
            let x = code.encode_real(&u).unwrap();
            let norm2: f64 = u.iter().map(|v| v * v).sum();
            let err = (x.transpose() * &x - DMatrix::identity(k, k) * norm2).amax();
            worst = worst.max(err);
        }
    }
    outcome(worst < 1e-12, format!("max deviation {worst:.2e} (< 1e-12)"))
}

fn interference_identity() -> Outcome {
    let mut rng = common::rng(102);
    let mut worst = 0.0f64;
    for k in CODE_DIMENSIONS {
        let code = build_code(k).unwrap();
        for _ in 0..1000 {
            let psi = real_gaussian(&mut rng, k);
            let omega = common::complex_gaussian(&mut rng, k);
            let xp = to_complex(&code.encode_real(&psi).unwrap());
            let xo = code.encode(&omega).unwrap().entries;
            let phi = xp.adjoint() * &xo * xo.adjoint() * &xp;
            let expect = psi.iter().map(|v| v * v).sum::<f64>() * omega.norm_squared();
            for d in 0..k {
                worst = worst.max((phi[(d, d)] - C64::new(expect, 0.0)).norm());
            }
        }
    }
    outcome(worst < 1e-10, format!("max diagonal deviation {worst:.2e} (< 1e-10)"))
}

fn rank_reduction_contract() -> Outcome {
    let mut rng = common::rng(103);
    let (mut checked, mut skipped) = (0, 0);
    let (mut drift, mut obj_drift) = (0.0f64, 0.0f64);
    let mut bound_failures = 0;
    while checked < 200 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(1..=4);
        let l = rng.random_range(0..=30);
        let scenario = common::random_scenario(&mut rng, n, m, l);
        let Ok((problem, out)) = sdr::solve_scenario(&scenario, Tolerances::default()) else {
            skipped += 1;
            continue;
        };
        let red = rank_reduce(&out.primal.x, &problem.rows);
        drift = drift.max(max_row_drift(&problem.rows, &out.primal.x, &red.x));
        let before: f64 = out.primal.x.iter().map(real_trace).sum();
        let after: f64 = red.x.iter().map(real_trace).sum();
        obj_drift = obj_drift.max((after - before).abs() / before.abs().max(f64::MIN_POSITIVE));
        if red.ranks.iter().map(|r| r * r).sum::<usize>() > problem.rows.len() {
            bound_failures += 1;
        }
        checked += 1;
    }
    outcome(
        drift <= 1e-7 && obj_drift <= 1e-6 && bound_failures == 0,
        format!(
            "{checked} instances ({skipped} infeasible draws skipped): row drift {drift:.2e} (≤ 1e-7), \
             objective drift {obj_drift:.2e} (≤ 1e-6), Σ rank² > M+L on {bound_failures}"
        ),
    )
}

fn example_two() -> Outcome {
    let scenario = presets::example2_nominal();
    let opts = SolveOptions::default();
    let r = match relax(&scenario, &opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("relaxation failed: {e}")),
    };
    let sum_sq: usize = r.reduced_ranks.iter().map(|k| k * k).sum();
    let max_rank = r.reduced_ranks.iter().copied().max().unwrap_or(0);
    let exact = match grbf::pipeline::finalize(&scenario, &r, &opts) {
        Ok(sol) => sol.exact,
        Err(_) => false,
    };
    outcome(
        max_rank <= 8 && sum_sq <= 79 && exact,
        format!(
            "ranks {:?} → {:?} in {} steps, Σ rank² = {sum_sq} (≤ 79), exact = {exact}",
            r.initial_ranks, r.reduced_ranks, r.reduction_iterations
        ),
    )
}

fn end_to_end(name: &str, scenario: &Scenario) -> Outcome {
    let sol = match solve_downlink(scenario, &SolveOptions::default()) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("{name}: {e}")),
    };
    let obj = sol.diagnostics.sdr_objective;
    let rel = (sol.total_power - obj).abs() / obj;
    let qos = scenario
        .users
        .iter()
        .zip(&sol.diagnostics.sinr)
        .map(|(u, s)| (u.sinr_target - s) / u.sinr_target)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        sol.exact && rel <= 1e-6 && qos <= 1e-6,
        format!("{name}: K = {}, power gap {rel:.2e} (≤ 1e-6), worst QoS shortfall {qos:.2e} (≤ 1e-6)", sol.k),
    )
}

fn link_agreement() -> Outcome {
    let scenario = presets::example1_nominal(10.0);
    let sol = solve_downlink(&scenario, &SolveOptions::default()).unwrap();
    let stats = empirical_sinr(&LinkConfig { blocks: 100_000, seed: 7, ..Default::default() }, &sol.w, &scenario).unwrap();
    let sinr_err = stats
        .iter()
        .map(|s| (linear_to_db(s.empirical_sinr) - linear_to_db(s.theoretical_sinr)).abs())
        .fold(0.0, f64::max);
    let power_err = stats
        .iter()
        .flat_map(|s| s.slot_power.iter().map(move |(p, _)| (p / s.power_analytic - 1.0).abs()))
        .fold(0.0, f64::max);
    let z = stats
        .iter()
        .map(|s| UserLinkStats::max_slot_z(&s.slot_power).max(UserLinkStats::max_slot_z(&s.slot_error)))
        .fold(0.0, f64::max);
    outcome(
        sinr_err <= 0.2 && power_err <= 0.01 && z < 3.0,
        format!(
            "K = {}, SINR error {sinr_err:.3} dB (≤ 0.2), per-slot power error {:.3}% (≤ 1%), slot spread {z:.2}σ (< 3σ)",
            sol.k,
            100.0 * power_err
        ),
    )
}

fn ordering(points: &[PointSummary]) -> (bool, String) {
    let mut ok = true;
    let mut empty = 0;
    for p in points {
        if p.runs == 0 {
            empty += 1;
            continue;
        }
        ok &= p.feasible[0] >= p.feasible[1] && p.feasible[0] >= p.feasible[2];
        if p.common_feasible > 0 {
            let g = p.mean_power_common[0] * (1.0 - 1e-9);
            ok &= g <= p.mean_power_common[1] && g <= p.mean_power_common[2];
        }
    }
    let feas: Vec<String> = points
        .iter()
        .filter(|p| p.runs > 0)
        .map(|p| format!("{}dB {}/{}/{}", p.sinr_db, p.feasible[0], p.feasible[1], p.feasible[2]))
        .collect();
    (ok, format!("feasible general/rank-one/rank-two [{}]{}", feas.join(", "), if empty > 0 { format!(", {empty} empty bins") } else { String::new() }))
}

fn desk_trends() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for kind in [ExperimentKind::Example1, ExperimentKind::Example3] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { runs: 50, ..ExperimentConfig::new(kind, dir.path()) };
        match run_experiment(&cfg) {
            Ok(report) => {
                let (ok, d) = ordering(&report.points);
                pass &= ok;
                details.push(format!("{kind}: {d}"));
            }
            Err(e) => {
                pass = false;
                details.push(format!("{kind}: {e}"));
            }
        }
    }
    outcome(pass, details.join("; "))
}

fn phase_rotation() -> Outcome {
    let mut rng = common::rng(109);
    let (mut imag, mut gram, mut neg) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..1000 {
        let n = 2 + i % 7;
        let k = CODE_DIMENSIONS[i % 4];
        let w = common::complex_matrix(&mut rng, n, k);
        let h = common::complex_gaussian(&mut rng, n);
        let r = phase_rotate(std::slice::from_ref(&w), std::slice::from_ref(&h)).remove(0);
        let g: CVec = r.adjoint() * &h;
        imag = imag.max(g.iter().map(|z| z.im.abs()).fold(0.0, f64::max));
        neg = neg.max(g.iter().map(|z| -z.re).fold(0.0, f64::max));
        gram = gram.max(max_abs(&(&r * r.adjoint() - &w * w.adjoint())));
    }
    outcome(
        imag < 1e-12 && gram < 1e-12 && neg < 1e-12,
        format!("max |Im(Wᴴh)| {imag:.2e}, Gram change {gram:.2e} (both < 1e-12)"),
    )
}

fn randomization_bound() -> Outcome {
    let mut rng = common::rng(110);
    let (mut below, mut failed) = (0, 0);
    let mut worst_row = 0.0f64;
    let mut worst_ratio = f64::INFINITY;
    for i in 0..50 {
        let g = Geometry::jittered(&presets::EXAMPLE1_USER_ANGLES, &presets::TERMINAL_ANGLES, &mut rng);
        let scenario = presets::example1((i % 11) as f64, &g.users, &g.others);
        let (problem, out) = sdr::solve_scenario(&scenario, Tolerances::default()).unwrap();
        let res = match randomization_search(&out.primal.x, &problem.rows, 30, RANDOMIZATION_K, &mut rng) {
            Ok(r) => r,
            Err(Error::RandomizationFailed) => {
                failed += 1;
                continue;
            }
            Err(e) => return outcome(false, e.to_string()),
        };
        let ratio = res.best.total_power / out.primal.objective;
        worst_ratio = worst_ratio.min(ratio);
        // The relaxation's objective is itself only certified to the duality gap.
        if ratio < 1.0 - Tolerances::default().gap {
            below += 1;
        }
        let grams: Vec<CMat> = res.best.beamformers().iter().map(|w| w * w.adjoint()).collect();
        for r in &problem.rows {
            worst_row = worst_row.max(r.violation(&grams) / r.threshold.abs().max(1.0));
        }
    }
    outcome(
        below == 0 && failed == 0 && worst_row <= 1e-8,
        format!(
            "50 instances, min power / relaxation {worst_ratio:.4} (≥ 1), worst scaled row violation {worst_row:.2e} (≤ 1e-8), {failed} without a feasible draw"
        ),
    )
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "code-dimension constraint bounds", secs(1), code_dimension_bounds),
        criterion(2, "OSTBC orthogonality", secs(1), orthogonality),
        criterion(3, "interference diagonal identity", secs(5), interference_identity),
        criterion(4, "rank-reduction contract", secs(300), rank_reduction_contract),
        criterion(5, "sidelobe-shaping study rank reduction", secs(120), example_two),
        criterion(6, "end-to-end optimality (charging floors)", secs(300), || {
            end_to_end("example 1 at 10 dB", &presets::example1_nominal(10.0))
        }),
        criterion(6, "end-to-end optimality (sidelobe shaping)", secs(300), || {
            end_to_end("example 2", &presets::example2_nominal())
        }),
        criterion(6, "end-to-end optimality (relaxed nulling)", secs(300), || {
            end_to_end("example 4", &presets::example4_nominal())
        }),
        criterion(7, "link-level agreement", secs(120), link_agreement),
        criterion(8, "desk-scale feasibility and power trends", secs(1800), desk_trends),
        criterion(9, "phase-rotation invariance", secs(1), phase_rotation),
        criterion(10, "randomization bound", secs(600), randomization_bound),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
