//! Monte-Carlo experiment runner for the reference scenarios and custom
//! scenario files, writing one CSV per figure-equivalent.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::linksim::csv_error;
use crate::pipeline::{finalize, relax, SolutionFile, SolveOptions};
use crate::scenario::presets::{self, Geometry};
use crate::scenario::{db_to_linear, steering_vector, Scenario};

/// SINR target range (dB) of the randomized-target study.
pub const EXAMPLE3_TARGET_RANGE_DB: (f64, f64) = (0.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Example1,
    Example2,
    Example3,
    Example4,
    Custom,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(ExperimentKind::Example1),
            "example2" => Ok(ExperimentKind::Example2),
            "example3" => Ok(ExperimentKind::Example3),
            "example4" => Ok(ExperimentKind::Example4),
            "custom" => Ok(ExperimentKind::Custom),
            other => Err(Error::InvalidScenario(format!("unknown experiment `{other}`"))),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Example1 => "example1",
            ExperimentKind::Example2 => "example2",
            ExperimentKind::Example3 => "example3",
            ExperimentKind::Example4 => "example4",
            ExperimentKind::Custom => "custom",
        })
    }
}

/// An inclusive dB grid `lo:hi:step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Sweep {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.lo + i as f64 * self.step).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidScenario("sweep bounds must be finite".into()));
        }
        if self.step <= 0.0 || self.hi < self.lo {
            return Err(Error::InvalidScenario(format!("empty sweep {self}")));
        }
        Ok(())
    }

    /// Index of the grid point nearest to `value`, clamped to the grid.
    pub fn nearest(&self, value: f64) -> usize {
        let last = self.points().len() - 1;
        (((value - self.lo) / self.step).round().max(0.0) as usize).min(last)
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidScenario(format!("sweep `{s}` is not lo:hi:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let sweep = Sweep { lo: v[0], hi: v[1], step: v[2] };
        sweep.validate()?;
        Ok(sweep)
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.step)
    }
}

/// The compared designs: general rank, and the rank-one and rank-two
/// baselines obtained by capping the code dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    General,
    RankOne,
    RankTwo,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::General, Approach::RankOne, Approach::RankTwo];

    pub fn cap(self) -> usize {
        match self {
            Approach::General => 8,
            Approach::RankOne => 1,
            Approach::RankTwo => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::General => "general",
            Approach::RankOne => "rank_one",
            Approach::RankTwo => "rank_two",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub runs: usize,
    /// Randomization draws per instance when a design needs them.
    pub n_rand: usize,
    pub sweep: Sweep,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Required for [`ExperimentKind::Custom`].
    pub scenario: Option<Scenario>,
}

impl ExperimentConfig {
    /// Defaults of each study: 300 runs, 300 draws (100 for example 3), a 1 dB
    /// grid over 0–10 dB (0–5 dB for example 3).
    pub fn new(kind: ExperimentKind, out_dir: impl Into<PathBuf>) -> Self {
        let (n_rand, sweep) = match kind {
            ExperimentKind::Example3 => (
                100,
                Sweep { lo: EXAMPLE3_TARGET_RANGE_DB.0, hi: EXAMPLE3_TARGET_RANGE_DB.1, step: 1.0 },
            ),
            _ => (300, Sweep { lo: 0.0, hi: 10.0, step: 1.0 }),
        };
        ExperimentConfig { kind, runs: 300, n_rand, sweep, seed: 0, out_dir: out_dir.into(), scenario: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidScenario("runs must be at least 1".into()));
        }
        if self.n_rand == 0 {
            return Err(Error::InvalidScenario("randomization instances must be at least 1".into()));
        }
        self.sweep.validate()?;
        if self.kind == ExperimentKind::Custom {
            self.scenario
                .as_ref()
                .ok_or_else(|| Error::InvalidScenario("custom experiment needs a scenario".into()))?
                .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InstanceStatus {
    Solved,
    Infeasible,
    /// The relaxation did not reach the requested accuracy.
    SolverFailure,
}

/// Result of all three designs on one scenario instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub point: usize,
    pub run: usize,
    pub status: InstanceStatus,
    pub sdr_objective: Option<f64>,
    pub reduced_ranks: Option<Vec<usize>>,
    /// Per [`Approach::ALL`]: total power per slot if the design succeeded.
    pub power: [Option<f64>; 3],
    pub exact: [bool; 3],
}

/// Solves `scenario` once and evaluates every design on the shared relaxation.
pub fn evaluate_instance(scenario: &Scenario, n_rand: usize, seed: u64, point: usize, run: usize) -> InstanceOutcome {
    let mut out = InstanceOutcome {
        point,
        run,
        status: InstanceStatus::Solved,
        sdr_objective: None,
        reduced_ranks: None,
        power: [None; 3],
        exact: [false; 3],
    };
    let base = SolveOptions { n_rand, seed, ..SolveOptions::default() };
    let relaxation = match relax(scenario, &base) {
        Ok(r) => r,
        Err(Error::Infeasible { .. }) => {
            out.status = InstanceStatus::Infeasible;
            return out;
        }
        Err(_) => {
            out.status = InstanceStatus::SolverFailure;
            return out;
        }
    };
    for (a, approach) in Approach::ALL.iter().enumerate() {
        let opts = SolveOptions { max_code_dimension: approach.cap(), ..base };
        if let Ok(sol) = finalize(scenario, &relaxation, &opts) {
            out.power[a] = Some(sol.total_power);
            out.exact[a] = sol.exact;
        }
    }
    out.sdr_objective = Some(relaxation.output.primal.objective);
    out.reduced_ranks = Some(relaxation.reduced_ranks);
    out
}

/// Aggregates of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub sinr_db: f64,
    pub runs: usize,
    pub solved: usize,
    pub solver_failures: usize,
    pub feasible: [usize; 3],
    /// Mean power over the instances each design solved (NaN if none).
    pub mean_power: [f64; 3],
    /// Instances solved by all three designs.
    pub common_feasible: usize,
    pub mean_power_common: [f64; 3],
    /// Per user: counts of reduced rank 1..=8 and above 8.
    pub rank_counts: Vec<[usize; 9]>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub files: Vec<PathBuf>,
    pub points: Vec<PointSummary>,
    pub outcomes: Vec<InstanceOutcome>,
}

fn instance_seed(seed: u64, run: usize, point: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng.set_word_pos(1 << 40);
    rng.random::<u64>() ^ (point as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(points: &[f64], users: usize, outcomes: &[InstanceOutcome]) -> Vec<PointSummary> {
    points
        .iter()
        .enumerate()
        .map(|(p, &sinr_db)| {
            let here: Vec<&InstanceOutcome> = outcomes.iter().filter(|o| o.point == p).collect();
            let common: Vec<&&InstanceOutcome> = here.iter().filter(|o| o.power.iter().all(|v| v.is_some())).collect();
            let mut rank_counts = vec![[0usize; 9]; users];
            for o in &here {
                if let Some(r) = &o.reduced_ranks {
                    for (u, &rank) in r.iter().enumerate() {
                        rank_counts[u][rank.clamp(1, 9) - 1] += 1;
                    }
                }
            }
            PointSummary {
                sinr_db,
                runs: here.len(),
                solved: here.iter().filter(|o| o.status == InstanceStatus::Solved).count(),
                solver_failures: here.iter().filter(|o| o.status == InstanceStatus::SolverFailure).count(),
                feasible: std::array::from_fn(|a| here.iter().filter(|o| o.power[a].is_some()).count()),
                mean_power: std::array::from_fn(|a| mean(here.iter().filter_map(|o| o.power[a]))),
                common_feasible: common.len(),
                mean_power_common: std::array::from_fn(|a| mean(common.iter().filter_map(|o| o.power[a]))),
                rank_counts,
            }
        })
        .collect()
}

fn percentage(count: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        100.0 * count as f64 / total as f64
    }
}

#[derive(Serialize)]
struct PowerRow {
    sinr_db: f64,
    runs: usize,
    common_feasible: usize,
    general_power: f64,
    rank_one_power: f64,
    rank_two_power: f64,
    general_power_common: f64,
    rank_one_power_common: f64,
    rank_two_power_common: f64,
}

#[derive(Serialize)]
struct FeasibilityRow {
    sinr_db: f64,
    runs: usize,
    solver_failures: usize,
    general_pct: f64,
    rank_one_pct: f64,
    rank_two_pct: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// `ranks.csv`: per point and user, the percentage of solved instances whose
/// reduced rank is 1, …, 8 or above 8.
fn write_ranks(path: &Path, points: &[PointSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["sinr_db".to_string(), "user".into(), "solved".into()];
    header.extend((1..=8).map(|r| format!("rank_{r}")));
    header.push("rank_over_8".into());
    w.write_record(&header).map_err(csv_error)?;
    for p in points {
        for (u, counts) in p.rank_counts.iter().enumerate() {
            let mut rec = vec![p.sinr_db.to_string(), (u + 1).to_string(), p.solved.to_string()];
            rec.extend(counts.iter().map(|c| percentage(*c, p.solved).to_string()));
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_power(path: &Path, points: &[PointSummary]) -> Result<()> {
    write_rows(
        path,
        points.iter().map(|p| PowerRow {
            sinr_db: p.sinr_db,
            runs: p.runs,
            common_feasible: p.common_feasible,
            general_power: p.mean_power[0],
            rank_one_power: p.mean_power[1],
            rank_two_power: p.mean_power[2],
            general_power_common: p.mean_power_common[0],
            rank_one_power_common: p.mean_power_common[1],
            rank_two_power_common: p.mean_power_common[2],
        }),
    )
}

fn write_feasibility(path: &Path, points: &[PointSummary]) -> Result<()> {
    write_rows(
        path,
        points.iter().map(|p| FeasibilityRow {
            sinr_db: p.sinr_db,
            runs: p.runs,
            solver_failures: p.solver_failures,
            general_pct: percentage(p.feasible[0], p.runs),
            rank_one_pct: percentage(p.feasible[1], p.runs),
            rank_two_pct: percentage(p.feasible[2], p.runs),
        }),
    )
}

/// One sample of the beam pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPoint {
    pub theta_deg: f64,
    /// `‖W_mᴴ h(θ)‖²` per user.
    pub per_user: Vec<f64>,
    pub sum: f64,
}

/// Received power per user and in total at each grid angle, for a uniform
/// linear array with half-wavelength spacing.
pub fn beampattern(w: &[CMat], grid_deg: &[f64]) -> Vec<BeamPoint> {
    let n = w.first().map(|w| w.nrows()).unwrap_or(0);
    grid_deg
        .iter()
        .map(|&theta| {
            let h = steering_vector(theta, n);
            let per_user: Vec<f64> = w.iter().map(|wm| (wm.adjoint() * &h).norm_squared()).collect();
            BeamPoint { theta_deg: theta, sum: per_user.iter().sum(), per_user }
        })
        .collect()
}

pub fn write_beampattern(path: impl AsRef<Path>, pattern: &[BeamPoint]) -> Result<()> {
    write_beampattern_to(std::fs::File::create(path)?, pattern)
}

/// `theta_deg, user_1, …, user_M, sum`.
pub fn write_beampattern_to<W: std::io::Write>(out: W, pattern: &[BeamPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let users = pattern.first().map(|p| p.per_user.len()).unwrap_or(0);
    let mut header = vec!["theta_deg".to_string()];
    header.extend((1..=users).map(|u| format!("user_{u}")));
    header.push("sum".into());
    w.write_record(&header).map_err(csv_error)?;
    for p in pattern {
        let mut rec = vec![p.theta_deg.to_string()];
        rec.extend(p.per_user.iter().map(|v| v.to_string()));
        rec.push(p.sum.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// The default beam-pattern grid: −90° to 90° in 0.25° steps.
pub fn default_grid() -> Vec<f64> {
    Sweep { lo: -90.0, hi: 90.0, step: 0.25 }.points()
}

fn instance_scenario(cfg: &ExperimentConfig, point: usize, run: usize, points: &[f64]) -> Scenario {
    match cfg.kind {
        ExperimentKind::Example1 => {
            let g = Geometry::jittered(&presets::EXAMPLE1_USER_ANGLES, &presets::TERMINAL_ANGLES, &mut run_rng(cfg.seed, run));
            presets::example1(points[point], &g.users, &g.others)
        }
        ExperimentKind::Custom => {
            let s = cfg.scenario.clone().expect("validated");
            let m = s.users.len();
            s.with_sinr_targets(&vec![db_to_linear(points[point]); m])
        }
        _ => unreachable!("sweep instances exist for examples 1, 3 and custom"),
    }
}

/// Draws one instance of the randomized-target study: jittered geometry and
/// i.i.d. uniform targets over the sweep range.
pub fn example3_instance(cfg: &ExperimentConfig, run: usize) -> (Scenario, Vec<f64>) {
    let mut rng = run_rng(cfg.seed, run);
    let g = Geometry::jittered(&presets::EXAMPLE1_USER_ANGLES, &presets::EXAMPLE2_COCHANNEL_ANGLES, &mut rng);
    let targets: Vec<f64> = (0..g.users.len()).map(|_| rng.random_range(cfg.sweep.lo..=cfg.sweep.hi)).collect();
    (presets::example2(&targets, &g.users, &g.others), targets)
}

fn sweep_outcomes(cfg: &ExperimentConfig, points: &[f64]) -> Vec<InstanceOutcome> {
    let tasks: Vec<(usize, usize)> = match cfg.kind {
        ExperimentKind::Example3 => (0..cfg.runs).map(|r| (0, r)).collect(),
        ExperimentKind::Custom => (0..points.len()).map(|p| (p, 0)).collect(),
        _ => (0..points.len()).flat_map(|p| (0..cfg.runs).map(move |r| (p, r))).collect(),
    };
    tasks
        .into_par_iter()
        .map(|(p, run)| {
            let (scenario, point) = match cfg.kind {
                ExperimentKind::Example3 => {
                    let (s, targets) = example3_instance(cfg, run);
                    let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (s, cfg.sweep.nearest(max))
                }
                _ => (instance_scenario(cfg, p, run, points), p),
            };
            evaluate_instance(&scenario, cfg.n_rand, instance_seed(cfg.seed, run, point), point, run)
        })
        .collect()
}

/// Ranks before and after reduction for a single design.
fn write_rank_table(path: &Path, initial: &[usize], reduced: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["user", "initial_rank", "reduced_rank"]).map_err(csv_error)?;
    for (u, (a, b)) in initial.iter().zip(reduced).enumerate() {
        w.write_record([(u + 1).to_string(), a.to_string(), b.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured study and writes its tables into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    let mut files = Vec::new();

    if matches!(cfg.kind, ExperimentKind::Example2 | ExperimentKind::Example4) {
        let scenario = if cfg.kind == ExperimentKind::Example2 {
            presets::example2_nominal()
        } else {
            presets::example4_nominal()
        };
        let opts = SolveOptions { n_rand: cfg.n_rand, seed: cfg.seed, ..SolveOptions::default() };
        let sol = crate::pipeline::solve_downlink(&scenario, &opts)?;
        let bp = dir.join("beampattern.csv");
        write_beampattern(&bp, &beampattern(&sol.w, &default_grid()))?;
        let ranks = dir.join("ranks.csv");
        write_rank_table(&ranks, &sol.diagnostics.initial_ranks, &sol.diagnostics.reduced_ranks)?;
        let solution = dir.join("solution.json");
        SolutionFile::from(&sol).write(&solution)?;
        files.extend([bp, ranks, solution]);
        return Ok(ExperimentReport { files, points: Vec::new(), outcomes: Vec::new() });
    }

    let points = cfg.sweep.points();
    let outcomes = sweep_outcomes(cfg, &points);
    let users = match cfg.kind {
        ExperimentKind::Custom => cfg.scenario.as_ref().map(|s| s.users.len()).unwrap_or(0),
        _ => presets::EXAMPLE1_USER_ANGLES.len(),
    };
    let summary = summarize(&points, users, &outcomes);
    for (name, write) in [
        ("ranks.csv", write_ranks as fn(&Path, &[PointSummary]) -> Result<()>),
        ("power.csv", write_power),
        ("feasibility.csv", write_feasibility),
    ] {
        let path = dir.join(name);
        write(&path, &summary)?;
        files.push(path);
    }
    Ok(ExperimentReport { files, points: summary, outcomes })
}

/// A gnuplot script rendering whichever tables exist in `dir`.
pub fn gnuplot_script(dir: &Path) -> String {
    let mut s = String::from("set datafile separator ','\nset datafile missing 'NaN'\nset grid\nset key autotitle columnhead\n");
    let q = |name: &str| dir.join(name).display().to_string().replace('\'', "''");
    if dir.join("power.csv").exists() {
        s += &format!(
            "set terminal pngcairo size 800,600\nset output '{}'\nset xlabel 'SINR target (dB)'\nset ylabel 'transmitted power per slot'\n\
             plot '{p}' using 1:4 with linespoints, '' using 1:5 with linespoints, '' using 1:6 with linespoints\n",
            q("power.png"),
            p = q("power.csv")
        );
    }
    if dir.join("feasibility.csv").exists() {
        s += &format!(
            "set output '{}'\nset xlabel 'SINR target (dB)'\nset ylabel 'feasible instances (%)'\nset yrange [0:105]\n\
             plot '{p}' using 1:4 with linespoints, '' using 1:5 with linespoints, '' using 1:6 with linespoints\nset autoscale y\n",
            q("feasibility.png"),
            p = q("feasibility.csv")
        );
    }
    if dir.join("beampattern.csv").exists() {
        s += &format!(
            "set output '{}'\nset xlabel 'angle (deg)'\nset ylabel 'power (dB)'\nset xrange [-90:90]\n\
             plot for [c=2:5] '{p}' using 1:(10*log10(column(c))) with lines\n",
            q("beampattern.png"),
            p = q("beampattern.csv")
        );
    }
    s
}
