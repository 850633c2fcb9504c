mod common;

use grbf::linalg::{min_eigenvalue, real_trace, CMat, C64};
use grbf::rankred::{
    apply_direct, assemble_system, delta_star, find_nontrivial_delta, max_row_drift, rank_reduce, reduction_step,
    DeltaSet, RankReductionState,
};
use grbf::scenario::{presets, Sense, ShapingConstraint};
use grbf::sdr::{self, assemble, numerical_ranks, Tolerances};
use grbf::Error;
use proptest::prelude::*;

fn diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_iterator(values.len(), values.iter().map(|v| C64::new(*v, 0.0))))
}

#[test]
fn zero_rows_give_zero_system() {
    let mut rng = common::rng(1);
    let q = common::complex_matrix(&mut rng, 4, 2);
    let state = RankReductionState::from_factors(vec![q.clone(), q]);
    let rows = vec![ShapingConstraint { matrices: vec![CMat::zeros(4, 4); 2], threshold: 0.0, sense: Sense::Eq }; 3];
    let sys = assemble_system(&state, &rows);
    assert_eq!(sys.shape(), (3, 8));
    assert!(sys.iter().all(|v| *v == 0.0));
}

#[test]
fn scalar_block_row_is_quadratic_form() {
    let mut rng = common::rng(2);
    let q = common::complex_matrix(&mut rng, 3, 1);
    let a = common::random_hermitian(&mut rng, 3);
    let state = RankReductionState::from_factors(vec![q.clone()]);
    let rows = vec![ShapingConstraint { matrices: vec![a.clone()], threshold: 0.0, sense: Sense::Ge }];
    let sys = assemble_system(&state, &rows);
    assert_eq!(sys.shape(), (1, 1));
    let expect = (q.adjoint() * &a * &q)[(0, 0)].re;
    assert!((sys[(0, 0)] - expect).abs() < 1e-12);
}

#[test]
fn system_matches_direct_trace_evaluation() {
    let mut rng = common::rng(3);
    for _ in 0..20 {
        let factors = vec![common::complex_matrix(&mut rng, 5, 3), common::complex_matrix(&mut rng, 5, 2)];
        let state = RankReductionState::from_factors(factors);
        let rows: Vec<_> = (0..6)
            .map(|_| ShapingConstraint {
                matrices: vec![common::random_hermitian(&mut rng, 5), common::random_hermitian(&mut rng, 5)],
                threshold: 0.0,
                sense: Sense::Eq,
            })
            .collect();
        let sys = assemble_system(&state, &rows);
        let v = nalgebra::DVector::from_fn(sys.ncols(), |i, _| ((i * 7 + 3) % 11) as f64 - 5.0);
        let product = &sys * &v;
        // Rebuild the Hermitian blocks by probing the system with coordinate vectors.
        let delta = {
            let ranks = state.ranks();
            let mut offset = 0;
            let mut blocks = Vec::new();
            for k in ranks {
                let coords: Vec<f64> = v.iter().skip(offset).take(k * k).copied().collect();
                blocks.push(coords_to_hermitian(&coords, k));
                offset += k * k;
            }
            DeltaSet { delta: blocks }
        };
        let direct = apply_direct(&state, &rows, &delta);
        for (a, b) in product.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

fn coords_to_hermitian(v: &[f64], k: usize) -> CMat {
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut d = CMat::zeros(k, k);
    for p in 0..k {
        d[(p, p)] = C64::new(v[p], 0.0);
    }
    let mut idx = k;
    for p in 0..k {
        for q in p + 1..k {
            d[(p, q)] = C64::new(v[idx] * r2, v[idx + 1] * r2);
            d[(q, p)] = C64::new(v[idx] * r2, -v[idx + 1] * r2);
            idx += 2;
        }
    }
    d
}

#[test]
fn counting_argument_guarantees_null_vector() {
    let mut rng = common::rng(4);
    for _ in 0..20 {
        let factors = vec![common::complex_matrix(&mut rng, 6, 3), common::complex_matrix(&mut rng, 6, 2)];
        let state = RankReductionState::from_factors(factors);
        // 13 unknowns, 12 rows.
        let rows: Vec<_> = (0..12)
            .map(|_| ShapingConstraint {
                matrices: vec![common::random_hermitian(&mut rng, 6), common::random_hermitian(&mut rng, 6)],
                threshold: 0.0,
                sense: Sense::Ge,
            })
            .collect();
        let sys = assemble_system(&state, &rows);
        let delta = find_nontrivial_delta(&sys, &state.ranks()).expect("Σ K² > rows");
        let residual = apply_direct(&state, &rows, &delta);
        let scale = sys.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        assert!(residual.iter().all(|r| r.abs() < 1e-8 * scale.max(1.0)));
        let norm2: f64 = delta.delta.iter().map(|d| grbf::linalg::herm_dot(d, d)).sum();
        assert!((norm2 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn full_column_rank_gives_none() {
    let mut rng = common::rng(5);
    let state = RankReductionState::from_factors(vec![common::complex_matrix(&mut rng, 4, 1)]);
    let rows = vec![ShapingConstraint { matrices: vec![CMat::identity(4, 4)], threshold: 1.0, sense: Sense::Ge }];
    assert!(find_nontrivial_delta(&assemble_system(&state, &rows), &state.ranks()).is_none());
}

#[test]
fn textbook_step() {
    let state = RankReductionState::from_factors(vec![CMat::identity(2, 2)]);
    let delta = DeltaSet { delta: vec![diag(&[1.0, -1.0])] };
    assert_eq!(delta_star(&delta), 1.0);
    let next = reduction_step(&state, &delta).unwrap();
    assert_eq!(next.ranks(), vec![1]);
    let expect = diag(&[0.0, 2.0]);
    assert!((&next.x[0] - expect).iter().all(|z| z.norm() < 1e-14));
    assert!((real_trace(&next.x[0]) - 2.0).abs() < 1e-14);
}

#[test]
fn step_eigenvalues_lie_in_zero_two() {
    let mut rng = common::rng(6);
    for _ in 0..50 {
        let state = RankReductionState::from_factors(vec![common::complex_matrix(&mut rng, 5, 3), common::complex_matrix(&mut rng, 5, 4)]);
        let delta = DeltaSet { delta: vec![common::random_hermitian(&mut rng, 3), common::random_hermitian(&mut rng, 4)] };
        let ds = delta_star(&delta);
        for d in &delta.delta {
            let m = CMat::identity(d.nrows(), d.nrows()) - d.unscale(ds);
            let (vals, _) = grbf::linalg::eigh_desc(&m);
            assert!(vals.iter().all(|v| *v >= -1e-12 && *v <= 2.0 + 1e-12));
        }
        let next = reduction_step(&state, &delta).unwrap();
        assert!(next.ranks().iter().sum::<usize>() < 7);
    }
}

#[test]
fn rank_one_input_is_untouched() {
    let s = presets::example4_nominal();
    let p = assemble(&s);
    let mut rng = common::rng(7);
    let x: Vec<CMat> = (0..3).map(|_| {
        let h = common::complex_gaussian(&mut rng, s.antennas);
        &h * h.adjoint()
    }).collect();
    let out = rank_reduce(&x, &p.rows);
    assert_eq!(out.iterations, 0);
    assert_eq!(out.ranks, vec![1, 1, 1]);
}

#[test]
fn two_user_toy_meets_counting_bound() {
    // N = 3, M = 2, L = 5.
    let mut rng = common::rng(8);
    let mut done = 0;
    for _ in 0..20 {
        let s = common::random_scenario(&mut rng, 3, 2, 5);
        let p = assemble(&s);
        let Ok(out) = sdr::solve(&p, Tolerances::default()) else { continue };
        let red = rank_reduce(&out.primal.x, &p.rows);
        let ranks = numerical_ranks(&red.x, 1e-4);
        assert!(ranks.iter().map(|r| r * r).sum::<usize>() <= 7, "{ranks:?}");
        done += 1;
    }
    assert!(done >= 5);
}

#[test]
fn example2_reduces_below_counting_bound() {
    let s = presets::example2_nominal();
    let p = assemble(&s);
    let out = sdr::solve(&p, Tolerances::default()).unwrap();
    let red = rank_reduce(&out.primal.x, &p.rows);
    eprintln!("initial {:?} reduced {:?} in {} steps", red.initial_ranks, red.ranks, red.iterations);
    assert!(red.initial_ranks.iter().any(|r| *r > 8));
    assert!(red.ranks.iter().all(|r| *r <= 8));
    assert!(red.ranks.iter().map(|r| r * r).sum::<usize>() <= 79);
    let obj0 = out.primal.objective;
    let obj1: f64 = red.x.iter().map(real_trace).sum();
    assert!((obj1 - obj0).abs() <= 1e-6 * obj0, "{obj0} → {obj1}");
    eprintln!("row drift {:.2e}", max_row_drift(&p.rows, &out.primal.x, &red.x));
    for x in &red.x {
        assert!(min_eigenvalue(x) >= -1e-9 * real_trace(x));
    }
}

#[test]
fn degenerate_delta_is_rejected() {
    let state = RankReductionState::from_factors(vec![CMat::identity(2, 2)]);
    let delta = DeltaSet { delta: vec![CMat::zeros(2, 2)] };
    assert!(matches!(reduction_step(&state, &delta), Err(Error::NoRankDrop)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reduction_preserves_rows_and_objective(
        seed in any::<u64>(),
        n in 3usize..8,
        m in 1usize..4,
        l in 0usize..16,
    ) {
        let scenario = common::random_scenario(&mut common::rng(seed), n, m, l);
        let problem = assemble(&scenario);
        let Ok(out) = sdr::solve(&problem, Tolerances::default()) else {
            return Ok(());
        };
        let red = rank_reduce(&out.primal.x, &problem.rows);
        prop_assert!(max_row_drift(&problem.rows, &out.primal.x, &red.x) <= 1e-7);
        let before: f64 = out.primal.x.iter().map(real_trace).sum();
        let after: f64 = red.x.iter().map(real_trace).sum();
        prop_assert!((after - before).abs() <= 1e-6 * before);
        prop_assert!(red.ranks.iter().map(|r| r * r).sum::<usize>() <= problem.rows.len());
        for (x, q) in red.x.iter().zip(&red.factors) {
            prop_assert!(min_eigenvalue(x) >= -1e-9 * real_trace(x).max(1.0));
            prop_assert!(q.ncols() <= n);
        }
        for (a, b) in red.ranks.iter().zip(numerical_ranks(&red.x, grbf::sdr::DEFAULT_RANK_THRESHOLD)) {
            prop_assert_eq!(*a, b);
        }
    }
}
