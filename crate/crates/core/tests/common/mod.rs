#![allow(dead_code)]

use grbf::linalg::{outer, CMat, CVec, C64};
use grbf::scenario::{Scenario, Sense, ShapingConstraint, User};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_gaussian<R: Rng>(rng: &mut R, n: usize) -> CVec {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVec::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

pub fn complex_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(r, c, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> CMat {
    let g = complex_matrix(rng, n, n);
    (&g + g.adjoint()).scale(0.5)
}

/// A random instance with `n` antennas, `m` users and `l` shaping rows mixing
/// power floors at random directions (`≥`), leakage caps (`≤`) and indefinite
/// rows. Feasibility is not guaranteed.
pub fn random_scenario<R: Rng>(rng: &mut R, n: usize, m: usize, l: usize) -> Scenario {
    let users = (0..m)
        .map(|_| User {
            channel: complex_gaussian(rng, n),
            sinr_target: rng.random_range(0.5..2.0),
            noise_power: 0.1,
        })
        .collect();
    let shaping = (0..l)
        .map(|_| {
            let kind = rng.random_range(0..3);
            let g = complex_gaussian(rng, n);
            let gg = outer(&g, &g);
            match kind {
                0 => ShapingConstraint {
                    matrices: vec![gg; m],
                    threshold: rng.random_range(0.1..1.0),
                    sense: Sense::Ge,
                },
                1 => ShapingConstraint {
                    matrices: vec![gg; m],
                    threshold: rng.random_range(2.0..10.0),
                    sense: Sense::Le,
                },
                _ => {
                    let user = rng.random_range(0..m);
                    let a = CMat::identity(n, n).scale(0.5 * gg.trace().re) - gg;
                    let matrices = (0..m).map(|k| if k == user { a.clone() } else { CMat::zeros(n, n) }).collect();
                    ShapingConstraint { matrices, threshold: 0.0, sense: Sense::Ge }
                }
            }
        })
        .collect();
    Scenario { antennas: n, users, shaping }
}
