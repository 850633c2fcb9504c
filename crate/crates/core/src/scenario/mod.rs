//! Problem instances: users, channels and quadratic constraint rows.

mod config;
pub mod presets;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, herm_dot, outer, vec_norm_sqr, CMat, CVec, C64, J};

pub use config::{ScenarioConfig, ShapingBlock, UserConfig};

/// Sense of a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

impl Sense {
    /// Amount by which `value` violates `value ⊵ threshold` (zero when satisfied).
    pub fn violation(self, value: f64, threshold: f64) -> f64 {
        match self {
            Sense::Ge => (threshold - value).max(0.0),
            Sense::Le => (value - threshold).max(0.0),
            Sense::Eq => (value - threshold).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub channel: CVec,
    /// Linear SINR target `γ`.
    pub sinr_target: f64,
    /// Linear noise power `σ²`.
    pub noise_power: f64,
}

/// One row `Σ_m Tr(A_m X_m) ⊵ b` of the beamforming problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingConstraint {
    /// One Hermitian `N × N` matrix per user.
    pub matrices: Vec<CMat>,
    pub threshold: f64,
    pub sense: Sense,
}

impl ShapingConstraint {
    /// `Σ_m Tr(A_m X_m)` for Gram matrices `X_m`.
    pub fn value(&self, grams: &[CMat]) -> f64 {
        self.matrices
            .iter()
            .zip(grams)
            .map(|(a, x)| herm_dot(a, x))
            .sum()
    }

    /// `Σ_m Tr(W_mᴴ A_m W_m)` for beamforming matrices `W_m`.
    pub fn value_for_beamformers(&self, beams: &[CMat]) -> f64 {
        self.matrices
            .iter()
            .zip(beams)
            .map(|(a, w)| {
                let aw = a * w;
                w.iter().zip(aw.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
            })
            .sum()
    }

    pub fn violation(&self, grams: &[CMat]) -> f64 {
        self.sense.violation(self.value(grams), self.threshold)
    }

    pub fn is_zero_for(&self, user: usize) -> bool {
        self.matrices[user].iter().all(|z| *z == C64::new(0.0, 0.0))
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub antennas: usize,
    pub users: Vec<User>,
    pub shaping: Vec<ShapingConstraint>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.antennas;
        if n == 0 {
            return Err(Error::InvalidScenario("antenna count must be positive".into()));
        }
        if self.users.is_empty() {
            return Err(Error::InvalidScenario("at least one user is required".into()));
        }
        for (i, u) in self.users.iter().enumerate() {
            if u.channel.len() != n {
                return Err(Error::InvalidScenario(format!(
                    "user {i} channel has length {} but N = {n}",
                    u.channel.len()
                )));
            }
            if !(u.sinr_target > 0.0 && u.sinr_target.is_finite()) {
                return Err(Error::InvalidScenario(format!("user {i} SINR target must be positive")));
            }
            if !(u.noise_power > 0.0 && u.noise_power.is_finite()) {
                return Err(Error::InvalidScenario(format!("user {i} noise power must be positive")));
            }
            if vec_norm_sqr(&u.channel) == 0.0 {
                return Err(Error::InvalidScenario(format!("user {i} has a zero channel")));
            }
        }
        let m = self.users.len();
        for (l, row) in self.shaping.iter().enumerate() {
            if row.matrices.len() != m {
                return Err(Error::InvalidScenario(format!(
                    "shaping row {l} has {} matrices for {m} users",
                    row.matrices.len()
                )));
            }
            for a in &row.matrices {
                if a.shape() != (n, n) {
                    return Err(Error::InvalidScenario(format!("shaping row {l} matrix is not {n}×{n}")));
                }
                let scale = 1.0 + a.iter().map(|z| z.norm()).fold(0.0, f64::max);
                if hermitian_defect(a) > 1e-12 * scale {
                    return Err(Error::InvalidScenario(format!("shaping row {l} matrix is not Hermitian")));
                }
            }
            if !row.threshold.is_finite() {
                return Err(Error::InvalidScenario(format!("shaping row {l} threshold is not finite")));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn channels(&self) -> Vec<CVec> {
        self.users.iter().map(|u| u.channel.clone()).collect()
    }

    /// QoS rows followed by the shaping rows, in input order.
    pub fn all_constraints(&self) -> Vec<ShapingConstraint> {
        let mut rows = qos_constraints(self);
        rows.extend(self.shaping.iter().cloned());
        rows
    }

    /// Replaces every user's SINR target.
    pub fn with_sinr_targets(mut self, targets: &[f64]) -> Self {
        for (u, g) in self.users.iter_mut().zip(targets) {
            u.sinr_target = *g;
        }
        self
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// ULA spatial signature `[1, e^{jπ sin θ}, …, e^{jπ(N−1) sin θ}]ᵀ`, θ in degrees.
pub fn steering_vector(theta_deg: f64, n: usize) -> CVec {
    let phase = std::f64::consts::PI * theta_deg.to_radians().sin();
    CVec::from_fn(n, |k, _| C64::from_polar(1.0, phase * k as f64))
}

/// First angular derivative `dh/dμ` of the steering vector, with `μ` in radians.
pub fn steering_derivative(theta_deg: f64, n: usize) -> CVec {
    let mu = theta_deg.to_radians();
    let h = steering_vector(theta_deg, n);
    CVec::from_fn(n, |k, _| {
        let a = std::f64::consts::PI * k as f64;
        J * (a * mu.cos()) * h[k]
    })
}

/// Second angular derivative `d²h/dμ²`, with `μ` in radians.
pub fn steering_second_derivative(theta_deg: f64, n: usize) -> CVec {
    let mu = theta_deg.to_radians();
    let h = steering_vector(theta_deg, n);
    CVec::from_fn(n, |k, _| {
        let a = std::f64::consts::PI * k as f64;
        let phase_rate = a * mu.cos();
        (C64::new(-phase_rate * phase_rate, 0.0) - J * (a * mu.sin())) * h[k]
    })
}

/// QoS rows: `Tr(h_i h_iᴴ X_i) − γ_i Σ_{m≠i} Tr(h_i h_iᴴ X_m) ≥ γ_i σ_i²`.
pub fn qos_constraints(scenario: &Scenario) -> Vec<ShapingConstraint> {
    let m = scenario.users.len();
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let hh = outer(&u.channel, &u.channel);
            let matrices = (0..m)
                .map(|k| if k == i { hh.clone() } else { hh.scale(-u.sinr_target) })
                .collect();
            ShapingConstraint {
                matrices,
                threshold: u.sinr_target * u.noise_power,
                sense: Sense::Ge,
            }
        })
        .collect()
}

/// Minimum received power `b_min` at each charging terminal.
pub fn charging_constraints(
    terminal_angles_deg: &[f64],
    b_min: f64,
    n: usize,
    m: usize,
) -> Vec<ShapingConstraint> {
    terminal_angles_deg
        .iter()
        .map(|&theta| {
            let h = steering_vector(theta, n);
            let hh = outer(&h, &h);
            ShapingConstraint {
                matrices: vec![hh; m],
                threshold: b_min,
                sense: Sense::Ge,
            }
        })
        .collect()
}

/// Sidelobe shaping at co-channel directions: a power cap, a two-sided band on
/// the first angular derivative of the received power and a nonnegative
/// curvature, giving `4J` rows for `J` angles (caps, upper bands, lower bands,
/// curvatures).
pub fn sidelobe_constraints(
    cochannel_angles_deg: &[f64],
    cap: f64,
    epsilon: f64,
    n: usize,
    m: usize,
) -> Vec<ShapingConstraint> {
    let mut caps = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    let mut curvature = Vec::new();
    for &mu in cochannel_angles_deg {
        let h = steering_vector(mu, n);
        let dh = steering_derivative(mu, n);
        let d2h = steering_second_derivative(mu, n);
        let power = outer(&h, &h);
        let slope = outer(&dh, &h) + outer(&h, &dh);
        let curv = outer(&h, &d2h) + outer(&d2h, &h) + outer(&dh, &dh).scale(2.0);
        caps.push(ShapingConstraint { matrices: vec![power; m], threshold: cap, sense: Sense::Le });
        upper.push(ShapingConstraint {
            matrices: vec![slope.clone(); m],
            threshold: epsilon,
            sense: Sense::Le,
        });
        lower.push(ShapingConstraint {
            matrices: vec![slope; m],
            threshold: -epsilon,
            sense: Sense::Ge,
        });
        curvature.push(ShapingConstraint { matrices: vec![curv; m], threshold: 0.0, sense: Sense::Ge });
    }
    caps.into_iter().chain(upper).chain(lower).chain(curvature).collect()
}

/// Relaxed nulling: `Tr(h hᴴ X_i) ≤ β ‖h‖² Tr(X_i)` per user and angle, written as
/// `Tr((β‖h‖² I − h hᴴ) X_i) ≥ 0`. Rows are ordered user-major.
pub fn relaxed_nulling_constraints(
    cochannel_angles_deg: &[f64],
    beta: f64,
    n: usize,
    m: usize,
) -> Vec<ShapingConstraint> {
    let mut rows = Vec::with_capacity(m * cochannel_angles_deg.len());
    for user in 0..m {
        for &theta in cochannel_angles_deg {
            let h = steering_vector(theta, n);
            let a = CMat::identity(n, n).scale(beta * vec_norm_sqr(&h)) - outer(&h, &h);
            let matrices = (0..m)
                .map(|k| if k == user { a.clone() } else { CMat::zeros(n, n) })
                .collect();
            rows.push(ShapingConstraint { matrices, threshold: 0.0, sense: Sense::Ge });
        }
    }
    rows
}

/// Independent uniform angle perturbations within `±half_width` degrees.
pub fn perturb_angles<R: Rng + ?Sized>(nominal_deg: &[f64], rng: &mut R, half_width: f64) -> Vec<f64> {
    if half_width == 0.0 {
        return nominal_deg.to_vec();
    }
    nominal_deg
        .iter()
        .map(|&t| t + rng.random_range(-half_width..=half_width))
        .collect()
}

/// Users at the given directions sharing one SINR target and noise power.
pub fn ula_users(angles_deg: &[f64], n: usize, sinr_target: f64, noise_power: f64) -> Vec<User> {
    angles_deg
        .iter()
        .map(|&t| User {
            channel: steering_vector(t, n),
            sinr_target,
            noise_power,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigh_desc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn steering_broadside_and_endfire() {
        let h = steering_vector(0.0, 4);
        assert!(h.iter().all(|z| close(*z, C64::new(1.0, 0.0), 1e-15)));
        let h = steering_vector(90.0, 2);
        assert!(close(h[1], C64::new(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn steering_unit_modulus() {
        let h = steering_vector(-5.0, 12);
        let expect = C64::from_polar(1.0, std::f64::consts::PI * (-5f64).to_radians().sin());
        assert!(close(h[1], expect, 1e-15));
        assert!(h.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // central differences in radians
        let n = 8;
        let step = 1e-6;
        for &theta in &[-60.0, -5.0, 0.0, 17.0, 81.25] {
            let mu = f64::to_radians(theta);
            let plus = steering_vector((mu + step).to_degrees(), n);
            let minus = steering_vector((mu - step).to_degrees(), n);
            let fd = (plus.clone() - minus.clone()).unscale(2.0 * step);
            let d = steering_derivative(theta, n);
            for k in 0..n {
                assert!((fd[k] - d[k]).norm() < 1e-6 * (1.0 + d[k].norm()), "k={k}");
            }
            let d1p = steering_derivative((mu + step).to_degrees(), n);
            let d1m = steering_derivative((mu - step).to_degrees(), n);
            let fd2 = (d1p - d1m).unscale(2.0 * step);
            let d2 = steering_second_derivative(theta, n);
            for k in 0..n {
                assert!((fd2[k] - d2[k]).norm() < 1e-5 * (1.0 + d2[k].norm()), "k={k}");
            }
        }
    }

    fn scenario2() -> Scenario {
        Scenario {
            antennas: 4,
            users: ula_users(&[-10.0, 20.0], 4, 1.0, 0.1),
            shaping: vec![],
        }
    }

    #[test]
    fn qos_single_user_has_no_interference_term() {
        let s = Scenario { antennas: 3, users: ula_users(&[0.0], 3, 2.0, 0.5), shaping: vec![] };
        let rows = qos_constraints(&s);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].threshold, 1.0);
        assert_eq!(rows[0].sense, Sense::Ge);
        let h = &s.users[0].channel;
        assert_eq!(rows[0].matrices[0], outer(h, h));
    }

    #[test]
    fn qos_cross_term_is_negated_channel_outer_product() {
        let s = scenario2();
        let rows = qos_constraints(&s);
        let h1 = &s.users[0].channel;
        assert_eq!(rows[0].matrices[1], -outer(h1, h1));
    }

    #[test]
    fn qos_rows_imply_sinr() {
        // W_m = scaled channels; evaluate the SINR directly.
        let s = scenario2();
        let rows = qos_constraints(&s);
        let beams: Vec<CMat> = s
            .users
            .iter()
            .map(|u| CMat::from_column_slice(4, 1, u.channel.as_slice()).scale(0.5))
            .collect();
        for (i, row) in rows.iter().enumerate() {
            let h = &s.users[i].channel;
            let sig = (beams[i].adjoint() * h).norm_squared();
            let intf: f64 = (0..2).filter(|&m| m != i).map(|m| (beams[m].adjoint() * h).norm_squared()).sum();
            let sinr = sig / (intf + s.users[i].noise_power);
            let lhs = row.value_for_beamformers(&beams);
            assert_eq!(lhs >= row.threshold, sinr >= s.users[i].sinr_target);
            // lhs − b = (SINR − γ)·(I + σ²)
            let expect = (sinr - s.users[i].sinr_target) * (intf + s.users[i].noise_power);
            assert!((lhs - row.threshold - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn charging_received_power() {
        let rows = charging_constraints(&[0.0], 2.0, 3, 2);
        assert_eq!(rows.len(), 1);
        let w = vec![CMat::identity(3, 3), CMat::identity(3, 3).scale(0.5)];
        let h = steering_vector(0.0, 3);
        let direct: f64 = w.iter().map(|wm| (wm.adjoint() * &h).norm_squared()).sum();
        assert!((rows[0].value_for_beamformers(&w) - direct).abs() < 1e-12);
    }

    #[test]
    fn charging_threshold_met_exactly() {
        let rows = charging_constraints(&[0.0], 4.0, 4, 1);
        // w = h / 2 gives |wᴴh|² = (4/2)² = 4.
        let h = steering_vector(0.0, 4);
        let w = vec![CMat::from_column_slice(4, 1, h.as_slice()).scale(0.5)];
        let v = rows[0].value_for_beamformers(&w);
        assert!(rows[0].sense.violation(v, rows[0].threshold) < 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sidelobe_counts_and_structure() {
        let rows = sidelobe_constraints(&presets::EXAMPLE2_COCHANNEL_ANGLES, 0.1, 1e-5, 18, 3);
        assert_eq!(rows.len(), 76);
        for r in &rows {
            for a in &r.matrices {
                assert!(hermitian_defect(a) < 1e-12);
            }
        }
        assert!(rows[..19].iter().all(|r| r.sense == Sense::Le && r.threshold == 0.1));
        assert!(rows[19..38].iter().all(|r| r.sense == Sense::Le && r.threshold == 1e-5));
        assert!(rows[38..57].iter().all(|r| r.sense == Sense::Ge && r.threshold == -1e-5));
        assert!(rows[57..].iter().all(|r| r.sense == Sense::Ge && r.threshold == 0.0));
        assert_eq!(rows[19].matrices, rows[38].matrices);
    }

    #[test]
    fn sidelobe_derivative_row_matches_finite_difference_of_power() {
        let n = 6;
        let mu = 12.0;
        let rows = sidelobe_constraints(&[mu], 1.0, 1.0, n, 1);
        let x = {
            let g = CMat::from_fn(n, n, |r, c| C64::new((r + 2 * c) as f64 * 0.1, (r as f64 - c as f64) * 0.05));
            &g * g.adjoint()
        };
        let power = |deg: f64| {
            let h = steering_vector(deg, n);
            herm_dot(&outer(&h, &h), &x)
        };
        let step = 1e-5_f64;
        let f0 = mu.to_radians();
        let d1 = (power((f0 + step).to_degrees()) - power((f0 - step).to_degrees())) / (2.0 * step);
        let d2 = (power((f0 + step).to_degrees()) - 2.0 * power(mu) + power((f0 - step).to_degrees()))
            / (step * step);
        let v1 = rows[1].value(std::slice::from_ref(&x));
        let v2 = rows[3].value(std::slice::from_ref(&x));
        assert!((d1 - v1).abs() < 1e-5 * (1.0 + v1.abs()), "{d1} vs {v1}");
        assert!((d2 - v2).abs() < 1e-3 * (1.0 + v2.abs()), "{d2} vs {v2}");
    }

    #[test]
    fn nulling_counts_and_indefiniteness() {
        let rows = relaxed_nulling_constraints(&presets::TERMINAL_ANGLES, 0.005, 15, 3);
        assert_eq!(rows.len(), 66);
        assert!(rows[0].is_zero_for(1) && rows[0].is_zero_for(2) && !rows[0].is_zero_for(0));
        assert!(!rows[22].is_zero_for(1));

        let n = 5;
        let beta = 0.3;
        let r = relaxed_nulling_constraints(&[20.0], beta, n, 1);
        let (vals, _) = eigh_desc(&r[0].matrices[0]);
        let hn = n as f64;
        for v in &vals[..n - 1] {
            assert!((v - beta * hn).abs() < 1e-12);
        }
        assert!((vals[n - 1] - (beta * hn - hn)).abs() < 1e-12);
    }

    #[test]
    fn nulling_rejects_matched_beam() {
        let n = 4;
        let r = relaxed_nulling_constraints(&[30.0], 0.5, n, 1);
        let h = steering_vector(30.0, n);
        let x = outer(&h, &h);
        let v = r[0].value(&[x]);
        assert!((v - (0.5 - 1.0) * 16.0).abs() < 1e-12);
        assert!(r[0].violation(&[outer(&h, &h)]) > 0.0);
    }

    #[test]
    fn perturbation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nominal = [10.0, -20.0];
        assert_eq!(perturb_angles(&nominal, &mut rng, 0.0), nominal.to_vec());

        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(perturb_angles(&nominal, &mut a, 0.25), perturb_angles(&nominal, &mut b, 0.25));

        let draws = 100_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            let t = perturb_angles(&[10.0], &mut rng, 0.25)[0];
            assert!((9.75..=10.25).contains(&t));
            sum += t;
        }
        let mean = sum / draws as f64;
        let sigma = 0.5 / 12f64.sqrt() / (draws as f64).sqrt();
        assert!((mean - 10.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn validate_catches_bad_input() {
        let mut s = scenario2();
        assert!(s.validate().is_ok());
        s.users[0].sinr_target = 0.0;
        assert!(s.validate().is_err());
        let mut s = scenario2();
        s.shaping.push(ShapingConstraint {
            matrices: vec![CMat::from_fn(4, 4, |r, c| C64::new(0.0, (r * 4 + c) as f64)); 2],
            threshold: 0.0,
            sense: Sense::Ge,
        });
        assert!(s.validate().is_err());
    }
}
