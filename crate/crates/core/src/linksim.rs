//! Link-level Monte-Carlo check of the transmission model: OSTBC blocks are
//! sent through the designed beamformers, sign-adjusted, equalized and
//! compared with the closed-form SINR and power expressions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::ostbc::{build_code, sign_adjust, OstbcCode};
use crate::scenario::{linear_to_db, Scenario};

/// Blocks simulated per independent rng stream.
const CHUNK: usize = 4096;

/// Unit-energy symbol alphabets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Constellation {
    #[default]
    Qam4,
}

impl Constellation {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> C64 {
        match self {
            Constellation::Qam4 => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let re = if rng.random::<bool>() { s } else { -s };
                let im = if rng.random::<bool>() { s } else { -s };
                C64::new(re, im)
            }
        }
    }

    /// Nearest alphabet point.
    pub fn detect(self, z: C64) -> C64 {
        match self {
            Constellation::Qam4 => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                C64::new(if z.re >= 0.0 { s } else { -s }, if z.im >= 0.0 { s } else { -s })
            }
        }
    }

    /// Symbol error rate at a given SINR, treating the disturbance as
    /// circular Gaussian.
    pub fn ser(self, sinr: f64) -> f64 {
        match self {
            Constellation::Qam4 => {
                let p = 0.5 * erfc((sinr / 2.0).sqrt());
                2.0 * p - p * p
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub blocks: usize,
    pub seed: u64,
    pub constellation: Constellation,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig { blocks: 100_000, seed: 0, constellation: Constellation::Qam4 }
    }
}

fn code_for(w: &[CMat]) -> Result<OstbcCode> {
    let k = w.first().map(|w| w.ncols()).ok_or_else(|| Error::DimensionMismatch("no beamformers".into()))?;
    if w.iter().any(|wi| wi.ncols() != k) {
        return Err(Error::DimensionMismatch("beamformers with differing column counts".into()));
    }
    build_code(k)
}

/// `y = Σ_m 𝒳(s_m) W_mᴴ h + n`, one entry per time slot.
pub fn transmit_block(w: &[CMat], symbols: &[CVec], h: &CVec, noise: &CVec) -> Result<CVec> {
    let code = code_for(w)?;
    let k = code.dimension();
    if symbols.len() != w.len() || noise.len() != k || w.iter().any(|wi| wi.nrows() != h.len()) {
        return Err(Error::DimensionMismatch("block inputs".into()));
    }
    let mut y = noise.clone();
    for (wm, sm) in w.iter().zip(symbols) {
        let blk = code.encode(sm)?.entries;
        y += blk * (wm.adjoint() * h);
    }
    Ok(y)
}

/// The sign-adjusted form `ỹ = Σ_m 𝒳(W_mᴴ h) s_m + ñ`.
pub fn reformulated_block(w: &[CMat], symbols: &[CVec], h: &CVec, noise: &CVec) -> Result<CVec> {
    let code = code_for(w)?;
    let mut y = sign_adjust(noise);
    for (wm, sm) in w.iter().zip(symbols) {
        let g = wm.adjoint() * h;
        y += code.encode(&g)?.entries * sm;
    }
    Ok(y)
}

/// `‖W_iᴴh_i‖² / (Σ_{m≠i} ‖W_mᴴh_i‖² + σ²)`.
pub fn theoretical_sinr(w: &[CMat], user: usize, h: &CVec, noise_power: f64) -> f64 {
    let p: Vec<f64> = w.iter().map(|wm| (wm.adjoint() * h).norm_squared()).collect();
    let interference: f64 = p.iter().enumerate().filter(|(m, _)| *m != user).map(|(_, v)| v).sum();
    p[user] / (interference + noise_power)
}

/// Per-slot transmitted power `Tr(W Wᴴ)`, the same in every slot.
pub fn per_slot_power(w: &CMat) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}

/// Empirical per-slot power of `W` over random blocks: mean and standard error
/// for each slot.
pub fn empirical_slot_power(w: &CMat, cfg: &LinkConfig) -> Result<Vec<(f64, f64)>> {
    let code = build_code(w.ncols())?;
    let gram = w.adjoint() * w;
    let k = code.dimension();
    let chunks = cfg.blocks.div_ceil(CHUNK);
    let acc: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(cfg.seed, c);
            let mut m = vec![Moments::default(); k];
            for _ in 0..chunk_len(cfg.blocks, c) {
                let s = CVec::from_fn(k, |_, _| cfg.constellation.sample(&mut rng));
                let blk = code.encode(&s).expect("dimension checked").entries;
                for (slot, acc) in m.iter_mut().enumerate() {
                    let r = blk.row(slot);
                    acc.push((r * &gram * r.adjoint())[(0, 0)].re);
                }
            }
            m
        })
        .reduce_with(merge_slots)
        .unwrap_or_default();
    Ok(acc.iter().map(|m| (m.mean(), m.stderr())).collect())
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    fn mean(&self) -> f64 {
        self.sum / self.n.max(1.0)
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return f64::INFINITY;
        }
        let var = (self.sum_sq - self.sum * self.sum / self.n) / (self.n - 1.0);
        (var.max(0.0) / self.n).sqrt()
    }
}

fn merge_slots(a: Vec<Moments>, b: Vec<Moments>) -> Vec<Moments> {
    a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn chunk_len(blocks: usize, chunk: usize) -> usize {
    CHUNK.min(blocks - chunk * CHUNK)
}

fn complex_noise<R: Rng + ?Sized>(rng: &mut R, k: usize, noise_power: f64) -> CVec {
    let s = (noise_power / 2.0).sqrt();
    CVec::from_fn(k, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// Monte-Carlo statistics of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLinkStats {
    pub user: usize,
    pub blocks: usize,
    pub theoretical_sinr: f64,
    /// Symbol energy over mean squared equalization error, pooled over slots.
    /// Infinite when the error is exactly zero.
    pub empirical_sinr: f64,
    pub slot_sinr: Vec<f64>,
    /// Mean squared error per slot with its standard error.
    pub slot_error: Vec<(f64, f64)>,
    pub power_analytic: f64,
    pub power_empirical: f64,
    pub slot_power: Vec<(f64, f64)>,
    /// `σ²/‖W_iᴴh_i‖²`.
    pub noise_variance_theory: f64,
    pub slot_noise_variance: Vec<(f64, f64)>,
    /// Largest off-diagonal noise covariance component in standard errors.
    pub noise_offdiag_max_z: f64,
    /// `Σ_{m≠i} ‖W_mᴴh_i‖² / ‖W_iᴴh_i‖²`.
    pub interference_variance_theory: f64,
    pub slot_interference_variance: Vec<(f64, f64)>,
    pub ser: f64,
    pub ser_theory: f64,
}

impl UserLinkStats {
    /// Largest pairwise slot difference of a per-slot estimate in combined
    /// standard errors.
    pub fn max_slot_z(values: &[(f64, f64)]) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..values.len() {
            for b in a + 1..values.len() {
                let se = (values[a].1.powi(2) + values[b].1.powi(2)).sqrt();
                let d = (values[a].0 - values[b].0).abs();
                worst = worst.max(if se > 0.0 { d / se } else if d > 0.0 { f64::INFINITY } else { 0.0 });
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Default)]
struct UserAcc {
    error: Vec<Moments>,
    noise: Vec<Moments>,
    interference: Vec<Moments>,
    power: Vec<Moments>,
    /// Upper triangle of the noise covariance, re and im parts.
    cross: Vec<(Moments, Moments)>,
    symbol_errors: f64,
    symbols: f64,
}

impl UserAcc {
    fn new(k: usize) -> Self {
        UserAcc {
            error: vec![Moments::default(); k],
            noise: vec![Moments::default(); k],
            interference: vec![Moments::default(); k],
            power: vec![Moments::default(); k],
            cross: vec![(Moments::default(), Moments::default()); k * (k - 1) / 2],
            symbol_errors: 0.0,
            symbols: 0.0,
        }
    }

    fn merge(self, o: UserAcc) -> UserAcc {
        UserAcc {
            error: merge_slots(self.error, o.error),
            noise: merge_slots(self.noise, o.noise),
            interference: merge_slots(self.interference, o.interference),
            power: merge_slots(self.power, o.power),
            cross: self.cross.into_iter().zip(o.cross).map(|(a, b)| (a.0.merge(b.0), a.1.merge(b.1))).collect(),
            symbol_errors: self.symbol_errors + o.symbol_errors,
            symbols: self.symbols + o.symbols,
        }
    }
}

/// Simulates `cfg.blocks` blocks for every user of the scenario with
/// already-rotated beamformers.
pub fn empirical_sinr(cfg: &LinkConfig, w: &[CMat], scenario: &Scenario) -> Result<Vec<UserLinkStats>> {
    let code = code_for(w)?;
    let k = code.dimension();
    let m = w.len();
    if m != scenario.users.len() {
        return Err(Error::DimensionMismatch(format!("{m} beamformers for {} users", scenario.users.len())));
    }
    // g[i][j] = W_jᴴ h_i.
    let g: Vec<Vec<CVec>> =
        scenario.users.iter().map(|u| w.iter().map(|wj| wj.adjoint() * &u.channel).collect()).collect();
    let own: Vec<Vec<f64>> = (0..m).map(|i| g[i][i].iter().map(|z| z.re).collect()).collect();
    for (i, gi) in own.iter().enumerate() {
        if gi.iter().all(|v| *v == 0.0) {
            return Err(Error::ZeroVirtualChannel);
        }
        let scale = g[i][i].norm();
        if g[i][i].iter().any(|z| z.im.abs() > 1e-9 * scale) {
            return Err(Error::DimensionMismatch(format!("virtual channel of user {i} is not real")));
        }
    }
    let grams: Vec<CMat> = w.iter().map(|wi| wi.adjoint() * wi).collect();
    let interference_blocks: Vec<Vec<CMat>> = (0..m)
        .map(|i| (0..m).map(|j| code.encode(&g[i][j]).expect("dimension checked").entries).collect())
        .collect();

    let chunks = cfg.blocks.div_ceil(CHUNK);
    let accs: Vec<UserAcc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(cfg.seed, c);
            let mut acc: Vec<UserAcc> = (0..m).map(|_| UserAcc::new(k)).collect();
            for _ in 0..chunk_len(cfg.blocks, c) {
                let symbols: Vec<CVec> =
                    (0..m).map(|_| CVec::from_fn(k, |_, _| cfg.constellation.sample(&mut rng))).collect();
                for i in 0..m {
                    let noise = complex_noise(&mut rng, k, scenario.users[i].noise_power);
                    let mut interference = CVec::zeros(k);
                    for j in (0..m).filter(|j| *j != i) {
                        interference += &interference_blocks[i][j] * &symbols[j];
                    }
                    let y_tilde = &interference_blocks[i][i] * &symbols[i] + &interference + sign_adjust(&noise);
                    let s_hat = code.equalize(&own[i], &y_tilde).expect("nonzero channel");
                    let n_hat = code.equalize(&own[i], &sign_adjust(&noise)).expect("nonzero channel");
                    let i_hat = code.equalize(&own[i], &interference).expect("nonzero channel");
                    let a = &mut acc[i];
                    let blk = code.block(symbols[i].as_slice());
                    let mut pair = 0;
                    for slot in 0..k {
                        a.error[slot].push((s_hat[slot] - symbols[i][slot]).norm_sqr());
                        a.noise[slot].push(n_hat[slot].norm_sqr());
                        a.interference[slot].push(i_hat[slot].norm_sqr());
                        let r = blk.row(slot);
                        a.power[slot].push((r * &grams[i] * r.adjoint())[(0, 0)].re);
                        for other in slot + 1..k {
                            let z = n_hat[slot] * n_hat[other].conj();
                            a.cross[pair].0.push(z.re);
                            a.cross[pair].1.push(z.im);
                            pair += 1;
                        }
                        if cfg.constellation.detect(s_hat[slot]) != symbols[i][slot] {
                            a.symbol_errors += 1.0;
                        }
                        a.symbols += 1.0;
                    }
                }
            }
            acc
        })
        .reduce_with(|a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect())
        .unwrap_or_default();

    Ok(accs
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let u = &scenario.users[i];
            let energy: f64 = own[i].iter().map(|v| v * v).sum();
            let interf: f64 = (0..m).filter(|j| *j != i).map(|j| g[i][j].norm_squared()).sum();
            let theory = theoretical_sinr(w, i, &u.channel, u.noise_power);
            let mse: f64 = a.error.iter().map(|e| e.mean()).sum::<f64>() / k as f64;
            let slot_power: Vec<(f64, f64)> = a.power.iter().map(|p| (p.mean(), p.stderr())).collect();
            let noise_offdiag_max_z = a
                .cross
                .iter()
                .flat_map(|(re, im)| [re, im])
                .map(|c| if c.stderr() > 0.0 { c.mean().abs() / c.stderr() } else { 0.0 })
                .fold(0.0, f64::max);
            UserLinkStats {
                user: i,
                blocks: cfg.blocks,
                theoretical_sinr: theory,
                empirical_sinr: if mse > 0.0 { 1.0 / mse } else { f64::INFINITY },
                slot_sinr: a.error.iter().map(|e| 1.0 / e.mean()).collect(),
                slot_error: a.error.iter().map(|e| (e.mean(), e.stderr())).collect(),
                power_analytic: per_slot_power(&w[i]),
                power_empirical: slot_power.iter().map(|p| p.0).sum::<f64>() / k as f64,
                slot_power,
                noise_variance_theory: u.noise_power / energy,
                slot_noise_variance: a.noise.iter().map(|e| (e.mean(), e.stderr())).collect(),
                noise_offdiag_max_z,
                interference_variance_theory: interf / energy,
                slot_interference_variance: a.interference.iter().map(|e| (e.mean(), e.stderr())).collect(),
                ser: a.symbol_errors / a.symbols.max(1.0),
                ser_theory: cfg.constellation.ser(theory),
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct CsvRow {
    user: usize,
    blocks: usize,
    empirical_sinr_db: f64,
    theoretical_sinr_db: f64,
    power_analytic: f64,
    power_empirical: f64,
    ser: f64,
}

/// One line per user: `user, blocks, empirical_sinr_db, theoretical_sinr_db,
/// power_analytic, power_empirical, ser`.
pub fn write_csv(stats: &[UserLinkStats], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_error)?;
    for s in stats {
        wtr.serialize(CsvRow {
            user: s.user,
            blocks: s.blocks,
            empirical_sinr_db: linear_to_db(s.empirical_sinr),
            theoretical_sinr_db: linear_to_db(s.theoretical_sinr),
            power_analytic: s.power_analytic,
            power_empirical: s.power_empirical,
            ser: s.ser,
        })
        .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
