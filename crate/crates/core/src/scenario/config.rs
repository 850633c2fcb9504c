//! JSON scenario files.
//!
//! ```json
//! {
//!   "N": 12,
//!   "users": [{"angle_deg": -5, "sinr_db": 10, "noise_power": 0.1}],
//!   "shaping": [
//!     {"type": "charging", "angles_deg": [-80, 12], "threshold_db": 5},
//!     {"type": "custom-matrix", "sense": "<=", "threshold": 1.0,
//!      "matrices": [[1, 0, 0, 0, "…row-major re/im pairs…"]]}
//!   ]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    charging_constraints, db_to_linear, relaxed_nulling_constraints, sidelobe_constraints,
    steering_vector, Scenario, Sense, ShapingConstraint, User,
};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(rename = "N")]
    pub antennas: usize,
    pub users: Vec<UserConfig>,
    #[serde(default)]
    pub shaping: Vec<ShapingBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    /// Interleaved `[re, im, re, im, …]` channel coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<Vec<f64>>,
    pub sinr_db: f64,
    pub noise_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ShapingBlock {
    Charging {
        angles_deg: Vec<f64>,
        threshold_db: f64,
    },
    Sidelobe {
        angles_deg: Vec<f64>,
        cap: f64,
        epsilon: f64,
    },
    Nulling {
        angles_deg: Vec<f64>,
        beta: f64,
    },
    CustomMatrix {
        sense: Sense,
        threshold: f64,
        /// One row-major interleaved re/im `N × N` matrix per user.
        matrices: Vec<Vec<f64>>,
    },
}

fn interleaved_to_complex(values: &[f64], what: &str) -> Result<Vec<C64>> {
    if !values.len().is_multiple_of(2) {
        return Err(Error::InvalidScenario(format!("{what}: odd number of re/im values")));
    }
    Ok(values.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
}

impl ScenarioConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let n = self.antennas;
        let m = self.users.len();
        let users = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let channel = match (&u.angle_deg, &u.channel) {
                    (Some(theta), None) => steering_vector(*theta, n),
                    (None, Some(values)) => {
                        CVec::from_vec(interleaved_to_complex(values, &format!("user {i} channel"))?)
                    }
                    _ => {
                        return Err(Error::InvalidScenario(format!(
                            "user {i}: exactly one of angle_deg or channel is required"
                        )))
                    }
                };
                Ok(User {
                    channel,
                    sinr_target: db_to_linear(u.sinr_db),
                    noise_power: u.noise_power,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut shaping = Vec::new();
        for (b, block) in self.shaping.iter().enumerate() {
            match block {
                ShapingBlock::Charging { angles_deg, threshold_db } => {
                    shaping.extend(charging_constraints(angles_deg, db_to_linear(*threshold_db), n, m))
                }
                ShapingBlock::Sidelobe { angles_deg, cap, epsilon } => {
                    if *cap <= 0.0 || *epsilon <= 0.0 {
                        return Err(Error::InvalidScenario(format!("block {b}: cap and epsilon must be positive")));
                    }
                    shaping.extend(sidelobe_constraints(angles_deg, *cap, *epsilon, n, m))
                }
                ShapingBlock::Nulling { angles_deg, beta } => {
                    if !(*beta > 0.0 && *beta < 1.0) {
                        return Err(Error::InvalidScenario(format!("block {b}: beta must lie in (0, 1)")));
                    }
                    shaping.extend(relaxed_nulling_constraints(angles_deg, *beta, n, m))
                }
                ShapingBlock::CustomMatrix { sense, threshold, matrices } => {
                    if matrices.len() != m {
                        return Err(Error::InvalidScenario(format!(
                            "block {b}: {} matrices for {m} users",
                            matrices.len()
                        )));
                    }
                    let mats = matrices
                        .iter()
                        .map(|vals| {
                            let entries = interleaved_to_complex(vals, &format!("block {b}"))?;
                            if entries.len() != n * n {
                                return Err(Error::InvalidScenario(format!("block {b}: matrix is not {n}×{n}")));
                            }
                            Ok(CMat::from_row_slice(n, n, &entries))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    shaping.push(ShapingConstraint { matrices: mats, threshold: *threshold, sense: *sense });
                }
            }
        }
        let scenario = Scenario { antennas: n, users, shaping };
        scenario.validate()?;
        Ok(scenario)
    }
}
