//! The four reference scenarios used by the experiment runner.

use rand::Rng;

use super::{
    charging_constraints, db_to_linear, perturb_angles, relaxed_nulling_constraints,
    sidelobe_constraints, ula_users, Scenario,
};

pub const NOISE_POWER: f64 = 0.1;

/// Angular jitter (degrees) applied per Monte-Carlo run.
pub const ANGLE_JITTER_DEG: f64 = 0.25;

pub const EXAMPLE1_USER_ANGLES: [f64; 3] = [-5.0, 10.0, 25.0];

/// Charging terminals (example 1) and co-channel users (example 4).
pub const TERMINAL_ANGLES: [f64; 22] = [
    -80.0, -75.0, -70.0, -65.0, -60.0, -55.0, -45.0, -35.0, -25.0, -8.0, -2.0, //
    12.0, 18.0, 35.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0,
];

pub const EXAMPLE1_ANTENNAS: usize = 12;
pub const CHARGING_THRESHOLD_DB: f64 = 5.0;

pub const EXAMPLE2_ANTENNAS: usize = 18;
pub const EXAMPLE2_COCHANNEL_ANGLES: [f64; 19] = [
    -89.375, -80.0, -70.625, -61.25, -51.875, -42.5, -33.125, -23.75, -14.375, 2.0, 3.0, 17.0,
    18.0, 34.375, 43.75, 53.125, 62.5, 71.875, 81.25,
];
pub const SIDELOBE_CAP: f64 = 0.1;
pub const SIDELOBE_SLOPE_BAND: f64 = 1e-5;
pub const EXAMPLE2_SINR_DB: f64 = 10.0;

pub const EXAMPLE4_ANTENNAS: usize = 15;
pub const EXAMPLE4_USER_ANGLES: [f64; 3] = [-15.0, 5.0, 25.0];
pub const NULLING_BETA: f64 = 0.005;

/// Wireless-charging scenario: 3 users, 22 terminals with a 5 dB floor.
pub fn example1(sinr_db: f64, user_angles: &[f64], terminal_angles: &[f64]) -> Scenario {
    let n = EXAMPLE1_ANTENNAS;
    let users = ula_users(user_angles, n, db_to_linear(sinr_db), NOISE_POWER);
    let shaping = charging_constraints(
        terminal_angles,
        db_to_linear(CHARGING_THRESHOLD_DB),
        n,
        users.len(),
    );
    Scenario { antennas: n, users, shaping }
}

pub fn example1_nominal(sinr_db: f64) -> Scenario {
    example1(sinr_db, &EXAMPLE1_USER_ANGLES, &TERMINAL_ANGLES)
}

/// Flat, suppressed sidelobes at 19 co-channel directions (76 rows).
pub fn example2(sinr_targets_db: &[f64], user_angles: &[f64], cochannel_angles: &[f64]) -> Scenario {
    let n = EXAMPLE2_ANTENNAS;
    let mut users = ula_users(user_angles, n, 1.0, NOISE_POWER);
    for (u, g) in users.iter_mut().zip(sinr_targets_db) {
        u.sinr_target = db_to_linear(*g);
    }
    let shaping = sidelobe_constraints(cochannel_angles, SIDELOBE_CAP, SIDELOBE_SLOPE_BAND, n, users.len());
    Scenario { antennas: n, users, shaping }
}

pub fn example2_nominal() -> Scenario {
    example2(&[EXAMPLE2_SINR_DB; 3], &EXAMPLE1_USER_ANGLES, &EXAMPLE2_COCHANNEL_ANGLES)
}

/// Relaxed nulling toward the 22 co-channel users (66 rows).
pub fn example4(sinr_db: f64, user_angles: &[f64], cochannel_angles: &[f64]) -> Scenario {
    let n = EXAMPLE4_ANTENNAS;
    let users = ula_users(user_angles, n, db_to_linear(sinr_db), NOISE_POWER);
    let shaping = relaxed_nulling_constraints(cochannel_angles, NULLING_BETA, n, users.len());
    Scenario { antennas: n, users, shaping }
}

pub fn example4_nominal() -> Scenario {
    example4(EXAMPLE2_SINR_DB, &EXAMPLE4_USER_ANGLES, &TERMINAL_ANGLES)
}

/// Jittered user and terminal directions for one Monte-Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub users: Vec<f64>,
    pub others: Vec<f64>,
}

impl Geometry {
    pub fn jittered<R: Rng + ?Sized>(users: &[f64], others: &[f64], rng: &mut R) -> Self {
        Geometry {
            users: perturb_angles(users, rng, ANGLE_JITTER_DEG),
            others: perturb_angles(others, rng, ANGLE_JITTER_DEG),
        }
    }
}
