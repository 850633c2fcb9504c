//! General-rank multiuser downlink beamforming with quadratic shaping
//! constraints.
//!
//! The transmit power is minimized subject to per-user SINR targets and extra
//! quadratic rows (energy harvesting, sidelobe and nulling shaping). The
//! problem is relaxed to a separable SDP, the solution rank is reduced until it
//! fits a real orthogonal space-time block code, and the beamformers are
//! extracted from the low-rank factors. Gaussian randomization covers the
//! remaining cases.

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod linksim;
pub mod lp;
pub mod ostbc;
pub mod pipeline;
pub mod randomize;
pub mod rankred;
pub mod scenario;
pub mod sdr;

pub use error::{Error, Result};
