//! Feedback capacity of Gaussian channels whose additive noise is generated by
//! a linear state-space model.
//!
//! * [`state_space`]: noise models, channels and assumption checks.
//! * [`kalman`]: Kalman filter, Riccati recursion and the stabilizing solution.
//! * [`capacity`]: the capacity program, closed-form oracles, water-filling and
//!   the finite-horizon program.
//! * [`coding_scheme`]: Monte Carlo simulation of the scalar feedback scheme.

pub mod capacity;
pub mod coding_scheme;
pub mod error;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod state_space;

pub use error::{FbcapError, Result};
pub use linalg::Mat;
