//! Maximum-likelihood estimation for autoregressions with hidden Markov
//! regimes whose transition probabilities move with an observed covariate.
//!
//! The crate covers the full workflow:
//!
//! - [`model`]: the parametric family — logistic covariate-driven transition
//!   kernels, Gaussian switching-AR emissions in a univariate ("partial")
//!   and a bivariate ("joint") form, and bijective packing into
//!   unconstrained optimizer space;
//! - [`filter`]: forward filtering, the exact path-enumeration likelihood
//!   oracle, forward-backward smoothing, and the Fisher-identity score;
//! - [`estimate`]: multi-start quasi-Newton fitting with empirical-Hessian
//!   and sandwich (optionally HAC) covariance estimators;
//! - [`simulate`]: reproducible generation from the switching-AR data
//!   generating process with independent per-replication RNG streams;
//! - [`mixing`]: exact verification of the conditional mixing bound and the
//!   Dobrushin-coefficient machinery on finite segments;
//! - [`mc`]: a deterministic, parallel Monte Carlo harness producing bias /
//!   sd-ratio / size / power tables;
//! - [`io`] and [`config`]: CSV and report serialization plus the TOML run
//!   configuration shared with the `tvtp` command-line tool.
//!
//! The `examples/` directory has one runnable program per capability; start
//! with `cargo run --example fit_joint_vs_partial`.

pub mod config;
pub mod error;
pub mod estimate;
pub mod filter;
pub mod io;
mod linalg;
pub mod mc;
pub mod mixing;
pub mod model;
pub mod simulate;

pub use error::{Result, TvtpError};

// Covariance matrices and smoother output are nalgebra types; re-exported so
// downstream code can name them without pinning its own copy.
pub use nalgebra;
