//! Sparse dynamical-system discovery with conformal uncertainty quantification.
//!
//! The crate identifies governing equations from noisy time series via
//! ensemble SINDy (sequentially thresholded least squares over a polynomial
//! library, bagged or jackknifed), and wraps the identified models in
//! conformal-prediction machinery for three tasks:
//!
//! * calibrated time-series prediction intervals (EnbPI and a conformal
//!   PI controller),
//! * library-feature importance for model selection (ensemble inclusion
//!   probabilities, LOCO, and LOCO-path),
//! * coefficient uncertainty intervals via feature conformal prediction
//!   (equality-constrained surrogate refits).
//!
//! [`scenarios`] drives end-to-end experiments from flat key-value config
//! files and writes CSV artifacts; the `sindy-cp` binary exposes them as
//! subcommands.

pub mod conformal;
pub mod error;
pub mod featurecp;
pub mod importance;
pub mod linalg;
pub mod preprocess;
pub mod scenarios;
pub mod sindy;
pub mod systems;

pub use error::{Error, Result};
