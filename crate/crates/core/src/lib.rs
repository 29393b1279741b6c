//! Expected value of sample information (EVSI) across study sizes.
//!
//! The main estimator corrects the Gaussian-approximation meta-model with a
//! second-order Taylor term: the fitted spline's curvature times a conditional
//! variance taken from the expected Fisher information. Comparators include
//! the uncorrected meta-model, regression on simulated sample means, nested
//! Monte Carlo and closed-form oracles.

pub mod case_studies;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod fisher;
pub mod gaussian;
pub mod oracles;
pub mod pa_data;
pub mod simulate;
pub mod spline;

pub use error::{EvsiError, Result};
