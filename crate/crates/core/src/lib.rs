//! Bilevel learning of spatially dependent total-variation regularization
//! weights for image denoising.
//!
//! The lower level solves `min_u 1/2 ||u - f||^2 + sum_j alpha_j ||(K u)_j||`
//! exactly by adaptive primal-dual splitting or with a Huber
//! smoothing of the norm. The upper level minimizes a squared training loss
//! over nonnegative `alpha` with a nonsmooth trust-region method fed by
//! adjoint-based gradients.

pub mod active_set;
pub mod adjoint;
pub mod data;
pub mod denoise;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod multi;
pub mod param;
mod reduced;
pub mod sensitivity;
pub mod stationarity;
pub mod trust_region;

pub use error::{Error, Result};
