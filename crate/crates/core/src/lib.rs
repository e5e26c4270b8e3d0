//! Model-free bootstrap prediction regions for multivariate time series.
//!
//! The pipeline maps each observation through estimated CDFs and a
//! thresholded normal quantile, estimates a flat-top tapered block-Toeplitz
//! covariance of the resulting Gaussian process, whitens it, and resamples
//! the whitened innovations to replicate the predictive root of a point
//! predictor. Prediction regions are `L^p` balls around the predictor with
//! a bootstrap quantile as radius.

pub mod banded;
pub mod bootstrap;
pub mod cdf;
pub mod covariance;
pub mod error;
pub mod experiments;
pub mod normal;
pub mod region;
pub mod rng;
pub mod series;
pub mod transform;

pub use error::{MfbError, Result};
pub use series::MultiSeries;
