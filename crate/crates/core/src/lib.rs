//! Time-varying directed connectivity from a regime-switching factor VAR.
//!
//! The pipeline has three stages:
//!
//! 1. [`factor`]: PCA loadings and factors for the whole series, with BIC
//!    selection of the number of factors.
//! 2. [`sskf`]: a switching VAR on the factors in companion state-space
//!    form, estimated by EM with a switching Kalman filter and smoother.
//! 3. [`connectivity`]: per-regime `N x N` coefficient matrices projected
//!    back through the loadings, with asymptotic significance tests.
//!
//! [`simgen`], [`baseline`] and [`metrics`] reproduce the block-diagonal
//! simulation benchmark against sliding-window ridge VAR + L1 K-means, and
//! [`bench`] ties them together per replication.

pub mod baseline;
pub mod bench;
pub mod connectivity;
pub mod error;
pub mod factor;
pub mod linalg;
pub mod metrics;
pub mod simgen;
pub mod sskf;
pub mod tsdata;

pub use error::{Error, Result};
pub use tsdata::Dataset;
