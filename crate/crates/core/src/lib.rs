//! Fairness-regularised learning with distance-covariance penalties.
//!
//! The crate is organised bottom-up:
//!
//! * [`dcov`]: distance matrices, U-centring, and the dCov / JdCov / CCdCov
//!   estimators with their decompositions.
//! * [`fairness`]: subgroup unfairness (UF), JS-divergence and the
//!   independence tests.
//! * [`scoring`]: RPS, accuracy, Poisson deviance and the one-sided
//!   Wilcoxon signed-rank test.
//! * [`model`]: a feed-forward network, the regularised objectives with
//!   their gradients, Hutchinson diagonal estimates and AdaHessian.
//! * [`pipeline`]: ingestion, preprocessing, splits, oversampling,
//!   hyperparameter search, lambda calibration and evaluation reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dcov;
pub mod error;
pub mod fairness;
pub mod model;
pub mod pipeline;
pub mod sample;
pub mod scoring;
pub mod stats;
pub mod summation;

pub use error::{Error, Result};
pub use sample::SampleBlock;
