//! Distance covariance estimators.
//!
//! Everything here is built on U-centred distance matrices: the unbiased
//! squared distance covariance of two samples is the scaled Frobenius inner
//! product of their U-centred matrices. The joint (JdCov) and concatenated
//! (CCdCov) variants reuse the same matrices, and both ship a decomposition
//! into pairwise terms plus a higher-order remainder.

mod concat;
mod estimators;
mod joint;
mod matrix;
mod streaming;

pub use concat::{ccdcov, ccdcov_decompose, separate_sum, xi_matrix, CCdCovDecomposition};
pub use estimators::{dcorr2, dcov2_expanded, dcov2_unbiased};
pub use joint::{jdcov2, jdcov2_product_form, jdcov_decompose, JdCovDecomposition};
pub use matrix::{
    pairwise_distance_matrix, u_centre, u_centred_of, DistanceMatrix, UCentredMatrix,
};
pub use streaming::{ccdcov_streaming, dcov2_streaming, jdcov2_streaming};

pub(crate) use joint::{centred_blocks, decompose_centred};
pub(crate) use matrix::u_centre_general;
