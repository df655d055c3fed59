use super::matrix::{pairwise_distance_matrix, u_centred_of, DistanceMatrix};
use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::summation::{pairwise_sum, pairwise_sum_by};

pub(crate) fn check_pair(x: &SampleBlock, y: &SampleBlock) -> Result<usize> {
    if x.n() != y.n() {
        return Err(Error::ShapeMismatch(format!(
            "sample sizes differ: {} vs {}",
            x.n(),
            y.n()
        )));
    }
    if x.n() < 4 {
        return Err(Error::SampleTooSmall {
            required: 4,
            got: x.n(),
        });
    }
    Ok(x.n())
}

/// Unbiased squared distance covariance via the inner product of the two
/// U-centred distance matrices. May be slightly negative; never clamped.
pub fn dcov2_unbiased(x: &SampleBlock, y: &SampleBlock) -> Result<f64> {
    check_pair(x, y)?;
    if x.is_constant() || y.is_constant() {
        return Ok(0.0);
    }
    let ux = u_centred_of(x)?;
    let uy = u_centred_of(y)?;
    ux.inner(&uy)
}

/// The same estimator written as triple sums over raw distances, with no
/// U-centring. Used as an independent cross-check of [`dcov2_unbiased`].
pub fn dcov2_expanded(x: &SampleBlock, y: &SampleBlock) -> Result<f64> {
    let n = check_pair(x, y)?;
    let a = pairwise_distance_matrix(x)?;
    let b = pairwise_distance_matrix(y)?;
    Ok(expanded_form(&a, &b, n))
}

/// `(1/(n(n-3))) [ sum a.b + (sum a)(sum b)/((n-1)(n-2)) - 2/(n-2) sum_k a_k. b_k. ]`
pub(crate) fn expanded_form(a: &DistanceMatrix, b: &DistanceMatrix, n: usize) -> f64 {
    let nf = n as f64;
    let ea = a.entries().as_slice().expect("standard layout");
    let eb = b.entries().as_slice().expect("standard layout");
    let cross = pairwise_sum_by(n, |i| {
        let lo = i * n;
        ea[lo..lo + n]
            .iter()
            .zip(&eb[lo..lo + n])
            .map(|(p, q)| p * q)
            .sum::<f64>()
    });
    let ra = a.row_sums();
    let rb = b.row_sums();
    let ta = pairwise_sum(&ra);
    let tb = pairwise_sum(&rb);
    let rows = pairwise_sum_by(n, |k| ra[k] * rb[k]);
    (cross + ta * tb / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * rows) / (nf * (nf - 3.0))
}

/// Squared distance correlation; 0 when the normalising product is not a
/// positive real number.
pub fn dcorr2(x: &SampleBlock, y: &SampleBlock) -> Result<f64> {
    check_pair(x, y)?;
    if x.is_constant() || y.is_constant() {
        return Ok(0.0);
    }
    let ux = u_centred_of(x)?;
    let uy = u_centred_of(y)?;
    let xy = ux.inner(&uy)?;
    let xx = ux.inner(&ux)?;
    let yy = uy.inner(&uy)?;
    let denom = xx * yy;
    if !(denom.is_finite() && denom > 0.0) {
        return Ok(0.0);
    }
    Ok(xy / denom.sqrt())
}
