use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::estimators::{check_pair, dcov2_unbiased, expanded_form};
use super::matrix::{pairwise_distance_matrix, DistanceMatrix};
use crate::error::{Error, Result};
use crate::sample::SampleBlock;

/// Distance covariance with the concatenated attributes, split into the
/// per-attribute marginal terms and the joint-only remainder `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CCdCovDecomposition {
    pub marginal_terms: Vec<f64>,
    pub eta: f64,
    pub total: f64,
}

fn check_attrs(yhat: &SampleBlock, attrs: &[SampleBlock]) -> Result<usize> {
    if attrs.is_empty() {
        return Err(Error::ArityError {
            required: 1,
            got: 0,
        });
    }
    let mut n = 0;
    for a in attrs {
        n = check_pair(yhat, a)?;
    }
    Ok(n)
}

/// Unbiased dCov between the predictions and the column-concatenation of
/// all attribute blocks.
pub fn ccdcov(yhat: &SampleBlock, attrs: &[SampleBlock]) -> Result<f64> {
    check_attrs(yhat, attrs)?;
    dcov2_unbiased(yhat, &SampleBlock::concat(attrs)?)
}

/// Marginal terms and `eta`.
///
/// `xi(k,l) = |s_k - s_l| - sum_i |s_{k,i} - s_{l,i}|` is formed exactly as a
/// difference of distance matrices; `eta` is then the expanded estimator
/// with the prediction distances on one side and `xi` on the other. The
/// expanded form is linear in its second argument, so
/// `total = sum(marginal_terms) + eta` holds up to rounding.
pub fn ccdcov_decompose(yhat: &SampleBlock, attrs: &[SampleBlock]) -> Result<CCdCovDecomposition> {
    let n = check_attrs(yhat, attrs)?;
    let marginal_terms = attrs
        .iter()
        .map(|s| dcov2_unbiased(yhat, s))
        .collect::<Result<Vec<_>>>()?;
    let joint = SampleBlock::concat(attrs)?;
    let total = dcov2_unbiased(yhat, &joint)?;
    let eta = if attrs.len() == 1 {
        0.0
    } else {
        let a = pairwise_distance_matrix(yhat)?;
        let xi = xi_matrix(&joint, attrs)?;
        expanded_form(&a, &xi, n)
    };
    Ok(CCdCovDecomposition {
        marginal_terms,
        eta,
        total,
    })
}

/// The (non-positive) gap between the joint distance and the sum of the
/// per-attribute distances.
pub fn xi_matrix(joint: &SampleBlock, attrs: &[SampleBlock]) -> Result<DistanceMatrix> {
    let n = joint.n();
    let mut m: Array2<f64> = pairwise_distance_matrix(joint)?.entries().clone();
    for a in attrs {
        let d = pairwise_distance_matrix(a)?;
        m -= d.entries();
    }
    for i in 0..n {
        m[[i, i]] = 0.0;
    }
    DistanceMatrix::from_raw(m)
}

/// Weighted sum of per-attribute unbiased dCov terms.
pub fn separate_sum(yhat: &SampleBlock, attrs: &[SampleBlock], weights: &[f64]) -> Result<f64> {
    if weights.len() != attrs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} attributes",
            weights.len(),
            attrs.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidWeight(w));
    }
    check_attrs(yhat, attrs)?;
    let mut total = 0.0;
    for (s, &w) in attrs.iter().zip(weights) {
        if w != 0.0 {
            total += w * dcov2_unbiased(yhat, s)?;
        }
    }
    Ok(total)
}
