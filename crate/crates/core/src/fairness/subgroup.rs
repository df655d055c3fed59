use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Per-attribute labels of one row: a category index, or a bin index for
/// continuous attributes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgroupKey(pub Vec<u32>);

impl SubgroupKey {
    pub fn single(label: u32) -> Self {
        Self(vec![label])
    }

    /// Joins per-attribute label vectors row by row.
    pub fn zip(per_attribute: &[Vec<u32>]) -> Result<Vec<SubgroupKey>> {
        let n = per_attribute.first().map(Vec::len).unwrap_or(0);
        if per_attribute.iter().any(|v| v.len() != n) {
            return Err(Error::ShapeMismatch(
                "label vectors differ in length".into(),
            ));
        }
        Ok((0..n)
            .map(|i| SubgroupKey(per_attribute.iter().map(|v| v[i]).collect()))
            .collect())
    }
}

impl std::fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// Discretisation settings for the subgroup metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    /// Quantile levels for continuous attributes, strictly increasing in (0, 1).
    pub quantiles: Vec<f64>,
    /// Equal-width bins for the prediction histograms.
    pub histogram_bins: usize,
}

impl Default for BinningSpec {
    fn default() -> Self {
        Self {
            quantiles: vec![1.0 / 3.0, 2.0 / 3.0],
            histogram_bins: 20,
        }
    }
}

impl BinningSpec {
    pub fn validate(&self) -> Result<()> {
        validate_quantiles(&self.quantiles)?;
        if self.histogram_bins < 2 {
            return Err(Error::Config("histogram needs at least 2 bins".into()));
        }
        Ok(())
    }
}

fn validate_quantiles(qs: &[f64]) -> Result<()> {
    if qs.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::Config(format!(
            "quantiles must lie in (0,1): {qs:?}"
        )));
    }
    if qs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "quantiles must be strictly increasing: {qs:?}"
        )));
    }
    Ok(())
}

/// Quantile cut points fitted once (on training data) and reused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBinner {
    pub cuts: Vec<f64>,
}

impl QuantileBinner {
    /// Cut points at the requested quantiles (linear interpolation).
    /// Duplicate cuts and cuts at or below the fitted minimum are dropped,
    /// so the surviving cuts are strictly increasing and never leave the
    /// lowest bin empty on the fitting data.
    pub fn fit(values: &[f64], quantiles: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("no values to bin".into()));
        }
        validate_quantiles(quantiles)?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let min = sorted[0];
        let mut cuts: Vec<f64> = Vec::with_capacity(quantiles.len());
        for &q in quantiles {
            let c = quantile_sorted(&sorted, q);
            if c > min && cuts.last().is_none_or(|&last| c > last) {
                cuts.push(c);
            }
        }
        Ok(Self { cuts })
    }

    /// Number of cut points at or below `value`; a value exactly on a cut
    /// falls in the upper bin.
    pub fn label(&self, value: f64) -> u32 {
        self.cuts.iter().take_while(|&&c| c <= value).count() as u32
    }

    pub fn apply(&self, values: &[f64]) -> Vec<u32> {
        values.iter().map(|&v| self.label(v)).collect()
    }

    pub fn bin_count(&self) -> usize {
        self.cuts.len() + 1
    }
}

/// Fits quantile cuts on `values` and labels the same values.
pub fn bin_continuous(values: &[f64], quantiles: &[f64]) -> Result<Vec<u32>> {
    Ok(QuantileBinner::fit(values, quantiles)?.apply(values))
}
