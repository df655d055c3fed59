use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::subgroup::{BinningSpec, SubgroupKey};
use crate::error::{Error, Result};
use crate::stats::population_variance;

/// Smoothing added where a reference bin is empty but the compared
/// distribution is not.
pub const KL_EPSILON: f64 = 1e-10;

/// Probability histogram over fixed equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub probs: Vec<f64>,
}

impl Histogram {
    /// Histogram of `values` on `bins` equal-width bins spanning `[lo, hi]`.
    /// The top edge is closed.
    pub fn from_values(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[bin_index(v, lo, hi, bins)] += 1;
        }
        let total = values.len().max(1) as f64;
        Self {
            lo,
            hi,
            probs: counts.into_iter().map(|c| c as f64 / total).collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    fn same_support(&self, other: &Histogram) -> bool {
        self.bins() == other.bins() && self.lo == other.lo && self.hi == other.hi
    }
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let t = ((v - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

/// `sum p log(p / q)` in nats. Bins where `p = 0` contribute nothing; a bin
/// with `p > 0` and `q = 0` uses `q = KL_EPSILON`.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    if !p.same_support(q) {
        return Err(Error::ShapeMismatch("histograms use different bins".into()));
    }
    Ok(kl_probs(&p.probs, &q.probs))
}

fn kl_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(KL_EPSILON)).ln())
        .sum()
}

fn group_indices(keys: &[SubgroupKey]) -> BTreeMap<&SubgroupKey, Vec<usize>> {
    let mut groups: BTreeMap<&SubgroupKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    groups
}

/// Proportion-weighted KL divergence of each subgroup's prediction
/// histogram from the pooled histogram.
pub fn js_divergence(yhat: &[f64], keys: &[SubgroupKey], spec: &BinningSpec) -> Result<f64> {
    if yhat.len() != keys.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} keys",
            yhat.len(),
            keys.len()
        )));
    }
    if yhat.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let lo = yhat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = yhat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let bins = spec.histogram_bins.max(2);
    let pooled = Histogram::from_values(yhat, lo, hi, bins);
    let n = yhat.len() as f64;
    let mut total = 0.0;
    for idx in group_indices(keys).values() {
        let vals: Vec<f64> = idx.iter().map(|&i| yhat[i]).collect();
        let cond = Histogram::from_values(&vals, lo, hi, bins);
        total += idx.len() as f64 / n * kl_probs(&cond.probs, &pooled.probs);
    }
    Ok(total)
}

/// Between-subgroup variance of subgroup means over total prediction
/// variance, with both variances taken over the sample (divide by `n`).
pub fn uf_metric(yhat: &[f64], keys: &[SubgroupKey]) -> Result<f64> {
    if yhat.len() != keys.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} keys",
            yhat.len(),
            keys.len()
        )));
    }
    if yhat.len() < 2 {
        return Err(Error::SampleTooSmall {
            required: 2,
            got: yhat.len(),
        });
    }
    let total_var = population_variance(yhat);
    if !(total_var > 1e-12) {
        return Err(Error::DegenerateVariance(total_var));
    }
    let n = yhat.len() as f64;
    let grand = yhat.iter().sum::<f64>() / n;
    let between: f64 = group_indices(keys)
        .values()
        .map(|idx| {
            let m = idx.iter().map(|&i| yhat[i]).sum::<f64>() / idx.len() as f64;
            idx.len() as f64 / n * (m - grand) * (m - grand)
        })
        .sum();
    Ok(between / total_var)
}

/// Mean prediction and count per subgroup, in key order.
pub fn subgroup_means(yhat: &[f64], keys: &[SubgroupKey]) -> Vec<(SubgroupKey, usize, f64)> {
    group_indices(keys)
        .into_iter()
        .map(|(k, idx)| {
            let m = idx.iter().map(|&i| yhat[i]).sum::<f64>() / idx.len() as f64;
            (k.clone(), idx.len(), m)
        })
        .collect()
}

/// Largest absolute difference between any two subgroup means.
pub fn max_mean_gap(yhat: &[f64], keys: &[SubgroupKey]) -> f64 {
    let means: Vec<f64> = subgroup_means(yhat, keys)
        .into_iter()
        .map(|t| t.2)
        .collect();
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    if means.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(labels: &[u32]) -> Vec<SubgroupKey> {
        labels.iter().map(|&l| SubgroupKey::single(l)).collect()
    }

    #[test]
    fn uf_hand_values() {
        let k = keys(&[0, 0, 1, 1]);
        assert!((uf_metric(&[1.0, 1.0, 3.0, 3.0], &k).unwrap() - 1.0).abs() < 1e-12);
        assert!((uf_metric(&[0.0, 2.0, 1.0, 3.0], &k).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(uf_metric(&[0.0, 2.0, 2.0, 0.0], &k).unwrap(), 0.0);
    }

    #[test]
    fn uf_degenerate_variance() {
        let k = keys(&[0, 1, 0]);
        assert!(matches!(
            uf_metric(&[0.3; 3], &k),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn kl_hand_values() {
        let h = |p: Vec<f64>| Histogram {
            lo: 0.0,
            hi: 1.0,
            probs: p,
        };
        assert_eq!(
            kl_divergence(&h(vec![0.5, 0.5]), &h(vec![0.5, 0.5])).unwrap(),
            0.0
        );
        let v = kl_divergence(&h(vec![1.0, 0.0]), &h(vec![0.5, 0.5])).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = kl_divergence(&h(vec![0.5, 0.5]), &h(vec![0.75, 0.25])).unwrap();
        assert!((v - (0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.1438).abs() < 1e-4);
        let other = Histogram {
            lo: 0.0,
            hi: 2.0,
            probs: vec![0.5, 0.5],
        };
        assert!(kl_divergence(&h(vec![0.5, 0.5]), &other).is_err());
    }

    #[test]
    fn jsd_single_group_is_zero() {
        let y = [0.1, 0.5, 0.9, 0.3];
        assert_eq!(
            js_divergence(&y, &keys(&[0; 4]), &BinningSpec::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn jsd_disjoint_supports_is_ln2() {
        let mut y = Vec::new();
        let mut k = Vec::new();
        for i in 0..50 {
            y.push(i as f64 / 50.0 * 0.4);
            k.push(0);
            y.push(0.6 + i as f64 / 50.0 * 0.4);
            k.push(1);
        }
        let v = js_divergence(&y, &keys(&k), &BinningSpec::default()).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn jsd_identical_subgroups_is_zero() {
        let base = [0.1, 0.2, 0.25, 0.7, 0.9];
        let y: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let k = keys(&[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let v = js_divergence(&y, &k, &BinningSpec::default()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn jsd_constant_predictions() {
        let v = js_divergence(
            &[0.4; 6],
            &keys(&[0, 1, 0, 1, 0, 1]),
            &BinningSpec::default(),
        );
        assert_eq!(v.unwrap(), 0.0);
    }
}
