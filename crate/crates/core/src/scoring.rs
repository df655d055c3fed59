//! Accuracy scores and the paired accuracy-degradation test.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stats::{average_ranks, normal_sf};

/// Probabilities over `K >= 2` ordered categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteForecast {
    probs: Vec<f64>,
}

impl DiscreteForecast {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidForecast(format!(
                "need at least 2 categories, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidForecast("probability outside [0,1]".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidForecast(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    /// Two-category forecast with probability `p` on category 1.
    pub fn binary(p: f64) -> Result<Self> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }
}

/// Ranked probability score: squared differences of cumulative forecast
/// and cumulative outcome indicator, summed over categories.
pub fn rps(forecast: &DiscreteForecast, observed: usize) -> Result<f64> {
    if observed >= forecast.k() {
        return Err(Error::InvalidForecast(format!(
            "observed category {observed} outside 0..{}",
            forecast.k()
        )));
    }
    let mut cum = 0.0;
    let mut score = 0.0;
    for (k, p) in forecast.probs.iter().enumerate() {
        cum += p;
        let o = if k >= observed { 1.0 } else { 0.0 };
        score += (cum - o) * (cum - o);
    }
    Ok(score)
}

/// RPS of a binary probability forecast.
pub fn rps_binary(p: f64, label: u8) -> Result<f64> {
    rps(&DiscreteForecast::binary(p)?, label as usize)
}

/// Tail mass beyond which a truncated Poisson forecast is extended.
pub const POISSON_TAIL_TOLERANCE: f64 = 1e-6;

fn poisson_log_pmf(k: u64, mean: f64) -> f64 {
    -mean + k as f64 * mean.ln() - ln_gamma(k as f64 + 1.0)
}

/// Truncation cap: `max(observed) + 30`, extended until the Poisson tail
/// beyond it is below [`POISSON_TAIL_TOLERANCE`].
pub fn default_poisson_cap(max_observed: u64, max_mean: f64) -> u64 {
    let mut cap = max_observed + 30;
    while poisson_tail(cap, max_mean) >= POISSON_TAIL_TOLERANCE {
        cap += 10;
    }
    cap
}

fn poisson_tail(cap: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let head: f64 = (0..=cap).map(|k| poisson_log_pmf(k, mean).exp()).sum();
    (1.0 - head).max(0.0)
}

/// RPS of the Poisson forecast with mean `rate * exposure`, truncated at
/// `cap` and renormalised. With `cap = None` the default cap is used.
pub fn rps_poisson(rate: f64, exposure: f64, observed: u64, cap: Option<u64>) -> Result<f64> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidRate(rate));
    }
    if !(exposure > 0.0) {
        return Err(Error::InvalidRate(exposure));
    }
    let mean = rate * exposure;
    let cap = match cap {
        Some(c) if observed > c => return Err(Error::CapTooSmall { observed, cap: c }),
        Some(c) => {
            let mut c = c;
            while poisson_tail(c, mean) >= POISSON_TAIL_TOLERANCE {
                c += 10;
            }
            c
        }
        None => default_poisson_cap(observed, mean),
    };
    let mut probs: Vec<f64> = if mean == 0.0 {
        let mut v = vec![0.0; cap as usize + 1];
        v[0] = 1.0;
        v
    } else {
        (0..=cap).map(|k| poisson_log_pmf(k, mean).exp()).collect()
    };
    let s: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= s;
    }
    let mut cum = 0.0;
    let mut score = 0.0;
    for (k, p) in probs.iter().enumerate() {
        cum += p;
        let o = if k as u64 >= observed { 1.0 } else { 0.0 };
        score += (cum - o) * (cum - o);
    }
    Ok(score)
}

/// Fraction of correct classifications; probabilities at the threshold
/// count as positive.
pub fn accuracy(probs: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= threshold) == (y == 1))
        .count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Mean Poisson deviance `2 [y log(y/mu) - (y - mu)]`, with the log term
/// taken as 0 when `y = 0`.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::ShapeMismatch(
            "counts and means differ in length".into(),
        ));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("no observations".into()));
    }
    let mut total = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        if !(mi > 0.0) {
            return Err(Error::InvalidRate(mi));
        }
        let log_term = if yi == 0.0 { 0.0 } else { yi * (yi / mi).ln() };
        total += 2.0 * (log_term - (yi - mi));
    }
    Ok(total / y.len() as f64)
}

/// Per-observation scores of a baseline and a regularised model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScores {
    pub baseline: Vec<f64>,
    pub regularised: Vec<f64>,
}

impl PairedScores {
    pub fn new(baseline: Vec<f64>, regularised: Vec<f64>) -> Result<Self> {
        if baseline.len() != regularised.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} baseline scores vs {} regularised",
                baseline.len(),
                regularised.len()
            )));
        }
        if baseline.is_empty() {
            return Err(Error::EmptyInput("no paired scores".into()));
        }
        Ok(Self {
            baseline,
            regularised,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    pub z: f64,
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n_used: usize,
    /// Set when every difference was zero.
    pub no_evidence: bool,
}

/// One-sided signed-rank test that the regularised scores exceed the
/// baseline scores. Normal approximation with a -0.5 continuity correction.
pub fn wilcoxon_one_sided(scores: &PairedScores) -> WilcoxonResult {
    let diffs: Vec<f64> = scores
        .regularised
        .iter()
        .zip(&scores.baseline)
        .map(|(r, b)| r - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return WilcoxonResult {
            w_plus: 0.0,
            z: 0.0,
            p_value: 1.0,
            n_used: 0,
            no_evidence: true,
        };
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
    let z = (w_plus - mean - 0.5) / sd;
    WilcoxonResult {
        w_plus,
        z,
        p_value: normal_sf(z),
        n_used: n,
        no_evidence: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rps_examples() {
        let perfect = DiscreteForecast::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(rps(&perfect, 1).unwrap(), 0.0);
        assert!((rps_binary(0.5, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!((rps_binary(0.3, 0).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn rps_rejects_bad_forecasts() {
        assert!(DiscreteForecast::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteForecast::new(vec![1.0]).is_err());
        let f = DiscreteForecast::binary(0.2).unwrap();
        assert!(rps(&f, 2).is_err());
    }

    #[test]
    fn rps_poisson_examples() {
        assert_eq!(rps_poisson(0.0, 1.0, 0, None).unwrap(), 0.0);
        // brute-force oracle: truncated Poisson(1) CDF, observed 0
        let mut pmf = vec![(-1.0f64).exp()];
        for k in 1..=30 {
            let prev = pmf[k - 1];
            pmf.push(prev / k as f64);
        }
        let s: f64 = pmf.iter().sum();
        let mut cdf = 0.0;
        let mut want = 0.0;
        for p in &pmf {
            cdf += p / s;
            want += (cdf - 1.0) * (cdf - 1.0);
        }
        let got = rps_poisson(1.0, 1.0, 0, Some(30)).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let a = rps_poisson(0.4, 1.0, 2, None).unwrap();
        let b = rps_poisson(0.2, 2.0, 2, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            rps_poisson(1.0, 1.0, 12, Some(10)),
            Err(Error::CapTooSmall {
                observed: 12,
                cap: 10
            })
        );
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[1, 0], 0.5).unwrap(), 1.0);
        // TP, TN, FP, FN once each
        assert_eq!(
            accuracy(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 0, 1], 0.5).unwrap(),
            0.5
        );
        assert_eq!(accuracy(&[0.5], &[1], 0.5).unwrap(), 1.0);
        assert!(matches!(accuracy(&[], &[], 0.5), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn deviance_examples() {
        assert_eq!(poisson_deviance(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert!((poisson_deviance(&[0.0], &[1.0]).unwrap() - 2.0).abs() < 1e-15);
        let want = 2.0 * (2.0 * 2f64.ln() - 1.0);
        assert!((poisson_deviance(&[2.0], &[1.0]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.7726).abs() < 1e-4);
        assert_eq!(
            poisson_deviance(&[1.0], &[0.0]),
            Err(Error::InvalidRate(0.0))
        );
    }

    #[test]
    fn wilcoxon_all_positive_five() {
        let s = PairedScores::new(vec![0.0; 5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let r = wilcoxon_one_sided(&s);
        assert_eq!(r.w_plus, 15.0);
        assert!((r.p_value - 0.0294).abs() < 5e-4, "{}", r.p_value);
        assert!((r.p_value - 1.0 / 32.0).abs() < 0.02);
    }

    #[test]
    fn wilcoxon_no_differences() {
        let s = PairedScores::new(vec![0.2; 4], vec![0.2; 4]).unwrap();
        let r = wilcoxon_one_sided(&s);
        assert!(r.no_evidence);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_antisymmetric() {
        let base = vec![0.0; 10];
        let reg = vec![0.1, -0.1, 0.2, -0.2, 0.3, -0.3, 0.4, -0.4, 0.5, -0.5];
        let r = wilcoxon_one_sided(&PairedScores::new(base, reg).unwrap());
        assert!((r.p_value - 0.5).abs() < 0.1);
    }

    #[test]
    fn paired_length_mismatch() {
        assert!(matches!(
            PairedScores::new(vec![0.0], vec![0.0, 1.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
