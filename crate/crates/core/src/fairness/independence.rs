use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcov::{centred_blocks, decompose_centred, u_centred_of, UCentredMatrix};
use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::stats::chi2_1_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Chi2,
    PermJoint,
    PermMutual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    /// Number of permutations; 0 for the asymptotic test.
    pub replicates: usize,
    /// Set when the statistic could not be normalised (constant inputs).
    pub degenerate: bool,
}

/// `p = (1 + #{T_r > T_0}) / (1 + R)`.
pub fn permutation_p_value(t0: f64, replicates: &[f64]) -> f64 {
    let exceed = replicates.iter().filter(|&&t| t > t0).count();
    (1 + exceed) as f64 / (1 + replicates.len()) as f64
}

/// Asymptotic test of independence between predictions and the joint
/// attribute vector: `n * dCorr^2` against a chi-square with one degree of
/// freedom.
pub fn chi2_independence_test(yhat: &SampleBlock, attrs: &SampleBlock) -> Result<TestResult> {
    if yhat.n() != attrs.n() {
        return Err(Error::ShapeMismatch("sample sizes differ".into()));
    }
    let n = yhat.n();
    if n < 4 {
        return Err(Error::SampleTooSmall {
            required: 4,
            got: n,
        });
    }
    let ux = u_centred_of(yhat)?;
    let uy = u_centred_of(attrs)?;
    let denom = ux.inner(&ux)? * uy.inner(&uy)?;
    if !(denom.is_finite() && denom > 0.0) {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: TestMethod::Chi2,
            replicates: 0,
            degenerate: true,
        });
    }
    let statistic = n as f64 * ux.inner(&uy)? / denom.sqrt();
    Ok(TestResult {
        statistic,
        p_value: chi2_1_sf(statistic),
        method: TestMethod::Chi2,
        replicates: 0,
        degenerate: false,
    })
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn check_inputs(yhat: &SampleBlock, attrs: &[SampleBlock], replicates: usize) -> Result<usize> {
    if replicates < 1 {
        return Err(Error::Config("need at least one permutation".into()));
    }
    if attrs.is_empty() {
        return Err(Error::ArityError {
            required: 1,
            got: 0,
        });
    }
    let n = yhat.n();
    if attrs.iter().any(|a| a.n() != n) {
        return Err(Error::ShapeMismatch("sample sizes differ".into()));
    }
    if n < 4 {
        return Err(Error::SampleTooSmall {
            required: 4,
            got: n,
        });
    }
    Ok(n)
}

/// Permutation test of independence between predictions and the joint
/// attribute vector. Attribute rows are shuffled as one unit, preserving
/// the dependence between attributes. Replicate `r` draws its permutation
/// from its own stream, so the result does not depend on scheduling.
pub fn permutation_test_joint(
    yhat: &SampleBlock,
    attrs: &[SampleBlock],
    replicates: usize,
    seed: u64,
) -> Result<TestResult> {
    let n = check_inputs(yhat, attrs, replicates)?;
    let uy = u_centred_of(yhat)?;
    let us = u_centred_of(&SampleBlock::concat(attrs)?)?;
    let t0 = uy.inner(&us)?;
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let perm = shuffled(n, &mut replicate_rng(seed, r as u64));
            uy.inner_permuted(&us, &perm)
        })
        .collect::<Result<_>>()?;
    Ok(TestResult {
        statistic: t0,
        p_value: permutation_p_value(t0, &stats),
        method: TestMethod::PermJoint,
        replicates,
        degenerate: false,
    })
}

/// Permutation test of mutual independence using the JdCov statistic. Each
/// attribute block is shuffled with its own stream
/// (`stream = r * d + k + 1` for replicate `r`, attribute `k`), which also
/// breaks the dependence between attributes.
pub fn permutation_test_mutual(
    yhat: &SampleBlock,
    attrs: &[SampleBlock],
    replicates: usize,
    seed: u64,
) -> Result<TestResult> {
    let n = check_inputs(yhat, attrs, replicates)?;
    let mut blocks = Vec::with_capacity(attrs.len() + 1);
    blocks.push(yhat.clone());
    blocks.extend(attrs.iter().cloned());
    let us = centred_blocks(&blocks)?;
    let t0 = decompose_centred(&us)?.total;
    let d = attrs.len() as u64;
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut permuted: Vec<UCentredMatrix> = Vec::with_capacity(us.len());
            permuted.push(us[0].clone());
            for (k, u) in us[1..].iter().enumerate() {
                let mut rng = replicate_rng(seed, r as u64 * d + k as u64 + 1);
                permuted.push(u.permuted(&shuffled(n, &mut rng)));
            }
            decompose_centred(&permuted).map(|dec| dec.total)
        })
        .collect::<Result<_>>()?;
    Ok(TestResult {
        statistic: t0,
        p_value: permutation_p_value(t0, &stats),
        method: TestMethod::PermMutual,
        replicates,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn p_value_arithmetic() {
        assert_eq!(permutation_p_value(10.0, &[1.0, 2.0, 3.0]), 0.25);
        assert_eq!(permutation_p_value(-1.0, &[1.0, 2.0, 3.0]), 1.0);
        let mut reps = vec![0.0; 95];
        reps.extend([5.0; 4]);
        assert!((permutation_p_value(1.0, &reps) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn strongly_dependent_data_hits_the_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..60).map(|_| rng.gen()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let yb = SampleBlock::from_column(&y).unwrap();
        let xb = SampleBlock::from_column(&x).unwrap();
        let r = permutation_test_joint(&yb, std::slice::from_ref(&xb), 49, 3).unwrap();
        assert_eq!(r.p_value, 1.0 / 50.0);
        let r = permutation_test_mutual(&yb, &[xb], 49, 3).unwrap();
        assert_eq!(r.p_value, 1.0 / 50.0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y =
            SampleBlock::from_column(&(0..40).map(|_| rng.gen()).collect::<Vec<f64>>()).unwrap();
        let s =
            SampleBlock::from_column(&(0..40).map(|_| rng.gen()).collect::<Vec<f64>>()).unwrap();
        let a = permutation_test_joint(&y, std::slice::from_ref(&s), 99, 17).unwrap();
        let b = permutation_test_joint(&y, std::slice::from_ref(&s), 99, 17).unwrap();
        assert_eq!(a, b);
        let a = permutation_test_mutual(&y, &[s.clone(), s.clone()], 29, 5).unwrap();
        let b = permutation_test_mutual(&y, &[s.clone(), s], 29, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chi2_degenerate_and_small() {
        let y = SampleBlock::from_column(&[1.0; 6]).unwrap();
        let s = SampleBlock::from_column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = chi2_independence_test(&y, &s).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        let tiny = SampleBlock::from_column(&[1.0, 2.0, 3.0]).unwrap();
        assert!(chi2_independence_test(&tiny, &tiny).is_err());
        assert!(matches!(
            permutation_test_joint(&tiny, std::slice::from_ref(&tiny), 9, 0),
            Err(Error::SampleTooSmall { .. })
        ));
    }
}
