use serde::{Deserialize, Serialize};

use super::estimators::check_pair;
use super::matrix::{u_centred_of, UCentredMatrix};
use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::summation::pairwise_sum_by;

/// Joint distance covariance split into its pairwise terms and the
/// higher-order remainder `zeta`. The first block is the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JdCovDecomposition {
    /// Prediction against each attribute, in attribute order.
    pub pred_attr_terms: Vec<f64>,
    /// Attribute pairs `(k, l)` with `k < l`, lexicographic.
    pub attr_attr_terms: Vec<f64>,
    /// Every subset product of three or more kernels `-U`.
    pub zeta: f64,
    pub total: f64,
}

pub(crate) fn check_blocks(blocks: &[SampleBlock]) -> Result<usize> {
    if blocks.len() < 2 {
        return Err(Error::ArityError {
            required: 2,
            got: blocks.len(),
        });
    }
    let mut n = 0;
    for b in &blocks[1..] {
        n = check_pair(&blocks[0], b)?;
    }
    Ok(n)
}

pub(crate) fn centred_blocks(blocks: &[SampleBlock]) -> Result<Vec<UCentredMatrix>> {
    blocks.iter().map(u_centred_of).collect()
}

/// Sum over all subsets of size >= 3 of the products of `values`, i.e. the
/// elementary symmetric polynomials e_3 + e_4 + ... + e_m.
pub(crate) fn higher_order_products(values: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let m = values.len();
    if m < 3 {
        return 0.0;
    }
    scratch.clear();
    scratch.resize(m + 1, 0.0);
    scratch[0] = 1.0;
    for (count, &v) in values.iter().enumerate() {
        for order in (1..=count + 1).rev() {
            scratch[order] += v * scratch[order - 1];
        }
    }
    scratch[3..].iter().sum()
}

/// `zeta` term computed from U-centred matrices. Products run over the
/// kernels `K = -U` (the centred `-|x - x'|` kernel is positive definite),
/// so odd orders change sign relative to products of `U`; pairs do not.
pub(crate) fn zeta_of(us: &[UCentredMatrix]) -> f64 {
    if us.len() < 3 {
        return 0.0;
    }
    let n = us[0].n();
    let slices: Vec<&[f64]> = us
        .iter()
        .map(|u| u.entries().as_slice().expect("standard layout"))
        .collect();
    let total = pairwise_sum_by(n, |k| {
        let mut vals = vec![0.0; slices.len()];
        let mut scratch = Vec::with_capacity(slices.len() + 1);
        let mut acc = 0.0;
        for l in 0..n {
            if k == l {
                continue;
            }
            for (v, s) in vals.iter_mut().zip(&slices) {
                *v = -s[k * n + l];
            }
            acc += higher_order_products(&vals, &mut scratch);
        }
        acc
    });
    let nf = n as f64;
    total / (nf * (nf - 3.0))
}

pub(crate) fn decompose_centred(us: &[UCentredMatrix]) -> Result<JdCovDecomposition> {
    let d = us.len() - 1;
    let mut pred_attr_terms = Vec::with_capacity(d);
    for u in &us[1..] {
        pred_attr_terms.push(us[0].inner(u)?);
    }
    let mut attr_attr_terms = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for k in 1..=d {
        for l in (k + 1)..=d {
            attr_attr_terms.push(us[k].inner(&us[l])?);
        }
    }
    let zeta = zeta_of(us);
    let total = pred_attr_terms.iter().sum::<f64>() + attr_attr_terms.iter().sum::<f64>() + zeta;
    Ok(JdCovDecomposition {
        pred_attr_terms,
        attr_attr_terms,
        zeta,
        total,
    })
}

/// Bias-corrected joint distance covariance of two or more blocks, computed
/// as the sum of all pairwise unbiased dCov terms plus `zeta`. Its
/// expectation is non-negative and vanishes under mutual independence.
pub fn jdcov2(blocks: &[SampleBlock]) -> Result<f64> {
    Ok(jdcov_decompose(blocks)?.total)
}

pub fn jdcov_decompose(blocks: &[SampleBlock]) -> Result<JdCovDecomposition> {
    check_blocks(blocks)?;
    decompose_centred(&centred_blocks(blocks)?)
}

/// The product form `(1/(n(n-3))) sum_kl prod_i (1 - U_i(k,l)) - n/(n-3)`.
///
/// The sum runs over all ordered pairs including `k = l`; each diagonal
/// entry contributes exactly 1 and the expansion's constant term is
/// `n^2 / (n(n-3)) = n/(n-3)`, which is what is subtracted.
pub fn jdcov2_product_form(blocks: &[SampleBlock]) -> Result<f64> {
    let n = check_blocks(blocks)?;
    let us = centred_blocks(blocks)?;
    let slices: Vec<&[f64]> = us
        .iter()
        .map(|u| u.entries().as_slice().expect("standard layout"))
        .collect();
    let total = pairwise_sum_by(n * n, |idx| {
        slices.iter().map(|s| 1.0 - s[idx]).product::<f64>()
    });
    let nf = n as f64;
    Ok(total / (nf * (nf - 3.0)) - nf / (nf - 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcov::dcov2_unbiased;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(rng: &mut ChaCha8Rng, n: usize, p: usize) -> SampleBlock {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        SampleBlock::from_rows(&rows).unwrap()
    }

    #[test]
    fn elementary_symmetric_tail() {
        let mut s = Vec::new();
        // e3 of (1,2,3) = 6
        assert_eq!(higher_order_products(&[1.0, 2.0, 3.0], &mut s), 6.0);
        // (1,1,1,1): e3 = 4, e4 = 1
        assert_eq!(higher_order_products(&[1.0; 4], &mut s), 5.0);
        assert_eq!(higher_order_products(&[1.0, 2.0], &mut s), 0.0);
    }

    #[test]
    fn two_blocks_reduce_to_dcov() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_block(&mut rng, 20, 1);
        let y = random_block(&mut rng, 20, 2);
        let dec = jdcov_decompose(&[x.clone(), y.clone()]).unwrap();
        assert_eq!(dec.zeta, 0.0);
        assert!(dec.attr_attr_terms.is_empty());
        assert_eq!(dec.pred_attr_terms[0], dcov2_unbiased(&x, &y).unwrap());
        assert_eq!(
            jdcov2(&[x.clone(), y.clone()]).unwrap(),
            dcov2_unbiased(&x, &y).unwrap()
        );
    }

    #[test]
    fn shape_of_decomposition_for_two_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blocks: Vec<_> = (0..3).map(|_| random_block(&mut rng, 15, 1)).collect();
        let dec = jdcov_decompose(&blocks).unwrap();
        assert_eq!(dec.pred_attr_terms.len(), 2);
        assert_eq!(dec.attr_attr_terms.len(), 1);
        let direct = jdcov2(&blocks).unwrap();
        assert!((dec.total - direct).abs() < 1e-8);
    }

    #[test]
    fn product_form_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in 2..=4 {
            let blocks: Vec<_> = (0..d)
                .map(|i| random_block(&mut rng, 12, 1 + i % 2))
                .collect();
            let a = jdcov2(&blocks).unwrap();
            let b = jdcov2_product_form(&blocks).unwrap();
            assert!((a - b).abs() < 1e-8, "d={d}: {a} vs {b}");
        }
    }

    #[test]
    fn interaction_only_dependence_is_penalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400;
        let a: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.gen_bool(0.5))))
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.gen_bool(0.5))))
            .collect();
        let attrs = [
            SampleBlock::from_column(&a).unwrap(),
            SampleBlock::from_column(&b).unwrap(),
        ];
        let jd = |scale: f64| {
            let y: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, z)| scale * f64::from(u8::from(x == z)))
                .collect();
            let mut blocks = vec![SampleBlock::from_column(&y).unwrap()];
            blocks.extend(attrs.iter().cloned());
            jdcov_decompose(&blocks).unwrap()
        };
        let small = jd(0.5);
        let large = jd(1.0);
        assert!(small.zeta > 0.05, "{small:?}");
        assert!(large.total > small.total);
    }

    #[test]
    fn arity_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_block(&mut rng, 8, 1);
        assert_eq!(
            jdcov2(&[x]),
            Err(Error::ArityError {
                required: 2,
                got: 1
            })
        );
    }
}
