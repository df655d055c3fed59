//! Estimators that never materialise an `n x n` matrix. U-centred entries
//! are rebuilt on the fly from row sums, so memory stays `O(n)` and large
//! evaluation splits remain tractable.

use rayon::prelude::*;

use super::estimators::check_pair;
use super::joint::check_blocks;
use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::summation::pairwise_sum;

struct Streamed<'a> {
    values: &'a [f64],
    p: usize,
    row_sums: Vec<f64>,
    total: f64,
    constant: bool,
}

impl<'a> Streamed<'a> {
    fn new(block: &'a SampleBlock) -> Self {
        let n = block.n();
        let p = block.p();
        let values = block.values().as_slice().expect("standard layout");
        let constant = block.is_constant();
        let row_sums: Vec<f64> = if constant {
            vec![0.0; n]
        } else {
            (0..n)
                .into_par_iter()
                .map(|k| (0..n).map(|l| dist(values, p, k, l)).sum())
                .collect()
        };
        let total = pairwise_sum(&row_sums);
        Self {
            values,
            p,
            row_sums,
            total,
            constant,
        }
    }

    fn entry(&self, k: usize, l: usize, n: f64) -> f64 {
        if self.constant {
            return 0.0;
        }
        dist(self.values, self.p, k, l) - (self.row_sums[k] + self.row_sums[l]) / (n - 2.0)
            + self.total / ((n - 1.0) * (n - 2.0))
    }
}

fn dist(values: &[f64], p: usize, k: usize, l: usize) -> f64 {
    if p == 1 {
        return (values[k] - values[l]).abs();
    }
    let a = &values[k * p..(k + 1) * p];
    let b = &values[l * p..(l + 1) * p];
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn reduce<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| (0..n).filter(|&l| l != k).map(|l| f(k, l)).sum())
        .collect();
    let nf = n as f64;
    pairwise_sum(&rows) / (nf * (nf - 3.0))
}

/// Unbiased squared distance covariance without an `n x n` matrix.
pub fn dcov2_streaming(x: &SampleBlock, y: &SampleBlock) -> Result<f64> {
    let n = check_pair(x, y)?;
    let sx = Streamed::new(x);
    let sy = Streamed::new(y);
    let nf = n as f64;
    Ok(reduce(n, |k, l| sx.entry(k, l, nf) * sy.entry(k, l, nf)))
}

/// CCdCov without an `n x n` matrix.
pub fn ccdcov_streaming(yhat: &SampleBlock, attrs: &[SampleBlock]) -> Result<f64> {
    if attrs.is_empty() {
        return Err(Error::ArityError {
            required: 1,
            got: 0,
        });
    }
    dcov2_streaming(yhat, &SampleBlock::concat(attrs)?)
}

/// JdCov without `n x n` matrices, as
/// `(1/(n(n-3))) sum_{k != l} [prod_i (1 - U_i) - 1 + sum_i U_i]`.
pub fn jdcov2_streaming(blocks: &[SampleBlock]) -> Result<f64> {
    let n = check_blocks(blocks)?;
    let streams: Vec<Streamed> = blocks.iter().map(Streamed::new).collect();
    let nf = n as f64;
    Ok(reduce(n, |k, l| {
        let mut prod = 1.0;
        let mut sum = 0.0;
        for s in &streams {
            let u = s.entry(k, l, nf);
            prod *= 1.0 - u;
            sum += u;
        }
        prod - 1.0 + sum
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcov::{ccdcov, dcov2_unbiased, jdcov2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(n: usize, p: usize, rng: &mut ChaCha8Rng) -> SampleBlock {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen()).collect())
            .collect();
        SampleBlock::from_rows(&rows).unwrap()
    }

    #[test]
    fn agrees_with_matrix_estimators() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [5, 12, 40] {
            let y = block(n, 1, &mut rng);
            let a = block(n, 2, &mut rng);
            let b = block(n, 1, &mut rng);
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-10 * (1.0 + v.abs());
            assert!(close(
                dcov2_streaming(&y, &a).unwrap(),
                dcov2_unbiased(&y, &a).unwrap()
            ));
            let attrs = [a.clone(), b.clone()];
            assert!(close(
                ccdcov_streaming(&y, &attrs).unwrap(),
                ccdcov(&y, &attrs).unwrap()
            ));
            let all = [y, a, b];
            assert!(close(
                jdcov2_streaming(&all).unwrap(),
                jdcov2(&all).unwrap()
            ));
        }
    }

    #[test]
    fn constant_block_is_zero() {
        let y = SampleBlock::from_column(&[0.3; 8]).unwrap();
        let s = SampleBlock::from_column(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(ccdcov_streaming(&y, &[s]).unwrap(), 0.0);
    }
}
