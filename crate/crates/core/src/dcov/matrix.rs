use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sample::SampleBlock;
use crate::summation::{pairwise_sum, pairwise_sum_by};

/// Symmetric, zero-diagonal matrix of Euclidean distances between rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

/// Doubly centred distance matrix with the finite-sample correction that
/// makes the inner-product estimator unbiased. Zero diagonal, vanishing
/// off-diagonal row and column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct UCentredMatrix(Array2<f64>);

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    /// Wraps a matrix without validating the distance axioms.
    pub fn from_raw(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(
                "distance matrix must be square".into(),
            ));
        }
        Ok(Self(m))
    }

    /// Row sums computed with cascade summation.
    pub fn row_sums(&self) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| pairwise_sum(r.as_slice().expect("standard layout")))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|j| pairwise_sum_by(n, |i| self.0[[i, j]]))
            .collect()
    }
}

impl UCentredMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn zeros(n: usize) -> Self {
        Self(Array2::zeros((n, n)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// `(1 / (n (n - 3))) * sum_ij A_ij B_ij`.
    pub fn inner(&self, other: &UCentredMatrix) -> Result<f64> {
        let n = self.n();
        if other.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "sample sizes differ: {} vs {}",
                n,
                other.n()
            )));
        }
        let a = self.0.as_slice().expect("standard layout");
        let b = other.0.as_slice().expect("standard layout");
        let total = pairwise_sum_by(n, |i| {
            let lo = i * n;
            a[lo..lo + n]
                .iter()
                .zip(&b[lo..lo + n])
                .map(|(x, y)| x * y)
                .sum::<f64>()
        });
        Ok(total / (n as f64 * (n as f64 - 3.0)))
    }

    /// Inner product against a second matrix whose rows and columns are
    /// relabelled by `perm`: `sum_ij A_ij B_{perm i, perm j}`, scaled.
    /// U-centring commutes with relabelling, so this equals the estimator
    /// on a row-permuted second sample.
    pub fn inner_permuted(&self, other: &UCentredMatrix, perm: &[usize]) -> Result<f64> {
        let n = self.n();
        if other.n() != n || perm.len() != n {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let a = self.0.as_slice().expect("standard layout");
        let b = other.0.as_slice().expect("standard layout");
        let total = pairwise_sum_by(n, |i| {
            let row_b = perm[i] * n;
            let row_a = i * n;
            (0..n)
                .map(|j| a[row_a + j] * b[row_b + perm[j]])
                .sum::<f64>()
        });
        Ok(total / (n as f64 * (n as f64 - 3.0)))
    }

    pub(crate) fn from_raw(m: Array2<f64>) -> Self {
        Self(m)
    }

    /// Same matrix with rows and columns relabelled by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = self.0[[perm[i], perm[j]]];
            }
        }
        Self(out)
    }
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distances between every pair of rows of `block`.
pub fn pairwise_distance_matrix(block: &SampleBlock) -> Result<DistanceMatrix> {
    let n = block.n();
    if n == 0 {
        return Err(Error::EmptyInput("block has no rows".into()));
    }
    if block.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite entry".into()));
    }
    let mut d = Array2::zeros((n, n));
    if block.p() == 1 {
        let col: Vec<f64> = block.values().column(0).to_vec();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (col[i] - col[j]).abs();
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
    } else {
        for i in 0..n {
            for j in (i + 1)..n {
                let v = euclidean(block.row(i), block.row(j));
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
    }
    Ok(DistanceMatrix(d))
}

/// U-centring of a distance matrix. Requires `n >= 4`.
pub fn u_centre(d: &DistanceMatrix) -> Result<UCentredMatrix> {
    let n = d.n();
    if n < 4 {
        return Err(Error::SampleTooSmall {
            required: 4,
            got: n,
        });
    }
    let rows = d.row_sums();
    let cols = d.col_sums();
    let total = pairwise_sum(&rows);
    let nf = n as f64;
    let grand = total / ((nf - 1.0) * (nf - 2.0));
    let mut u = Array2::zeros((n, n));
    for i in 0..n {
        let ri = rows[i] / (nf - 2.0);
        for j in 0..n {
            if i != j {
                u[[i, j]] = d.0[[i, j]] - ri - cols[j] / (nf - 2.0) + grand;
            }
        }
    }
    Ok(UCentredMatrix(u))
}

/// U-centred distance matrix of a sample, short-circuiting constant blocks
/// to exact zeros.
pub fn u_centred_of(block: &SampleBlock) -> Result<UCentredMatrix> {
    let n = block.n();
    if n < 4 {
        return Err(Error::SampleTooSmall {
            required: 4,
            got: n,
        });
    }
    if block.is_constant() {
        return Ok(UCentredMatrix::zeros(n));
    }
    u_centre(&pairwise_distance_matrix(block)?)
}

/// U-centring applied to an arbitrary symmetric matrix; the diagonal of the
/// input is ignored.
pub(crate) fn u_centre_general(m: &Array2<f64>) -> UCentredMatrix {
    let n = m.nrows();
    let mut work = m.clone();
    for i in 0..n {
        work[[i, i]] = 0.0;
    }
    u_centre(&DistanceMatrix(work)).expect("caller guarantees n >= 4")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_distances() {
        let b = SampleBlock::from_column(&[0.0, 3.0, 4.0]).unwrap();
        let d = pairwise_distance_matrix(&b).unwrap();
        assert_eq!(
            d.entries(),
            &array![[0.0, 3.0, 4.0], [3.0, 0.0, 1.0], [4.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn identical_rows_give_zero_matrix() {
        let b = SampleBlock::from_rows(&vec![vec![1.5, -2.0]; 6]).unwrap();
        let d = pairwise_distance_matrix(&b).unwrap();
        assert!(d.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_rows_are_root_two_apart() {
        let b = SampleBlock::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = pairwise_distance_matrix(&b).unwrap();
        assert_abs_diff_eq!(d.entries()[[0, 1]], 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(d.entries()[[0, 0]], 0.0);
    }

    #[test]
    fn u_centre_rejects_small_samples() {
        let b = SampleBlock::from_column(&[0.0, 3.0, 4.0]).unwrap();
        let d = pairwise_distance_matrix(&b).unwrap();
        assert_eq!(
            u_centre(&d),
            Err(Error::SampleTooSmall {
                required: 4,
                got: 3
            })
        );
    }

    #[test]
    fn u_centre_of_zero_is_zero() {
        let d = DistanceMatrix(Array2::zeros((5, 5)));
        assert!(u_centre(&d).unwrap().is_zero());
    }

    #[test]
    fn u_centred_rows_and_columns_sum_to_zero() {
        // rows 0,3,4 padded with a fourth point so the divisors are defined
        let b = SampleBlock::from_column(&[0.0, 3.0, 4.0, 10.0]).unwrap();
        let u = u_centre(&pairwise_distance_matrix(&b).unwrap()).unwrap();
        for i in 0..4 {
            let r: f64 = u.entries().row(i).sum();
            let c: f64 = u.entries().column(i).sum();
            assert!(r.abs() < 1e-12 && c.abs() < 1e-12, "row {i}: {r} {c}");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let u = u_centred_of(&SampleBlock::from_rows(&rows).unwrap()).unwrap();
        let max = u.entries().iter().fold(0f64, |m, v| m.max(v.abs()));
        for i in 0..10 {
            assert!(u.entries().row(i).sum().abs() < 1e-9 * 10.0 * max);
            assert!(u.entries().column(i).sum().abs() < 1e-9 * 10.0 * max);
            assert_eq!(u.entries()[[i, i]], 0.0);
            for j in 0..10 {
                assert_abs_diff_eq!(u.entries()[[i, j]], u.entries()[[j, i]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let arr = array![[0.0], [f64::NAN]];
        assert!(matches!(
            SampleBlock::new(arr),
            Err(Error::InvalidSample(_))
        ));
    }

    #[test]
    fn permuted_inner_matches_explicit_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
        let perm: Vec<usize> = vec![3, 1, 0, 2, 5, 4, 11, 9, 10, 6, 8, 7];
        let ux = u_centred_of(&SampleBlock::from_column(&x).unwrap()).unwrap();
        let uy = u_centred_of(&SampleBlock::from_column(&y).unwrap()).unwrap();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let uyp = u_centred_of(&SampleBlock::from_column(&yp).unwrap()).unwrap();
        let direct = ux.inner(&uyp).unwrap();
        let fast = ux.inner_permuted(&uy, &perm).unwrap();
        assert_abs_diff_eq!(direct, fast, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ux.inner(&uy.permuted(&perm)).unwrap(),
            direct,
            epsilon = 1e-12
        );
    }
}
