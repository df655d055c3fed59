//! Row-major sample containers shared by the estimators.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x p` sample of one variable: predictions, or one protected
/// attribute (possibly one-hot encoded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBlock {
    values: Array2<f64>,
}

impl SampleBlock {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidSample("block has zero columns".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!("non-finite entry {bad}")));
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    /// A one-dimensional block from a slice of scalars.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        let arr = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|e| Error::InvalidSample(e.to_string()))?;
        Self::new(arr)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(1);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), p), flat)
            .map_err(|e| Error::InvalidSample(e.to_string()))?;
        Self::new(arr)
    }

    /// Column-wise concatenation of blocks with equal row counts.
    pub fn concat(blocks: &[SampleBlock]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::EmptyInput("no blocks to concatenate".into()))?;
        let n = first.n();
        if blocks.iter().any(|b| b.n() != n) {
            return Err(Error::ShapeMismatch(
                "blocks to concatenate differ in row count".into(),
            ));
        }
        let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.values.view()).collect();
        let values = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(i)
    }

    /// True when every row equals the first one.
    pub fn is_constant(&self) -> bool {
        if self.n() == 0 {
            return true;
        }
        let first = self.values.row(0);
        self.values.rows().into_iter().all(|r| r == first)
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), perm),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        self.permute_rows(idx)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for SampleBlock {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_column(&v)
    }
}
