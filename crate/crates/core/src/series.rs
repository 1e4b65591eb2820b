use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A `T x p` panel of observations; row `i` is the observation at time `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: DMatrix<f64>,
}

impl TimeSeries {
    /// Wraps a matrix, rejecting NaN and infinite entries.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::EmptySample);
        }
        // column-major storage: recover (row, col) for the message
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos % data.nrows()));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::Input(format!(
                "row {} has {} values, expected {p}",
                i + 1,
                r.len()
            )));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    /// Row-major buffer of `n_obs * dim` values.
    pub fn from_row_major(values: &[f64], n_obs: usize, dim: usize) -> Result<Self> {
        if values.len() != n_obs * dim {
            return Err(Error::DimensionMismatch {
                expected: n_obs * dim,
                got: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n_obs, dim, values))
    }

    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn n_obs(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n_obs();
        &self.data.as_slice()[j * n..(j + 1) * n]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    /// Elementwise map over rows, keeping shape.
    pub fn map_rows(&self, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let (n, p) = self.data.shape();
        let mut out = self.data.clone();
        let mut buf = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                buf[j] = out[(i, j)];
            }
            f(i, &mut buf);
            for j in 0..p {
                out[(i, j)] = buf[j];
            }
        }
        Self { data: out }
    }
}
