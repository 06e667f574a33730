//! Dense row-major 2-D arrays of `f64`.

use std::fmt;

use crate::error::{Error, Result};

/// Immutable-by-convention 2-D tensor. Leaf tensors built through
/// [`Tensor::new`] are checked for finiteness; intermediate results are not.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "tensor",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension {
                op: "from_rows",
                left: (rows.len(), cols),
                right: (1, bad.len()),
            });
        }
        Tensor::new(rows.len(), cols, rows.concat())
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_raw(1, 1, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows selected by index, in the given order.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_raw(indices.len(), self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub(crate) fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor::from_raw(self.cols, self.rows, out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_raw(m, n, out))
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub(crate) fn matmul_nt(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.cols, other.cols);
        let (m, n) = (self.rows, other.rows);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                out[i * n + j] = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Tensor::from_raw(m, n, out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub(crate) fn matmul_tn(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.rows, other.rows);
        let (k, n) = (self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        for i in 0..self.rows {
            let b_row = other.row(i);
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_raw(k, n, out)
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::Dimension {
                op: "add_row",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(self.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(Tensor::from_raw(self.rows, self.cols, out))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Row-wise softmax of `self / tau` with the row maximum subtracted first.
    pub fn softmax_rows(&self, tau: f64) -> Result<Tensor> {
        check_tau(tau)?;
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(self.cols.max(1)) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - max) / tau).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Tensor::from_raw(self.rows, self.cols, out))
    }

    /// Row-wise log-softmax of `self / tau`.
    pub fn log_softmax_rows(&self, tau: f64) -> Result<Tensor> {
        check_tau(tau)?;
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(self.cols.max(1)) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            for v in row.iter_mut() {
                *v = (*v - max) / tau;
            }
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(Tensor::from_raw(self.rows, self.cols, out))
    }

    /// Per-row Euclidean norm as an m×1 column.
    pub fn row_norms(&self) -> Tensor {
        let data = self
            .iter_rows()
            .take(self.rows)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Tensor::from_raw(self.rows, 1, data)
    }

    /// Rows divided by `max(‖row‖, eps)`.
    pub fn normalize_rows(&self, eps: f64) -> Tensor {
        let norms = self.row_norms();
        let mut out = self.data.clone();
        for (row, &l) in out.chunks_exact_mut(self.cols.max(1)).zip(norms.data()) {
            let denom = l.max(eps);
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        Tensor::from_raw(self.rows, self.cols, out)
    }

    /// Index of the largest entry per row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows()
            .take(self.rows)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}
