use serde::{Deserialize, Serialize};

use super::DiffError;

/// Dense row-major tensor of `f64`.
///
/// Rank 0 (`shape == []`) is a scalar, rank 1 a vector and rank 2 a matrix.
/// Higher ranks are representable but no kernel accepts them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        if shape.contains(&0) {
            return Err(DiffError::InvalidShape(shape));
        }
        if numel(&shape) != data.len() {
            return Err(DiffError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self { shape: vec![n], data }
    }

    /// Builds a matrix from equally sized rows.
    ///
    /// Panics if rows are ragged or empty.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        assert!(r > 0, "from_rows needs at least one row");
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Self {
        debug_assert_eq!(numel(shape), self.data.len());
        Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `[m,k] x [k,n]`. Zero entries of `self` are skipped, which makes
    /// one-hot inputs cheap.
    pub fn matmul(&self, rhs: &Self) -> Self {
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = rhs.shape[1];
        debug_assert_eq!(k, rhs.shape[0]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Adds a length-`c` vector to every row of an `[r,c]` matrix.
    pub fn add_row_vector(&self, bias: &Self) -> Self {
        let c = self.cols();
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax_rows(&self) -> Self {
        let c = self.cols();
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
    }

    pub fn softmax_rows(&self) -> Self {
        let c = self.cols();
        let mut out = self.data.clone();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Self {
            shape: self.shape.clone(),
            data: out,
        }
    }

    /// Sum over the row axis: `[r,c] -> [c]`.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Self::vector(out)
    }

    /// Sum over the column axis: `[r,c] -> [r]`.
    pub fn sum_cols(&self) -> Self {
        let c = self.cols();
        Self::vector(self.data.chunks(c).map(|row| row.iter().sum()).collect())
    }

    /// `[r,c] -> [r*k,c]` with each row repeated `k` times in place.
    pub fn repeat_rows(&self, k: usize) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(self.data.len() * k);
        for row in self.data.chunks(c) {
            for _ in 0..k {
                data.extend_from_slice(row);
            }
        }
        Self {
            shape: vec![self.rows() * k, c],
            data,
        }
    }

    /// `[r*k,c] -> [r,c]` summing consecutive blocks of `k` rows.
    pub fn sum_row_blocks(&self, k: usize) -> Self {
        let c = self.cols();
        let r = self.rows() / k;
        let mut data = vec![0.0; r * c];
        for (i, row) in self.data.chunks(c).enumerate() {
            for (o, &v) in data[(i / k) * c..(i / k + 1) * c].iter_mut().zip(row) {
                *o += v;
            }
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn concat_cols(&self, rhs: &Self) -> Self {
        let (r, a) = (self.shape[0], self.shape[1]);
        let b = rhs.shape[1];
        let mut out = Vec::with_capacity(r * (a + b));
        for i in 0..r {
            out.extend_from_slice(&self.data[i * a..(i + 1) * a]);
            out.extend_from_slice(&rhs.data[i * b..(i + 1) * b]);
        }
        Self {
            shape: vec![r, a + b],
            data: out,
        }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let (r, c) = (self.shape[0], self.shape[1]);
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Self {
            shape: vec![r, w],
            data: out,
        }
    }

    pub fn pad_cols(&self, start: usize, total: usize) -> Self {
        let (r, w) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * total];
        for i in 0..r {
            out[i * total + start..i * total + start + w].copy_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        Self {
            shape: vec![r, total],
            data: out,
        }
    }
}
