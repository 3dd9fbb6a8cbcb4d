use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// Dense row-major tensor of `f64`.
///
/// Most of the network works on rank-2 tensors (`[rows, cols]`); higher ranks
/// are used only as containers (e.g. joint trajectories `[K, N, T, 2]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err("tensor", format!("{n} elements for shape {shape:?}"), data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives `[0, 0]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(dim_err(format!("tensor row {i}"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { shape: vec![rows.len(), cols], data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
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

    /// Size of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of all trailing axes.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err("reshape", format!("{n} elements"), self.data.len()));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(0);
        }
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Concatenates two matrices with the same row count along columns.
    pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rows() != b.rows() {
            return Err(dim_err("concat", format!("{} rows", a.rows()), b.rows()));
        }
        let (ca, cb) = (a.cols(), b.cols());
        let mut data = Vec::with_capacity(a.rows() * (ca + cb));
        for i in 0..a.rows() {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Ok(Tensor { shape: vec![a.rows(), ca + cb], data })
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, at: usize) -> (Tensor, Tensor) {
        let c = self.cols();
        let n = self.rows();
        let mut a = Tensor::zeros(&[n, at]);
        let mut b = Tensor::zeros(&[n, c - at]);
        for i in 0..n {
            let r = self.row(i);
            a.row_mut(i).copy_from_slice(&r[..at]);
            b.row_mut(i).copy_from_slice(&r[at..]);
        }
        (a, b)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `out[n, m] = a[n, k] * b[m, k]^T`
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for t in 0..k {
                s += ar[t] * br[t];
            }
            out[i * m + j] = s;
        }
    }
}

/// `out[n, m] += a[n, k] * b[k, m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * m..(t + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out[k, m] += a[n, k]^T * b[n, m]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[t * m..(t + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}
