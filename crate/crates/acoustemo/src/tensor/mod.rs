//! Dense row-major f64 tensors with reverse-mode differentiation.
//!
//! Deliberately small: matrices and scalars, no broadcasting, no views.
//! Backward rules stay auditable and every op boundary rejects NaN/Inf
//! instead of propagating poison.

mod gradcheck;
mod tape;

pub use gradcheck::{central_difference_grad, finite_diff_check, max_rel_error};
pub use tape::{NodeId, Tape};

use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward target is not a scalar (numel {numel})")]
    NotScalar { numel: usize },
    #[error("tensor id {id} is not on this tape (len {len})")]
    DetachedTensor { id: usize, len: usize },
    #[error("empty segment: {0}")]
    EmptySegment(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major value. Immutable after construction; gradients live on
/// the tape, not here.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("dims {:?} vs data length {}", dims, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor { dims, data })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let numel = dims.iter().product();
        Tensor { dims, data: vec![0.0; numel] }
    }

    /// Matrix from rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::from_rows",
                detail: "empty or ragged rows".into(),
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(dims: Vec<usize>, std: f64, rng: &mut Rng) -> Self {
        let numel: usize = dims.iter().product();
        let data = (0..numel).map(|_| rng.normal_scaled(std)).collect();
        Tensor { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows of a matrix (a vector counts as one row).
    pub fn rows(&self) -> usize {
        match self.dims.len() {
            2 => self.dims[0],
            _ => 1,
        }
    }

    /// Columns of a matrix (for a vector, its length).
    pub fn cols(&self) -> usize {
        match self.dims.len() {
            2 => self.dims[1],
            _ => self.data.len(),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Copy of rows r0..r1 as a new matrix.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        let c = self.cols();
        if r0 >= r1 || r1 > self.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("range {r0}..{r1} of {} rows", self.rows()),
            });
        }
        Tensor::new(vec![r1 - r0, c], self.data[r0 * c..r1 * c].to_vec())
    }

    /// Row-wise concatenation; all parts must share a column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let c = parts
            .first()
            .ok_or_else(|| TensorError::ShapeMismatch {
                op: "concat_rows",
                detail: "no parts".into(),
            })?
            .cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column mismatch {} vs {}", p.cols(), c),
                });
            }
            rows += p.rows();
            data.extend_from_slice(p.data());
        }
        Tensor::new(vec![rows, c], data)
    }
}

// ── raw kernels (shared by forward and backward) ─────────────────────

/// out += or = A·B with A: m×k, B: k×n.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out = A·Bᵀ with A: m×k, B: n×k.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
}

/// out = Aᵀ·C with A: m×k, C: m×n, out: k×n.
pub(crate) fn matmul_tn_into(a: &[f64], c: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    for i in 0..m {
        let crow = &c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o += av * cv;
            }
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub(crate) fn softmax_rows_into(x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        let xi = &x[r * cols..(r + 1) * cols];
        let oi = &mut out[r * cols..(r + 1) * cols];
        let mx = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in oi.iter_mut().zip(xi) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        for o in oi.iter_mut() {
            *o /= sum;
        }
    }
}
