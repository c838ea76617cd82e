//! Dense row-major `f64` tensors and the primitive operations the
//! unrolled networks are built from.
//!
//! All operations are pure: they borrow their operands and return freshly
//! allocated results. Gradients are provided by [`GradTape`], which records
//! exactly the primitives listed in [`tape`].

mod conv;
pub(crate) mod gemm;
pub(crate) mod nn;
mod power;
pub mod tape;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use conv::{conv2d_correlate, conv2d_filter_grad, conv2d_transpose, Padding};
pub use nn::softmax;
pub use power::{power_iteration_sigma_max, SigmaEstimate};
pub use tape::{BatchStats, GradTape, Gradients, Var};

use gemm::{gemm, MatRef};

/// Dense N-dimensional array of `f64` in row-major order.
///
/// The shape may be empty (a scalar); otherwise every extent is positive and
/// the element count equals the product of the extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::arg("Tensor::new", "every extent must be positive"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim("Tensor::new", len, data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// Copy of the `index`-th slice along the leading axis.
    pub fn slice0(&self, index: usize) -> Tensor {
        assert!(self.rank() >= 1 && index < self.shape[0]);
        let inner: usize = self.shape[1..].iter().product();
        let data = self.data[index * inner..(index + 1) * inner].to_vec();
        let shape = if self.rank() == 1 {
            Vec::new()
        } else {
            self.shape[1..].to_vec()
        };
        Tensor { shape, data }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::arg("Tensor::stack", "nothing to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("Tensor::stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Tensor) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn inner(&self, other: &Tensor) -> Result<f64> {
        self.check_same(other, "inner")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Number of entries that are exactly zero.
    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix product of `a: [M, K]` and `b: [K, N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul")?;
    let (k2, n) = matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", [k, n], [k2, n]));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        MatRef::row_major(&a.data, m, k),
        MatRef::row_major(&b.data, k, n),
        0.0,
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// `a * bᵀ` for `a: [M, K]`, `b: [N, K]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul_nt")?;
    let (n, k2) = matrix_dims(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", [n, k], [n, k2]));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        MatRef::row_major(&a.data, m, k),
        MatRef::row_major(&b.data, n, k).t(),
        0.0,
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// `aᵀ * b` for `a: [K, M]`, `b: [K, N]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = matrix_dims(a, "matmul_tn")?;
    let (k2, n) = matrix_dims(b, "matmul_tn")?;
    if k != k2 {
        return Err(Error::dim("matmul_tn", [k, n], [k2, n]));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        MatRef::row_major(&a.data, k, m).t(),
        MatRef::row_major(&b.data, k, n),
        0.0,
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::dim(op, "rank-2 tensor", other)),
    }
}
