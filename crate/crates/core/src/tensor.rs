//! Dense row-major `f64` tensors.

use std::fmt;

use crate::error::{Result, TensorError};

/// A dense n-dimensional array in row-major order.
///
/// Gradient state is held by the [`Tape`](crate::tape::Tape) node that owns a
/// tensor, not by the tensor itself.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::dim(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::dim(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// `n×n` identity.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(TensorError::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < d, "index {ix} out of bounds on axis {i}");
            off = off * d + ix;
        }
        self.data[off]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        let c = *self.shape.last().expect("non-empty shape");
        self.data.chunks_exact(c)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = *self.shape.last().expect("non-empty shape");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        write!(f, " {head:?}")?;
        if self.data.len() > SHOWN {
            write!(f, " … ({} more)", self.data.len() - SHOWN)?;
        }
        Ok(())
    }
}

/// Cosine similarity `a·b / max(‖a‖‖b‖, ε)` with ε = 1e-8.
///
/// A zero vector has similarity 0 with everything.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TensorError::dim(format!(
            "cosine_similarity on lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    const EPS: f64 = 1e-8;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt()).max(EPS)
}

/// Row-major matrix product `op(a)·op(b)` written into `c` (overwritten).
///
/// `a` is stored as `ar×ac`, `b` as `br×bc`; `ta`/`tb` select the transposed
/// view.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    ar: usize,
    ac: usize,
    ta: bool,
    b: &[f64],
    br: usize,
    bc: usize,
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (m, k, rsa, csa) = if ta {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if tb {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe `a`, `b` and `c` exactly, and the
    // slice lengths cover m*k, k*n and m*n elements respectively.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
