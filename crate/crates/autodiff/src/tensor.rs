//! Dense row-major f64 tensors and the matrix kernels behind the traced ops.

use rayon::prelude::*;

use crate::error::{AdError, Result};

/// Minimum flop count before a matmul is split across threads.
/// Below this the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 1 << 16;

/// A dense tensor of 64-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and a flat buffer.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(AdError::BadBuffer {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; count],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let count = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; count],
        }
    }

    /// A rank-1 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    /// Single element of a rank-1 length-1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on tensor of {} elements", self.len());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(AdError::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }
}

/// True when `small` equals the trailing suffix of `large` (right-aligned
/// broadcast over leading dimensions), or is the universal scalar `[1]`.
pub fn broadcasts_onto(small: &[usize], large: &[usize]) -> bool {
    if small == [1] {
        return true;
    }
    small.len() <= large.len() && large[large.len() - small.len()..] == *small
}

/// C(m,n) += A(m,k) * B(k,n). Accumulates into `out`.
pub fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let body = |row: usize, out_row: &mut [f64]| {
        let a_row = &a[row * k..(row + 1) * k];
        for (p, &a_v) in a_row.iter().enumerate() {
            if a_v == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_v) in out_row.iter_mut().zip(b_row) {
                *o += a_v * b_v;
            }
        }
    };
    if 2 * m * k * n >= PAR_FLOP_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, out_row)| body(row, out_row));
    } else {
        for (row, out_row) in out.chunks_mut(n).enumerate() {
            body(row, out_row);
        }
    }
}

/// C(m,n) += A(m,k) * B(n,k)^T. Row-by-row dot products.
pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let body = |row: usize, out_row: &mut [f64]| {
        let a_row = &a[row * k..(row + 1) * k];
        for (col, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[col * k..(col + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    };
    if 2 * m * k * n >= PAR_FLOP_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, out_row)| body(row, out_row));
    } else {
        for (row, out_row) in out.chunks_mut(n).enumerate() {
            body(row, out_row);
        }
    }
}

/// C(k,n) += A(m,k)^T * B(m,n). Serial: used for weight gradients where the
/// accumulation order must stay fixed.
pub fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for row in 0..m {
        let a_row = &a[row * k..(row + 1) * k];
        let b_row = &b[row * n..(row + 1) * n];
        for (p, &a_v) in a_row.iter().enumerate() {
            if a_v == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &b_v) in out_row.iter_mut().zip(b_row) {
                *o += a_v * b_v;
            }
        }
    }
}
