//! Shared forward/backward kernels. The tape and the tape-free inference
//! path call the same functions so their outputs agree bit for bit.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn check_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `out = A B` for row-major `A: m x k`, `B: k x n`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    assert!(a.len() == m * k && b.len() == k * n && out.len() == m * n);
    // SAFETY: lengths checked above, row-major strides, `out` is a distinct buffer.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            T::ZERO,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `out += A^T B` for row-major `A: k x m`, `B: k x n`.
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    assert!(a.len() == k * m && b.len() == k * n && out.len() == m * n);
    // SAFETY: as above; A is read through transposed strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            T::ONE,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `out += A B^T` for row-major `A: m x n`, `B: k x n`.
pub(crate) fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    assert!(a.len() == m * n && b.len() == k * n && out.len() == m * k);
    // SAFETY: as above; B is read through transposed strides.
    unsafe {
        T::gemm(
            m,
            n,
            k,
            T::ONE,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            T::ONE,
            out.as_mut_ptr(),
            k as isize,
            1,
        )
    }
}

pub(crate) fn add_row_inplace<T: Scalar>(x: &mut [T], row: &[T]) {
    for chunk in x.chunks_exact_mut(row.len()) {
        for (v, b) in chunk.iter_mut().zip(row) {
            *v += *b;
        }
    }
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + three * k * x * x)
}

/// Row-wise normalization to zero mean, unit variance. Returns per-row
/// `1 / sqrt(var + eps)` for the backward pass.
pub(crate) fn layer_norm_rows<T: Scalar>(x: &[T], cols: usize, out: &mut [T]) -> Vec<T> {
    let n = T::from_f64(cols as f64);
    let eps = T::from_f64(LAYER_NORM_EPS);
    let mut inv_stds = Vec::with_capacity(x.len() / cols);
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mut mean = T::ZERO;
        for v in row {
            mean += *v;
        }
        mean = mean / n;
        let mut var = T::ZERO;
        for v in row {
            let d = *v - mean;
            var += d * d;
        }
        var = var / n;
        let inv = T::ONE / (var + eps).sqrt();
        for (o, v) in o.iter_mut().zip(row) {
            *o = (*v - mean) * inv;
        }
        inv_stds.push(inv);
    }
    inv_stds
}

/// Backward of [`layer_norm_rows`] given its output `y`.
pub(crate) fn layer_norm_rows_grad<T: Scalar>(y: &[T], dy: &[T], inv_stds: &[T], cols: usize, dx: &mut [T]) {
    let n = T::from_f64(cols as f64);
    for (((yr, dyr), dxr), inv) in y
        .chunks_exact(cols)
        .zip(dy.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
        .zip(inv_stds)
    {
        let mut mean_dy = T::ZERO;
        let mut mean_dyy = T::ZERO;
        for (a, b) in yr.iter().zip(dyr) {
            mean_dy += *b;
            mean_dyy += *a * *b;
        }
        mean_dy = mean_dy / n;
        mean_dyy = mean_dyy / n;
        for ((d, a), b) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += *inv * (*b - mean_dy - *a * mean_dyy);
        }
    }
}
