//! Dense f64 tensors and the numeric kernels shared by the plain-array
//! operations and the differentiable tape.
//!
//! Spatial fields are stored row-major as `[H, W, C]`, i.e. a `[P, C]`
//! matrix with `P = H * W` positions.

use crate::error::{Result, WonnError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(WonnError::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Treat the tensor as `[rows, last_dim]`.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.last() {
            Some(&c) if c > 0 => (self.data.len() / c, c),
            _ => (self.data.len(), 1),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(WonnError::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `c (m x n) = beta * c + op(a) (m x k) * op(b) (k x n)`.
///
/// `a` is stored as `m x k` when `trans_a` is false and `k x m` otherwise;
/// likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the m*k, k*n and m*n buffers checked above.
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

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, false, b, false, 0.0, &mut out);
    out
}

/// Geometry of a same-size 2-D cross-correlation with zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl ConvShape {
    fn radius(&self) -> isize {
        (self.k / 2) as isize
    }

    /// For output row `y`, kernel offset `(ky, kx)`: the input row and the
    /// valid output column range `[x0, x1)` with its input column shift.
    fn segment(&self, y: usize, ky: usize, kx: usize) -> Option<(usize, usize, usize, isize)> {
        let r = self.radius();
        let iy = y as isize + ky as isize - r;
        if iy < 0 || iy >= self.h as isize {
            return None;
        }
        let dx = kx as isize - r;
        let x0 = (-dx).max(0) as usize;
        let x1 = ((self.w as isize) - dx).min(self.w as isize);
        if x1 <= x0 as isize {
            return None;
        }
        Some((iy as usize, x0, x1 as usize, dx))
    }
}

/// out[y, x, :] = sum_{ky,kx} in[y+ky-r, x+kx-r, :] . K[ky, kx, :, :]
pub fn conv2d(input: &[f64], kernel: &[f64], s: ConvShape) -> Vec<f64> {
    let mut out = vec![0.0; s.h * s.w * s.c_out];
    let kk = s.c_in * s.c_out;
    for y in 0..s.h {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let Some((iy, x0, x1, dx)) = s.segment(y, ky, kx) else { continue };
                let len = x1 - x0;
                let ix0 = (x0 as isize + dx) as usize;
                let a = &input[(iy * s.w + ix0) * s.c_in..(iy * s.w + ix0 + len) * s.c_in];
                let b = &kernel[(ky * s.k + kx) * kk..(ky * s.k + kx + 1) * kk];
                let c = &mut out[(y * s.w + x0) * s.c_out..(y * s.w + x1) * s.c_out];
                gemm(len, s.c_in, s.c_out, a, false, b, false, 1.0, c);
            }
        }
    }
    out
}

/// Adjoints of [`conv2d`]: returns (d input, d kernel).
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    s: ConvShape,
) -> (Vec<f64>, Vec<f64>) {
    let mut g_in = vec![0.0; input.len()];
    let mut g_k = vec![0.0; kernel.len()];
    let kk = s.c_in * s.c_out;
    for y in 0..s.h {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let Some((iy, x0, x1, dx)) = s.segment(y, ky, kx) else { continue };
                let len = x1 - x0;
                let ix0 = (x0 as isize + dx) as usize;
                let in_range = (iy * s.w + ix0) * s.c_in..(iy * s.w + ix0 + len) * s.c_in;
                let go = &grad_out[(y * s.w + x0) * s.c_out..(y * s.w + x1) * s.c_out];
                let kr = (ky * s.k + kx) * kk..(ky * s.k + kx + 1) * kk;
                // d in (len x c_in) += go (len x c_out) * K^T
                gemm(len, s.c_out, s.c_in, go, false, &kernel[kr.clone()], true, 1.0, &mut g_in[in_range.clone()]);
                // d K (c_in x c_out) += in^T (c_in x len) * go
                gemm(s.c_in, len, s.c_out, &input[in_range], true, go, false, 1.0, &mut g_k[kr]);
            }
        }
    }
    (g_in, g_k)
}

/// Row-wise softmax of an `m x n` matrix.
pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        o.iter_mut().for_each(|v| *v /= sum);
    }
    out
}
