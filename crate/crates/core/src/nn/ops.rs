//! Dense row-major matrices and the kernels the encoder is built from.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulate operations issued by matrix products on this thread
/// since the last [`reset_mac_count`].
pub fn mac_count() -> u64 {
    MACS.with(|c| c.get())
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// A strided view used to express transposes without copying.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn of(m: &'a Mat) -> Self {
        View {
            data: &m.data,
            offset: 0,
            rows: m.rows,
            cols: m.cols,
            rs: m.cols,
            cs: 1,
        }
    }

    pub fn slice(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        View {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Columns `start..start + width` of a row-major matrix.
    pub fn cols_of(m: &'a Mat, start: usize, width: usize) -> Self {
        assert!(start + width <= m.cols);
        View {
            data: &m.data,
            offset: start,
            rows: m.rows,
            cols: width,
            rs: m.cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

/// `out[.., col_off..col_off+n] = alpha * a @ b + beta * out[..]`, where `out`
/// is row-major with `out_cols` columns.
pub fn gemm_into(a: View, b: View, out: &mut [f64], out_cols: usize, col_off: usize, alpha: f64, beta: f64) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions");
    assert!(col_off + n <= out_cols);
    assert!(m == 0 || (m - 1) * out_cols + col_off + n <= out.len());
    a.check();
    b.check();
    if m == 0 || n == 0 {
        return;
    }
    MACS.with(|c| c.set(c.get() + (m * k * n) as u64));
    if k == 0 {
        for r in 0..m {
            for v in &mut out[r * out_cols + col_off..r * out_cols + col_off + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: bounds of all three operands were checked above against their
    // strides; the output slice is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr().add(col_off),
            out_cols as isize,
            1,
        );
    }
}

pub fn matmul(a: View, b: View) -> Mat {
    let mut out = Mat::zeros(a.rows, b.cols);
    let cols = out.cols;
    gemm_into(a, b, &mut out.data, cols, 0, 1.0, 0.0);
    out
}

/// `acc += a @ b` where `acc` is a flat row-major buffer.
pub fn matmul_acc(a: View, b: View, acc: &mut [f64]) {
    let n = b.cols;
    gemm_into(a, b, acc, n, 0, 1.0, 1.0);
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> (Mat, LnCache) {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for c in 0..d {
            xh[c] = (row[c] - mean) * is;
        }
        let yr = y.row_mut(r);
        for c in 0..d {
            yr[c] = gamma[c] * xhat.data[r * d + c] + beta[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Returns dx; accumulates into dgamma / dbeta.
pub fn layer_norm_backward(dy: &Mat, cache: &LnCache, gamma: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..d {
            dgamma[c] += dyr[c] * xh[c];
            dbeta[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        let dxr = dx.row_mut(r);
        for c in 0..d {
            dxr[c] = is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// In-place numerically stable softmax over `row`.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                out.data[i * b.cols + j] = (0..a.cols).map(|k| a.data[i * a.cols + k] * b.data[k * b.cols + j]).sum();
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_and_counts() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        reset_mac_count();
        let c = matmul(View::of(&a), View::of(&b));
        assert_eq!(mac_count(), 12);
        assert_eq!(c, naive(&a, &b));
        // transposed view: (b^T)^T == b
        let bt = Mat::from_vec(2, 3, vec![0.5, 2.0, 1.0, -1.0, 0.0, 3.0]);
        assert_eq!(matmul(View::of(&a), View::of(&bt).t()), c);
    }

    #[test]
    fn column_slice_view() {
        let a = Mat::from_vec(2, 4, (0..8).map(f64::from).collect());
        let eye = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let c = matmul(View::cols_of(&a, 1, 2), View::of(&eye));
        assert_eq!(c.data, vec![1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_of_masked_row_is_zero() {
        let mut r = vec![f64::NEG_INFINITY; 3];
        softmax_in_place(&mut r);
        assert_eq!(r, vec![0.0; 3]);
        let mut r = vec![1.0, 1.0];
        softmax_in_place(&mut r);
        assert_eq!(r, vec![0.5, 0.5]);
    }
}
