//! Dense kernels. All reductions accumulate in `f64`.

use crate::scalar::Scalar;

/// Row and column strides of a matrix operand.
#[derive(Clone, Copy)]
struct Layout {
    row: isize,
    col: isize,
}

/// `out[m,n] = A · B` for strided `A[m,k]` and `B[k,n]`, computed in `f64`
/// by a blocked GEMM.
fn gemm<F: Scalar>(a: &[F], la: Layout, b: &[F], lb: Layout, m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![0f64; m * n];
    if m > 0 && n > 0 && k > 0 {
        let a64: Vec<f64> = a.iter().map(|v| v.to_acc()).collect();
        let b64: Vec<f64> = b.iter().map(|v| v.to_acc()).collect();
        // SAFETY: the strides describe in-bounds views: every index
        // i*row + p*col with i < m (or k) and p < k (or n) lies inside the
        // converted buffers, whose lengths the callers assert, and `out` is
        // a distinct m*n row-major buffer.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a64.as_ptr(),
                la.row,
                la.col,
                b64.as_ptr(),
                lb.row,
                lb.col,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    out.into_iter().map(F::from_acc).collect()
}

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    gemm(a, Layout { row: k as isize, col: 1 }, b, Layout { row: n as isize, col: 1 }, m, k, n)
}

/// Transpose of a row-major `[rows, cols]` matrix.
pub fn transpose<F: Scalar>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `a[m,k] · b[n,k]ᵀ`
pub fn matmul_bt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    gemm(a, Layout { row: k as isize, col: 1 }, b, Layout { row: 1, col: k as isize }, m, k, n)
}

/// `a[k,m]ᵀ · b[k,n]`
pub fn matmul_at<F: Scalar>(a: &[F], b: &[F], k: usize, m: usize, n: usize) -> Vec<F> {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    gemm(a, Layout { row: 1, col: m as isize }, b, Layout { row: n as isize, col: 1 }, m, k, n)
}

pub fn dot_f64<F: Scalar>(a: &[F], b: &[F]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.to_acc() * y.to_acc()).sum()
}

/// Numerically stable softmax of one contiguous row, written into `out`.
pub fn softmax_row<F: Scalar>(row: &[F], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_acc()));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v.to_acc() - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `log Σ exp(row)` in f64.
pub fn log_sum_exp<F: Scalar>(row: &[F]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_acc()));
    let sum: f64 = row.iter().map(|v| (v.to_acc() - max).exp()).sum();
    max + sum.ln()
}

/// Decomposes `shape` around `axis` into (outer, axis length, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
        let bt = transpose(&b, 3, 2);
        assert_eq!(matmul_bt(&a, &bt, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_at(&at, &b, 3, 2, 2), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn softmax_row_is_stable() {
        let mut out = [0.0; 3];
        softmax_row(&[1000.0f32, 1000.0, 1000.0], &mut out);
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
