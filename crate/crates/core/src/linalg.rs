//! Row-major dense matrix kernels on top of `faer`.
//!
//! Everything here takes and returns plain `&[f64]` / `Vec<f64>` buffers in
//! row-major order so the tensor layer never has to know about faer's
//! column-major, possibly padded storage.

use faer::linalg::matmul::matmul as faer_matmul;
use faer::{MatRef, Parallelism, Side};

pub(crate) fn view(data: &[f64], rows: usize, cols: usize) -> MatRef<'_, f64> {
    faer::mat::from_row_major_slice(data, rows, cols)
}

fn to_row_major(m: MatRef<'_, f64>) -> Vec<f64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m.read(i, j));
        }
    }
    out
}

/// `a` is `m x k`, `b` is `k x n`; returns the `m x n` product.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    // Row-major C = A B is column-major C^T = B^T A^T, and a row-major buffer
    // read column-major is the transpose.
    let lhs = faer::mat::from_column_major_slice::<f64, _, _>(b, n, k);
    let rhs = faer::mat::from_column_major_slice::<f64, _, _>(a, k, m);
    let acc = faer::mat::from_column_major_slice_mut::<f64, _, _>(&mut out, n, m);
    faer_matmul(acc, lhs, rhs, None, 1.0, Parallelism::None);
    out
}

/// Thin SVD with singular values sorted non-increasing.
///
/// Returns `(u, s, vt)` with `u` of shape `rows x r`, `vt` of shape
/// `r x cols`, `r = min(rows, cols)`.
pub(crate) fn svd(data: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let svd = view(data, rows, cols).thin_svd();
    let r = rows.min(cols);
    let s_col = svd.s_diagonal();
    let mut order: Vec<usize> = (0..r).collect();
    // Stable sort keeps the earlier index on ties.
    order.sort_by(|&i, &j| s_col.read(j).partial_cmp(&s_col.read(i)).unwrap_or(std::cmp::Ordering::Equal));
    let u = svd.u();
    let v = svd.v();
    let mut u_out = vec![0.0; rows * r];
    let mut vt_out = vec![0.0; r * cols];
    let mut s_out = Vec::with_capacity(r);
    for (new, &old) in order.iter().enumerate() {
        s_out.push(s_col.read(old).max(0.0));
        for i in 0..rows {
            u_out[i * r + new] = u.read(i, old);
        }
        for j in 0..cols {
            vt_out[new * cols + j] = v.read(j, old);
        }
    }
    (u_out, s_out, vt_out)
}

/// Thin QR with the diagonal of `r` made non-negative.
pub(crate) fn qr(data: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let qr = view(data, rows, cols).qr();
    let q = qr.compute_thin_q();
    let r = qr.compute_thin_r();
    let k = rows.min(cols);
    let mut q_out = to_row_major(q.as_ref());
    let mut r_out = to_row_major(r.as_ref());
    for c in 0..k {
        if r_out[c * cols + c] < 0.0 {
            for i in 0..rows {
                q_out[i * k + c] = -q_out[i * k + c];
            }
            for j in 0..cols {
                r_out[c * cols + j] = -r_out[c * cols + j];
            }
        }
    }
    (q_out, r_out)
}

/// Eigendecomposition of a real symmetric `n x n` matrix.
///
/// Eigenvalues ascend; column `i` of the returned row-major matrix is the
/// eigenvector of eigenvalue `i`.
pub(crate) fn eigh(data: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let eig = view(data, n, n).selfadjoint_eigendecomposition(Side::Lower);
    let s = eig.s().column_vector();
    let vals: Vec<f64> = (0..n).map(|i| s.read(i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap_or(std::cmp::Ordering::Equal));
    let u = eig.u();
    let mut vecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + new] = u.read(i, old);
        }
    }
    (order.iter().map(|&i| vals[i]).collect(), vecs)
}

/// Minimum-norm solution of `a x = b` for symmetric positive semi-definite
/// `a` (`n x n`) and `b` (`n x m`), discarding eigenvalues below
/// `rel_cutoff` times the largest.
pub(crate) fn psd_pinv_solve(a: &[f64], b: &[f64], n: usize, m: usize, rel_cutoff: f64) -> Vec<f64> {
    let (vals, vecs) = eigh(a, n);
    let top = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    // x = V diag(1/lambda) V^T b
    let vt_b = {
        let vt = transpose(&vecs, n, n);
        matmul(&vt, b, n, n, m)
    };
    let mut scaled = vt_b;
    for i in 0..n {
        let inv = if top > 0.0 && vals[i] > rel_cutoff * top { 1.0 / vals[i] } else { 0.0 };
        for j in 0..m {
            scaled[i * m + j] *= inv;
        }
    }
    matmul(&vecs, &scaled, n, n, m)
}

pub(crate) fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}
