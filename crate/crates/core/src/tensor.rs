//! Dense real tensors.
//!
//! A [`Tensor`] is a shape plus a flat buffer of `f64` in row-major order: the
//! last axis varies fastest. Every diagrammatic contraction in the crate is
//! expressed through [`contract`], [`svd_truncated`] and [`qr_split`], which
//! reduce to matrix kernels after a permutation.

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Relative singular-value cutoff used when callers have no better choice.
pub const DEFAULT_REL_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return invalid(format!("zero extent in shape {shape:?}"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return invalid(format!("shape {shape:?} needs {len} values, got {}", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in shape {shape:?}");
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0; shape.len()];
        for slot in out.data.iter_mut() {
            *slot = f(&idx);
            increment(&mut idx, shape);
        }
        out
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
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

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| acc * e + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// The single value of a tensor whose extents are all 1.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return invalid(format!("tensor of shape {:?} is not a scalar", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Reorders axes: axis `i` of the result is axis `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        if perm.len() != rank {
            return invalid(format!("permutation {perm:?} for rank {rank}"));
        }
        let mut seen = vec![false; rank];
        for &p in perm {
            if p >= rank || seen[p] {
                return invalid(format!("{perm:?} is not a permutation of 0..{rank}"));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let strides = strides(&self.shape);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let new_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let inner = rank - 1;
        let (inner_len, inner_stride) = (new_shape[inner], new_strides[inner]);
        let mut idx = vec![0usize; rank];
        let mut base = 0usize;
        let outer: usize = new_shape[..inner].iter().product();
        for _ in 0..outer {
            let mut off = base;
            for _ in 0..inner_len {
                data.push(self.data[off]);
                off += inner_stride;
            }
            // advance the outer odometer
            for ax in (0..inner).rev() {
                idx[ax] += 1;
                base += new_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                base -= new_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self { shape: new_shape, data })
    }

    /// Permutes `row_axes` to the front and flattens to a matrix.
    pub fn to_matrix(&self, row_axes: &[usize]) -> Result<(Vec<f64>, Vec<usize>, Vec<usize>)> {
        let col_axes = complement(row_axes, self.rank())?;
        let perm: Vec<usize> = row_axes.iter().chain(&col_axes).copied().collect();
        let t = self.permute(&perm)?;
        let rows = row_axes.iter().map(|&a| self.shape[a]).collect();
        let cols = col_axes.iter().map(|&a| self.shape[a]).collect();
        Ok((t.data, rows, cols))
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return invalid(format!("shape {:?} vs {:?}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return invalid(format!("shape {:?} vs {:?}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    /// Full inner product over all entries.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return invalid(format!("shape {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for ax in (0..shape.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < shape[ax] {
            return;
        }
        idx[ax] = 0;
    }
}

fn complement(axes: &[usize], rank: usize) -> Result<Vec<usize>> {
    let mut used = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return invalid(format!("axis {a} out of range for rank {rank}"));
        }
        if used[a] {
            return invalid(format!("axis {a} repeated"));
        }
        used[a] = true;
    }
    Ok((0..rank).filter(|&a| !used[a]).collect())
}

/// Sums over the paired axes of `a` and `b`.
///
/// The result carries the unpaired axes of `a` in order, followed by the
/// unpaired axes of `b`.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    let a_pair: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let b_pair: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a_free = complement(&a_pair, a.rank())?;
    let b_free = complement(&b_pair, b.rank())?;
    for &(i, j) in pairs {
        if a.shape[i] != b.shape[j] {
            return invalid(format!(
                "contracted extents differ: axis {i} of {:?} vs axis {j} of {:?}",
                a.shape, b.shape
            ));
        }
    }
    let perm_a: Vec<usize> = a_free.iter().chain(&a_pair).copied().collect();
    let perm_b: Vec<usize> = b_pair.iter().chain(&b_free).copied().collect();
    let pa = a.permute(&perm_a)?;
    let pb = b.permute(&perm_b)?;
    let m: usize = a_free.iter().map(|&i| a.shape[i]).product();
    let k: usize = a_pair.iter().map(|&i| a.shape[i]).product();
    let n: usize = b_free.iter().map(|&i| b.shape[i]).product();
    let data = linalg::matmul(&pa.data, &pb.data, m, k, n);
    let shape = a_free.iter().map(|&i| a.shape[i]).chain(b_free.iter().map(|&i| b.shape[i])).collect();
    Ok(Tensor { shape, data })
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Row axes of the input followed by the kept singular index.
    pub u: Tensor,
    /// Kept singular values, non-increasing.
    pub s: Vec<f64>,
    /// The kept singular index followed by the column axes of the input.
    pub v: Tensor,
    /// Dropped weight relative to the total, `sum(dropped s^2) / sum(s^2)`.
    pub discarded_weight: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s)`, with the singular axis last.
    pub fn us(&self) -> Tensor {
        scale_axis(&self.u, self.u.rank() - 1, &self.s)
    }

    /// `diag(s) * v`, with the singular axis first.
    pub fn sv(&self) -> Tensor {
        scale_axis(&self.v, 0, &self.s)
    }
}

/// Multiplies slice `i` along `axis` by `factors[i]`.
pub fn scale_axis(t: &Tensor, axis: usize, factors: &[f64]) -> Tensor {
    assert_eq!(t.shape[axis], factors.len());
    let inner: usize = t.shape[axis + 1..].iter().product();
    let ext = t.shape[axis];
    let mut out = t.clone();
    for (chunk_i, chunk) in out.data.chunks_mut(inner).enumerate() {
        let f = factors[chunk_i % ext];
        chunk.iter_mut().for_each(|v| *v *= f);
    }
    out
}

fn check_decomposable(t: &Tensor, row_axes: &[usize]) -> Result<()> {
    if row_axes.is_empty() || row_axes.len() >= t.rank() {
        return invalid(format!("row axes {row_axes:?} must be a proper nonempty subset of rank {}", t.rank()));
    }
    if t.is_empty() {
        return Err(Error::NumericalInput("empty tensor".into()));
    }
    if !t.is_finite() {
        return Err(Error::NumericalInput("non-finite tensor entries".into()));
    }
    Ok(())
}

/// Splits `t` across `row_axes` vs. the remaining axes and keeps at most
/// `max_rank` singular triplets, dropping those below `rel_cutoff * s_0`.
/// At least one triplet is always kept.
pub fn svd_truncated(t: &Tensor, row_axes: &[usize], max_rank: usize, rel_cutoff: f64) -> Result<SvdResult> {
    check_decomposable(t, row_axes)?;
    if max_rank == 0 {
        return invalid("max_rank must be positive");
    }
    if !(rel_cutoff >= 0.0) {
        return invalid(format!("rel_cutoff {rel_cutoff} must be non-negative"));
    }
    let (mat, row_shape, col_shape) = t.to_matrix(row_axes)?;
    let rows: usize = row_shape.iter().product();
    let cols: usize = col_shape.iter().product();
    let (u, s, vt) = linalg::svd(&mat, rows, cols);
    let full = s.len();
    let threshold = rel_cutoff * s[0];
    let above = s.iter().take_while(|&&v| v >= threshold).count();
    let keep = max_rank.min(above).min(full).max(1);
    let total: f64 = s.iter().map(|v| v * v).sum();
    let dropped: f64 = s[keep..].iter().map(|v| v * v).sum();
    let discarded_weight = if total > 0.0 { (dropped / total).clamp(0.0, 1.0) } else { 0.0 };

    let mut u_data = Vec::with_capacity(rows * keep);
    for i in 0..rows {
        u_data.extend_from_slice(&u[i * full..i * full + keep]);
    }
    let v_data = vt[..keep * cols].to_vec();
    let mut u_shape = row_shape;
    u_shape.push(keep);
    let mut v_shape = vec![keep];
    v_shape.extend(col_shape);
    Ok(SvdResult {
        u: Tensor { shape: u_shape, data: u_data },
        s: s[..keep].to_vec(),
        v: Tensor { shape: v_shape, data: v_data },
        discarded_weight,
    })
}

/// Thin QR across `row_axes`: `q` carries the row axes plus the new bond,
/// `r` carries the new bond plus the remaining axes. The diagonal of `r` is
/// non-negative.
pub fn qr_split(t: &Tensor, row_axes: &[usize]) -> Result<(Tensor, Tensor)> {
    check_decomposable(t, row_axes)?;
    let (mat, row_shape, col_shape) = t.to_matrix(row_axes)?;
    let rows: usize = row_shape.iter().product();
    let cols: usize = col_shape.iter().product();
    let (q, r) = linalg::qr(&mat, rows, cols);
    let k = rows.min(cols);
    let mut q_shape = row_shape;
    q_shape.push(k);
    let mut r_shape = vec![k];
    r_shape.extend(col_shape);
    Ok((Tensor { shape: q_shape, data: q }, Tensor { shape: r_shape, data: r }))
}

/// Eigendecomposition of a symmetric matrix tensor: ascending eigenvalues
/// and the eigenvectors as columns.
pub fn symmetric_eigen(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if m.rank() != 2 || m.shape[0] != m.shape[1] {
        return invalid(format!("expected a square matrix, got {:?}", m.shape));
    }
    if !m.is_finite() {
        return Err(Error::NumericalInput("non-finite matrix entries".into()));
    }
    let n = m.shape[0];
    let (vals, vecs) = linalg::eigh(&m.data, n);
    Ok((vals, Tensor { shape: vec![n, n], data: vecs }))
}
