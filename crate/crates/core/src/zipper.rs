//! Boundary MPS for finite PEPS, built row by row with the zipper.
//!
//! Applying a row of transfer tensors to a boundary MPS is done one column at
//! a time. At column `y` the carried tensor `C = Lambda Z` from the previous
//! step, the old boundary tensor `T_y` and the transfer tensor `t_y` are
//! contracted into a matrix
//!
//! ```text
//!   M[(a, down), (right_h, right_b)]      a: new bond, down: D^2,
//!                                         right_h: D^2, right_b: old bond
//! ```
//!
//! whose SVD `U Lambda Z` is truncated to `chi`. `U` becomes the new boundary
//! tensor and `Lambda Z` is carried on. Everything left of `M` is then
//! left-canonical and everything right of it right-canonical, so each
//! truncation is locally optimal. The finished boundary is left-canonical;
//! the next row is zipped in the opposite direction.
//!
//! Each zipped boundary is normalized to unit 2-norm and the logarithm of
//! the removed factor is returned separately so large lattices neither
//! overflow nor underflow.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::peps::{PepsState, TransferTensor};
use crate::tensor::{contract, qr_split, svd_truncated, Tensor, DEFAULT_REL_CUTOFF};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Canonical {
    Left,
    Right,
    None,
}

/// Tensors `(left bond, physical, right bond)`. The physical leg is the
/// fused ket/bra bond pointing into the next row.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMps {
    pub tensors: Vec<Tensor>,
    pub canonical: Canonical,
    pub chi: usize,
}

#[derive(Clone, Debug)]
pub struct ZipStep {
    pub y: usize,
    pub lambda: Vec<f64>,
    pub discarded_weight: f64,
}

#[derive(Clone, Debug)]
pub struct ZipOutput {
    pub mps: BoundaryMps,
    pub steps: Vec<ZipStep>,
    /// Log of the factor divided out to leave `mps` with unit norm.
    pub log_scale: f64,
}

/// The boundary above the first row (or below the last): all extents 1.
pub fn trivial_boundary(width: usize) -> Result<BoundaryMps> {
    if width == 0 {
        return invalid("boundary width must be at least 1");
    }
    let tensors = (0..width).map(|_| Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap()).collect();
    Ok(BoundaryMps { tensors, canonical: Canonical::Right, chi: 1 })
}

impl BoundaryMps {
    pub fn width(&self) -> usize {
        self.tensors.len()
    }

    /// Extents of the `width - 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.width() - 1].iter().map(|t| t.shape()[2]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width();
        if n == 0 {
            return invalid("empty boundary");
        }
        if self.tensors[0].shape()[0] != 1 || self.tensors[n - 1].shape()[2] != 1 {
            return invalid("terminal bonds must have extent 1");
        }
        for w in self.tensors.windows(2) {
            if w[0].shape()[2] != w[1].shape()[0] {
                return invalid("neighbouring bond extents differ");
            }
        }
        Ok(())
    }

    /// Left and right exchanged; a left-canonical MPS becomes right-canonical.
    pub fn mirrored(&self) -> Self {
        let tensors = self.tensors.iter().rev().map(|t| t.permute(&[2, 1, 0]).expect("rank-3")).collect();
        let canonical = match self.canonical {
            Canonical::Left => Canonical::Right,
            Canonical::Right => Canonical::Left,
            Canonical::None => Canonical::None,
        };
        Self { tensors, canonical, chi: self.chi }
    }

    /// `<self|other>` over the physical legs.
    pub fn overlap(&self, other: &BoundaryMps) -> Result<f64> {
        if self.width() != other.width() {
            return invalid("overlap of boundaries of different width");
        }
        let mut env = Tensor::new(vec![1, 1], vec![1.0])?;
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            let ea = contract(&env, a, &[(0, 0)])?; // [b_left, p, a_right]
            env = contract(&ea, b, &[(0, 0), (1, 1)])?; // [a_right, b_right]
        }
        env.item()
    }

    pub fn norm(&self) -> Result<f64> {
        Ok(self.overlap(self)?.max(0.0).sqrt())
    }

    /// Largest deviation of the left-canonical isometry conditions. The last
    /// tensor carries the norm and is compared up to that scale.
    pub fn left_isometry_error(&self) -> f64 {
        let n = self.width();
        let mut worst = 0.0_f64;
        for (i, t) in self.tensors.iter().enumerate() {
            let g = contract(t, t, &[(0, 0), (1, 1)]).expect("rank-3");
            worst = worst.max(identity_deviation(&g, i + 1 == n));
        }
        worst
    }

    pub fn right_isometry_error(&self) -> f64 {
        self.mirrored().left_isometry_error()
    }

    /// Contracts to a dense vector over the physical legs; for tests on small
    /// widths.
    pub fn to_dense(&self) -> Result<Tensor> {
        let mut acc = Tensor::new(vec![1, 1], vec![1.0])?;
        for t in &self.tensors {
            let c = contract(&acc, t, &[(1, 0)])?;
            let (p, q, r) = (c.shape()[0], c.shape()[1], c.shape()[2]);
            acc = c.reshape(&[p * q, r])?;
        }
        let n = acc.len();
        acc.reshape(&[n])
    }
}

fn identity_deviation(g: &Tensor, up_to_scale: bool) -> f64 {
    let n = g.shape()[0];
    let scale = if up_to_scale { (0..n).map(|i| g.get(&[i, i])).sum::<f64>() / n as f64 } else { 1.0 };
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { scale } else { 0.0 };
            worst = worst.max((g.get(&[i, j]) - target).abs());
        }
    }
    if up_to_scale && scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Brings `mps` to left- or right-canonical form without changing the vector
/// it represents.
pub fn canonicalize(mps: &BoundaryMps, direction: Canonical) -> Result<BoundaryMps> {
    match direction {
        Canonical::Left => left_canonicalize(mps),
        Canonical::Right => Ok(left_canonicalize(&mps.mirrored())?.mirrored()),
        Canonical::None => Ok(BoundaryMps { canonical: Canonical::None, ..mps.clone() }),
    }
}

fn left_canonicalize(mps: &BoundaryMps) -> Result<BoundaryMps> {
    mps.validate()?;
    let n = mps.width();
    let mut tensors = Vec::with_capacity(n);
    let mut carry: Option<Tensor> = None;
    for (i, t) in mps.tensors.iter().enumerate() {
        let t = match carry.take() {
            Some(r) => contract(&r, t, &[(1, 0)])?,
            None => t.clone(),
        };
        if i + 1 == n {
            tensors.push(t);
            break;
        }
        let (q, r) = qr_split(&t, &[0, 1])?;
        tensors.push(q);
        carry = Some(r);
    }
    Ok(BoundaryMps { tensors, canonical: Canonical::Left, chi: mps.chi })
}

/// Applies one row of transfer tensors to a right-canonical boundary, left
/// to right, truncating every bond to `chi`. Returns a left-canonical
/// boundary of unit norm.
pub fn zip_row(boundary: &BoundaryMps, row: &[TransferTensor], chi: usize, rel_cutoff: f64) -> Result<ZipOutput> {
    if boundary.canonical != Canonical::Right {
        return invalid("zip_row needs a right-canonical boundary");
    }
    zip_left_to_right(boundary, row, chi, rel_cutoff)
}

/// The mirror image of [`zip_row`]: consumes a left-canonical boundary,
/// sweeps right to left and returns a right-canonical boundary.
pub fn zip_row_reverse(boundary: &BoundaryMps, row: &[TransferTensor], chi: usize, rel_cutoff: f64) -> Result<ZipOutput> {
    if boundary.canonical != Canonical::Left {
        return invalid("zip_row_reverse needs a left-canonical boundary");
    }
    let mirrored_row: Vec<TransferTensor> = row.iter().rev().map(TransferTensor::flip_horizontal).collect();
    let out = zip_left_to_right(&boundary.mirrored(), &mirrored_row, chi, rel_cutoff)?;
    let width = row.len();
    let steps = out
        .steps
        .into_iter()
        .map(|s| ZipStep { y: width - 1 - s.y, ..s })
        .collect();
    Ok(ZipOutput { mps: out.mps.mirrored(), steps, log_scale: out.log_scale })
}

fn zip_left_to_right(boundary: &BoundaryMps, row: &[TransferTensor], chi: usize, rel_cutoff: f64) -> Result<ZipOutput> {
    if chi == 0 {
        return invalid("chi must be at least 1");
    }
    if boundary.width() != row.len() {
        return invalid(format!("boundary width {} vs row width {}", boundary.width(), row.len()));
    }
    let n = row.len();
    // carried Lambda Z with axes [new bond, horizontal transfer leg, old bond]
    let mut carry = Tensor::new(vec![1, 1, 1], vec![1.0])?;
    let mut tensors = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n);
    for (y, (old, t)) in boundary.tensors.iter().zip(row).enumerate() {
        let with_old = contract(&carry, old, &[(2, 0)])?; // [a, h, u, b']
        let m = contract(&with_old, &t.tensor, &[(1, 1), (2, 0)])?; // [a, b', d, h']
        let m = m.permute(&[0, 2, 3, 1])?; // [a, d, h', b']
        let split = svd_truncated(&m, &[0, 1], chi, rel_cutoff)?;
        carry = split.sv();
        steps.push(ZipStep { y, lambda: split.s.clone(), discarded_weight: split.discarded_weight });
        tensors.push(split.u);
    }
    // after the last column the carry is a 1x1x1 scalar
    let c = carry.item()?;
    if c == 0.0 || !c.is_finite() {
        return Err(Error::ContractionAccuracy(format!("zipped boundary has norm {c}")));
    }
    if c < 0.0 {
        tensors[n - 1].scale(-1.0);
    }
    Ok(ZipOutput {
        mps: BoundaryMps { tensors, canonical: Canonical::Left, chi },
        steps,
        log_scale: c.abs().ln(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOptions {
    pub chi: usize,
    pub rel_cutoff: f64,
    /// Normalize every zipped boundary and keep the log of the factor.
    pub rescale: bool,
}

impl BoundaryOptions {
    pub fn new(chi: usize) -> Self {
        Self { chi, rel_cutoff: DEFAULT_REL_CUTOFF, rescale: true }
    }
}

/// Boundary MPS of a lattice seen from the top and from the bottom.
///
/// `top[x]` approximates rows `0..=x` with its physical legs pointing down
/// into row `x + 1`; `bottom[x]` approximates rows `x..lx` with its physical
/// legs pointing up into row `x - 1`. The true boundaries are the stored
/// ones times `exp(top_log[x])` / `exp(bottom_log[x])`.
#[derive(Clone, Debug)]
pub struct Boundaries {
    pub top: Vec<BoundaryMps>,
    pub bottom: Vec<BoundaryMps>,
    pub top_log: Vec<f64>,
    pub bottom_log: Vec<f64>,
    /// Discarded weights of every zip step, top sweep then bottom sweep.
    pub steps: Vec<(usize, ZipStep)>,
}

impl Boundaries {
    /// Boundary above row `x` (trivial for `x == 0`) and its log scale.
    pub fn above(&self, x: usize) -> (BoundaryMps, f64) {
        if x == 0 {
            (trivial_boundary(self.top[0].width()).unwrap(), 0.0)
        } else {
            (self.top[x - 1].clone(), self.top_log[x - 1])
        }
    }

    /// Boundary below row `x` (trivial for the last row) and its log scale.
    pub fn below(&self, x: usize) -> (BoundaryMps, f64) {
        let lx = self.bottom.len();
        if x + 1 == lx {
            (trivial_boundary(self.bottom[0].width()).unwrap(), 0.0)
        } else {
            (self.bottom[x + 1].clone(), self.bottom_log[x + 1])
        }
    }
}

/// Zips `rows` (each already oriented so its up legs face the boundary)
/// onto a trivial boundary, alternating the sweep direction. Returns every
/// intermediate boundary with cumulative log scales.
pub fn zip_sequence(
    rows: impl IntoIterator<Item = Vec<TransferTensor>>,
    width: usize,
    opts: &BoundaryOptions,
) -> Result<(Vec<BoundaryMps>, Vec<f64>, Vec<(usize, ZipStep)>)> {
    let mut current = trivial_boundary(width)?;
    let mut log = 0.0;
    let (mut mps_out, mut logs, mut steps) = (Vec::new(), Vec::new(), Vec::new());
    for (r, row) in rows.into_iter().enumerate() {
        let out = match current.canonical {
            Canonical::Right => zip_row(&current, &row, opts.chi, opts.rel_cutoff)?,
            Canonical::Left => zip_row_reverse(&current, &row, opts.chi, opts.rel_cutoff)?,
            Canonical::None => zip_row(&canonicalize(&current, Canonical::Right)?, &row, opts.chi, opts.rel_cutoff)?,
        };
        let mut mps = out.mps;
        if opts.rescale {
            log += out.log_scale;
        } else {
            let edge = if mps.canonical == Canonical::Left { mps.width() - 1 } else { 0 };
            mps.tensors[edge].scale(out.log_scale.exp());
        }
        steps.extend(out.steps.into_iter().map(|s| (r, s)));
        mps_out.push(mps.clone());
        logs.push(log);
        current = mps;
    }
    Ok((mps_out, logs, steps))
}

/// Top and bottom boundaries of every row, optionally with basis projectors
/// (`projectors[x * ly + y] = Some(label)`) inserted on measured sites.
pub fn boundaries_all_rows(state: &PepsState, opts: &BoundaryOptions, projectors: Option<&[Option<usize>]>) -> Result<Boundaries> {
    let rows = transfer_rows(state, projectors)?;
    let ly = state.ly();
    let (top, top_log, mut steps) = zip_sequence(rows.iter().cloned(), ly, opts)?;
    let flipped = rows.iter().rev().map(|r| r.iter().map(TransferTensor::flip_vertical).collect::<Vec<_>>());
    let (mut bottom, mut bottom_log, bottom_steps) = zip_sequence(flipped, ly, opts)?;
    bottom.reverse();
    bottom_log.reverse();
    let lx = state.lx();
    steps.extend(bottom_steps.into_iter().map(|(r, s)| (lx - 1 - r, s)));
    Ok(Boundaries { top, bottom, top_log, bottom_log, steps })
}

/// Transfer tensors of all rows with optional projector insertions.
pub fn transfer_rows(state: &PepsState, projectors: Option<&[Option<usize>]>) -> Result<Vec<Vec<TransferTensor>>> {
    let (lx, ly) = (state.lx(), state.ly());
    if let Some(p) = projectors {
        if p.len() != lx * ly {
            return invalid("projector list does not cover the lattice");
        }
    }
    let mut rows = Vec::with_capacity(lx);
    for x in 0..lx {
        let mut row = Vec::with_capacity(ly);
        for y in 0..ly {
            let site = state.site(x, y);
            let op = match projectors.and_then(|p| p[x * ly + y]) {
                Some(label) => {
                    let d = site.shape()[crate::peps::PHYS];
                    if label >= d {
                        return invalid(format!("projector label {label} out of range"));
                    }
                    Some(crate::models::projector(d, label))
                }
                None => None,
            };
            row.push(crate::peps::transfer_tensor(site, op.as_ref())?);
        }
        rows.push(row);
    }
    Ok(rows)
}
