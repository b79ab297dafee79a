//! Norms, local expectation values and correlators from boundary sandwiches.
//!
//! A row `x` sits between the top boundary of rows `0..x` and the bottom
//! boundary of rows `x+1..`. The resulting quasi-1D window is contracted
//! exactly, column by column, with running rescaling. Column correlators use
//! the transposed lattice.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{pauli_x, pauli_z, Bond, ModelSpec};
use crate::peps::{transfer_tensor, PepsState, TransferTensor};
use crate::tensor::{contract, Tensor};
use crate::zipper::{boundaries_all_rows, BoundaryMps, BoundaryOptions, Boundaries};

/// A value `mantissa * exp(log_scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl Scaled {
    pub fn value(&self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }

    pub fn ratio(&self, other: &Scaled) -> f64 {
        self.mantissa / other.mantissa * (self.log_scale - other.log_scale).exp()
    }
}

fn normalized(t: Tensor, log: f64) -> (Tensor, f64) {
    let m = t.max_abs();
    if m > 0.0 && m.is_finite() {
        (t.scaled(1.0 / m), log + m.ln())
    } else {
        (t, log)
    }
}

fn check_op(op: &Tensor, d: usize) -> Result<()> {
    if op.shape() != [d, d] {
        return invalid(format!("operator shape {:?}, expected [{d}, {d}]", op.shape()));
    }
    for i in 0..d {
        for j in 0..i {
            if (op.get(&[i, j]) - op.get(&[j, i])).abs() > 1e-12 * op.max_abs().max(1.0) {
                return invalid("operators must be symmetric");
            }
        }
    }
    Ok(())
}

/// Row `x` sandwiched between its top and bottom boundaries, with cached
/// environments from both ends.
#[derive(Clone, Debug)]
pub struct RowWindow {
    pub top: BoundaryMps,
    pub bottom: BoundaryMps,
    pub row: Vec<TransferTensor>,
    sites: Vec<Tensor>,
    /// `left[y]` covers columns `0..y`, axes `[top bond, row bond, bottom bond]`.
    left: Vec<(Tensor, f64)>,
    /// `right[y]` covers columns `y..width`.
    right: Vec<(Tensor, f64)>,
    boundary_log: f64,
}

fn unit3() -> Tensor {
    Tensor::new(vec![1, 1, 1], vec![1.0]).expect("unit")
}

impl RowWindow {
    pub fn new(top: BoundaryMps, bottom: BoundaryMps, sites: Vec<Tensor>, boundary_log: f64) -> Result<Self> {
        let width = sites.len();
        if top.width() != width || bottom.width() != width {
            return invalid("row window widths differ");
        }
        let row = sites.iter().map(|s| transfer_tensor(s, None)).collect::<Result<Vec<_>>>()?;
        let mut w = Self { top, bottom, row, sites, left: Vec::new(), right: Vec::new(), boundary_log };
        let mut left = vec![(unit3(), 0.0)];
        for y in 0..width {
            let (env, log) = &left[y];
            let next = w.absorb_left(env, y, &w.row[y])?;
            left.push(normalized(next, *log));
        }
        let mut right = vec![(unit3(), 0.0); width + 1];
        for y in (0..width).rev() {
            let (env, log) = &right[y + 1];
            let next = w.absorb_right(env, y, &w.row[y])?;
            right[y] = normalized(next, *log);
        }
        w.left = left;
        w.right = right;
        Ok(w)
    }

    pub fn width(&self) -> usize {
        self.row.len()
    }

    fn absorb_left(&self, env: &Tensor, y: usize, t: &TransferTensor) -> Result<Tensor> {
        let a = contract(env, &self.top.tensors[y], &[(0, 0)])?; // [h, b, u, a']
        let b = contract(&a, &t.tensor, &[(0, 1), (2, 0)])?; // [b, a', d, h']
        contract(&b, &self.bottom.tensors[y], &[(0, 0), (2, 1)]) // [a', h', b']
    }

    fn absorb_right(&self, env: &Tensor, y: usize, t: &TransferTensor) -> Result<Tensor> {
        let a = contract(&self.top.tensors[y], env, &[(2, 0)])?; // [a, u, h', b']
        let b = contract(&a, &t.tensor, &[(1, 0), (2, 3)])?; // [a, b', h, d]
        contract(&b, &self.bottom.tensors[y], &[(1, 2), (3, 1)]) // [a, h, b]
    }

    fn close(&self, env: &Tensor, log: f64, y: usize) -> Result<Scaled> {
        let (r, rlog) = &self.right[y];
        Ok(Scaled { mantissa: env.dot(r)?, log_scale: log + rlog + self.boundary_log })
    }

    fn op_tensor(&self, y: usize, op: &Tensor) -> Result<TransferTensor> {
        check_op(op, self.sites[y].shape()[crate::peps::PHYS])?;
        transfer_tensor(&self.sites[y], Some(op))
    }

    /// `<psi|psi>` as seen through this window.
    pub fn norm_sq(&self) -> Result<Scaled> {
        let (l, log) = &self.left[self.width()];
        self.close(l, *log, self.width())
    }

    /// Unnormalized `<psi|O_y|psi>`.
    pub fn value_site(&self, y: usize, op: &Tensor) -> Result<Scaled> {
        let t = self.op_tensor(y, op)?;
        let (l, log) = &self.left[y];
        let (env, log) = normalized(self.absorb_left(l, y, &t)?, *log);
        self.close(&env, log, y + 1)
    }

    pub fn expect_site(&self, y: usize, op: &Tensor) -> Result<f64> {
        Ok(self.value_site(y, op)?.ratio(&checked_norm(self.norm_sq()?)?))
    }

    /// `<O_a O_b>` for `y_a < y_b` in this row, normalized.
    pub fn expect_pair(&self, ya: usize, yb: usize, op_a: &Tensor, op_b: &Tensor) -> Result<f64> {
        let values = self.pair_scan(ya, op_a, op_b, yb)?;
        let norm = checked_norm(self.norm_sq()?)?;
        Ok(values.last().expect("one pair").ratio(&norm))
    }

    /// `<O_a(ya) O_b(yb)>` for every `yb` in `ya+1..=last`, reusing one
    /// environment sweep.
    pub fn pair_scan(&self, ya: usize, op_a: &Tensor, op_b: &Tensor, last: usize) -> Result<Vec<Scaled>> {
        if ya == last {
            // O_a O_b on one site
            let prod = contract(op_a, op_b, &[(1, 0)])?;
            let sym = prod.add(&prod.permute(&[1, 0])?)?.scaled(0.5);
            return Ok(vec![self.value_site(ya, &sym)?]);
        }
        if ya > last || last >= self.width() {
            return invalid(format!("pair columns {ya}..{last} out of order or range"));
        }
        let ta = self.op_tensor(ya, op_a)?;
        let (l, log) = &self.left[ya];
        let (mut env, mut log) = normalized(self.absorb_left(l, ya, &ta)?, *log);
        let mut out = Vec::with_capacity(last - ya);
        for yb in ya + 1..=last {
            let tb = self.op_tensor(yb, op_b)?;
            let (closed, clog) = normalized(self.absorb_left(&env, yb, &tb)?, log);
            out.push(self.close(&closed, clog, yb + 1)?);
            let (e, l) = normalized(self.absorb_left(&env, yb, &self.row[yb])?, log);
            env = e;
            log = l;
        }
        Ok(out)
    }
}

fn checked_norm(n: Scaled) -> Result<Scaled> {
    if !(n.mantissa > 0.0) || !n.mantissa.is_finite() {
        return Err(Error::ContractionAccuracy(format!("non-positive norm mantissa {}", n.mantissa)));
    }
    Ok(n)
}

/// Boundaries of one state, shared by every observable evaluated on it.
#[derive(Clone, Debug)]
pub struct Environment {
    state: PepsState,
    boundaries: Boundaries,
}

impl Environment {
    pub fn new(state: &PepsState, opts: &BoundaryOptions) -> Result<Self> {
        state.validate()?;
        let boundaries = boundaries_all_rows(state, opts, None)?;
        Ok(Self { state: state.clone(), boundaries })
    }

    pub fn state(&self) -> &PepsState {
        &self.state
    }

    pub fn boundaries(&self) -> &Boundaries {
        &self.boundaries
    }

    pub fn window(&self, x: usize) -> Result<RowWindow> {
        if x >= self.state.lx() {
            return invalid(format!("row {x} out of range"));
        }
        let (top, tlog) = self.boundaries.above(x);
        let (bottom, blog) = self.boundaries.below(x);
        let sites = (0..self.state.ly()).map(|y| self.state.site(x, y).clone()).collect();
        RowWindow::new(top, bottom, sites, tlog + blog)
    }

    /// `<psi|psi>`, read off the central row.
    pub fn norm_sq(&self) -> Result<Scaled> {
        let n = self.window(self.state.lx() / 2)?.norm_sq()?;
        let bound = 1e-10;
        if n.mantissa < -bound {
            return Err(Error::ContractionAccuracy(format!("negative norm mantissa {}", n.mantissa)));
        }
        checked_norm(n)
    }

    pub fn expect_site(&self, x: usize, y: usize, op: &Tensor) -> Result<f64> {
        self.window(x)?.expect_site(y, op)
    }

    pub fn expect_row_pair(&self, x: usize, ya: usize, yb: usize, op_a: &Tensor, op_b: &Tensor) -> Result<f64> {
        let (lo, hi, a, b) = if ya <= yb { (ya, yb, op_a, op_b) } else { (yb, ya, op_b, op_a) };
        self.window(x)?.expect_pair(lo, hi, a, b)
    }
}

pub fn norm_sq(state: &PepsState, chi: usize) -> Result<Scaled> {
    Environment::new(state, &BoundaryOptions::new(chi))?.norm_sq()
}

pub fn expect_site(state: &PepsState, site: (usize, usize), op: &Tensor, chi: usize) -> Result<f64> {
    Environment::new(state, &BoundaryOptions::new(chi))?.expect_site(site.0, site.1, op)
}

/// Two-point function of sites in one row or one column.
pub fn correlator_row(
    state: &PepsState,
    a: (usize, usize),
    b: (usize, usize),
    op_a: &Tensor,
    op_b: &Tensor,
    chi: usize,
) -> Result<f64> {
    let opts = BoundaryOptions::new(chi);
    if a.0 == b.0 {
        Environment::new(state, &opts)?.expect_row_pair(a.0, a.1, b.1, op_a, op_b)
    } else if a.1 == b.1 {
        Environment::new(&state.transpose(), &opts)?.expect_row_pair(a.1, a.0, b.0, op_a, op_b)
    } else {
        invalid(format!("sites {a:?} and {b:?} are not collinear"))
    }
}

/// Central row and the pair of columns used for `C_R`.
///
/// The first site is the central site `(lx / 2, ly / 2)`; when the lattice
/// is too narrow for `c + R` the pair slides left as a whole, keeping the
/// separation `R` in the central row.
pub fn correlator_sites(lx: usize, ly: usize, r: usize) -> Result<((usize, usize), (usize, usize))> {
    if r == 0 || r >= ly {
        return invalid(format!("separation {r} does not fit in width {ly}"));
    }
    let (xc, c) = (lx / 2, ly / 2);
    let y0 = c.min(ly - 1 - r);
    Ok(((xc, y0), (xc, y0 + r)))
}

/// Named observables the drivers know how to evaluate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Observable {
    /// `<sz_c sz_{c+R}>` in the central row.
    Correlator(usize),
    /// `<sz>` on the central site.
    CenterZ,
    /// `<sx>` on the central site.
    CenterX,
    /// Lattice averages of `sz` and `sx`.
    MeanZ,
    MeanX,
    /// Total energy.
    Energy,
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Correlator(r) => write!(f, "C{r}"),
            Observable::CenterZ => f.write_str("sz_center"),
            Observable::CenterX => f.write_str("sx_center"),
            Observable::MeanZ => f.write_str("sz_mean"),
            Observable::MeanX => f.write_str("sx_mean"),
            Observable::Energy => f.write_str("energy"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sz_center" => Ok(Observable::CenterZ),
            "sx_center" => Ok(Observable::CenterX),
            "sz_mean" => Ok(Observable::MeanZ),
            "sx_mean" => Ok(Observable::MeanX),
            "energy" => Ok(Observable::Energy),
            _ => s
                .strip_prefix('C')
                .and_then(|r| r.parse::<usize>().ok())
                .filter(|&r| r > 0)
                .map(Observable::Correlator)
                .ok_or_else(|| Error::UnknownObservable(s.to_string())),
        }
    }
}

impl TryFrom<String> for Observable {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Observable> for String {
    fn from(o: Observable) -> String {
        o.to_string()
    }
}

/// Evaluates `list` on `state`, building row boundaries once (and column
/// boundaries only when an observable needs them).
pub fn evaluate(state: &PepsState, model: &ModelSpec, list: &[Observable], opts: &BoundaryOptions) -> Result<Vec<f64>> {
    let env = Environment::new(state, opts)?;
    let mut transposed: Option<Environment> = None;
    let (lx, ly) = (state.lx(), state.ly());
    let (sz, sx) = (pauli_z(), pauli_x());
    let center = (lx / 2, ly / 2);
    let mut out = Vec::with_capacity(list.len());
    for obs in list {
        let v = match obs {
            Observable::Correlator(r) => {
                let (a, b) = correlator_sites(lx, ly, *r)?;
                env.expect_row_pair(a.0, a.1, b.1, &sz, &sz)?
            }
            Observable::CenterZ => env.expect_site(center.0, center.1, &sz)?,
            Observable::CenterX => env.expect_site(center.0, center.1, &sx)?,
            Observable::MeanZ | Observable::MeanX => {
                let op = if *obs == Observable::MeanZ { &sz } else { &sx };
                site_sum(&env, op)? / (lx * ly) as f64
            }
            Observable::Energy => {
                if transposed.is_none() && lx > 1 {
                    transposed = Some(Environment::new(&state.transpose(), opts)?);
                }
                energy_with(&env, transposed.as_ref(), model)?
            }
        };
        out.push(v);
    }
    Ok(out)
}

fn site_sum(env: &Environment, op: &Tensor) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..env.state().lx() {
        let w = env.window(x)?;
        let norm = checked_norm(w.norm_sq()?)?;
        for y in 0..env.state().ly() {
            total += w.value_site(y, op)?.ratio(&norm);
        }
    }
    Ok(total)
}

/// Sum of `<zz>` over the horizontal bonds of each row.
fn row_bond_sum(env: &Environment) -> Result<f64> {
    let sz = pauli_z();
    let mut total = 0.0;
    for x in 0..env.state().lx() {
        let w = env.window(x)?;
        let norm = checked_norm(w.norm_sq()?)?;
        for y in 0..env.state().ly().saturating_sub(1) {
            total += w.pair_scan(y, &sz, &sz, y + 1)?[0].ratio(&norm);
        }
    }
    Ok(total)
}

fn energy_with(env: &Environment, transposed: Option<&Environment>, model: &ModelSpec) -> Result<f64> {
    let mut zz = row_bond_sum(env)?;
    if let Some(t) = transposed {
        zz += row_bond_sum(t)?;
    }
    let sx = site_sum(env, &pauli_x())?;
    Ok(-zz - model.g * sx)
}

/// Total TFIM energy `-sum <zz> - g sum <sx>`.
pub fn energy(state: &PepsState, model: &ModelSpec, opts: &BoundaryOptions) -> Result<f64> {
    Ok(evaluate(state, model, &[Observable::Energy], opts)?[0])
}

/// `<zz>` on one bond.
pub fn bond_correlator(env: &Environment, transposed: &Environment, bond: Bond) -> Result<f64> {
    let sz = pauli_z();
    let ((x1, y1), (x2, y2)) = (bond.first(), bond.second());
    if bond.is_horizontal() {
        env.expect_row_pair(x1, y1, y2, &sz, &sz)
    } else {
        transposed.expect_row_pair(y1, x1, x2, &sz, &sz)
    }
}
