//! Neighborhood tensor update: bond truncation after a Trotter gate.
//!
//! For a horizontal bond between `A = (x, y)` and `B = (x, y + 1)` the
//! cluster consists of `A`, `B` and every nearest neighbour of either. Legs
//! leaving the cluster are traced between the ket and bra layers; the two
//! neighbours above (and the two below) the bond stay connected through
//! their shared bond. The cluster norm is then a quadratic form in the two
//! bond tensors with a non-negative metric.
//!
//! Both site tensors are first split by QR into an isometry carrying the
//! environment legs and a small reduced tensor carrying the physical and
//! bond legs. The gate acts on the reduced tensors, and the truncated pair is
//! found by alternating least squares in the metric. This optimizes over the
//! span of the old environment legs only; for small clusters the result can
//! be refined over the whole site tensors (see
//! [`NtuOptions::full_env_limit`]). Vertical bonds are handled in the
//! transposed frame.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::models::{Bond, ModelSpec};
use crate::peps::{PepsState, ANCILLA, DOWN, LEFT, RIGHT, UP};
use crate::tensor::{contract, qr_split, scale_axis, svd_truncated, Tensor};
use crate::trotter::{make_gate, EvolutionSchedule, TwoSiteGate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NtuOptions {
    /// Relative eigenvalue cutoff of the pseudo-inverse in the normal
    /// equations.
    pub pinv_cutoff: f64,
    /// Stop when `delta^2` changes by less than this between sweeps.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Relative singular-value cutoff for the initial and final splits.
    pub svd_cutoff: f64,
    /// Largest product of the two environment dimensions (all legs but the
    /// shared bond and the physical leg) for which the reduced solution is
    /// refined by further sweeps over the whole site tensors. The default 0
    /// never refines.
    pub full_env_limit: usize,
}

impl Default for NtuOptions {
    fn default() -> Self {
        Self { pinv_cutoff: 1e-10, tol: 1e-12, max_sweeps: 100, svd_cutoff: 1e-12, full_env_limit: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NtuReport {
    /// Trotter step the gate belongs to (0 when called directly).
    pub step: usize,
    pub bond: Bond,
    /// `|Psi' - Psi_G| / |Psi_G|` on the cluster.
    pub delta: f64,
    pub iters: usize,
    /// The least-squares solve failed and the SVD-initialized pair was kept.
    pub fallback: bool,
    /// `delta` after initialization and after every sweep.
    #[serde(skip)]
    pub history: Vec<f64>,
}

/// Applies `gate` to `bond` and truncates the bond back to at most `max_d`.
pub fn ntu_truncate(
    state: &PepsState,
    bond: Bond,
    gate: &TwoSiteGate,
    max_d: usize,
    opts: &NtuOptions,
) -> Result<(PepsState, NtuReport)> {
    if !bond.fits(state.lx(), state.ly()) {
        return invalid(format!("bond {} is outside the {}x{} lattice", bond.label(), state.lx(), state.ly()));
    }
    if gate.phys_dim() != state.phys_dim() {
        return invalid(format!("gate for d = {} on a state with d = {}", gate.phys_dim(), state.phys_dim()));
    }
    if max_d == 0 {
        return invalid("max_D must be at least 1");
    }
    let (x, y) = bond.first();
    let (new_state, mut report) = if bond.is_horizontal() {
        update_horizontal(state, x, y, gate, max_d, opts)?
    } else {
        let (s, r) = update_horizontal(&state.transpose(), y, x, gate, max_d, opts)?;
        (s.transpose(), r)
    };
    report.bond = bond;
    Ok((new_state, report))
}

/// Site tensors always carry an ancilla axis here; extent 1 without one.
fn lift(t: &Tensor) -> Tensor {
    if t.rank() == 6 {
        return t.clone();
    }
    let mut shape = t.shape().to_vec();
    shape.push(1);
    t.clone().reshape(&shape).expect("same size")
}

fn lower(t: Tensor, ancilla: bool) -> Tensor {
    if ancilla {
        return t;
    }
    let shape = t.shape()[..5].to_vec();
    t.reshape(&shape).expect("trailing axis of extent 1")
}

/// Ket-bra contraction of a site over every axis not in `keep`; the kept
/// legs come out fused, ket major.
fn reduced_env(site: &Tensor, keep: &[usize]) -> Result<Tensor> {
    let traced: Vec<(usize, usize)> = (0..site.rank()).filter(|a| !keep.contains(a)).map(|a| (a, a)).collect();
    let c = contract(site, site, &traced)?;
    let k = keep.len();
    let mut perm = Vec::with_capacity(2 * k);
    for i in 0..k {
        perm.push(i);
        perm.push(k + i);
    }
    let c = c.permute(&perm)?;
    let fused: Vec<usize> = keep.iter().map(|&a| site.shape()[a] * site.shape()[a]).collect();
    c.reshape(&fused)
}

fn unit(rank: usize) -> Tensor {
    Tensor::new(vec![1; rank], vec![1.0]).expect("unit tensor")
}

/// Quadratic-form metric `g[ka, kb, ka', kb']` of the cluster around the
/// horizontal bond `(x, y)-(x, y + 1)`, given the isometries
/// `qa[u, l, d, aux, ka]` and `qb[u, d, r, aux, kb]`.
fn cluster_metric(state: &PepsState, x: usize, y: usize, qa: &Tensor, qb: &Tensor) -> Result<Tensor> {
    let (lx, ly) = (state.lx(), state.ly());
    let site = |x: usize, y: usize| lift(state.site(x, y));
    let side = |t: Option<Tensor>, leg: usize| -> Result<Tensor> {
        match t {
            Some(s) => {
                let e = reduced_env(&s, &[leg])?;
                let k = s.shape()[leg];
                e.reshape(&[k, k])
            }
            None => Ok(unit(2)),
        }
    };
    let env_l = side((y > 0).then(|| site(x, y - 1)), RIGHT)?;
    let env_r = side((y + 2 < ly).then(|| site(x, y + 2)), LEFT)?;
    // pairs above and below, joined by their own horizontal bond
    let env_t = if x > 0 {
        let a = reduced_env(&site(x - 1, y), &[DOWN, RIGHT])?;
        let b = reduced_env(&site(x - 1, y + 1), &[LEFT, DOWN])?;
        contract(&a, &b, &[(1, 0)])?
    } else {
        unit(2)
    };
    let env_b = if x + 1 < lx {
        let a = reduced_env(&site(x + 1, y), &[UP, RIGHT])?;
        let b = reduced_env(&site(x + 1, y + 1), &[UP, LEFT])?;
        contract(&a, &b, &[(1, 1)])?
    } else {
        unit(2)
    };
    let half = |q: &Tensor, env: &Tensor, leg: usize| -> Result<Tensor> {
        // q axes [u, *, *, aux, k] with the side leg at `leg`
        let t = contract(q, env, &[(leg, 0)])?; // [u, d, aux, k, side_bra]
        let t = contract(&t, q, &[(4, leg), (2, 3)])?; // [u, d, k, u', d', k']
        let t = t.permute(&[0, 3, 1, 4, 2, 5])?;
        let s = t.shape().to_vec();
        t.reshape(&[s[0] * s[1], s[2] * s[3], s[4], s[5]])
    };
    let xa = half(qa, &env_l, 1)?; // [uA, dA, ka, ka']
    let xb = half(qb, &env_r, 2)?; // [uB, dB, kb, kb']
    let t = contract(&env_t, &xa, &[(0, 0)])?; // [uB, dA, ka, ka']
    let t = contract(&t, &env_b, &[(1, 0)])?; // [uB, ka, ka', dB]
    let g = contract(&t, &xb, &[(0, 0), (3, 1)])?; // [ka, ka', kb, kb']
    let g = g.permute(&[0, 2, 1, 3])?;
    Ok(symmetrize(g))
}

/// `(g + g^T) / 2` with `g` read as a matrix over its first two vs last two
/// axes.
fn symmetrize(g: Tensor) -> Tensor {
    let s = g.shape().to_vec();
    let n = s[0] * s[1];
    let mut out = g.clone();
    let data = g.data();
    for i in 0..n {
        for j in 0..n {
            out.data_mut()[i * n + j] = 0.5 * (data[i * n + j] + data[j * n + i]);
        }
    }
    out
}

/// `<a|g|b>` for `a, b` shaped `[ka, pa, pb, kb]`.
fn metric_product(g: &Tensor, a: &Tensor, b: &Tensor) -> Result<f64> {
    let gb = contract(g, b, &[(2, 0), (3, 3)])?.permute(&[0, 2, 3, 1])?;
    a.dot(&gb)
}

struct Als<'a> {
    g: &'a Tensor,
    theta: &'a Tensor,
    /// `g` applied to `theta`, axes `[ka, kb, pa, pb]`.
    g_theta: Tensor,
    theta_norm: f64,
    cutoff: f64,
}

impl<'a> Als<'a> {
    fn new(g: &'a Tensor, theta: &'a Tensor, cutoff: f64) -> Result<Self> {
        let g_theta = contract(g, theta, &[(2, 0), (3, 3)])?;
        let theta_norm = theta.dot(&g_theta.permute(&[0, 2, 3, 1])?)?;
        if !(theta_norm > 0.0) || !theta_norm.is_finite() {
            return Err(Error::NumericalInput(format!("gate-applied cluster has norm^2 {theta_norm}")));
        }
        Ok(Self { g, theta, g_theta, theta_norm, cutoff })
    }

    fn delta(&self, x: &Tensor, y: &Tensor) -> Result<f64> {
        let phi = contract(x, y, &[(2, 0)])?;
        let diff = phi.sub(self.theta)?;
        let f = metric_product(self.g, &diff, &diff)?;
        Ok((f.max(0.0) / self.theta_norm).sqrt())
    }

    /// Optimal `x[ka, pa, n]` for fixed `y[n, pb, kb]`.
    fn solve_x(&self, y: &Tensor) -> Result<Tensor> {
        let t = contract(self.g, y, &[(1, 2)])?; // [ka, ka', kb', n, pb]
        let normal = contract(&t, y, &[(2, 2), (4, 1)])?.permute(&[0, 2, 1, 3])?; // [ka, n, ka', n']
        let rhs = contract(&self.g_theta, y, &[(1, 2), (3, 1)])?.permute(&[0, 2, 1])?; // [ka, n, pa]
        let s = rhs.shape().to_vec();
        let sol = self.solve(&normal, &rhs, s[0] * s[1], s[2])?;
        Tensor::new(s, sol)?.permute(&[0, 2, 1])
    }

    /// Optimal `y[n, pb, kb]` for fixed `x[ka, pa, n]`.
    fn solve_y(&self, x: &Tensor) -> Result<Tensor> {
        let t = contract(self.g, x, &[(0, 0)])?; // [kb, ka', kb', pa, n]
        let normal = contract(&t, x, &[(1, 0), (3, 1)])?.permute(&[2, 0, 3, 1])?; // [n, kb, n', kb']
        let rhs = contract(&self.g_theta, x, &[(0, 0), (2, 1)])?.permute(&[2, 0, 1])?; // [n, kb, pb]
        let s = rhs.shape().to_vec();
        let sol = self.solve(&normal, &rhs, s[0] * s[1], s[2])?;
        Tensor::new(s, sol)?.permute(&[0, 2, 1])
    }

    fn solve(&self, normal: &Tensor, rhs: &Tensor, n: usize, m: usize) -> Result<Vec<f64>> {
        let mut a = normal.data().to_vec();
        // exact symmetry for the eigensolver
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (a[i * n + j] + a[j * n + i]);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let sol = linalg::psd_pinv_solve(&a, rhs.data(), n, m, self.cutoff);
        if sol.iter().all(|v| v.is_finite()) {
            Ok(sol)
        } else {
            Err(Error::NumericalInput("normal equations produced non-finite values".into()))
        }
    }
}

/// Splits `t` into a frame `q` over `env` (axes `env..., k`) and the
/// remainder `r` (axes `k, rest...`). The frame is the identity when `whole`,
/// else the isometry of a thin QR.
fn env_frame(t: &Tensor, env: &[usize], whole: bool) -> Result<(Tensor, Tensor)> {
    if !whole {
        return qr_split(t, env);
    }
    let (data, rows, cols) = t.to_matrix(env)?;
    let n: usize = rows.iter().product();
    let mut q_shape = rows;
    q_shape.push(n);
    let mut r_shape = vec![n];
    r_shape.extend(cols);
    Ok((Tensor::eye(n).reshape(&q_shape)?, Tensor::new(r_shape, data)?))
}

fn split_balanced(phi: &Tensor, max_d: usize, cutoff: f64) -> Result<(Tensor, Tensor)> {
    let s = svd_truncated(phi, &[0, 1], max_d, cutoff)?;
    let root: Vec<f64> = s.s.iter().map(|v| v.sqrt()).collect();
    Ok((scale_axis(&s.u, 2, &root), scale_axis(&s.v, 0, &root)))
}

/// The pair problem in one environment frame.
struct Frame {
    qa: Tensor,
    qb: Tensor,
    metric: Tensor,
    theta: Tensor,
}

impl Frame {
    fn new(state: &PepsState, x: usize, y: usize, gate: &TwoSiteGate, whole: bool) -> Result<Self> {
        let d = state.phys_dim();
        let a = lift(state.site(x, y));
        let b = lift(state.site(x, y + 1));
        let (qa, ra) = env_frame(&a, &[UP, LEFT, DOWN, ANCILLA], whole)?; // ra [ka, r, p]
        let (qb, rb) = env_frame(&b, &[UP, DOWN, RIGHT, ANCILLA], whole)?; // rb [kb, l, p]
        let pair = contract(&ra, &rb, &[(1, 1)])?; // [ka, pa, kb, pb]
        let g4 = gate.full.clone().reshape(&[d, d, d, d])?;
        let theta = contract(&g4, &pair, &[(2, 1), (3, 3)])?.permute(&[2, 0, 1, 3])?; // [ka, pa', pb', kb]
        let metric = cluster_metric(state, x, y, &qa, &qb)?;
        Ok(Self { qa, qb, metric, theta })
    }

    /// Frame tensors `x[ka, pa, n]`, `y[n, pb, kb]` as site tensors.
    fn sites(&self, fx: &Tensor, fy: &Tensor) -> Result<(Tensor, Tensor)> {
        let a = contract(&self.qa, fx, &[(4, 0)])?.permute(&[0, 1, 2, 5, 4, 3])?; // [u, l, d, n, pa, aux]
        let b = contract(&self.qb, fy, &[(4, 2)])?.permute(&[0, 4, 1, 2, 5, 3])?; // [u, n, d, r, pb, aux]
        Ok((a, b))
    }

    /// Site tensors in this frame, for a frame whose isometries are the
    /// identity.
    fn embed(&self, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
        let fx = contract(&self.qa, a, &[(0, 0), (1, 1), (2, 2), (3, 5)])?; // [ka, n, pa]
        let fy = contract(&self.qb, b, &[(0, 0), (1, 2), (2, 3), (3, 5)])?; // [kb, n, pb]
        Ok((fx.permute(&[0, 2, 1])?, fy.permute(&[1, 2, 0])?))
    }
}

/// ALS sweeps from `(x0, y0)`. Returns the best pair in a balanced gauge,
/// its delta, the sweeps used and whether a solve failed.
fn optimize(als: &Als, x0: Tensor, y0: Tensor, max_d: usize, opts: &NtuOptions, history: &mut Vec<f64>) -> Result<(Tensor, Tensor, f64, usize, bool)> {
    let delta0 = als.delta(&x0, &y0)?;
    history.push(delta0);
    let (mut bx, mut by) = (x0.clone(), y0.clone());
    let mut fallback = false;
    let mut iters = 0;
    let mut prev_sq = delta0 * delta0;
    // nothing to optimize when the start is already exact
    if delta0 > 0.0 {
        for _ in 0..opts.max_sweeps {
            let step = als.solve_x(&by).and_then(|nx| {
                let ny = als.solve_y(&nx)?;
                let delta = als.delta(&nx, &ny)?;
                Ok((nx, ny, delta))
            });
            let (nx, ny, delta) = match step {
                Ok(v) if v.2.is_finite() => v,
                _ => {
                    fallback = true;
                    break;
                }
            };
            iters += 1;
            history.push(delta);
            bx = nx;
            by = ny;
            let sq = delta * delta;
            if (prev_sq - sq).abs() < opts.tol {
                break;
            }
            prev_sq = sq;
        }
    }
    // restore a balanced gauge on the new bond; keep the start if the sweeps
    // did not improve on it
    let (fx, fy) = split_balanced(&contract(&bx, &by, &[(2, 0)])?, max_d, opts.svd_cutoff)?;
    let delta_f = als.delta(&fx, &fy)?;
    Ok(if !fallback && delta_f <= delta0 { (fx, fy, delta_f, iters, false) } else { (x0, y0, delta0, iters, fallback) })
}

fn update_horizontal(
    state: &PepsState,
    x: usize,
    y: usize,
    gate: &TwoSiteGate,
    max_d: usize,
    opts: &NtuOptions,
) -> Result<(PepsState, NtuReport)> {
    let env_dim = |t: &Tensor, legs: [usize; 4]| legs.iter().map(|&l| t.shape()[l]).product::<usize>();
    let whole = env_dim(&lift(state.site(x, y)), [UP, LEFT, DOWN, ANCILLA])
        .saturating_mul(env_dim(&lift(state.site(x, y + 1)), [UP, DOWN, RIGHT, ANCILLA]))
        <= opts.full_env_limit;

    // reduced tensors first: small, well conditioned, and a good start
    let reduced = Frame::new(state, x, y, gate, false)?;
    let als = Als::new(&reduced.metric, &reduced.theta, opts.pinv_cutoff)?;
    let (x0, y0) = split_balanced(&reduced.theta, max_d, opts.svd_cutoff)?;
    let mut history = Vec::new();
    let (fx, fy, mut delta, mut iters, mut fallback) = optimize(&als, x0, y0, max_d, opts, &mut history)?;
    let (mut new_a, mut new_b) = reduced.sites(&fx, &fy)?;

    if whole && delta > 0.0 {
        let full = Frame::new(state, x, y, gate, true)?;
        let als = Als::new(&full.metric, &full.theta, opts.pinv_cutoff)?;
        let (wx, wy) = full.embed(&new_a, &new_b)?;
        let (fx, fy, d, n, failed) = optimize(&als, wx, wy, max_d, opts, &mut history)?;
        iters += n;
        fallback |= failed;
        if d < delta {
            delta = d;
            (new_a, new_b) = full.sites(&fx, &fy)?;
        }
    }
    let mut out = state.clone();
    out.set_site(x, y, lower(new_a, state.has_ancilla()));
    out.set_site(x, y + 1, lower(new_b, state.has_ancilla()));
    Ok((out, NtuReport { step: 0, bond: Bond::Horizontal { x, y }, delta, iters, fallback, history }))
}

/// Runs the second-order Trotter evolution of `schedule` with NTU
/// truncation to `max_d`. Site tensors are rescaled after every step, so the
/// result is correct only up to a positive factor.
pub fn evolve(
    state: &PepsState,
    model: &ModelSpec,
    schedule: &EvolutionSchedule,
    max_d: usize,
    opts: &NtuOptions,
) -> Result<(PepsState, Vec<NtuReport>)> {
    if (state.lx(), state.ly()) != (model.lx, model.ly) || state.phys_dim() != model.phys_dim() {
        return invalid("state does not match the model lattice");
    }
    let mut gates: HashMap<Bond, TwoSiteGate> = HashMap::new();
    for &bond in &schedule.bond_order {
        gates.insert(bond, make_gate(&model.bond_hamiltonian(bond)?, schedule.dtau / 2.0)?);
    }
    let mut current = state.clone();
    let mut reports = Vec::with_capacity(schedule.steps * 2 * schedule.bond_order.len());
    for step in 0..schedule.steps {
        for bond in schedule.step_sequence() {
            let (next, mut report) = ntu_truncate(&current, bond, &gates[&bond], max_d, opts)?;
            report.step = step;
            reports.push(report);
            current = next;
        }
        normalize_sites(&mut current);
    }
    Ok((current, reports))
}

/// Divides every site by its largest entry.
pub fn normalize_sites(state: &mut PepsState) {
    for x in 0..state.lx() {
        for y in 0..state.ly() {
            let m = state.site(x, y).max_abs();
            if m > 0.0 && m.is_finite() {
                state.scale_site(x, y, 1.0 / m);
            }
        }
    }
}
