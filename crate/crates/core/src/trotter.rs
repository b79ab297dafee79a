//! Imaginary-time Trotter gates and the evolution schedule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{bond_order, Bond};
use crate::tensor::{contract, svd_truncated, symmetric_eigen, Tensor};

/// Singular values of the gate split below this fraction of the largest are
/// dropped.
pub const GATE_SPLIT_CUTOFF: f64 = 1e-14;

/// `exp(-dtau h)` for one bond, whole and split into two rank-3 halves.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSiteGate {
    /// `d^2 x d^2`, rows `(out_1, out_2)`, columns `(in_1, in_2)`.
    pub full: Tensor,
    /// `(out_1, in_1, s)`.
    pub left: Tensor,
    /// `(s, out_2, in_2)`.
    pub right: Tensor,
    pub dtau: f64,
}

impl TwoSiteGate {
    pub fn phys_dim(&self) -> usize {
        self.left.shape()[0]
    }

    /// Extent of the connecting axis of the split.
    pub fn rank(&self) -> usize {
        self.left.shape()[2]
    }

    /// The two halves contracted back into a `d^2 x d^2` matrix.
    pub fn reconstruct(&self) -> Tensor {
        let d = self.phys_dim();
        contract(&self.left, &self.right, &[(2, 0)])
            .and_then(|t| t.permute(&[0, 2, 1, 3]))
            .and_then(|t| t.reshape(&[d * d, d * d]))
            .expect("gate halves are consistent")
    }
}

/// Builds `exp(-dtau h_bond)` through the eigendecomposition of `h_bond`.
pub fn make_gate(h_bond: &Tensor, dtau: f64) -> Result<TwoSiteGate> {
    let n = match h_bond.shape() {
        [a, b] if a == b => *a,
        s => return invalid(format!("bond Hamiltonian must be square, got {s:?}")),
    };
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n || d == 0 {
        return invalid(format!("bond Hamiltonian extent {n} is not a square"));
    }
    if !(dtau >= 0.0) || !dtau.is_finite() {
        return invalid(format!("dtau must be finite and non-negative, got {dtau}"));
    }
    let scale = h_bond.max_abs().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (h_bond.get(&[i, j]) - h_bond.get(&[j, i])).abs() > 1e-12 * scale {
                return Err(Error::InvalidInput("bond Hamiltonian is not symmetric".into()));
            }
        }
    }
    let full = if dtau == 0.0 {
        Tensor::eye(n)
    } else {
        let (vals, vecs) = symmetric_eigen(h_bond)?;
        Tensor::from_fn(&[n, n], |ij| {
            (0..n).map(|k| vecs.get(&[ij[0], k]) * (-dtau * vals[k]).exp() * vecs.get(&[ij[1], k])).sum()
        })
    };
    let grouped = full.clone().reshape(&[d, d, d, d])?.permute(&[0, 2, 1, 3])?;
    let split = svd_truncated(&grouped, &[0, 1], usize::MAX, GATE_SPLIT_CUTOFF)?;
    let root: Vec<f64> = split.s.iter().map(|s| s.sqrt()).collect();
    let left = crate::tensor::scale_axis(&split.u, 2, &root);
    let right = crate::tensor::scale_axis(&split.v, 0, &root);
    Ok(TwoSiteGate { full, left, right, dtau })
}

/// Second-order Trotter schedule for imaginary time `beta_half`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSchedule {
    pub beta_half: f64,
    /// Step length, shortened from the requested value so `steps` steps
    /// cover `beta_half` exactly.
    pub dtau: f64,
    pub bond_order: Vec<Bond>,
    pub steps: usize,
}

pub const DEFAULT_DTAU: f64 = 0.01;

impl EvolutionSchedule {
    pub fn new(beta_half: f64, dtau: f64, lx: usize, ly: usize) -> Result<Self> {
        if !(beta_half >= 0.0) || !beta_half.is_finite() {
            return invalid(format!("beta/2 must be finite and non-negative, got {beta_half}"));
        }
        if !(dtau > 0.0) || !dtau.is_finite() {
            return invalid(format!("dtau must be positive, got {dtau}"));
        }
        let steps = if beta_half == 0.0 { 0 } else { (beta_half / dtau - 1e-9).ceil().max(1.0) as usize };
        let dtau = if steps == 0 { dtau } else { beta_half / steps as f64 };
        Ok(Self { beta_half, dtau, bond_order: bond_order(lx, ly), steps })
    }

    /// The bonds of one full step: forward order, then reversed, each with
    /// half a time step.
    pub fn step_sequence(&self) -> impl Iterator<Item = Bond> + '_ {
        self.bond_order.iter().chain(self.bond_order.iter().rev()).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kron, pauli_z, ModelSpec};

    /// Taylor series with scaling and squaring.
    fn expm_oracle(a: &Tensor) -> Tensor {
        let n = a.shape()[0];
        let norm = a.max_abs() * n as f64;
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let small = a.scaled(0.5f64.powi(squarings));
        let mut result = Tensor::eye(n);
        let mut term = Tensor::eye(n);
        for k in 1..30 {
            term = contract(&term, &small, &[(1, 0)]).unwrap().scaled(1.0 / k as f64);
            result = result.add(&term).unwrap();
        }
        for _ in 0..squarings {
            result = contract(&result, &result, &[(1, 0)]).unwrap();
        }
        result
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    #[test]
    fn zero_step_is_identity() {
        let spec = ModelSpec::tfim(2.9, 2, 2).unwrap();
        let h = spec.bond_hamiltonian(spec.bonds()[0]).unwrap();
        let g = make_gate(&h, 0.0).unwrap();
        assert_eq!(g.full, Tensor::eye(4));
        assert_eq!(g.rank(), 1);
        assert!(max_diff(&g.reconstruct(), &Tensor::eye(4)) < 1e-14);
    }

    #[test]
    fn ising_coupling_gate_closed_form() {
        let zz = kron(&pauli_z(), &pauli_z());
        let g = make_gate(&zz.scaled(-1.0), 0.1).unwrap();
        let expect = Tensor::eye(4).scaled(0.1f64.cosh()).add(&zz.scaled(0.1f64.sinh())).unwrap();
        assert!(max_diff(&g.full, &expect) < 1e-14);
        assert_eq!(g.rank(), 2);
        assert!(max_diff(&g.reconstruct(), &g.full) < 1e-12);
    }

    #[test]
    fn tfim_gate_matches_series_oracle() {
        let spec = ModelSpec::tfim(2.9, 3, 3).unwrap();
        for bond in spec.bonds() {
            let h = spec.bond_hamiltonian(bond).unwrap();
            let g = make_gate(&h, 0.01).unwrap();
            assert!(max_diff(&g.full, &expm_oracle(&h.scaled(-0.01))) < 1e-12);
            assert!(max_diff(&g.reconstruct(), &g.full) < 1e-12);
            // symmetric positive definite
            assert!(max_diff(&g.full, &g.full.permute(&[1, 0]).unwrap()) < 1e-15);
            let (vals, _) = symmetric_eigen(&g.full).unwrap();
            assert!(vals[0] > 0.0);
            assert!(g.rank() <= 4);
        }
    }

    #[test]
    fn asymmetric_hamiltonian_rejected() {
        let mut h = Tensor::zeros(&[4, 4]);
        h.set(&[0, 1], 1.0);
        assert!(make_gate(&h, 0.1).is_err());
        assert!(make_gate(&Tensor::eye(3), 0.1).is_err());
        assert!(make_gate(&Tensor::eye(4), -0.1).is_err());
    }

    #[test]
    fn schedule_divides_evenly() {
        for (beta_half, dtau) in [(0.5, 0.01), (0.8217, 0.01), (1.0, 0.3), (0.25, 1.0)] {
            let s = EvolutionSchedule::new(beta_half, dtau, 2, 3).unwrap();
            assert!((s.steps as f64 * s.dtau - beta_half).abs() < 1e-12);
            assert!(s.dtau <= dtau + 1e-15);
            assert_eq!(s.step_sequence().count(), 2 * 7);
        }
        let zero = EvolutionSchedule::new(0.0, 0.01, 2, 2).unwrap();
        assert_eq!(zero.steps, 0);
        assert!(EvolutionSchedule::new(1.0, 0.0, 2, 2).is_err());
        // horizontal bonds come first
        let s = EvolutionSchedule::new(1.0, 0.1, 2, 2).unwrap();
        assert!(s.bond_order[0].is_horizontal() && !s.bond_order[3].is_horizontal());
    }
}
