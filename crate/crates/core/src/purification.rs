//! Thermal states as purifications with one ancilla per site.
//!
//! The infinite-temperature state pairs every spin maximally with its
//! ancilla. Evolving it by `exp(-beta H / 2)` on the physical legs only gives
//! a state whose physical reduced density matrix is the Gibbs state, so
//! expectation values follow from the usual sandwiches with the ancilla
//! traced between ket and bra.

use crate::error::{invalid, Result};
use crate::models::ModelSpec;
use crate::ntu::{evolve, NtuOptions, NtuReport};
use crate::observables::{self, Observable};
use crate::peps::PepsState;
use crate::tensor::Tensor;
use crate::trotter::EvolutionSchedule;
use crate::zipper::BoundaryOptions;

/// `sum_i |i, i>` on every site; all virtual bonds have extent 1.
pub fn init_infinite_temperature(lx: usize, ly: usize, d: usize) -> Result<PepsState> {
    if lx == 0 || ly == 0 || d == 0 {
        return invalid("lattice and local dimension must be non-empty");
    }
    let site = Tensor::from_fn(&[1, 1, 1, 1, d, d], |i| if i[4] == i[5] { 1.0 } else { 0.0 });
    PepsState::from_sites(lx, ly, d, true, vec![site; lx * ly])
}

/// Imaginary-time evolution of a purification; gates touch only the
/// physical axes.
pub fn evolve_purification(
    state: &PepsState,
    model: &ModelSpec,
    schedule: &EvolutionSchedule,
    max_d: usize,
    opts: &NtuOptions,
) -> Result<(PepsState, Vec<NtuReport>)> {
    if !state.has_ancilla() {
        return invalid("evolve_purification needs a state with ancillas");
    }
    evolve(state, model, schedule, max_d, opts)
}

/// `Tr(rho O)` for a single-site operator.
pub fn expect_purified(state: &PepsState, site: (usize, usize), op: &Tensor, chi: usize) -> Result<f64> {
    if !state.has_ancilla() {
        return invalid("expect_purified needs a state with ancillas");
    }
    observables::expect_site(state, site, op, chi)
}

/// `Tr(rho O_a O_b)` for two sites in one row or column.
pub fn correlator_purified(
    state: &PepsState,
    a: (usize, usize),
    b: (usize, usize),
    op_a: &Tensor,
    op_b: &Tensor,
    chi: usize,
) -> Result<f64> {
    if !state.has_ancilla() {
        return invalid("correlator_purified needs a state with ancillas");
    }
    observables::correlator_row(state, a, b, op_a, op_b, chi)
}

/// Settings of a purification run.
#[derive(Clone, Debug, PartialEq)]
pub struct PurificationParams {
    pub model: ModelSpec,
    pub beta: f64,
    pub dtau: f64,
    pub max_d: usize,
    pub chi: usize,
    pub ntu: NtuOptions,
}

#[derive(Clone, Debug)]
pub struct PurificationResult {
    pub state: PepsState,
    pub values: Vec<f64>,
    pub reports: Vec<NtuReport>,
}

/// Evolves the infinite-temperature state to `beta / 2` and evaluates `list`.
pub fn thermal_purification(params: &PurificationParams, list: &[Observable]) -> Result<PurificationResult> {
    let m = &params.model;
    let start = init_infinite_temperature(m.lx, m.ly, m.phys_dim())?;
    let schedule = EvolutionSchedule::new(params.beta / 2.0, params.dtau, m.lx, m.ly)?;
    let (state, reports) = evolve_purification(&start, m, &schedule, params.max_d, &params.ntu)?;
    let values = observables::evaluate(&state, m, list, &BoundaryOptions::new(params.chi))?;
    Ok(PurificationResult { state, values, reports })
}
