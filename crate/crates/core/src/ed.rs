//! Exact dense thermal averages and imaginary-time propagators.
//!
//! The Hamiltonian is diagonalized once per model and cached; everything
//! else is a weighted sum over the eigensystem. Energies are shifted by the
//! ground energy before exponentiation so large `beta` does not overflow.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{dense_hamiltonian, ModelSpec};
use crate::observables::{correlator_sites, Observable};
use crate::peps::Configuration;
use crate::tensor::{symmetric_eigen, Tensor};

/// Largest lattice handled by full diagonalization.
pub const ED_SITE_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Z,
}

/// A product of single-site Pauli operators, e.g. `Z_a Z_b`. The empty
/// product is the identity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PauliString {
    pub factors: Vec<((usize, usize), Pauli)>,
}

impl PauliString {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn single(site: (usize, usize), p: Pauli) -> Self {
        Self { factors: vec![(site, p)] }
    }

    pub fn zz(a: (usize, usize), b: (usize, usize)) -> Self {
        Self { factors: vec![(a, Pauli::Z), (b, Pauli::Z)] }
    }

    /// `O |v>` for a dense vector on an `lx x ly` lattice of qubits.
    pub fn apply(&self, ly: usize, n_sites: usize, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for &((x, y), p) in &self.factors {
            let mask = 1usize << (n_sites - 1 - (x * ly + y));
            match p {
                Pauli::Z => {
                    for (i, a) in out.iter_mut().enumerate() {
                        if i & mask != 0 {
                            *a = -*a;
                        }
                    }
                }
                Pauli::X => {
                    let prev = out.clone();
                    for (i, a) in out.iter_mut().enumerate() {
                        *a = prev[i ^ mask];
                    }
                }
            }
        }
        out
    }

    /// `<v|O|v>`.
    pub fn expectation(&self, ly: usize, n_sites: usize, v: &[f64]) -> f64 {
        let ov = self.apply(ly, n_sites, v);
        v.iter().zip(&ov).map(|(a, b)| a * b).sum()
    }
}

pub struct EigenSystem {
    pub spec: ModelSpec,
    /// Ascending.
    pub energies: Vec<f64>,
    /// Eigenvectors as columns of a `dim x dim` matrix.
    pub vectors: Tensor,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    fn column(&self, n: usize) -> Vec<f64> {
        let dim = self.dim();
        (0..dim).map(|i| self.vectors.data()[i * dim + n]).collect()
    }

    /// Boltzmann weights `exp(-beta (E_n - E_0))`.
    fn shifted_weights(&self, beta: f64) -> Vec<f64> {
        let e0 = self.ground_energy();
        self.energies.iter().map(|e| (-beta * (e - e0)).exp()).collect()
    }

    /// `ln Tr exp(-beta H)`.
    pub fn log_partition(&self, beta: f64) -> f64 {
        let w: f64 = self.shifted_weights(beta).iter().sum();
        -beta * self.ground_energy() + w.ln()
    }
}

type CacheKey = (u8, u64, usize, usize);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<EigenSystem>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<EigenSystem>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Diagonalizes `H` for `spec`, reusing a cached result when available.
pub fn eigensystem(spec: &ModelSpec) -> Result<Arc<EigenSystem>> {
    let n_sites = spec.num_sites();
    if n_sites > ED_SITE_LIMIT {
        return Err(Error::SizeCap { sites: n_sites, limit: ED_SITE_LIMIT });
    }
    let key = (spec.kind as u8, spec.g.to_bits(), spec.lx, spec.ly);
    if let Some(found) = cache().lock().expect("eigensystem cache").get(&key) {
        return Ok(found.clone());
    }
    let h = dense_hamiltonian(spec)?;
    let (energies, vectors) = symmetric_eigen(&h)?;
    let sys = Arc::new(EigenSystem { spec: *spec, energies, vectors });
    cache().lock().expect("eigensystem cache").insert(key, sys.clone());
    Ok(sys)
}

fn check_sites(spec: &ModelSpec, op: &PauliString) -> Result<()> {
    for &((x, y), _) in &op.factors {
        if x >= spec.lx || y >= spec.ly {
            return invalid(format!("site ({x},{y}) outside {}x{}", spec.lx, spec.ly));
        }
    }
    Ok(())
}

/// `Tr(O exp(-beta H)) / Tr(exp(-beta H))`.
pub fn gibbs_expectation(spec: &ModelSpec, beta: f64, op: &PauliString) -> Result<f64> {
    if !(beta >= 0.0) {
        return invalid(format!("beta {beta} must be non-negative"));
    }
    check_sites(spec, op)?;
    let sys = eigensystem(spec)?;
    let n_sites = spec.num_sites();
    let w = sys.shifted_weights(beta);
    let z: f64 = w.iter().sum();
    let mut acc = 0.0;
    for (n, &wn) in w.iter().enumerate() {
        if wn < 1e-18 {
            continue;
        }
        acc += wn * op.expectation(spec.ly, n_sites, &sys.column(n));
    }
    Ok(acc / z)
}

/// Thermal state propagated from one product configuration.
#[derive(Clone, Debug)]
pub struct MettsVector {
    /// Normalized `exp(-beta H / 2) |phi>`.
    pub state: Vec<f64>,
    /// `ln p` with `p = <phi| exp(-beta H) |phi>`.
    pub log_weight: f64,
}

impl MettsVector {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// `exp(-beta_half H)|phi> / sqrt(p)` together with `p = <phi|exp(-2 beta_half H)|phi>`.
pub fn exact_metts_propagate(spec: &ModelSpec, beta_half: f64, config: &Configuration) -> Result<MettsVector> {
    if !(beta_half >= 0.0) {
        return invalid(format!("beta/2 = {beta_half} must be non-negative"));
    }
    if config.lx != spec.lx || config.ly != spec.ly {
        return invalid("configuration does not match the model lattice");
    }
    if config.labels.iter().any(|&l| l >= 2) {
        return invalid("labels must be 0 or 1");
    }
    let sys = eigensystem(spec)?;
    let dim = sys.dim();
    let phi = config.index(2);
    let e0 = sys.ground_energy();
    let mut state = vec![0.0; dim];
    let mut norm_sq = 0.0;
    for n in 0..dim {
        let overlap = sys.vectors.data()[phi * dim + n];
        let w = (-beta_half * (sys.energies[n] - e0)).exp();
        if w == 0.0 || overlap == 0.0 {
            continue;
        }
        let c = w * overlap;
        norm_sq += c * c;
        for i in 0..dim {
            state[i] += c * sys.vectors.data()[i * dim + n];
        }
    }
    let norm = norm_sq.sqrt();
    state.iter_mut().for_each(|a| *a /= norm);
    Ok(MettsVector { state, log_weight: -2.0 * beta_half * e0 + norm_sq.ln() })
}

/// Dense `exp(-tau H) v` (unnormalized), via the eigensystem.
pub fn propagate(spec: &ModelSpec, tau: f64, v: &[f64]) -> Result<Vec<f64>> {
    let sys = eigensystem(spec)?;
    let dim = sys.dim();
    if v.len() != dim {
        return invalid(format!("vector of length {} for dimension {dim}", v.len()));
    }
    let mut out = vec![0.0; dim];
    for n in 0..dim {
        let col = sys.column(n);
        let overlap: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
        let c = (-tau * sys.energies[n]).exp() * overlap;
        for i in 0..dim {
            out[i] += c * col[i];
        }
    }
    Ok(out)
}

/// `obs` as a weighted sum of Pauli strings.
pub fn pauli_terms(spec: &ModelSpec, obs: &Observable) -> Result<Vec<(f64, PauliString)>> {
    let (lx, ly) = (spec.lx, spec.ly);
    let n = (lx * ly) as f64;
    let sites = || (0..lx).flat_map(move |x| (0..ly).map(move |y| (x, y)));
    Ok(match obs {
        Observable::Correlator(r) => {
            let (a, b) = correlator_sites(lx, ly, *r)?;
            vec![(1.0, PauliString::zz(a, b))]
        }
        Observable::CenterZ => vec![(1.0, PauliString::single((lx / 2, ly / 2), Pauli::Z))],
        Observable::CenterX => vec![(1.0, PauliString::single((lx / 2, ly / 2), Pauli::X))],
        Observable::MeanZ => sites().map(|s| (1.0 / n, PauliString::single(s, Pauli::Z))).collect(),
        Observable::MeanX => sites().map(|s| (1.0 / n, PauliString::single(s, Pauli::X))).collect(),
        Observable::Energy => {
            let bonds = spec.bonds().into_iter().map(|b| (-1.0, PauliString::zz(b.first(), b.second())));
            bonds.chain(sites().map(|s| (-spec.g, PauliString::single(s, Pauli::X)))).collect()
        }
    })
}

/// Thermal value of a named observable.
pub fn gibbs_observable(spec: &ModelSpec, beta: f64, obs: &Observable) -> Result<f64> {
    let mut total = 0.0;
    for (w, op) in pauli_terms(spec, obs)? {
        total += w * gibbs_expectation(spec, beta, &op)?;
    }
    Ok(total)
}

/// Reference values emitted by the `exact` CLI subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactReport {
    pub spec: ModelSpec,
    pub beta: f64,
    pub ground_energy: f64,
    pub log_partition: f64,
    pub energy: f64,
    pub values: Vec<(String, f64)>,
}

pub fn exact_report(spec: &ModelSpec, beta: f64, observables: &[(String, PauliString)]) -> Result<ExactReport> {
    let sys = eigensystem(spec)?;
    let mut values = Vec::with_capacity(observables.len());
    for (name, op) in observables {
        values.push((name.clone(), gibbs_expectation(spec, beta, op)?));
    }
    let w = sys.shifted_weights(beta);
    let z: f64 = w.iter().sum();
    let energy = w.iter().zip(&sys.energies).map(|(w, e)| w * e).sum::<f64>() / z;
    Ok(ExactReport {
        spec: *spec,
        beta,
        ground_energy: sys.ground_energy(),
        log_partition: sys.log_partition(beta),
        energy,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_configs(spec: &ModelSpec) -> impl Iterator<Item = Configuration> + '_ {
        (0..1usize << spec.num_sites()).map(|i| Configuration::from_index(spec.lx, spec.ly, 2, i))
    }

    #[test]
    fn infinite_temperature_magnetization_vanishes() {
        let spec = ModelSpec::tfim(2.9, 2, 2).unwrap();
        let m = gibbs_expectation(&spec, 0.0, &PauliString::single((0, 1), Pauli::Z)).unwrap();
        assert!(m.abs() < 1e-15);
        let id = gibbs_expectation(&spec, 0.7, &PauliString::identity()).unwrap();
        assert!((id - 1.0).abs() < 1e-14);
    }

    #[test]
    fn large_beta_gives_ground_state_value() {
        let spec = ModelSpec::tfim(1.0, 1, 2).unwrap();
        let sys = eigensystem(&spec).unwrap();
        let gs = sys.column(0);
        let op = PauliString::zz((0, 0), (0, 1));
        let ground = op.expectation(2, 2, &gs);
        let thermal = gibbs_expectation(&spec, 200.0, &op).unwrap();
        assert!((ground - thermal).abs() < 1e-12);
        // for -ZZ - g(X1+X2) with g = 1 the ground state has <ZZ> = 1/sqrt(5)
        assert!((ground - 1.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn propagation_at_zero_beta_is_identity() {
        let spec = ModelSpec::tfim(2.9, 2, 2).unwrap();
        let cfg = Configuration::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        let v = exact_metts_propagate(&spec, 0.0, &cfg).unwrap();
        assert!((v.weight() - 1.0).abs() < 1e-12);
        for (i, a) in v.state.iter().enumerate() {
            let expected = if i == cfg.index(2) { 1.0 } else { 0.0 };
            assert!((a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn propagated_states_are_normalized_and_weights_sum_to_trace() {
        let spec = ModelSpec::tfim(2.9, 2, 2).unwrap();
        let beta = 1.3;
        let sys = eigensystem(&spec).unwrap();
        let trace: f64 = sys.energies.iter().map(|e| (-beta * e).exp()).sum();
        let mut total = 0.0;
        for cfg in all_configs(&spec) {
            let v = exact_metts_propagate(&spec, beta / 2.0, &cfg).unwrap();
            let n: f64 = v.state.iter().map(|a| a * a).sum();
            assert!((n - 1.0).abs() < 1e-12);
            total += v.weight();
        }
        assert!((total - trace).abs() < 1e-8 * trace);
        assert!((sys.log_partition(beta) - trace.ln()).abs() < 1e-12);
    }

    #[test]
    fn metts_average_equals_gibbs_average() {
        for &(lx, ly) in &[(2, 2), (2, 3)] {
            let spec = ModelSpec::tfim(2.9, lx, ly).unwrap();
            let beta = 1.0;
            let sys = eigensystem(&spec).unwrap();
            let log_z = sys.log_partition(beta);
            let ops = [
                PauliString::zz((0, 0), (0, 1)),
                PauliString::single((1, 1), Pauli::X),
                PauliString::zz((0, 0), (1, ly - 1)),
            ];
            for op in &ops {
                let mut metts = 0.0;
                for cfg in all_configs(&spec) {
                    let v = exact_metts_propagate(&spec, beta / 2.0, &cfg).unwrap();
                    metts += (v.log_weight - log_z).exp() * op.expectation(ly, lx * ly, &v.state);
                }
                let gibbs = gibbs_expectation(&spec, beta, op).unwrap();
                assert!((metts - gibbs).abs() < 1e-10, "{lx}x{ly}: {metts} vs {gibbs}");
            }
        }
    }

    #[test]
    fn gibbs_average_is_continuous_in_beta() {
        let spec = ModelSpec::tfim(2.9, 3, 3).unwrap();
        let op = PauliString::zz((1, 1), (1, 2));
        for beta in [0.0, 0.5, 1.0 / 0.6085, 5.0] {
            let a = gibbs_expectation(&spec, beta, &op).unwrap();
            let b = gibbs_expectation(&spec, beta + 1e-6, &op).unwrap();
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn dense_propagator_matches_metts_vector() {
        let spec = ModelSpec::tfim(1.7, 2, 3).unwrap();
        let cfg = Configuration::uniform(2, 3, 0);
        let v = exact_metts_propagate(&spec, 0.4, &cfg).unwrap();
        let mut basis = vec![0.0; 64];
        basis[cfg.index(2)] = 1.0;
        let w = propagate(&spec, 0.4, &basis).unwrap();
        let n: f64 = w.iter().map(|a| a * a).sum::<f64>();
        assert!((n.ln() - v.log_weight).abs() < 1e-10);
        for (a, b) in w.iter().zip(&v.state) {
            assert!((a / n.sqrt() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn size_cap_is_enforced() {
        let spec = ModelSpec::tfim(1.0, 3, 5).unwrap();
        assert!(matches!(eigensystem(&spec), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn named_observables_match_direct_sums() {
        let spec = ModelSpec::tfim(2.9, 2, 3).unwrap();
        let report = exact_report(&spec, 0.8, &[]).unwrap();
        let e = gibbs_observable(&spec, 0.8, &Observable::Energy).unwrap();
        assert!((e - report.energy).abs() < 1e-10, "{e} vs {}", report.energy);
        let c1 = gibbs_observable(&spec, 0.8, &Observable::Correlator(1)).unwrap();
        let direct = gibbs_expectation(&spec, 0.8, &PauliString::zz((1, 1), (1, 2))).unwrap();
        assert_eq!(c1, direct);
        assert!(gibbs_observable(&spec, 0.8, &Observable::MeanZ).unwrap().abs() < 1e-12);
        assert!(gibbs_observable(&spec, 0.8, &Observable::Correlator(3)).is_err());
    }
}
