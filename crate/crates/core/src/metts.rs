//! The METTS Markov chain: evolve a product state, measure, collapse.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::ModelSpec;
use crate::ntu::{evolve, NtuOptions, NtuReport};
use crate::observables::{evaluate, Observable};
use crate::peps::{Configuration, PepsState};
use crate::sampler::{SampleResult, Sampler, SamplerOptions};
use crate::trotter::EvolutionSchedule;
use crate::zipper::BoundaryOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MettsParams {
    pub model: ModelSpec,
    pub beta: f64,
    pub dtau: f64,
    pub max_d: usize,
    /// Boundary bond dimension for expectation values.
    pub chi: usize,
    /// Boundary bond dimension while sampling.
    pub chi_sample: usize,
    pub observables: Vec<Observable>,
    pub ntu: NtuOptions,
    pub single_layer: bool,
}

impl MettsParams {
    pub fn schedule(&self) -> Result<EvolutionSchedule> {
        EvolutionSchedule::new(self.beta / 2.0, self.dtau, self.model.lx, self.model.ly)
    }
}

#[derive(Clone, Debug)]
pub struct MettsStep {
    /// The product state this step started from.
    pub config: Configuration,
    /// Observables of the evolved state, in the order of `params.observables`.
    pub values: Vec<f64>,
    pub reports: Vec<NtuReport>,
    /// Collapse outcome; its configuration starts the next step.
    pub sample: SampleResult,
    /// The evolved, unnormalized state the sample was drawn from.
    pub state: PepsState,
}

/// Evolves `config` by `beta / 2`, evaluates the observables and samples the
/// next product state.
pub fn metts_step(config: &Configuration, params: &MettsParams, rng: &mut ChaCha8Rng) -> Result<MettsStep> {
    let m = &params.model;
    if (config.lx, config.ly) != (m.lx, m.ly) || config.labels.iter().any(|&l| l >= m.phys_dim()) {
        return invalid("configuration does not fit the model");
    }
    let start = PepsState::product_state(config, m.phys_dim())?;
    let (state, reports) = evolve(&start, m, &params.schedule()?, params.max_d, &params.ntu)?;
    let values = evaluate(&state, m, &params.observables, &BoundaryOptions::new(params.chi))?;
    let sopts = SamplerOptions { single_layer: params.single_layer, ..SamplerOptions::new(params.chi_sample) };
    let sample = Sampler::new(&state, sopts)?.sample(rng)?;
    Ok(MettsStep { config: config.clone(), values, reports, sample, state })
}

/// Seed of chain `k` in a run with base seed `seed`.
pub fn chain_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub chain: usize,
    pub seed: u64,
    /// Number of completed steps.
    pub step: usize,
    /// Product state the next step starts from.
    pub config: Configuration,
    /// Generator word position; `u64` keeps it representable in JSON.
    pub rng_word_pos: u64,
}

#[derive(Clone, Debug)]
pub struct MettsChain {
    pub params: MettsParams,
    state: ChainState,
    rng: ChaCha8Rng,
}

impl MettsChain {
    /// A fresh chain starting from the all-up configuration.
    pub fn new(params: MettsParams, chain: usize, seed: u64) -> Self {
        let config = Configuration::uniform(params.model.lx, params.model.ly, 0);
        let state = ChainState { chain, seed, step: 0, config, rng_word_pos: 0 };
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Self { params, state, rng }
    }

    pub fn resume(params: MettsParams, state: ChainState) -> Result<Self> {
        let m = &params.model;
        if (state.config.lx, state.config.ly) != (m.lx, m.ly) {
            return invalid("checkpointed configuration does not fit the model");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_word_pos(u128::from(state.rng_word_pos));
        Ok(Self { params, state, rng })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn advance(&mut self) -> Result<MettsStep> {
        let out = metts_step(&self.state.config, &self.params, &mut self.rng)?;
        self.state.step += 1;
        self.state.config = out.sample.config.clone();
        self.state.rng_word_pos = u64::try_from(self.rng.get_word_pos()).expect("generator position beyond 2^64 words");
        Ok(out)
    }
}
