//! Sequential projective measurement of a PEPS in the product basis.
//!
//! Sites are measured row after row, left to right. At each site the
//! outcome probabilities come from the current row window: the top boundary
//! already contains the projected rows above, the row itself contains the
//! projectors placed so far, and the bottom boundary is that of the
//! unmeasured state. Bottom boundaries are therefore computed once per
//! state and reused for every draw.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::projector;
use crate::peps::{transfer_tensor, Configuration, PepsState, TransferTensor, PHYS};
use crate::tensor::{contract, Tensor, DEFAULT_REL_CUTOFF};
use crate::zipper::{trivial_boundary, zip_row, zip_row_reverse, zip_sequence, BoundaryMps, BoundaryOptions, Canonical};

/// Conditional probabilities in `[-CLAMP_SLACK, 0)` are treated as zero;
/// anything more negative is a contraction failure.
pub const CLAMP_SLACK: f64 = 1e-8;

/// Total outcome weight below this fraction of the summed magnitudes marks
/// a degenerate state.
pub const MIN_MASS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub config: Configuration,
    /// Sum of the logs of the drawn conditionals.
    pub log_prob: f64,
    /// Outcome distribution at each site, row-major.
    pub conditionals: Vec<Vec<f64>>,
    /// Generator seed and word position before the first draw.
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub chi: usize,
    pub rel_cutoff: f64,
    /// Build boundaries of measured rows from one layer and square them.
    pub single_layer: bool,
}

impl SamplerOptions {
    pub fn new(chi: usize) -> Self {
        Self { chi, rel_cutoff: DEFAULT_REL_CUTOFF, single_layer: false }
    }
}

/// A state prepared for repeated sampling.
#[derive(Clone, Debug)]
pub struct Sampler {
    state: PepsState,
    opts: SamplerOptions,
    /// `below[x]`: boundary of rows `x+1..` of the unmeasured state.
    below: Vec<BoundaryMps>,
    rows: Vec<Vec<TransferTensor>>,
}

fn unit3() -> Tensor {
    Tensor::new(vec![1, 1, 1], vec![1.0]).expect("unit")
}

fn rescaled(t: Tensor) -> Tensor {
    let m = t.max_abs();
    if m > 0.0 && m.is_finite() {
        t.scaled(1.0 / m)
    } else {
        t
    }
}

fn absorb_left(env: &Tensor, top: &Tensor, t: &Tensor, bottom: &Tensor) -> Result<Tensor> {
    let a = contract(env, top, &[(0, 0)])?;
    let b = contract(&a, t, &[(0, 1), (2, 0)])?;
    contract(&b, bottom, &[(0, 0), (2, 1)])
}

fn absorb_right(env: &Tensor, top: &Tensor, t: &Tensor, bottom: &Tensor) -> Result<Tensor> {
    let a = contract(top, env, &[(2, 0)])?;
    let b = contract(&a, t, &[(1, 0), (2, 3)])?;
    contract(&b, bottom, &[(1, 2), (3, 1)])
}

/// Site tensor with its physical axis fixed to `label` (extent 1).
fn select(site: &Tensor, label: usize) -> Result<Tensor> {
    let d = site.shape()[PHYS];
    let row = Tensor::from_fn(&[1, d], |i| if i[1] == label { 1.0 } else { 0.0 });
    let t = contract(site, &row, &[(PHYS, 1)])?;
    // move the new axis back into the physical slot
    let r = t.rank();
    let mut perm: Vec<usize> = (0..PHYS).collect();
    perm.push(r - 1);
    perm.extend(PHYS..r - 1);
    t.permute(&perm)
}

/// Single-layer tensor of a measured site: the ket bond legs only.
fn single_layer(site: &Tensor, label: usize) -> Result<TransferTensor> {
    let s = select(site, label)?;
    let sh = s.shape().to_vec();
    let aux: usize = sh[PHYS + 1..].iter().product();
    if aux != 1 {
        return invalid("single-layer boundaries need a state without ancillas");
    }
    let t = s.reshape(&sh[..4])?;
    Ok(TransferTensor { tensor: t, ket: [sh[0], sh[1], sh[2], sh[3]], bra: [1; 4] })
}

/// `S (x) S` as a double-layer boundary.
fn squared(mps: &BoundaryMps) -> Result<BoundaryMps> {
    let tensors = mps
        .tensors
        .iter()
        .map(|t| {
            let s = t.shape().to_vec();
            contract(t, t, &[])?
                .permute(&[0, 3, 1, 4, 2, 5])?
                .reshape(&[s[0] * s[0], s[1] * s[1], s[2] * s[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryMps { tensors, canonical: mps.canonical, chi: mps.chi * mps.chi })
}

fn zip_onto(top: &BoundaryMps, row: &[TransferTensor], chi: usize, cutoff: f64) -> Result<BoundaryMps> {
    let out = match top.canonical {
        Canonical::Left => zip_row_reverse(top, row, chi, cutoff)?,
        _ => zip_row(top, row, chi, cutoff)?,
    };
    Ok(out.mps)
}

impl Sampler {
    pub fn new(state: &PepsState, opts: SamplerOptions) -> Result<Self> {
        state.validate()?;
        if opts.chi == 0 {
            return invalid("chi must be at least 1");
        }
        let (lx, ly) = (state.lx(), state.ly());
        let rows = crate::zipper::transfer_rows(state, None)?;
        let bopts = BoundaryOptions { chi: opts.chi, rel_cutoff: opts.rel_cutoff, rescale: true };
        let flipped = rows[1..].iter().rev().map(|r| r.iter().map(TransferTensor::flip_vertical).collect::<Vec<_>>());
        let (mut bottoms, _, _) = zip_sequence(flipped, ly, &bopts)?;
        bottoms.reverse();
        bottoms.push(trivial_boundary(ly)?);
        debug_assert_eq!(bottoms.len(), lx);
        Ok(Self { state: state.clone(), opts, below: bottoms, rows })
    }

    pub fn state(&self) -> &PepsState {
        &self.state
    }

    /// Draws one configuration.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<SampleResult> {
        let (lx, ly) = (self.state.lx(), self.state.ly());
        let d = self.state.phys_dim();
        let rng_seed = rng.get_seed();
        let rng_word_pos = rng.get_word_pos();
        let projectors: Vec<Tensor> = (0..d).map(|i| projector(d, i)).collect();
        let mut labels = Vec::with_capacity(lx * ly);
        let mut conditionals = Vec::with_capacity(lx * ly);
        let mut log_prob = 0.0;
        let mut draws = 0;

        let mut top = trivial_boundary(ly)?;
        let mut top_single = trivial_boundary(ly)?;
        for x in 0..lx {
            let below = &self.below[x];
            let row = &self.rows[x];
            let mut right = vec![unit3(); ly + 1];
            for y in (0..ly).rev() {
                right[y] = rescaled(absorb_right(&right[y + 1], &top.tensors[y], &row[y].tensor, &below.tensors[y])?);
            }
            let mut left = unit3();
            let mut measured_row = Vec::with_capacity(ly);
            let mut single_row = Vec::with_capacity(ly);
            for y in 0..ly {
                let site = self.state.site(x, y);
                let candidates = projectors
                    .iter()
                    .map(|p| {
                        let t = transfer_tensor(site, Some(p))?;
                        let env = absorb_left(&left, &top.tensors[y], &t.tensor, &below.tensors[y])?;
                        Ok((env.dot(&right[y + 1])?, env, t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let raw: Vec<f64> = candidates.iter().map(|c| c.0).collect();
                let probs = normalize_outcomes(&raw, x, y)?;
                let u: f64 = rng.gen();
                draws += 1;
                let label = pick(&probs, u);
                log_prob += probs[label].ln();
                labels.push(label);
                conditionals.push(probs);
                let (_, env, t) = candidates.into_iter().nth(label).expect("label in range");
                left = rescaled(env);
                measured_row.push(t);
                if self.opts.single_layer {
                    single_row.push(single_layer(site, label)?);
                }
            }
            if x + 1 < lx {
                if self.opts.single_layer {
                    let chi_single = ((self.opts.chi as f64).sqrt().floor() as usize).max(1);
                    top_single = zip_onto(&top_single, &single_row, chi_single, self.opts.rel_cutoff)?;
                    top = squared(&top_single)?;
                } else {
                    top = zip_onto(&top, &measured_row, self.opts.chi, self.opts.rel_cutoff)?;
                }
            }
        }
        let config = Configuration { lx, ly, labels };
        Ok(SampleResult { config, log_prob, conditionals, rng_seed, rng_word_pos, draws })
    }
}

/// Turns raw outcome weights into a distribution, clamping tiny negatives.
fn normalize_outcomes(raw: &[f64], x: usize, y: usize) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    let scale: f64 = raw.iter().map(|v| v.abs()).sum();
    if !total.is_finite() || !(scale > 0.0) || total <= MIN_MASS * scale {
        return Err(Error::DegenerateState { x, y, mass: if scale > 0.0 { total / scale } else { 0.0 } });
    }
    let mut probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mut clamped = false;
    for p in &mut probs {
        if *p < -CLAMP_SLACK {
            return Err(Error::ContractionAccuracy(format!("outcome probability {p} at site ({x}, {y})")));
        }
        if *p < 0.0 {
            *p = 0.0;
            clamped = true;
        }
    }
    if clamped {
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
    }
    Ok(probs)
}

fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u within rounding of 1: last outcome with nonzero probability
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// One draw from `state` with boundaries truncated to `chi`.
pub fn sample_configuration(state: &PepsState, chi: usize, rng: &mut ChaCha8Rng) -> Result<SampleResult> {
    Sampler::new(state, SamplerOptions::new(chi))?.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn product_state_returns_itself() {
        let cfg = Configuration::from_rows(&[vec![0, 1, 1], vec![1, 0, 0]]).unwrap();
        let s = PepsState::product_state(&cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sample_configuration(&s, 4, &mut rng).unwrap();
        assert_eq!(r.config, cfg);
        assert_eq!(r.log_prob, 0.0);
        assert_eq!(r.draws, 6);
        assert_eq!(r.rng_word_pos, 0);
    }

    #[test]
    fn chain_rule_reproduces_born_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let s = PepsState::random(3, 3, 2, 2, &mut rng).unwrap();
        let psi = s.to_dense().unwrap();
        let norm = psi.dot(&psi).unwrap();
        let sampler = Sampler::new(&s, SamplerOptions::new(64)).unwrap();
        for _ in 0..20 {
            let r = sampler.sample(&mut rng).unwrap();
            let amp = psi.data()[r.config.index(2)];
            let p = amp * amp / norm;
            assert!((r.log_prob.exp() - p).abs() < 1e-8 * p, "{} vs {p}", r.log_prob.exp());
            for c in &r.conditionals {
                assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-8);
                assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn single_layer_path_agrees_at_exact_chi() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let s = PepsState::random(3, 3, 2, 2, &mut rng).unwrap();
        let double = Sampler::new(&s, SamplerOptions::new(256)).unwrap();
        let single = Sampler::new(&s, SamplerOptions { single_layer: true, ..SamplerOptions::new(256) }).unwrap();
        for seed in 0..5 {
            let a = double.sample(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = single.sample(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a.config, b.config);
            assert!((a.log_prob - b.log_prob).abs() < 1e-8);
        }
    }

    #[test]
    fn replay_from_recorded_rng_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let s = PepsState::random(2, 2, 2, 2, &mut rng).unwrap();
        let sampler = Sampler::new(&s, SamplerOptions::new(16)).unwrap();
        let _ = sampler.sample(&mut rng).unwrap();
        let r = sampler.sample(&mut rng).unwrap();
        let mut replay = ChaCha8Rng::from_seed(r.rng_seed);
        replay.set_word_pos(r.rng_word_pos);
        assert_eq!(sampler.sample(&mut replay).unwrap(), r);
    }

    #[test]
    fn outcome_normalization() {
        assert_eq!(normalize_outcomes(&[1.0, 3.0], 0, 0).unwrap(), vec![0.25, 0.75]);
        assert_eq!(normalize_outcomes(&[-1e-10, 1.0], 0, 0).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(normalize_outcomes(&[-0.1, 1.0], 0, 0), Err(Error::ContractionAccuracy(_))));
        assert!(matches!(normalize_outcomes(&[0.0, 0.0], 1, 2), Err(Error::DegenerateState { x: 1, y: 2, .. })));
        assert!(matches!(normalize_outcomes(&[1.0, -1.0], 0, 0), Err(Error::DegenerateState { .. })));
        assert_eq!(pick(&[0.5, 0.5], 0.2), 0);
        assert_eq!(pick(&[0.5, 0.5], 0.7), 1);
        assert_eq!(pick(&[1.0, 0.0], 1.0 - 1e-17), 0);
    }

    #[test]
    fn uniform_superposition_is_uniform() {
        // every site (|0> + |1>) / sqrt 2
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let site = Tensor::new(vec![1, 1, 1, 1, 2], vec![h, h]).unwrap();
        let s = PepsState::from_sites(2, 2, 2, false, vec![site; 4]).unwrap();
        let sampler = Sampler::new(&s, SamplerOptions::new(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let n = 20_000;
        let mut counts = [0usize; 16];
        for _ in 0..n {
            counts[sampler.sample(&mut rng).unwrap().config.index(2)] += 1;
        }
        let p = 1.0 / 16.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sigma, "{counts:?}");
        }
    }
}
