//! Acceptance checks, one status line each. Pass criterion names (or parts
//! of them) as arguments to run a subset:
//!
//! ```text
//! cargo test -p peps-metts-validation --test acceptance -- trotter zipper
//! ```
//!
//! Artifacts of the METTS run (chain logs, `analysis.csv`,
//! `reference.json`) land in `$PEPS_METTS_ACCEPTANCE_OUT`, by default
//! `target/tmp/acceptance`. `PEPS_METTS_LARGE=1` adds the 9x9 comparison,
//! which runs for many hours.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use peps_metts::ed::{exact_metts_propagate, gibbs_expectation, gibbs_observable, Pauli, PauliString};
use peps_metts::models::{pauli_x, pauli_z, ModelSpec};
use peps_metts::ntu::{evolve, NtuOptions};
use peps_metts::observables::{norm_sq, Observable};
use peps_metts::peps::{Configuration, PepsState};
use peps_metts::purification::{correlator_purified, expect_purified, init_infinite_temperature, thermal_purification, PurificationParams};
use peps_metts::sampler::{Sampler, SamplerOptions};
use peps_metts::stats::{autocorrelation, autocorrelation_of, bunched_error, default_max_lag, ChainRecord, Confidence};
use peps_metts::tensor::{contract, Tensor};
use peps_metts::trotter::EvolutionSchedule;
use peps_metts::zipper::{boundaries_all_rows, canonicalize, transfer_rows, zip_row, zip_row_reverse, BoundaryMps, BoundaryOptions, Canonical};
use peps_metts_cli::analysis::analyze_logs;
use peps_metts_cli::run::run_metts;
use peps_metts_cli::Config;
use peps_metts_validation::{loglog_slope, tv_distance, BoxError, Outcome, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

const G: f64 = 2.9;
const T_C: f64 = 0.6085;

fn out_dir() -> PathBuf {
    std::env::var_os("PEPS_METTS_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn correlators() -> [Observable; 2] {
    [Observable::Correlator(1), Observable::Correlator(2)]
}

/// Gibbs values of C1, C2 on the 3x3 lattice at T_c.
fn exact_3x3() -> Result<Vec<f64>, BoxError> {
    let spec = ModelSpec::tfim(G, 3, 3)?;
    Ok(correlators().iter().map(|o| gibbs_observable(&spec, 1.0 / T_C, o)).collect::<Result<_, _>>()?)
}

fn purification_3x3(cache: &mut Option<Vec<f64>>) -> Result<Vec<f64>, BoxError> {
    if cache.is_none() {
        let params = PurificationParams {
            model: ModelSpec::tfim(G, 3, 3)?,
            beta: 1.0 / T_C,
            dtau: peps_metts::trotter::DEFAULT_DTAU,
            max_d: 6,
            chi: 64,
            ntu: NtuOptions::default(),
        };
        *cache = Some(thermal_purification(&params, &correlators())?.values);
    }
    Ok(cache.clone().unwrap())
}

/// Four chains of 510 steps; the first 10 of each are burn-in.
fn metts_3x3(cache: &mut Option<Vec<ChainRecord>>) -> Result<Vec<ChainRecord>, BoxError> {
    if cache.is_none() {
        let cfg = Config {
            lx: 3,
            ly: 3,
            g: G,
            beta: 1.0 / T_C,
            dtau: peps_metts::trotter::DEFAULT_DTAU,
            bond_dim: 3,
            chi: 16,
            chi_sample: 16,
            n_chains: 4,
            steps: 510,
            seed: 2024,
            burn_in: 10,
            observables: correlators().to_vec(),
            out_dir: Some(out_dir().join("metts")),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()).min(4),
            log_ntu: false,
            ..Config::default()
        };
        let summary = run_metts(&cfg, false)?;
        let logs: Vec<PathBuf> = (0..cfg.n_chains).map(|k| summary.out_dir.join(format!("chain_{k}.jsonl"))).collect();
        std::fs::write(out_dir().join("analysis.csv"), analyze_logs(&logs, None, None)?)?;
        *cache = Some(summary.records);
    }
    Ok(cache.clone().unwrap())
}

fn metts_unbiased() -> Result<Outcome, BoxError> {
    let spec = ModelSpec::tfim(G, 2, 2)?;
    let beta = 1.0;
    let op = PauliString::zz((0, 0), (0, 1));
    let (mut num, mut z) = (0.0, 0.0);
    for i in 0..16 {
        let cfg = Configuration::from_index(2, 2, 2, i);
        let v = exact_metts_propagate(&spec, beta / 2.0, &cfg)?;
        num += v.weight() * op.expectation(2, 4, &v.state);
        z += v.weight();
    }
    let metts = num / z;
    let gibbs = gibbs_expectation(&spec, beta, &op)?;

    // independent check: exp(-beta H) by its power series on every basis vector
    let terms: Vec<(f64, PauliString)> = [((0, 0), (0, 1)), ((1, 0), (1, 1)), ((0, 0), (1, 0)), ((0, 1), (1, 1))]
        .into_iter()
        .map(|(a, b)| (-1.0, PauliString::zz(a, b)))
        .chain((0..4).map(|s| (-G, PauliString::single((s / 2, s % 2), Pauli::X))))
        .collect();
    let h = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (w, p) in &terms {
            for (o, x) in out.iter_mut().zip(p.apply(2, 4, v)) {
                *o += w * x;
            }
        }
        out
    };
    let (mut tr_op, mut tr) = (0.0, 0.0);
    for i in 0..16 {
        let mut e = vec![0.0; 16];
        e[i] = 1.0;
        let (mut acc, mut term) = (e.clone(), e);
        for k in 1..80 {
            term = h(&term).into_iter().map(|x| -beta * x / k as f64).collect();
            acc.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
        }
        tr += acc[i];
        tr_op += op.apply(2, 4, &acc)[i];
    }
    let series = tr_op / tr;
    let pass = (metts - gibbs).abs() < 1e-10 && (gibbs - series).abs() < 1e-10;
    Ok(Outcome::check(pass, format!("METTS {metts:.15}, Gibbs {gibbs:.15}, series {series:.15}, |diff| {:.1e}", (metts - gibbs).abs())))
}

fn sampler_tv() -> Result<Outcome, BoxError> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let state = PepsState::random(2, 3, 2, 2, &mut rng)?;
    let amp = state.to_dense()?;
    let total: f64 = amp.data().iter().map(|a| a * a).sum();
    let exact: Vec<f64> = amp.data().iter().map(|a| a * a / total).collect();
    let sampler = Sampler::new(&state, SamplerOptions::new(64))?;
    let draws = 100_000;
    let mut counts = vec![0usize; exact.len()];
    for _ in 0..draws {
        counts[sampler.sample(&mut rng)?.config.index(2)] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let tv = tv_distance(&empirical, &exact);
    // expected distance from sampling noise alone
    let floor: f64 = exact.iter().map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * draws as f64)).sqrt()).sum::<f64>() / 2.0;
    Ok(Outcome::check(tv < 0.01, format!("TV {tv:.4} over {draws} draws (sampling-noise expectation {floor:.4})")))
}

fn trotter_order() -> Result<Outcome, BoxError> {
    let spec = ModelSpec::tfim(G, 2, 2)?;
    let cfg = Configuration::uniform(2, 2, 0);
    let exact = exact_metts_propagate(&spec, 0.5, &cfg)?.state;
    let start = PepsState::product_state(&cfg, 2)?;
    let mut errors = Vec::new();
    for dtau in [0.04, 0.02, 0.01] {
        let (state, _) = evolve(&start, &spec, &EvolutionSchedule::new(0.5, dtau, 2, 2)?, 4, &NtuOptions::default())?;
        let v = state.to_dense()?;
        let n = v.norm();
        let (plus, minus) = v.data().iter().zip(&exact).fold((0.0, 0.0), |(p, m), (a, b)| {
            (p + (a / n - b).powi(2), m + (a / n + b).powi(2))
        });
        errors.push(plus.min(minus).sqrt());
    }
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let pass = ratios.iter().all(|r| (3.5..=4.5).contains(r));
    Ok(Outcome::check(
        pass,
        format!("errors {:.3e} {:.3e} {:.3e} for dtau 0.04/0.02/0.01, ratios {:.2} {:.2}", errors[0], errors[1], errors[2], ratios[0], ratios[1]),
    ))
}

fn purification_gibbs(cache: &mut Option<Vec<f64>>) -> Result<Outcome, BoxError> {
    let got = purification_3x3(cache)?;
    let exact = exact_3x3()?;
    let rel: Vec<f64> = got.iter().zip(&exact).map(|(g, e)| (g - e) / e).collect();
    Ok(Outcome::check(
        rel.iter().all(|r| r.abs() < 1e-3),
        format!("C1 {:.6} vs {:.6} (rel {:+.2e}), C2 {:.6} vs {:.6} (rel {:+.2e}); D=6, chi=64, dtau 0.01", got[0], exact[0], rel[0], got[1], exact[1], rel[1]),
    ))
}

fn metts_vs_purification(pur: &mut Option<Vec<f64>>, metts: &mut Option<Vec<ChainRecord>>) -> Result<Outcome, BoxError> {
    let reference = purification_3x3(pur)?;
    let records = metts_3x3(metts)?;
    let exact = exact_3x3()?;
    let mut pass = true;
    let mut parts = Vec::new();
    let (mut values, mut exact_doc, mut metts_doc) = (serde_json::Map::new(), serde_json::Map::new(), serde_json::Map::new());
    for (k, o) in correlators().iter().enumerate() {
        let est = bunched_error(&records, &o.to_string(), Confidence::P95)?;
        pass &= est.contains(reference[k]);
        parts.push(format!("{o} {:.4} +- {:.4} vs purification {:.4} (exact {:.4})", est.mean, est.half_width(), reference[k], exact[k]));
        values.insert(o.to_string(), json!(reference[k]));
        exact_doc.insert(o.to_string(), json!(exact[k]));
        metts_doc.insert(o.to_string(), json!({"mean": est.mean, "stderr": est.stderr, "ci95": est.half_width(), "bin_size": est.bin_size}));
    }
    let samples: usize = records.iter().map(|r| r.len() - r.burn_in).sum();
    // same `values` layout as purification.json, plus the exact and METTS numbers
    let reference_doc = json!({
        "config": {"lx": 3, "ly": 3, "g": G, "beta": 1.0 / T_C, "D": 6, "chi": 64},
        "values": values,
        "exact": exact_doc,
        "metts": {"D": 3, "samples": samples, "estimates": metts_doc},
    });
    std::fs::write(out_dir().join("reference.json"), serde_json::to_string_pretty(&reference_doc)?)?;
    Ok(Outcome::check(pass && samples >= 2000, format!("{samples} samples in 4 chains; {}", parts.join("; "))))
}

fn random_boundary(width: usize, phys: usize, chi: usize, rng: &mut impl Rng) -> Result<BoundaryMps, BoxError> {
    let bond = |i: usize| -> usize {
        let cap = |n: usize| phys.checked_pow(n as u32).unwrap_or(usize::MAX);
        chi.min(cap(i)).min(cap(width - i))
    };
    let tensors = (0..width).map(|i| Tensor::from_fn(&[bond(i), phys, bond(i + 1)], |_| rng.gen_range(-1.0..1.0))).collect();
    Ok(canonicalize(&BoundaryMps { tensors, canonical: Canonical::None, chi }, Canonical::Right)?)
}

/// Dense MPO-MPS product by direct contraction of all legs.
fn dense_product(mps: &BoundaryMps, row: &[peps_metts::peps::TransferTensor]) -> Result<Tensor, BoxError> {
    let w = row.len();
    let first = row[0].tensor.shape().to_vec();
    let mut mpo = row[0].tensor.clone().reshape(&[first[0], first[2], first[3]])?;
    for t in &row[1..] {
        let last = mpo.rank() - 1;
        mpo = contract(&mpo, &t.tensor, &[(last, 1)])?;
    }
    // axes: (u, d) per column, then the trivial right edge
    let pairs: Vec<(usize, usize)> = (0..w).map(|i| (i, 2 * i)).collect();
    let v = mps.to_dense()?;
    let v = v.reshape(&vec![mps.tensors[0].shape()[1]; w])?;
    Ok(contract(&v, &mpo, &pairs)?)
}

fn overlap(a: &Tensor, b: &Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    dot / (a.norm() * b.norm())
}

fn zipper_exact() -> Result<Outcome, BoxError> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (chi_in, d) = (4, 2);
    let chi = chi_in * d * d;
    let state = PepsState::random(3, 5, 2, d, &mut rng)?;
    let row = transfer_rows(&state, None)?.remove(1);
    let mps = random_boundary(5, d * d, chi_in, &mut rng)?;
    let exact = dense_product(&mps, &row)?;
    let fwd = zip_row(&mps, &row, chi, 0.0)?;
    let rev = zip_row_reverse(&canonicalize(&mps, Canonical::Left)?, &row, chi, 0.0)?;
    let ov = [overlap(&fwd.mps.to_dense()?, &exact), overlap(&rev.mps.to_dense()?, &exact)];
    let mut worst_iso = fwd.mps.left_isometry_error().max(rev.mps.right_isometry_error());

    // every boundary of a whole lattice, and the norm they give
    let lattice = PepsState::random(4, 4, 2, d, &mut rng)?;
    let b = boundaries_all_rows(&lattice, &BoundaryOptions::new(1024), None)?;
    for m in b.top.iter().chain(&b.bottom) {
        worst_iso = worst_iso.max(match m.canonical {
            Canonical::Left => m.left_isometry_error(),
            Canonical::Right => m.right_isometry_error(),
            Canonical::None => f64::INFINITY,
        });
    }
    let dense = lattice.to_dense()?.norm().powi(2);
    let contracted = norm_sq(&lattice, 1024)?.value();
    let norm_err = (contracted - dense).abs() / dense;
    let pass = ov.iter().all(|o| (o - 1.0).abs() < 1e-10) && worst_iso < 1e-10 && norm_err < 1e-10;
    Ok(Outcome::check(
        pass,
        format!(
            "overlap-1 {:.1e} (forward) {:.1e} (reverse), worst isometry error {worst_iso:.1e} over {} boundaries, 4x4 norm rel err {norm_err:.1e}",
            ov[0] - 1.0,
            ov[1] - 1.0,
            b.top.len() + b.bottom.len() + 2
        ),
    ))
}

fn zipper_scaling() -> Result<Outcome, BoxError> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (width, d) = (24, 2);
    let state = PepsState::random(3, width, 2, d, &mut rng)?;
    let row = transfer_rows(&state, None)?.remove(1);
    let chis = [16usize, 32, 64];
    let mut times = Vec::new();
    for &chi in &chis {
        let mps = random_boundary(width, d * d, chi, &mut rng)?;
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let t = Instant::now();
            let out = zip_row(&mps, &row, chi, 0.0)?;
            best = best.min(t.elapsed().as_secs_f64());
            assert!(out.mps.bond_dims().iter().all(|&b| b <= chi));
        }
        times.push(best);
    }
    let x: Vec<f64> = chis.iter().map(|&c| c as f64).collect();
    let slope = loglog_slope(&x, &times);
    Ok(Outcome::check(
        (2.5..=3.5).contains(&slope),
        format!("best of 5: {:.2e} s, {:.2e} s, {:.2e} s at chi 16/32/64 (D=2, width {width}); exponent {slope:.2}", times[0], times[1], times[2]),
    ))
}

fn infinite_temperature() -> Result<Outcome, BoxError> {
    let state = init_infinite_temperature(3, 3, 2)?;
    let ops = [("Z", pauli_z()), ("X", pauli_x())];
    let mut worst = 0.0_f64;
    let mut count = 0;
    for x in 0..3 {
        for y in 0..3 {
            for (_, op) in &ops {
                worst = worst.max(expect_purified(&state, (x, y), op, 16)?.abs());
                count += 1;
            }
        }
    }
    let pairs = [((0, 0), (0, 1)), ((1, 0), (1, 2)), ((2, 1), (2, 2)), ((0, 1), (1, 1)), ((0, 2), (2, 2))];
    for (a, b) in pairs {
        for (_, p) in &ops {
            for (_, q) in &ops {
                worst = worst.max(correlator_purified(&state, a, b, p, q, 16)?.abs());
                count += 1;
            }
        }
    }
    Ok(Outcome::check(worst < 1e-12, format!("{count} traceless one- and two-site values, largest magnitude {worst:.1e}")))
}

fn ar1(n: usize, rho: f64, rng: &mut impl Rng) -> Vec<f64> {
    let scale = (1.0 - rho * rho).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            x = rho * x + scale * e;
            x
        })
        .collect()
}

fn autocorrelation_plumbing(metts: &mut Option<Vec<ChainRecord>>) -> Result<Outcome, BoxError> {
    let rho: f64 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let series = ar1(100_000, rho, &mut rng);
    let ac = autocorrelation_of(&[&series], 10)?;
    let gamma_err = (1..=4).map(|k| (ac.gamma[k] / rho.powi(k as i32) - 1.0).abs()).fold(0.0, f64::max);
    let mut rec = ChainRecord::new(0, 13, 0);
    for (j, v) in series.iter().enumerate() {
        rec.push(j, &[("x".to_string(), *v)])?;
    }
    let est = bunched_error(&[rec], "x", Confidence::P95)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let naive = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let inflation = est.stderr / naive;
    let expected = ((1.0 + rho) / (1.0 - rho)).sqrt();
    let synthetic_ok = gamma_err < 0.25 && (inflation / expected - 1.0).abs() < 0.25;

    let records = metts_3x3(metts)?;
    let mut taus = Vec::new();
    for o in correlators() {
        let samples = records.iter().map(|r| r.len() - r.burn_in).sum();
        taus.push(autocorrelation(&records, &o.to_string(), default_max_lag(samples))?.tau);
    }
    let chain_ok = taus.iter().all(|t| t.is_finite() && *t < 30.0);
    Ok(Outcome::check(
        synthetic_ok && chain_ok,
        format!(
            "AR(1) rho 0.5: worst Gamma rel err {gamma_err:.3} (lags 1-4), inflation {inflation:.3} vs {expected:.3}; 3x3 METTS tau C1 {:.2}, C2 {:.2}",
            taus[0], taus[1]
        ),
    ))
}

fn large_lattice() -> Result<Outcome, BoxError> {
    if std::env::var("PEPS_METTS_LARGE").as_deref() != Ok("1") {
        return Ok(Outcome::skipped("set PEPS_METTS_LARGE=1 to run the 9x9 comparison (many hours)"));
    }
    let params = PurificationParams {
        model: ModelSpec::tfim(G, 9, 9)?,
        beta: 1.0 / T_C,
        dtau: 0.05,
        max_d: 5,
        chi: 64,
        ntu: NtuOptions::default(),
    };
    let reference = thermal_purification(&params, &correlators())?.values;
    let cfg = Config {
        lx: 9,
        ly: 9,
        beta: 1.0 / T_C,
        dtau: 0.05,
        bond_dim: 3,
        chi: 32,
        chi_sample: 16,
        n_chains: 4,
        steps: 260,
        seed: 99,
        burn_in: 10,
        observables: correlators().to_vec(),
        out_dir: Some(out_dir().join("metts_9x9")),
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()).min(4),
        log_ntu: false,
        ..Config::default()
    };
    let records = run_metts(&cfg, true)?.records;
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, o) in correlators().iter().enumerate() {
        let est = bunched_error(&records, &o.to_string(), Confidence::P95)?;
        pass &= est.contains(reference[k]);
        parts.push(format!("{o} {:.4} +- {:.4} vs purification D=5 {:.4}", est.mean, est.half_width(), reference[k]));
    }
    Ok(Outcome::check(pass, parts.join("; ")))
}

fn main() -> ExitCode {
    std::fs::create_dir_all(out_dir()).expect("acceptance output directory");
    let mut suite = Suite::from_args();
    let mut pur = None;
    let mut metts = None;
    suite.run("metts_unbiased_exact", metts_unbiased);
    suite.run("sampler_total_variation", sampler_tv);
    suite.run("trotter_second_order", trotter_order);
    suite.run("zipper_exact_and_canonical", zipper_exact);
    suite.run("zipper_cost_scaling", zipper_scaling);
    suite.run("infinite_temperature_identities", infinite_temperature);
    suite.run("purification_matches_gibbs", || purification_gibbs(&mut pur));
    suite.run("metts_matches_purification", || metts_vs_purification(&mut pur, &mut metts));
    suite.run("autocorrelation_plumbing", || autocorrelation_plumbing(&mut metts));
    suite.run("large_lattice_optional", large_lattice);
    suite.finish()
}
