use std::collections::BTreeMap;

use anyhow::Result;
use cqed_core::inference::{decay_model, poisson_sample, replicate_rng, DecayMode, DecayModelParams};
use cqed_core::instrument::{convolve, Domain, SampledSignal};
use cqed_core::io::format_signal;
use cqed_core::model::{propagate, MAX_STEP_RATIO};
use cqed_core::sweep::simulate_sweep as run_sweep;
use cqed_core::units::energy_to_rate;
use serde_json::{json, Value};

use super::sweep::{spectrum_metadata, sweep_spec};
use super::{load_irf, to_json, write, Context, Outcome};
use crate::config::{IrfSpec, SynthSpec};

/// Noise streams for decay curves start here so they never share a stream with a spectrum.
const DECAY_STREAM_OFFSET: u64 = 1 << 32;

fn irf_json(spec: &Option<IrfSpec>) -> Value {
    match spec {
        None => Value::Null,
        Some(IrfSpec::Gaussian { fwhm }) => json!({ "gaussian_fwhm": fwhm }),
        Some(IrfSpec::File(p)) => json!({ "file": p.file_name().map(|n| n.to_string_lossy().into_owned()) }),
    }
}

/// Poisson counts around `mean`, or `mean` itself when no count level is set.
fn realize(mean: &[f64], noisy: bool, seed: u64, stream: u64) -> Vec<f64> {
    if !noisy {
        return mean.to_vec();
    }
    let mut rng = replicate_rng(seed, stream);
    mean.iter().map(|&m| poisson_sample(&mut rng, m.max(0.0))).collect()
}

/// Scale a noiseless shape to the configured peak count level plus background.
fn to_counts(shape: &[f64], synth: &SynthSpec) -> (Vec<f64>, Option<f64>) {
    match synth.peak_counts {
        None => (shape.to_vec(), None),
        Some(peak) => {
            let top = shape.iter().copied().fold(0.0, f64::max);
            let scale = if top > 0.0 { peak / top } else { 0.0 };
            (shape.iter().map(|v| v * scale + synth.background_counts).collect(), Some(scale))
        }
    }
}

fn time_grid(synth: &SynthSpec) -> (Vec<f64>, usize) {
    let dt = synth.time_step;
    let pre = (synth.pre_trigger / dt).round() as usize;
    let n = (synth.time_window / dt).round() as usize + 1;
    let n = n.max(pre + 2);
    ((0..n).map(|k| (k as f64 - pre as f64) * dt).collect(), pre)
}

/// Emitted photon flux `gamma rho_qd + kappa rho_ca` (ns^-1) on `grid`, zero before
/// the trigger and halved at it.
fn emission_flux(ctx: &Context, detuning: f64, grid: &[f64], pre: usize) -> Result<Vec<f64>> {
    let p = ctx.config.system.with_delta(detuning);
    let dt = ctx.config.synth.time_step;
    // integrate on a step fine enough for the fastest rate, then keep every `sub`-th sample
    let sub = (dt * energy_to_rate(p.max_rate()) / MAX_STEP_RATIO).ceil().max(1.0) as usize;
    let t_end = grid.last().copied().unwrap_or(0.0);
    let traj = propagate(&p, t_end, dt / sub as f64)?;
    let (gamma, kappa) = (energy_to_rate(p.gamma), energy_to_rate(p.kappa));
    let mut flux = vec![0.0; grid.len()];
    for (k, f) in flux.iter_mut().enumerate().skip(pre) {
        let i = (k - pre) * sub;
        if i < traj.len() {
            *f = gamma * traj.rho_qd[i] + kappa * traj.rho_ca[i];
        }
    }
    flux[pre] *= 0.5;
    Ok(flux)
}

pub fn synthesize(ctx: &Context) -> Result<Outcome> {
    let config = &ctx.config;
    let synth = &config.synth;
    let noisy = synth.peak_counts.is_some() || synth.decay_rates.is_some();
    let spec = sweep_spec(config);
    log::info!(
        target: "synthesize",
        "{} detunings, seed {}, {}",
        spec.detunings.len(),
        ctx.seed,
        if synth.peak_counts.is_some() { "Poisson noise" } else { "noiseless spectra" }
    );
    let points = ctx.runner.run(|exec| run_sweep(&spec, exec));
    let (t_grid, pre) = time_grid(synth);
    let temporal_irf =
        config.temporal_irf.as_ref().map(|s| load_irf(s, synth.time_step, Domain::Temporal)).transpose()?;
    let measured_spectral_irf = match &config.spectral_irf {
        Some(IrfSpec::File(p)) => Some(cqed_core::io::read_irf_file(p, Domain::Spectral)?),
        _ => None,
    };

    let mut outcome = Outcome::default();
    let base_truth = json!({
        "system": config.system,
        "detection": config.detection,
        "spectral_irf": irf_json(&config.spectral_irf),
        "temporal_irf": irf_json(&config.temporal_irf),
        "seed": ctx.seed,
    });
    for (i, (&d, point)) in spec.detunings.iter().zip(points).enumerate() {
        let point = match point {
            Ok(p) => p,
            Err(e) => {
                log::error!(target: "synthesize", "detuning {d} ueV: {e}");
                outcome.failures += 1;
                continue;
            }
        };

        let mut spectrum = point.spectrum;
        if let Some(irf) = &measured_spectral_irf {
            spectrum = convolve(&spectrum, irf)?;
        }
        let (mean, scale) = to_counts(&spectrum.values, synth);
        let values = realize(&mean, synth.peak_counts.is_some(), ctx.seed, i as u64);
        let mut meta = spectrum_metadata(config, d);
        if synth.peak_counts.is_some() {
            meta.insert("noise".into(), "poisson".into());
        }
        let name = format!("spectra/spectrum_{i:03}");
        write(ctx, format!("{name}.txt"), &format_signal(&spectrum.with_values(values), &meta, "omega_uev counts"))?;
        let truth = json!({
            "kind": "spectrum",
            "detuning_uev": d,
            "peak_separation_uev": point.peak_separation,
            "counts_per_unit_model": scale,
            "background_counts": synth.peak_counts.map(|_| synth.background_counts),
            "noise_stream": synth.peak_counts.map(|_| i as u64),
            "common": base_truth,
        });
        write(ctx, format!("{name}.truth.json"), &to_json(&truth))?;

        let (mean, decay_truth) = match (&synth.decay_rates, &synth.decay_amplitudes) {
            (Some(rates), Some(amps)) => {
                let mode = match rates.len() {
                    1 => DecayMode::Single,
                    2 => DecayMode::Bi,
                    _ => DecayMode::Multi,
                };
                let params = DecayModelParams {
                    mode,
                    rates: rates.clone(),
                    amplitudes: amps.clone(),
                    baseline: synth.background_counts,
                };
                let mean = decay_model(&params, &t_grid, temporal_irf.as_ref());
                (mean, json!({ "rates_per_ns": rates, "amplitudes": amps, "baseline": synth.background_counts }))
            }
            _ => {
                let flux = match emission_flux(ctx, d, &t_grid, pre) {
                    Ok(f) => f,
                    Err(e) => {
                        log::error!(target: "synthesize", "decay at detuning {d} ueV: {e:#}");
                        outcome.failures += 1;
                        continue;
                    }
                };
                let flux = match &temporal_irf {
                    Some(irf) => convolve(&SampledSignal::new(t_grid.clone(), flux, Domain::Temporal)?, irf)?.values,
                    None => flux,
                };
                let (mean, scale) = to_counts(&flux, synth);
                (mean, json!({ "mean_rate_per_ns": point.mean_rate, "counts_per_unit_flux": scale }))
            }
        };
        let counts = realize(&mean, noisy, ctx.seed, DECAY_STREAM_OFFSET + i as u64);
        let curve = SampledSignal::new(t_grid.clone(), counts, Domain::Temporal)?;
        let mut meta = BTreeMap::new();
        meta.insert("detuning_uev".to_string(), format!("{d}"));
        meta.insert("time_zero".to_string(), "trigger".to_string());
        if noisy {
            meta.insert("noise".into(), "poisson".into());
        }
        let name = format!("decays/decay_{i:03}");
        write(ctx, format!("{name}.txt"), &format_signal(&curve, &meta, "t_ns counts"))?;
        let truth = json!({
            "kind": "decay",
            "detuning_uev": d,
            "model": decay_truth,
            "noise_stream": noisy.then_some(DECAY_STREAM_OFFSET + i as u64),
            "common": base_truth,
        });
        write(ctx, format!("{name}.truth.json"), &to_json(&truth))?;
    }
    Ok(outcome)
}
