use std::collections::BTreeMap;

use anyhow::Result;
use cqed_core::instrument::{convolve, Domain};
use cqed_core::io::{format_signal, read_irf_file};
use cqed_core::model::weak_coupling_rate;
use cqed_core::sweep::{simulate_sweep as run_sweep, SweepSpec};

use super::{write, Context, Outcome};
use crate::config::{ExperimentConfig, IrfSpec};
use crate::output::{num, opt_num, svg_plot, Csv, Series};

pub(crate) fn sorted_detunings(config: &ExperimentConfig) -> Vec<f64> {
    let mut d = config.detunings.clone();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

pub(crate) fn sweep_spec(config: &ExperimentConfig) -> SweepSpec {
    let mut spec = SweepSpec::new(config.system, sorted_detunings(config));
    spec.detection = config.detection;
    spec.weighting = config.weighting;
    spec.grid_points = config.grid_points;
    if let Some(IrfSpec::Gaussian { fwhm }) = config.spectral_irf {
        spec.irf_fwhm = Some(fwhm);
    }
    spec
}

/// Header lines shared by every generated spectrum file.
pub(crate) fn spectrum_metadata(config: &ExperimentConfig, detuning: f64) -> BTreeMap<String, String> {
    let p = &config.system;
    let mut m = BTreeMap::new();
    m.insert("detuning_uev".into(), format!("{detuning}"));
    m.insert("g_uev".into(), format!("{}", p.g));
    m.insert("kappa_uev".into(), format!("{}", p.kappa));
    m.insert("gamma_uev".into(), format!("{}", p.gamma));
    m.insert("gamma_dp_uev".into(), format!("{}", p.gamma_dp));
    m.insert("frame".into(), "offset".into());
    m.insert("background_fraction".into(), format!("{}", config.detection.background_fraction));
    match &config.spectral_irf {
        Some(IrfSpec::Gaussian { fwhm }) => {
            m.insert("irf_fwhm_uev".into(), format!("{fwhm}"));
        }
        Some(IrfSpec::File(_)) => {
            m.insert("irf".into(), "measured".into());
        }
        None => {}
    }
    m
}

pub fn simulate_sweep(ctx: &Context) -> Result<Outcome> {
    let config = &ctx.config;
    let spec = sweep_spec(config);
    log::info!(target: "sweep", "simulating {} detunings", spec.detunings.len());
    let points = ctx.runner.run(|exec| run_sweep(&spec, exec));
    let measured_irf = match &config.spectral_irf {
        Some(IrfSpec::File(p)) => Some(read_irf_file(p, Domain::Spectral)?),
        _ => None,
    };

    let mut outcome = Outcome::default();
    let mut csv = Csv::new(
        "sweep",
        1,
        &["detuning_uev", "mean_rate_per_ns", "weak_coupling_rate_per_ns", "peak_separation_uev"],
    );
    let mut rate_curve = Vec::new();
    let mut weak_curve = Vec::new();
    for (i, (&d, point)) in spec.detunings.iter().zip(points).enumerate() {
        let weak = weak_coupling_rate(&config.system.with_delta(d));
        let point = point.and_then(|mut p| {
            if let Some(irf) = &measured_irf {
                p.spectrum = convolve(&p.spectrum, irf)?;
            }
            Ok(p)
        });
        match point {
            Ok(p) => {
                csv.row(&[num(d), num(p.mean_rate), num(weak), opt_num(p.peak_separation)]);
                let text = format_signal(&p.spectrum, &spectrum_metadata(config, d), "omega_uev intensity");
                write(ctx, format!("spectra/spectrum_{i:03}.txt"), &text)?;
                rate_curve.push((d, p.mean_rate));
            }
            Err(e) => {
                log::error!(target: "sweep", "detuning {d} ueV: {e}");
                outcome.failures += 1;
                csv.row(&[num(d), String::new(), num(weak), String::new()]);
            }
        }
        weak_curve.push((d, weak));
    }
    write(ctx, "sweep.csv", &csv.finish())?;
    if config.svg {
        let svg = svg_plot(
            "Mean decay rate vs detuning",
            "detuning (ueV)",
            "rate (1/ns)",
            &[
                Series { label: "full model", points: rate_curve, markers: true },
                Series { label: "weak-coupling rate", points: weak_curve, markers: false },
            ],
        );
        write(ctx, "sweep.svg", &svg)?;
    }
    log::info!(target: "sweep", "wrote {}", ctx.out.join("sweep.csv").display());
    Ok(outcome)
}
