use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use cqed_core::inference::{
    compare_coupling_estimates, fit_jc_cavity_spectrum, strong_coupling_threshold, CouplingComparison,
    CouplingVerdict, JcFixedParams,
};
use cqed_core::instrument::{deconvolve, Domain};
use cqed_core::io::read_signal_file;
use cqed_core::model::{coupling_from_rate, InversionMode};
use cqed_core::spectra::{find_peaks, DEFAULT_PROMINENCE};
use serde::Serialize;

use super::decay::{fit_decay_file, require_temporal_irf};
use super::{detuning_of, load_irf, source_name, to_json, write, Context, Outcome, UsageError};

#[derive(Serialize, Default)]
struct Section {
    available: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detuning_uev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_per_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_err_per_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    purcell_enhancement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inversion: Option<InversionMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g_uev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g_err_uev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<CouplingVerdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    flags: Vec<String>,
    /// Why the estimate is missing.
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

impl Section {
    fn unavailable(reason: impl Into<String>) -> Self {
        Self { reason: Some(reason.into()), ..Self::default() }
    }
}

#[derive(Serialize)]
struct Report {
    schema: &'static str,
    threshold_uev: f64,
    spectral: Section,
    dynamical: Section,
    comparison: Option<CouplingComparison>,
}

fn verdict(g: f64, threshold: f64) -> CouplingVerdict {
    if g > threshold {
        CouplingVerdict::Strong
    } else {
        CouplingVerdict::Weak
    }
}

/// Start value from the doublet splitting, or a quarter linewidth for a single peak.
fn initial_g(x: &[f64], y: &[f64], fixed: &JcFixedParams) -> f64 {
    let mut peaks = find_peaks(x, y, DEFAULT_PROMINENCE);
    let damping = (fixed.kappa - fixed.gamma - 2.0 * fixed.gamma_dp).abs() / 4.0;
    if peaks.len() >= 2 {
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
        let half = 0.5 * (x[peaks[0].0] - x[peaks[1].0]).abs();
        (half * half + damping * damping).sqrt()
    } else {
        damping.max(0.25 * fixed.kappa)
    }
}

fn spectral_estimate(ctx: &Context, path: &Path) -> Result<Section> {
    let config = &ctx.config;
    let (mut signal, meta) = read_signal_file(path, Domain::Spectral)?;
    let detuning = detuning_of(&meta)?.unwrap_or(config.system.delta);
    let irf = config.spectral_irf.as_ref().map(|s| load_irf(s, signal.step(), Domain::Spectral)).transpose()?;
    if config.deconvolve {
        signal = deconvolve(&signal, irf.as_ref().expect("config guarantees an IRF"), config.band_limit)
            .context("deconvolution")?;
    }
    let fixed = JcFixedParams::from_params(&config.system.with_delta(detuning));
    let init = config.init_g.unwrap_or_else(|| initial_g(&signal.grid, &signal.values, &fixed));
    let fit_irf = if config.irf_aware { irf.as_ref() } else { None };
    let fit = fit_jc_cavity_spectrum(&signal, &fixed, init, fit_irf).context("cavity-spectrum fit")?;
    write(ctx, "fits/compare_g_spectrum.fit.txt", &fit.to_key_value())?;
    let g = fit.get("g").expect("jc fits carry g");
    Ok(Section {
        available: true,
        source: Some(source_name(path)),
        detuning_uev: Some(detuning),
        g_uev: Some(g),
        g_err_uev: fit.std_error("g"),
        verdict: Some(verdict(g, strong_coupling_threshold(&config.system))),
        flags: fit.flags.clone(),
        ..Section::default()
    })
}

fn dynamical_estimate(ctx: &Context, path: &Path) -> Result<Section> {
    let config = &ctx.config;
    let d = fit_decay_file(ctx, path)?;
    write(ctx, "fits/compare_g_decay.fit.txt", &d.fit.to_key_value())?;
    let detuning = d.detuning.unwrap_or(config.system.delta);
    let rate = d.leading_rate();
    let g = coupling_from_rate(rate, &config.system.with_delta(detuning), config.inversion).context("rate inversion")?;
    let k = (d.fit.estimates.len() - 1) / 2;
    let purcell = (k > 1).then(|| rate / d.fit.get(&format!("rate_{k}")).expect("slowest rate"));
    Ok(Section {
        available: true,
        source: Some(d.source.clone()),
        detuning_uev: Some(detuning),
        rate_per_ns: Some(rate),
        rate_err_per_ns: d.fit.std_error("rate_1"),
        purcell_enhancement: purcell,
        inversion: Some(config.inversion),
        g_uev: Some(g),
        verdict: Some(verdict(g, strong_coupling_threshold(&config.system))),
        flags: d.fit.flags.clone(),
        ..Section::default()
    })
}

fn summary(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "strong-coupling threshold |kappa - gamma - 2 gamma_dp|/4 = {:.3} ueV", report.threshold_uev);
    for (name, sec) in [("spectral", &report.spectral), ("dynamical", &report.dynamical)] {
        match (sec.g_uev, sec.verdict) {
            (Some(g), Some(v)) => {
                let _ = write!(s, "{name}: g = {g:.3} ueV");
                if let Some(e) = sec.g_err_uev {
                    let _ = write!(s, " +/- {e:.3}");
                }
                if let Some(r) = sec.rate_per_ns {
                    let _ = write!(s, " from rate {r:.4} 1/ns");
                }
                let _ = writeln!(s, " -> {v} coupling");
            }
            _ => {
                let _ = writeln!(s, "{name}: unavailable ({})", sec.reason.as_deref().unwrap_or("not computed"));
            }
        }
    }
    if let Some(p) = report.dynamical.purcell_enhancement {
        let _ = writeln!(s, "Purcell enhancement (fast/slow rate) = {p:.3}");
    }
    if let Some(c) = &report.comparison {
        let _ = writeln!(s, "ratio g_spectral / g_dynamical = {:.4}", c.ratio);
    }
    s
}

pub fn compare_g(ctx: &Context, spectrum: Option<PathBuf>, decay: Option<PathBuf>) -> Result<Outcome> {
    let config = &ctx.config;
    let spectrum = spectrum.or_else(|| config.jc_spectrum.clone());
    let decay = decay.or_else(|| config.decays.first().cloned());
    if spectrum.is_none() && decay.is_none() {
        return Err(UsageError("compare-g needs a spectrum, a decay curve or both".into()).into());
    }
    if decay.is_some() {
        require_temporal_irf(ctx)?;
    }

    let mut outcome = Outcome::default();
    let mut run = |stage: &str, path: Option<PathBuf>, f: &dyn Fn(&Context, &Path) -> Result<Section>| match path {
        None => {
            log::warn!(target: "compare-g", "no {stage} input; {stage} estimate unavailable");
            Section::unavailable(format!("no {stage} input"))
        }
        Some(p) => match f(ctx, &p) {
            Ok(sec) => sec,
            Err(e) => {
                log::error!(target: "compare-g", "{}: {e:#}", p.display());
                outcome.failures += 1;
                Section::unavailable(format!("{e:#}"))
            }
        },
    };
    let spectral = run("spectral", spectrum, &spectral_estimate);
    let dynamical = run("dynamical", decay, &dynamical_estimate);

    let comparison = match (spectral.g_uev, dynamical.g_uev) {
        (Some(gs), Some(gd)) => match compare_coupling_estimates(gs, gd, &config.system) {
            Ok(c) => Some(c),
            Err(e) => {
                log::error!(target: "compare-g", "{e}");
                outcome.failures += 1;
                None
            }
        },
        _ => None,
    };
    let report = Report {
        schema: "cqed-lab/compare-g/v1",
        threshold_uev: strong_coupling_threshold(&config.system),
        spectral,
        dynamical,
        comparison,
    };
    let text = summary(&report);
    for line in text.lines() {
        log::info!(target: "compare-g", "{line}");
    }
    write(ctx, "compare_g.json", &to_json(&report))?;
    write(ctx, "compare_g.txt", &text)?;
    Ok(outcome)
}
