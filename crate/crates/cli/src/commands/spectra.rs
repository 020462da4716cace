use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use cqed_core::inference::{
    classify_coupling, extract_sweep_record, fit_lorentzian_pair, seed_lorentzian_pair, CouplingClassification,
    FitResult, SweepRecord,
};
use cqed_core::instrument::{deconvolve, Domain};
use cqed_core::io::read_signal_file;
use cqed_core::parallel::map_slice;
use serde::Serialize;

use super::{detuning_of, inputs, load_irf, source_name, to_json, write, Context, Outcome};
use crate::output::{num, svg_plot, text_field, Csv, Series};

#[derive(Serialize)]
struct Failure {
    file: String,
    error: String,
}

#[derive(Serialize)]
struct Verdict {
    schema: &'static str,
    records: usize,
    classification: Option<CouplingClassification>,
    classification_error: Option<String>,
    failures: Vec<Failure>,
}

fn fit_one(ctx: &Context, path: &Path) -> Result<(SweepRecord, FitResult)> {
    let config = &ctx.config;
    let (mut signal, meta) = read_signal_file(path, Domain::Spectral)?;
    let detuning = detuning_of(&meta)?.context("missing '# detuning_uev = ...' header")?;
    let irf = config.spectral_irf.as_ref().map(|s| load_irf(s, signal.step(), Domain::Spectral)).transpose()?;
    if config.deconvolve {
        let irf = irf.as_ref().expect("config guarantees an IRF");
        signal = deconvolve(&signal, irf, config.band_limit).context("deconvolution")?;
    }
    let fit_irf = if config.irf_aware { irf.as_ref() } else { None };
    let init = seed_lorentzian_pair(&signal, fit_irf).context("seeding")?;
    let fit = fit_lorentzian_pair(&signal, &init, fit_irf).context("fitting")?;
    let record = extract_sweep_record(&fit, config.wavelength_nm, detuning, &source_name(path))?;
    Ok((record, fit))
}

pub fn fit_spectra(ctx: &Context, files: Vec<PathBuf>) -> Result<Outcome> {
    let files = inputs(files, &ctx.config.spectra, "spectrum files")?;
    log::info!(target: "fit-spectra", "fitting {} spectra", files.len());
    let results = ctx.runner.run(|exec| map_slice(&files, exec, |p| fit_one(ctx, p)));

    let mut outcome = Outcome::default();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok((record, fit)) => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write(ctx, format!("fits/{stem}.fit.txt"), &fit.to_key_value())?;
                if !fit.flags.is_empty() {
                    log::warn!(target: "fit-spectra", "{}: flags {}", path.display(), fit.flags.join(","));
                }
                records.push((record, fit.flags));
            }
            Err(e) => {
                log::error!(target: "fit-spectra", "{}: {e:#}", path.display());
                failures.push(Failure { file: source_name(path), error: format!("{e:#}") });
                outcome.failures += 1;
            }
        }
    }
    records.sort_by(|a, b| a.0.detuning.total_cmp(&b.0.detuning).then_with(|| a.0.source.cmp(&b.0.source)));

    let mut csv = Csv::new(
        "sweep_records",
        1,
        &[
            "detuning_uev",
            "source",
            "center_1_uev",
            "fwhm_1_uev",
            "q_1",
            "relative_area_1",
            "center_2_uev",
            "fwhm_2_uev",
            "q_2",
            "relative_area_2",
            "cavity_peak",
            "separation_uev",
            "flags",
        ],
    );
    for (r, flags) in &records {
        csv.row(&[
            num(r.detuning),
            text_field(&r.source),
            num(r.centers[0]),
            num(r.fwhms[0]),
            num(r.q_factors[0]),
            num(r.relative_areas[0]),
            num(r.centers[1]),
            num(r.fwhms[1]),
            num(r.q_factors[1]),
            num(r.relative_areas[1]),
            (r.cavity_index + 1).to_string(),
            num(r.separation()),
            text_field(&flags.join(";")),
        ]);
    }
    write(ctx, "sweep_records.csv", &csv.finish())?;

    let plain: Vec<SweepRecord> = records.iter().map(|(r, _)| r.clone()).collect();
    let (classification, classification_error) = match classify_coupling(&plain) {
        Ok(c) => {
            log::info!(
                target: "classify",
                "{} (min separation {:.3} ueV at detuning {} ueV, threshold {:.3} ueV)",
                c.label,
                c.min_separation,
                c.detuning_at_min,
                c.threshold
            );
            (Some(c), None)
        }
        Err(e) => {
            log::error!(target: "classify", "{e}");
            outcome.failures += 1;
            (None, Some(e.to_string()))
        }
    };
    let verdict =
        Verdict { schema: "cqed-lab/verdict/v1", records: plain.len(), classification, classification_error, failures };
    write(ctx, "verdict.json", &to_json(&verdict))?;

    if ctx.config.svg && !plain.is_empty() {
        let branch = |k: usize| plain.iter().map(|r| (r.detuning, r.centers[k])).collect::<Vec<_>>();
        let svg = svg_plot(
            "Fitted peak energies vs detuning",
            "detuning (ueV)",
            "peak energy (ueV)",
            &[
                Series { label: "lower peak", points: branch(0), markers: true },
                Series { label: "upper peak", points: branch(1), markers: true },
            ],
        );
        write(ctx, "sweep_records.svg", &svg)?;
    }
    Ok(outcome)
}
