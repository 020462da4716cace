use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use cqed_core::inference::{fit_decay_with, FitResult, MAX_COMPONENTS};
use cqed_core::instrument::Domain;
use cqed_core::io::read_signal_file;
use cqed_core::parallel::map_slice;

use super::{detuning_of, inputs, load_irf, source_name, write, Context, Outcome, UsageError};
use crate::output::{num, opt_num, svg_plot, text_field, Csv, Series};

pub(crate) struct DecayFit {
    pub source: String,
    pub detuning: Option<f64>,
    pub fit: FitResult,
}

impl DecayFit {
    /// Fastest fitted rate (ns^-1); rates come out sorted in descending order.
    pub fn leading_rate(&self) -> f64 {
        self.fit.get("rate_1").expect("decay fits carry rate_1")
    }
}

pub(crate) fn require_temporal_irf(ctx: &Context) -> Result<()> {
    if ctx.config.temporal_irf.is_none() {
        return Err(UsageError(format!(
            "{}: decay fits need [instrument] temporal_irf_fwhm_ns or temporal_irf_file",
            ctx.config.source.display()
        ))
        .into());
    }
    Ok(())
}

pub(crate) fn fit_decay_file(ctx: &Context, path: &Path) -> Result<DecayFit> {
    let config = &ctx.config;
    let (curve, meta) = read_signal_file(path, Domain::Temporal)?;
    let spec = config.temporal_irf.as_ref().expect("checked by require_temporal_irf");
    let irf = load_irf(spec, curve.step(), Domain::Temporal)?;
    let fit = fit_decay_with(&curve, &irf, config.decay_mode, config.decay_weights).context("fitting")?;
    Ok(DecayFit { source: source_name(path), detuning: detuning_of(&meta)?, fit })
}

pub fn fit_decay(ctx: &Context, files: Vec<PathBuf>) -> Result<Outcome> {
    let files = inputs(files, &ctx.config.decays, "decay files")?;
    require_temporal_irf(ctx)?;
    log::info!(target: "fit-decay", "fitting {} decay curves ({:?} mode)", files.len(), ctx.config.decay_mode);
    let results = ctx.runner.run(|exec| map_slice(&files, exec, |p| fit_decay_file(ctx, p)));

    let mut outcome = Outcome::default();
    let mut fits = Vec::new();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(f) => {
                if !f.fit.flags.is_empty() {
                    log::warn!(target: "fit-decay", "{}: flags {}", path.display(), f.fit.flags.join(","));
                }
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write(ctx, format!("fits/{stem}.fit.txt"), &f.fit.to_key_value())?;
                fits.push(f);
            }
            Err(e) => {
                log::error!(target: "fit-decay", "{}: {e:#}", path.display());
                outcome.failures += 1;
            }
        }
    }
    // files without a detuning header go last
    fits.sort_by(|a, b| {
        let key = |f: &DecayFit| f.detuning.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then_with(|| a.source.cmp(&b.source))
    });

    let mut header = vec!["detuning_uev".to_string(), "source".into(), "components".into()];
    for j in 1..=MAX_COMPONENTS {
        header.extend([
            format!("rate_{j}_per_ns"),
            format!("rate_{j}_err"),
            format!("amplitude_{j}"),
            format!("amplitude_{j}_err"),
        ]);
    }
    header.extend(["baseline".into(), "baseline_err".into(), "reduced_chi2".into(), "flags".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new("decay_fits", 1, &header);
    for f in &fits {
        let k = (f.fit.estimates.len() - 1) / 2;
        let mut row = vec![opt_num(f.detuning), text_field(&f.source), k.to_string()];
        for j in 1..=MAX_COMPONENTS {
            for name in [format!("rate_{j}"), format!("amplitude_{j}")] {
                row.push(opt_num(f.fit.get(&name)));
                row.push(opt_num(f.fit.std_error(&name)));
            }
        }
        row.push(opt_num(f.fit.get("baseline")));
        row.push(opt_num(f.fit.std_error("baseline")));
        row.push(num(f.fit.residual_sum / f.fit.degrees_of_freedom.max(1) as f64));
        row.push(text_field(&f.fit.flags.join(";")));
        csv.row(&row);
    }
    write(ctx, "decay_fits.csv", &csv.finish())?;

    let curve: Vec<(f64, f64)> = fits.iter().filter_map(|f| f.detuning.map(|d| (d, f.leading_rate()))).collect();
    if ctx.config.svg && !curve.is_empty() {
        let svg = svg_plot(
            "Fitted decay rate vs detuning",
            "detuning (ueV)",
            "fastest rate (1/ns)",
            &[Series { label: "rate_1", points: curve, markers: true }],
        );
        write(ctx, "decay_fits.svg", &svg)?;
    }
    Ok(outcome)
}
