use std::path::{Path, PathBuf};

use anyhow::Result;
use cqed_core::instrument::{deconvolve as deconvolve_signal, default_band_limit, Domain};
use cqed_core::io::{format_signal, read_signal_file};
use cqed_core::parallel::map_slice;

use super::{inputs, load_irf, source_name, write, Context, Outcome, UsageError};

fn deconvolve_one(ctx: &Context, path: &Path) -> Result<String> {
    let config = &ctx.config;
    let (signal, mut meta) = read_signal_file(path, Domain::Spectral)?;
    let irf = load_irf(config.spectral_irf.as_ref().expect("checked by caller"), signal.step(), Domain::Spectral)?;
    let band = config.band_limit.unwrap_or_else(|| default_band_limit(&irf));
    let out = deconvolve_signal(&signal, &irf, Some(band))?;
    meta.insert("deconvolved".into(), "true".into());
    meta.insert("band_limit_per_uev".into(), format!("{band}"));
    meta.remove("columns");
    Ok(format_signal(&out, &meta, "omega_uev intensity"))
}

pub fn deconvolve(ctx: &Context, files: Vec<PathBuf>) -> Result<Outcome> {
    let files = inputs(files, &ctx.config.spectra, "spectrum files")?;
    if ctx.config.spectral_irf.is_none() {
        return Err(UsageError("deconvolve needs [instrument] spectral_irf_fwhm_uev or spectral_irf_file".into()).into());
    }
    log::info!(target: "deconvolve", "deconvolving {} spectra", files.len());
    let results = ctx.runner.run(|exec| map_slice(&files, exec, |p| deconvolve_one(ctx, p)));
    let mut outcome = Outcome::default();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(text) => write(ctx, Path::new("deconvolved").join(source_name(path)), &text)?,
            Err(e) => {
                log::error!(target: "deconvolve", "{}: {e:#}", path.display());
                outcome.failures += 1;
            }
        }
    }
    Ok(outcome)
}
