//! Subcommand implementations. Each returns the number of failed stages; fatal
//! problems (unwritable output, missing inputs) come back as errors.

mod compare;
mod decay;
mod deconvolve;
mod spectra;
mod sweep;
mod synthesize;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use cqed_core::instrument::{gaussian_irf, Domain, IrfKernel};
use cqed_core::io::read_irf_file;
use cqed_core::parallel::Execution;

use crate::config::{ExperimentConfig, IrfSpec};

pub use compare::compare_g;
pub use decay::fit_decay;
pub use deconvolve::deconvolve;
pub use spectra::fit_spectra;
pub use sweep::simulate_sweep;
pub use synthesize::synthesize;

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub runner: Runner,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: usize,
}

/// Invocation problem that is neither a config error nor a processing failure,
/// such as a subcommand with no inputs. Exits like a config error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub struct Runner {
    exec: Execution,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Runner {
    /// `None` uses the default pool; `Some(1)` runs sequentially.
    pub fn new(jobs: Option<usize>) -> Result<Self> {
        match jobs {
            Some(1) => Ok(Self::plain(Execution::Sequential)),
            None => Ok(Self::plain(Execution::default())),
            #[cfg(feature = "parallel")]
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().context("starting worker pool")?;
                Ok(Self { exec: Execution::Parallel, pool: Some(pool) })
            }
            #[cfg(not(feature = "parallel"))]
            Some(n) => {
                log::warn!(target: "pipeline", "built without the parallel feature; ignoring --jobs {n}");
                Ok(Self::plain(Execution::Sequential))
            }
        }
    }

    fn plain(exec: Execution) -> Self {
        Self {
            exec,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    pub fn run<R: Send>(&self, f: impl FnOnce(Execution) -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| f(self.exec));
        }
        f(self.exec)
    }
}

pub(crate) fn load_irf(spec: &IrfSpec, step: f64, domain: Domain) -> Result<IrfKernel> {
    match spec {
        IrfSpec::Gaussian { fwhm } => Ok(gaussian_irf(*fwhm, step, domain)?),
        IrfSpec::File(p) => Ok(read_irf_file(p, domain)?),
    }
}

/// Explicit file arguments win over the config list.
pub(crate) fn inputs(args: Vec<PathBuf>, configured: &[PathBuf], what: &str) -> Result<Vec<PathBuf>> {
    let files = if args.is_empty() { configured.to_vec() } else { args };
    if files.is_empty() {
        return Err(UsageError(format!("no {what} given on the command line or in the config")).into());
    }
    Ok(files)
}

/// Stable label for a data file in reports.
pub(crate) fn source_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub(crate) fn detuning_of(meta: &std::collections::BTreeMap<String, String>) -> Result<Option<f64>> {
    meta.get("detuning_uev")
        .map(|v| v.parse::<f64>().with_context(|| format!("header detuning_uev = '{v}' is not a number")))
        .transpose()
}

pub(crate) fn write(ctx: &Context, rel: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = ctx.out.join(rel);
    crate::output::write_atomic(&path, contents)?;
    log::debug!(target: "output", "wrote {}", path.display());
    Ok(())
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}
