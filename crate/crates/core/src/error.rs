use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time step {dt} ns too coarse: dt*max_rate = {ratio:.3} exceeds 0.1")]
    StepTooCoarse { dt: f64, ratio: f64 },

    #[error("integration failed at t = {t} ns: {reason}")]
    Integration { t: f64, reason: String },

    #[error("trajectory has not decayed by t_max (remaining population {remaining:.3e})")]
    InsufficientDecay { remaining: f64 },

    #[error("system does not decay: {0}")]
    NoDecay(String),

    #[error("target rate {target} ns^-1 does not exceed the background rate {background} ns^-1")]
    NoEnhancement { target: f64, background: f64 },

    #[error("no sign change found while bracketing the coupling strength up to g = {g_max} ueV")]
    NoBracket { g_max: f64 },

    #[error("frequency grid too narrow: {0}")]
    GridTooNarrow(String),

    #[error("grid is not uniform: {0}")]
    NonUniformGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("expected two spectral peaks above the prominence threshold, found {found}")]
    PeakCount { found: usize },

    #[error("deconvolution ill-posed: {0}")]
    IllPosed(String),

    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("singular curvature matrix: {0}")]
    SingularCurvature(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("insufficient sweep coverage: {0}")]
    InsufficientCoverage(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("non-finite value {v}") })
    }
}

pub(crate) fn check_positive(name: &'static str, v: f64) -> Result<()> {
    check_finite(name, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be > 0, got {v}") })
    }
}

pub(crate) fn check_non_negative(name: &'static str, v: f64) -> Result<()> {
    check_finite(name, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be >= 0, got {v}") })
    }
}
