//! Two-column text files: `x y` per line, `#` comments, and `# key = value` header
//! lines carrying metadata.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::instrument::{Domain, IrfKernel, SampledSignal};

/// Parsed columns plus header metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoColumn {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

pub fn parse_two_column(text: &str) -> Result<TwoColumn> {
    let mut out = TwoColumn { x: Vec::new(), y: Vec::new(), metadata: BTreeMap::new() };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                out.metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let mut cols = trimmed.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
        let (a, b) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::Parse { line, reason: format!("expected two columns, got '{trimmed}'") }),
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line, reason: format!("'{s}' is not a finite number") })
        };
        out.x.push(parse(a)?);
        out.y.push(parse(b)?);
    }
    if out.x.len() < 2 {
        return Err(Error::Parse { line: text.lines().count().max(1), reason: "fewer than two data rows".into() });
    }
    Ok(out)
}

pub fn read_signal(text: &str, domain: Domain) -> Result<(SampledSignal, BTreeMap<String, String>)> {
    let cols = parse_two_column(text)?;
    Ok((SampledSignal::new(cols.x, cols.y, domain)?, cols.metadata))
}

/// Measured IRF: the second column holds non-negative counts, renormalized on load.
pub fn read_irf(text: &str, domain: Domain) -> Result<IrfKernel> {
    let cols = parse_two_column(text)?;
    IrfKernel::from_samples(&cols.x, &cols.y, domain)
}

pub fn read_signal_file(path: &Path, domain: Domain) -> Result<(SampledSignal, BTreeMap<String, String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_signal(&text, domain).map_err(|e| with_path(e, path))
}

pub fn read_irf_file(path: &Path, domain: Domain) -> Result<IrfKernel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_irf(&text, domain).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, reason } => Error::Parse { line, reason: format!("{}: {reason}", path.display()) },
        other => other,
    }
}

/// Inverse of [`read_signal`]. Values are written with enough digits to round-trip.
pub fn format_signal(signal: &SampledSignal, metadata: &BTreeMap<String, String>, columns: &str) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "# columns = {columns}");
    for (x, y) in signal.grid.iter().zip(&signal.values) {
        let _ = writeln!(out, "{x:.17e} {y:.17e}");
    }
    out
}
