use std::fmt;

use serde::{Deserialize, Serialize};

use super::SweepRecord;
use crate::error::{check_positive, Error, Result};
use crate::model::SystemParams;

const MIN_RECORDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingLabel {
    Crossing,
    AntiCrossing,
}

impl fmt::Display for CouplingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingLabel::Crossing => "crossing",
            CouplingLabel::AntiCrossing => "anti_crossing",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingClassification {
    pub label: CouplingLabel,
    /// Smallest fitted peak separation over the sweep (ueV).
    pub min_separation: f64,
    pub detuning_at_min: f64,
    pub threshold: f64,
}

/// Label a detuning sweep by whether the two fitted peaks stay apart through
/// resonance. The threshold defaults to half the mean cavity linewidth.
pub fn classify_coupling(records: &[SweepRecord]) -> Result<CouplingClassification> {
    let mean_fwhm = records.iter().map(|r| r.cavity_fwhm()).sum::<f64>() / records.len().max(1) as f64;
    classify_coupling_with(records, 0.5 * mean_fwhm)
}

pub fn classify_coupling_with(records: &[SweepRecord], threshold: f64) -> Result<CouplingClassification> {
    if records.len() < MIN_RECORDS {
        return Err(Error::InsufficientCoverage(format!(
            "{} sweep records, at least {MIN_RECORDS} needed",
            records.len()
        )));
    }
    let below = records.iter().any(|r| r.detuning < 0.0);
    let above = records.iter().any(|r| r.detuning > 0.0);
    if !(below && above) {
        return Err(Error::InsufficientCoverage("sweep does not span both signs of the detuning".into()));
    }
    check_positive("threshold", threshold)?;
    let min = records
        .iter()
        .min_by(|a, b| a.separation().total_cmp(&b.separation()))
        .expect("at least one record");
    // peaks are ordered by energy, so the branches only meet where the separation vanishes
    let label = if min.separation() > threshold { CouplingLabel::AntiCrossing } else { CouplingLabel::Crossing };
    Ok(CouplingClassification { label, min_separation: min.separation(), detuning_at_min: min.detuning, threshold })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingVerdict {
    Strong,
    Weak,
}

impl fmt::Display for CouplingVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingVerdict::Strong => "strong",
            CouplingVerdict::Weak => "weak",
        })
    }
}

/// `|kappa - gamma - 2 gamma_dp| / 4`: above it the coupled-mode eigenvalues split
/// on resonance.
pub fn strong_coupling_threshold(params: &SystemParams) -> f64 {
    (params.kappa - params.gamma - 2.0 * params.gamma_dp).abs() / 4.0
}

fn verdict(g: f64, threshold: f64) -> CouplingVerdict {
    if g > threshold {
        CouplingVerdict::Strong
    } else {
        CouplingVerdict::Weak
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingComparison {
    pub g_spectral: f64,
    pub g_dynamical: f64,
    /// `g_spectral / g_dynamical`.
    pub ratio: f64,
    pub threshold: f64,
    pub spectral_verdict: CouplingVerdict,
    pub dynamical_verdict: CouplingVerdict,
}

/// Compare two coupling estimates against the strong-coupling threshold of the
/// shared loss rates in `params` (its own `g` is ignored).
pub fn compare_coupling_estimates(g_spectral: f64, g_dynamical: f64, params: &SystemParams) -> Result<CouplingComparison> {
    check_positive("g_spectral", g_spectral)?;
    check_positive("g_dynamical", g_dynamical)?;
    let threshold = strong_coupling_threshold(params);
    Ok(CouplingComparison {
        g_spectral,
        g_dynamical,
        ratio: g_spectral / g_dynamical,
        threshold,
        spectral_verdict: verdict(g_spectral, threshold),
        dynamical_verdict: verdict(g_dynamical, threshold),
    })
}
