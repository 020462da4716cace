//! Detuning sweeps of the forward model.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Result};
use crate::instrument::{convolve, gaussian_irf, Domain, SampledSignal};
use crate::model::{mean_decay_rate_of, DecayWeighting, SystemParams};
use crate::parallel::{map_slice, Execution};
use crate::spectra::{correlation_kernel, emission_spectrum_with, rabi_splitting, DetectionCoefficients, DEFAULT_GRID_POINTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Parameters at zero detuning; `delta` is replaced per point.
    pub base: SystemParams,
    pub detunings: Vec<f64>,
    pub detection: DetectionCoefficients,
    /// Gaussian spectrometer response (ueV); `None` leaves spectra unbroadened.
    pub irf_fwhm: Option<f64>,
    pub weighting: DecayWeighting,
    pub grid_points: usize,
}

impl SweepSpec {
    pub fn new(base: SystemParams, detunings: Vec<f64>) -> Self {
        Self {
            base,
            detunings,
            detection: DetectionCoefficients::default(),
            irf_fwhm: None,
            weighting: DecayWeighting::default(),
            grid_points: DEFAULT_GRID_POINTS,
        }
    }

    /// Shared offset-frame grid wide enough for every detuning in the sweep.
    pub fn grid(&self) -> Vec<f64> {
        let p = &self.base;
        let w = p.kappa.max(p.gamma + 2.0 * p.gamma_dp).max(2.0 * p.g);
        let reach = self.detunings.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let half = 20.0 * w + reach;
        let n = self.grid_points.max(2);
        (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub detuning: f64,
    /// ns^-1.
    pub mean_rate: f64,
    /// Spectral peak separation (ueV) when the spectrum is a resolved doublet.
    pub peak_separation: Option<f64>,
    pub spectrum: SampledSignal,
}

pub fn simulate_point(spec: &SweepSpec, detuning: f64, grid: &[f64]) -> Result<SweepPoint> {
    check_finite("detuning", detuning)?;
    let params = spec.base.with_delta(detuning);
    params.validate()?;
    let mean_rate = mean_decay_rate_of(&params, spec.weighting)?;
    let kernel = correlation_kernel(&params)?;
    let s = emission_spectrum_with(&kernel, &params, &spec.detection, grid)?;
    let mut signal = SampledSignal::from_spectrum(&s);
    if let Some(fwhm) = spec.irf_fwhm {
        let irf = gaussian_irf(fwhm, signal.step(), Domain::Spectral)?;
        signal = convolve(&signal, &irf)?;
    }
    let peak_separation = rabi_splitting(&s).ok();
    Ok(SweepPoint { detuning, mean_rate, peak_separation, spectrum: signal })
}

/// One result per detuning, in input order.
pub fn simulate_sweep(spec: &SweepSpec, exec: Execution) -> Vec<Result<SweepPoint>> {
    let grid = spec.grid();
    map_slice(&spec.detunings, exec, |&d| simulate_point(spec, d, &grid))
}
