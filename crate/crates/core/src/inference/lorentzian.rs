use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{Error, Result};
use crate::instrument::{Convolver, IrfKernel, SampledSignal};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig};
use crate::model::quality_factor;
use crate::spectra::{find_peaks, half_max_width};

const MODEL: &str = "lorentzian_pair";
const NAMES: [&str; 6] = ["center_1", "fwhm_1", "height_1", "center_2", "fwhm_2", "height_2"];

/// `height / (1 + (2 (x - center) / fwhm)^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianPeak {
    pub center: f64,
    pub fwhm: f64,
    pub height: f64,
}

impl LorentzianPeak {
    pub fn new(center: f64, fwhm: f64, height: f64) -> Self {
        Self { center, fwhm, height }
    }

    pub fn value(&self, x: f64) -> f64 {
        let u = 2.0 * (x - self.center) / self.fwhm;
        self.height / (1.0 + u * u)
    }

    pub fn area(&self) -> f64 {
        0.5 * std::f64::consts::PI * self.height * self.fwhm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianPairParams {
    pub peaks: [LorentzianPeak; 2],
}

impl LorentzianPairParams {
    pub fn new(a: LorentzianPeak, b: LorentzianPeak) -> Self {
        Self { peaks: [a, b] }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.peaks[0].value(x) + self.peaks[1].value(x)
    }

    fn to_vec(self) -> Vec<f64> {
        self.peaks.iter().flat_map(|p| [p.center, p.fwhm, p.height]).collect()
    }

    fn from_slice(p: &[f64]) -> Self {
        Self {
            peaks: [LorentzianPeak::new(p[0], p[1], p[2]), LorentzianPeak::new(p[3], p[4], p[5])],
        }
    }

    /// Parameters from a pair fit, peaks ordered by center.
    pub fn from_fit(fit: &FitResult) -> Result<Self> {
        if fit.model != MODEL || fit.estimates.len() != 6 {
            return Err(Error::InvalidParameter { name: "fit", reason: format!("not a {MODEL} fit") });
        }
        Ok(Self::from_slice(&fit.estimates))
    }
}

struct PairProblem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    conv: Option<Convolver>,
}

impl PairProblem<'_> {
    fn blur(&self, v: Vec<f64>) -> Vec<f64> {
        match &self.conv {
            Some(c) => c.apply(&v),
            None => v,
        }
    }
}

impl LeastSquaresProblem for PairProblem<'_> {
    fn n_params(&self) -> usize {
        6
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let model = LorentzianPairParams::from_slice(p);
        let m = self.blur(self.x.iter().map(|&x| model.value(x)).collect());
        for i in 0..out.len() {
            out[i] = self.y[i] - m[i];
        }
        Ok(())
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        for k in 0..2 {
            let (c, w, h) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
            let mut dc = Vec::with_capacity(self.x.len());
            let mut dw = Vec::with_capacity(self.x.len());
            let mut dh = Vec::with_capacity(self.x.len());
            for &x in self.x {
                let u = 2.0 * (x - c) / w;
                let d = 1.0 / (1.0 + u * u);
                dh.push(d);
                dc.push(4.0 * h * u * d * d / w);
                dw.push(2.0 * h * u * u * d * d / w);
            }
            for (j, col) in [(0, dc), (1, dw), (2, dh)] {
                let col = self.blur(col);
                for i in 0..col.len() {
                    jac[(i, 3 * k + j)] = -col[i];
                }
            }
        }
        Ok(())
    }
}

fn moving_average(y: &[f64], half: usize) -> Vec<f64> {
    let n = y.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + y[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Starting values from the two highest smoothed local maxima. When only one maximum
/// stands out, the second seed is the largest feature of the residual away from the
/// first peak.
pub fn seed_lorentzian_pair(spec: &SampledSignal, irf: Option<&IrfKernel>) -> Result<LorentzianPairParams> {
    let n = spec.len();
    if n < 8 {
        return Err(Error::InvalidParameter { name: "spectrum", reason: format!("only {n} samples") });
    }
    let x = &spec.grid;
    let raw = &spec.values;
    let step = spec.step();
    let span = x[n - 1] - x[0];
    let half = (n / 400).max(1);
    let smooth = moving_average(raw, half);
    let irf_fwhm = irf.map(|k| 2.354_820_045 * k.sigma()).unwrap_or(0.0);
    let deblur = |w: f64| (w * w - irf_fwhm * irf_fwhm).max(0.25 * w * w).sqrt();
    let width_at = |y: &[f64], i: usize| {
        half_max_width(x, y, i).map(deblur).unwrap_or(0.1 * span).clamp(2.0 * step, 0.5 * span)
    };
    // smoothing only locates peaks; heights and widths come from the data itself
    let local_max = |y: &[f64], i: usize| {
        (i.saturating_sub(half)..(i + half + 1).min(n)).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(i)
    };
    let peak_at = |y: &[f64], i: usize, c: f64| {
        let j = local_max(y, i);
        LorentzianPeak::new(c, width_at(y, j), y[j])
    };

    let mut peaks = find_peaks(x, &smooth, 0.05);
    peaks.sort_by(|a, b| smooth[b.0].total_cmp(&smooth[a.0]));
    let first = match peaks.first() {
        Some(&(i, c)) => peak_at(raw, i, c),
        None => {
            return Err(Error::Degenerate("spectrum has no local maximum to seed a peak".into()));
        }
    };
    let second = if let Some(&(i, c)) = peaks.get(1) {
        peak_at(raw, i, c)
    } else {
        let resid: Vec<f64> = x.iter().zip(raw).map(|(&xi, &yi)| yi - first.value(xi)).collect();
        let resid = moving_average(&resid, 4 * half);
        let away = |i: &usize| (x[*i] - first.center).abs() > 1.5 * first.fwhm;
        match (0..n).filter(away).max_by(|&a, &b| resid[a].total_cmp(&resid[b])) {
            Some(i) if resid[i] > 0.0 => LorentzianPeak::new(x[i], width_at(&resid, i), resid[i]),
            _ => LorentzianPeak::new(first.center + 0.5 * first.fwhm, first.fwhm, 0.1 * first.height),
        }
    };
    Ok(LorentzianPairParams::new(first, second))
}

/// Two-Lorentzian least-squares fit, optionally through an instrument response.
pub fn fit_lorentzian_pair(
    spec: &SampledSignal,
    init: &LorentzianPairParams,
    irf: Option<&IrfKernel>,
) -> Result<FitResult> {
    if let Some(k) = irf {
        if k.domain != spec.domain {
            return Err(Error::GridMismatch("IRF domain differs from spectrum".into()));
        }
    }
    let problem = PairProblem { x: &spec.grid, y: &spec.values, conv: irf.map(|k| Convolver::new(k, spec.len())) };
    let report = levenberg_marquardt(&problem, &init.to_vec(), &LmConfig::default())?;

    // canonical form: positive widths, peaks ordered by center
    let mut p = report.params.clone();
    let mut se = report.std_errors.clone();
    p[1] = p[1].abs();
    p[4] = p[4].abs();
    if p[0] > p[3] {
        p.rotate_left(3);
        se.rotate_left(3);
    }
    let mut fit = FitResult::from_report(MODEL, &NAMES, &report, spec.len());
    fit.estimates = p;
    fit.std_errors = se;

    let [a, b] = LorentzianPairParams::from_slice(&fit.estimates).peaks;
    if (b.center - a.center) < 0.5 * a.fwhm.min(b.fwhm) {
        fit.flags.push("merged_centers".into());
    }
    if a.height < 0.0 || b.height < 0.0 {
        fit.flags.push("negative_height".into());
    }
    Ok(fit)
}

/// Per-spectrum quantities of a detuning sweep. Peaks are ordered by energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub detuning: f64,
    /// Peak centers, in the frame of the fitted spectrum.
    pub centers: [f64; 2],
    pub fwhms: [f64; 2],
    pub q_factors: [f64; 2],
    /// `A_i / (A_1 + A_2)`.
    pub relative_areas: [f64; 2],
    /// Index of the broader, cavity-like peak.
    pub cavity_index: usize,
    pub source: String,
}

impl SweepRecord {
    pub fn separation(&self) -> f64 {
        self.centers[1] - self.centers[0]
    }

    pub fn cavity_fwhm(&self) -> f64 {
        self.fwhms[self.cavity_index]
    }

    /// `A_qd / (A_qd + A_ca)`.
    pub fn qd_relative_area(&self) -> f64 {
        self.relative_areas[1 - self.cavity_index]
    }
}

/// Peak energies, Q-factors (photon energy at `wavelength_nm` over FWHM) and relative
/// areas of a converged pair fit.
pub fn extract_sweep_record(fit: &FitResult, wavelength_nm: f64, detuning: f64, source: &str) -> Result<SweepRecord> {
    if !fit.converged {
        return Err(Error::NotConverged { iterations: fit.iterations });
    }
    let [a, b] = LorentzianPairParams::from_fit(fit)?.peaks;
    let (area_a, area_b) = (a.area(), b.area());
    let total = area_a + area_b;
    if !(total > 0.0) || area_a < 0.0 || area_b < 0.0 {
        return Err(Error::Degenerate(format!("peak areas {area_a:.3e}, {area_b:.3e} are not both positive")));
    }
    Ok(SweepRecord {
        detuning,
        centers: [a.center, b.center],
        fwhms: [a.fwhm, b.fwhm],
        q_factors: [quality_factor(wavelength_nm, a.fwhm)?, quality_factor(wavelength_nm, b.fwhm)?],
        relative_areas: [area_a / total, area_b / total],
        cavity_index: if b.fwhm > a.fwhm { 1 } else { 0 },
        source: source.to_string(),
    })
}
