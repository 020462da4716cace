//! Instrument response functions, FFT convolution and band-limited deconvolution.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::numeric::{next_pow2, uniform_step};
use crate::spectra::Spectrum;

/// Relative step jitter accepted for sampled grids.
pub const GRID_JITTER: f64 = 1e-6;

/// Fraction of the IRF transform peak that defines the default band limit.
pub const DEFAULT_BAND_FRACTION: f64 = 0.1;

/// Smallest IRF transform magnitude tolerated inside the passband.
pub const MIN_TRANSFER: f64 = 1e-6;

/// Width of the raised-cosine edge as a fraction of the band limit.
pub const ROLL_OFF: f64 = 0.1;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Frequency axis in ueV.
    Spectral,
    /// Time axis in ns.
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub domain: Domain,
}

impl SampledSignal {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, domain: Domain) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::GridMismatch(format!("{} grid points but {} values", grid.len(), values.len())));
        }
        uniform_step(&grid, GRID_JITTER)?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter { name: "values", reason: format!("non-finite sample {v}") });
        }
        Ok(Self { grid, values, domain })
    }

    pub fn from_spectrum(spec: &Spectrum) -> Self {
        Self { grid: spec.omega.clone(), values: spec.intensity.clone(), domain: Domain::Spectral }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        let n = self.grid.len();
        if n < 2 {
            return 0.0;
        }
        (self.grid[n - 1] - self.grid[0]) / (n - 1) as f64
    }

    /// Rectangle-rule area, `step * sum(values)`.
    pub fn area(&self) -> f64 {
        self.step() * self.values.iter().sum::<f64>()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self { grid: self.grid.clone(), values, domain: self.domain }
    }
}

/// Normalized instrument response on a uniform grid of offsets. Offset 0 is the
/// response origin; `sum(weights) * step == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrfKernel {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: Domain,
}

impl IrfKernel {
    /// Kernel from measured samples: negative counts are rejected, the origin is
    /// moved to the peak sample and the weights are renormalized.
    pub fn from_samples(grid: &[f64], counts: &[f64], domain: Domain) -> Result<Self> {
        if grid.len() != counts.len() {
            return Err(Error::GridMismatch(format!("{} grid points but {} counts", grid.len(), counts.len())));
        }
        let step = uniform_step(grid, GRID_JITTER)?;
        if let Some((i, c)) = counts.iter().enumerate().find(|(_, c)| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "irf",
                reason: format!("sample {i} has invalid count {c}; IRF counts must be non-negative"),
            });
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter { name: "irf", reason: "IRF has zero total weight".into() });
        }
        let peak = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let grid = (0..counts.len()).map(|i| (i as f64 - peak as f64) * step).collect();
        let weights = counts.iter().map(|c| c / (total * step)).collect();
        Ok(Self { grid, weights, domain })
    }

    pub fn step(&self) -> f64 {
        let n = self.grid.len();
        if n < 2 {
            return 0.0;
        }
        (self.grid[n - 1] - self.grid[0]) / (n - 1) as f64
    }

    /// Index of offset zero.
    pub fn origin(&self) -> usize {
        (-self.grid[0] / self.step()).round() as usize
    }

    pub fn mean(&self) -> f64 {
        let h = self.step();
        self.grid.iter().zip(&self.weights).map(|(x, w)| x * w * h).sum()
    }

    /// Standard deviation of the kernel.
    pub fn sigma(&self) -> f64 {
        let h = self.step();
        let m = self.mean();
        self.grid.iter().zip(&self.weights).map(|(x, w)| (x - m).powi(2) * w * h).sum::<f64>().sqrt()
    }

    /// Discrete-time transform `sum_k w_k h exp(-2 pi i f x_k)` at `f` cycles per grid unit.
    pub fn transfer(&self, f: f64) -> Complex64 {
        if self.weights.len() == 1 {
            return Complex64::new(1.0, 0.0);
        }
        let h = self.step();
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| Complex64::from_polar(w * h, -2.0 * std::f64::consts::PI * f * x))
            .sum()
    }
}

/// Gaussian kernel with the given FWHM, sampled out to +-6 sigma.
pub fn gaussian_irf(fwhm: f64, step: f64, domain: Domain) -> Result<IrfKernel> {
    check_positive("step", step)?;
    check_positive("fwhm", fwhm)?;
    if fwhm < 2.0 * step * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter {
            name: "fwhm",
            reason: format!("kernel under-resolved: fwhm {fwhm} < 2 * step {step}"),
        });
    }
    let sigma = fwhm / FWHM_PER_SIGMA;
    let half = (6.0 * sigma / step).ceil() as i64;
    let grid: Vec<f64> = (-half..=half).map(|k| k as f64 * step).collect();
    let raw: Vec<f64> = grid.iter().map(|x| (-0.5 * (x / sigma).powi(2)).exp()).collect();
    let total: f64 = raw.iter().sum::<f64>() * step;
    Ok(IrfKernel { grid, weights: raw.iter().map(|w| w / total).collect(), domain })
}

/// Photon energy resolution `E / Q` of a spectrometer at `wavelength_nm`.
pub fn spectrometer_fwhm(wavelength_nm: f64, resolving_power: f64) -> Result<f64> {
    check_positive("resolving_power", resolving_power)?;
    Ok(crate::model::quality_factor(wavelength_nm, 1.0)? / resolving_power)
}

fn check_compatible(signal: &SampledSignal, irf: &IrfKernel) -> Result<f64> {
    if signal.domain != irf.domain {
        return Err(Error::GridMismatch(format!("signal is {:?} but IRF is {:?}", signal.domain, irf.domain)));
    }
    let step = uniform_step(&signal.grid, GRID_JITTER)?;
    let k_step = irf.step();
    if irf.weights.len() > 1 && ((k_step - step).abs() > GRID_JITTER * step) {
        return Err(Error::GridMismatch(format!("signal step {step} differs from IRF step {k_step}")));
    }
    Ok(step)
}

/// Convolution with a fixed kernel on a fixed signal length, with the kernel
/// transform precomputed. Used inside fitting loops.
#[derive(Clone)]
pub struct Convolver {
    n: usize,
    len: usize,
    kernel: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Convolver {
    pub fn new(irf: &IrfKernel, n: usize) -> Self {
        let m = irf.weights.len();
        let len = next_pow2(n + m);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let kernel = circular_kernel(irf, len, &*forward);
        Self { n, len, kernel, forward, inverse }
    }

    /// "Same"-grid linear convolution: `out[i] = sum_k w_k h s[i - k]`, treating the
    /// signal as zero outside its grid.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.n, "convolver built for a different length");
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.len, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf[..self.n].iter().map(|z| z.re * scale).collect()
    }
}

/// Kernel placed circularly with its origin at index 0, transformed and scaled by the step.
fn circular_kernel(irf: &IrfKernel, len: usize, fft: &dyn Fft<f64>) -> Vec<Complex64> {
    let h = irf.step().max(f64::MIN_POSITIVE);
    let h = if irf.weights.len() == 1 { 1.0 / irf.weights[0] } else { h };
    let origin = if irf.weights.len() == 1 { 0 } else { irf.origin() } as isize;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (k, w) in irf.weights.iter().enumerate() {
        let idx = (k as isize - origin).rem_euclid(len as isize) as usize;
        buf[idx] += Complex64::new(w * h, 0.0);
    }
    fft.process(&mut buf);
    buf
}

/// Linear convolution on the signal's own grid.
pub fn convolve(signal: &SampledSignal, irf: &IrfKernel) -> Result<SampledSignal> {
    check_compatible(signal, irf)?;
    let out = Convolver::new(irf, signal.len()).apply(&signal.values);
    Ok(signal.with_values(out))
}

/// Frequency (cycles per grid unit) where the IRF transform first drops to
/// `fraction` of its zero-frequency value, capped at the Nyquist frequency.
pub fn band_limit_at(irf: &IrfKernel, fraction: f64) -> f64 {
    let h = irf.step();
    let nyquist = 0.5 / h;
    let k0 = irf.transfer(0.0).norm();
    let samples = 4096;
    let mut prev = 0.0;
    for i in 1..=samples {
        let f = nyquist * i as f64 / samples as f64;
        let k = irf.transfer(f).norm();
        if k <= fraction * k0 {
            // linear interpolation between the bracketing samples
            let kp = irf.transfer(prev).norm();
            return prev + (kp - fraction * k0) / (kp - k) * (f - prev);
        }
        prev = f;
    }
    nyquist
}

pub fn default_band_limit(irf: &IrfKernel) -> f64 {
    band_limit_at(irf, DEFAULT_BAND_FRACTION)
}

/// Low-pass window: flat to `(1 - ROLL_OFF) b`, raised cosine down to zero at `b`.
pub fn band_window(f: f64, band_limit: f64) -> f64 {
    let f = f.abs();
    let edge = (1.0 - ROLL_OFF) * band_limit;
    if f <= edge {
        1.0
    } else if f >= band_limit {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (f - edge) / (band_limit - edge)).cos())
    }
}

/// Reject passbands in which the continuous IRF transform passes through (or very
/// near) zero. A zero crossing between two samples shows up as a phase jump.
fn check_passband(irf: &IrfKernel, band_limit: f64) -> Result<()> {
    let samples = 4096;
    let k0 = irf.transfer(0.0).norm();
    let mut prev = irf.transfer(0.0);
    for i in 1..=samples {
        let f = band_limit * i as f64 / samples as f64;
        let k = irf.transfer(f);
        if k.norm() < MIN_TRANSFER * k0 || (k * prev.conj()).re < 0.0 {
            return Err(Error::IllPosed(format!(
                "IRF transform vanishes near {f:.4e} cycles/unit inside the passband |f| <= {band_limit:.4e}"
            )));
        }
        prev = k;
    }
    Ok(())
}

/// Fourier-domain deconvolution restricted to `|f| <= band_limit` cycles per grid
/// unit. `None` selects [`default_band_limit`].
pub fn deconvolve(signal: &SampledSignal, irf: &IrfKernel, band_limit: Option<f64>) -> Result<SampledSignal> {
    let step = check_compatible(signal, irf)?;
    let b = match band_limit {
        Some(b) => {
            check_positive("band_limit", b)?;
            b
        }
        None => default_band_limit(irf),
    };
    if b > 0.5 / step * (1.0 + 1e-12) {
        return Err(Error::IllPosed(format!("band limit {b} exceeds the Nyquist frequency {}", 0.5 / step)));
    }

    check_passband(irf, b)?;

    let n = signal.len();
    let len = next_pow2(n + irf.weights.len());
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let kernel = circular_kernel(irf, len, &*forward);

    let mut buf: Vec<Complex64> = signal.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    forward.process(&mut buf);

    let k0 = kernel[0].norm();
    for (k, z) in buf.iter_mut().enumerate() {
        let idx = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
        let f = idx / (len as f64 * step);
        let w = band_window(f, b);
        if w == 0.0 {
            *z = Complex64::new(0.0, 0.0);
            continue;
        }
        let kf = kernel[k];
        if kf.norm() < MIN_TRANSFER * k0 {
            return Err(Error::IllPosed(format!(
                "IRF transform vanishes at {f:.4e} cycles/unit inside the passband |f| <= {b:.4e}"
            )));
        }
        *z = *z * w / kf;
    }
    inverse.process(&mut buf);
    let scale = 1.0 / len as f64;
    let values: Vec<f64> = buf[..n].iter().map(|z| z.re * scale).collect();
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let imag = buf[..n].iter().fold(0.0f64, |m, z| m.max((z.im * scale).abs()));
    if imag > 1e-9 * peak.max(f64::MIN_POSITIVE) {
        log::warn!("instrument: deconvolution left an imaginary residue of {imag:.3e} (peak {peak:.3e})");
    }
    Ok(signal.with_values(values))
}
