//! Emission spectra from the quantum regression theorem.
//!
//! Two-time correlations `(<a^dag(t+tau) B(t)>, <sigma_+(t+tau) B(t)>)` evolve in `tau`
//! under a 2x2 generator `A` (frame rotating at the emitter frequency). Integrating
//! over the emission time `t` first leaves `G(tau) = c^dag exp(A tau) N c`, with `N`
//! the time-integrated equal-time correlation matrix, so the spectrum reduces to one
//! resolvent solve per frequency.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_non_negative, Error, Result};
use crate::model::{integrate_decay, PopulationIntegrals, SystemParams};
use crate::numeric::uniform_step;
use crate::units::{energy_to_rate, HBAR_UEV_NS};

/// Number of points of [`default_grid`].
pub const DEFAULT_GRID_POINTS: usize = 4096;

/// Prominence threshold of [`rabi_splitting`], as a fraction of the global maximum.
pub const DEFAULT_PROMINENCE: f64 = 0.05;

/// Relative step jitter tolerated in frequency grids.
pub const GRID_JITTER: f64 = 1e-6;

const NEGATIVITY_TOLERANCE: f64 = 1e-9;

/// How the frequency axis of a [`Spectrum`] is referenced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// `omega - omega_qd` in ueV.
    Offset,
    /// Absolute photon energy in ueV.
    Absolute,
}

impl Frame {
    pub fn as_str(&self) -> &'static str {
        match self {
            Frame::Offset => "offset",
            Frame::Absolute => "absolute",
        }
    }
}

impl std::str::FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "offset" => Ok(Frame::Offset),
            "absolute" => Ok(Frame::Absolute),
            other => Err(Error::Parse { line: 0, reason: format!("unknown frame `{other}`") }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Uniform, strictly increasing frequency grid in ueV.
    pub omega: Vec<f64>,
    /// Spectral density in photons per ueV.
    pub intensity: Vec<f64>,
    pub frame: Frame,
}

impl Spectrum {
    pub fn step(&self) -> f64 {
        if self.omega.len() < 2 {
            return 0.0;
        }
        (self.omega[self.omega.len() - 1] - self.omega[0]) / (self.omega.len() - 1) as f64
    }

    /// Trapezoid-rule area.
    pub fn area(&self) -> f64 {
        let h = self.step();
        let n = self.intensity.len();
        if n < 2 {
            return 0.0;
        }
        h * (self.intensity.iter().sum::<f64>() - 0.5 * (self.intensity[0] + self.intensity[n - 1]))
    }

    pub fn peak(&self) -> f64 {
        self.intensity.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy scaled so the global maximum is 1.
    pub fn normalized(&self) -> Spectrum {
        let p = self.peak();
        let s = if p > 0.0 { 1.0 / p } else { 1.0 };
        Spectrum {
            omega: self.omega.clone(),
            intensity: self.intensity.iter().map(|v| v * s).collect(),
            frame: self.frame,
        }
    }

    /// Shift an offset-frame spectrum to absolute photon energies.
    pub fn to_absolute(&self, omega_qd: f64) -> Spectrum {
        match self.frame {
            Frame::Absolute => self.clone(),
            Frame::Offset => Spectrum {
                omega: self.omega.iter().map(|w| w + omega_qd).collect(),
                intensity: self.intensity.clone(),
                frame: Frame::Absolute,
            },
        }
    }

    /// Two-column text with `# key = value` header lines.
    pub fn to_text(&self, params: Option<&SystemParams>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# frame = {}", self.frame.as_str());
        if let Some(p) = params {
            let _ = writeln!(out, "# g_uev = {}", p.g);
            let _ = writeln!(out, "# kappa_uev = {}", p.kappa);
            let _ = writeln!(out, "# gamma_uev = {}", p.gamma);
            let _ = writeln!(out, "# gamma_dp_uev = {}", p.gamma_dp);
            let _ = writeln!(out, "# delta_uev = {}", p.delta);
            if let Some(w) = p.omega_qd {
                let _ = writeln!(out, "# omega_qd_uev = {w}");
            }
        }
        let _ = writeln!(out, "# columns = omega_uev intensity");
        for (w, s) in self.omega.iter().zip(&self.intensity) {
            let _ = writeln!(out, "{w:.9e} {s:.12e}");
        }
        out
    }
}

/// Complex collection efficiencies of the two emission channels and the relative
/// area of the incoherent cavity pedestal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionCoefficients {
    pub eta_ca: Complex64,
    pub eta_qd: Complex64,
    pub background_fraction: f64,
}

impl Default for DetectionCoefficients {
    fn default() -> Self {
        Self { eta_ca: Complex64::new(1.0, 0.0), eta_qd: Complex64::new(0.0, 0.0), background_fraction: 0.0 }
    }
}

impl DetectionCoefficients {
    pub fn cavity_only() -> Self {
        Self::default()
    }

    pub fn emitter_only() -> Self {
        Self { eta_ca: Complex64::new(0.0, 0.0), eta_qd: Complex64::new(1.0, 0.0), background_fraction: 0.0 }
    }

    pub fn with_background(mut self, fraction: f64) -> Self {
        self.background_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_ca", self.eta_ca), ("eta_qd", self.eta_qd)] {
            check_finite(name, v.re)?;
            check_finite(name, v.im)?;
        }
        if self.eta_ca.norm_sqr() + self.eta_qd.norm_sqr() <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eta",
                reason: "at least one collection efficiency must be non-zero".into(),
            });
        }
        check_non_negative("background_fraction", self.background_fraction)?;
        if self.background_fraction >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "background_fraction",
                reason: format!("{} must be below 1", self.background_fraction),
            });
        }
        Ok(())
    }
}

/// Generator of the two-time correlations and the integrated equal-time matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationKernel {
    /// Acts on `(<a^dag(t+tau) B>, <sigma_+(t+tau) B>)`, in ns^-1.
    pub a: Matrix2<Complex64>,
    /// `[[int rho_ca, int rho_po], [int rho_po*, int rho_qd]]` in ns; column 0 starts
    /// the `B = a` correlations, column 1 the `B = sigma_-` ones.
    pub equal_time: Matrix2<Complex64>,
}

impl CorrelationKernel {
    /// Start vector of the cavity-field correlation, `(int rho_ca, int rho_po*)`.
    pub fn v0(&self) -> Vector2<Complex64> {
        self.equal_time.column(0).into()
    }

    /// Eigenvalues of `A` (ns^-1) from the closed-form quadratic.
    pub fn eigenvalues(&self) -> [Complex64; 2] {
        let a = &self.a;
        let half_tr = 0.5 * (a[(0, 0)] + a[(1, 1)]);
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = (half_tr * half_tr - det).sqrt();
        [half_tr + disc, half_tr - disc]
    }
}

/// Regression generator in ns^-1 for the given parameters.
pub fn regression_generator(params: &SystemParams) -> Matrix2<Complex64> {
    let g = energy_to_rate(params.g);
    let cav = Complex64::new(-0.5 * energy_to_rate(params.kappa), -energy_to_rate(params.delta));
    let qd = Complex64::new(-energy_to_rate(0.5 * params.gamma + params.gamma_dp), 0.0);
    Matrix2::new(cav, Complex64::new(g, 0.0), Complex64::new(-g, 0.0), qd)
}

/// Build the correlation kernel, integrating the single-time dynamics to obtain the
/// equal-time integrals.
pub fn correlation_kernel(params: &SystemParams) -> Result<CorrelationKernel> {
    params.validate()?;
    let run = integrate_decay(params)?;
    let i = run.integrals;
    let equal_time = Matrix2::new(
        Complex64::new(i.ca, 0.0),
        i.po,
        i.po.conj(),
        Complex64::new(i.qd, 0.0),
    );
    Ok(CorrelationKernel { a: regression_generator(params), equal_time })
}

/// Channel weights `c = (eta_ca sqrt(kappa), eta_qd sqrt(gamma))` in ns^-1/2.
fn channel_weights(params: &SystemParams, det: &DetectionCoefficients) -> Vector2<Complex64> {
    Vector2::new(
        det.eta_ca * energy_to_rate(params.kappa).sqrt(),
        det.eta_qd * energy_to_rate(params.gamma).sqrt(),
    )
}

/// Area of the incoherent cavity pedestal in photons.
fn pedestal_area(kernel: &CorrelationKernel, params: &SystemParams, det: &DetectionCoefficients) -> f64 {
    det.background_fraction * det.eta_ca.norm_sqr() * energy_to_rate(params.kappa) * kernel.equal_time[(0, 0)].re
}

/// Unit-area Lorentzian.
pub fn lorentzian(x: f64, center: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    hw / (std::f64::consts::PI * ((x - center).powi(2) + hw * hw))
}

/// Default grid: [`DEFAULT_GRID_POINTS`] points spanning `+-20 max(kappa, gamma + 2 gamma_dp, 2g)`
/// around the emitter, widened by `|delta|` so the cavity line stays inside.
pub fn default_grid(params: &SystemParams) -> Vec<f64> {
    let w = params.kappa.max(params.gamma + 2.0 * params.gamma_dp).max(2.0 * params.g);
    let half = 20.0 * w + params.delta.abs();
    let n = DEFAULT_GRID_POINTS;
    (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect()
}

fn check_grid(params: &SystemParams, grid: &[f64]) -> Result<()> {
    uniform_step(grid, GRID_JITTER)?;
    let w = params.kappa.max(params.gamma + 2.0 * params.gamma_dp);
    let lo = (-params.delta).min(0.0) - params.g - 5.0 * w;
    let hi = (-params.delta).max(0.0) + params.g + 5.0 * w;
    let (first, last) = (grid[0], grid[grid.len() - 1]);
    if first > lo || last < hi {
        return Err(Error::GridTooNarrow(format!(
            "grid [{first:.3}, {last:.3}] ueV does not cover [{lo:.3}, {hi:.3}] ueV \
             (10 linewidths around both resonances)"
        )));
    }
    Ok(())
}

/// Detected emission spectrum on an offset-frame grid (ueV relative to the emitter).
pub fn emission_spectrum(params: &SystemParams, det: &DetectionCoefficients, grid: &[f64]) -> Result<Spectrum> {
    let kernel = correlation_kernel(params)?;
    emission_spectrum_with(&kernel, params, det, grid)
}

/// As [`emission_spectrum`], with a precomputed kernel.
pub fn emission_spectrum_with(
    kernel: &CorrelationKernel,
    params: &SystemParams,
    det: &DetectionCoefficients,
    grid: &[f64],
) -> Result<Spectrum> {
    check_grid(params, grid)?;
    let intensity = spectrum_values(kernel, params, det, grid)?;
    let spec = Spectrum { omega: grid.to_vec(), intensity, frame: Frame::Offset };
    let peak = spec.peak();
    let min = spec.intensity.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVITY_TOLERANCE * peak.abs() {
        warn!("spectra: detected spectrum goes negative ({min:.3e} vs peak {peak:.3e}); interference terms dominate");
    }
    Ok(spec)
}

/// Spectrum values at arbitrary offset-frame points, without the coverage and
/// uniformity checks on the grid.
pub fn spectrum_values(
    kernel: &CorrelationKernel,
    params: &SystemParams,
    det: &DetectionCoefficients,
    omega: &[f64],
) -> Result<Vec<f64>> {
    det.validate()?;
    let c = channel_weights(params, det);
    let cc = c.map(|z| z.conj());
    let n_c = kernel.equal_time * c;
    let bg_area = pedestal_area(kernel, params, det);
    let scale = 1.0 / (std::f64::consts::PI * HBAR_UEV_NS);

    let mut intensity = Vec::with_capacity(omega.len());
    for &w in omega {
        let nu = w / HBAR_UEV_NS;
        // R = -(A - i nu)^-1 is the half-range transform of exp(A tau)
        let shifted = kernel.a - Matrix2::from_diagonal_element(Complex64::new(0.0, nu));
        let x = shifted.lu().solve(&n_c).ok_or_else(|| {
            Error::Degenerate(format!("regression generator is singular at {w} ueV"))
        })?;
        let coherent = -(cc.dot(&x)).re * scale;
        let background = bg_area * lorentzian(w, -params.delta, params.kappa);
        intensity.push(coherent + background);
    }
    Ok(intensity)
}

/// Kernel with the equal-time integrals from the closed-form solution instead of
/// the integrator. Smooth in the parameters, so suited to finite-difference fits.
pub fn closed_form_kernel(params: &SystemParams) -> Result<CorrelationKernel> {
    params.validate()?;
    let i = PopulationIntegrals::closed_form(params)
        .ok_or_else(|| Error::NoDecay("generator is singular, populations do not decay".into()))?;
    let equal_time = Matrix2::new(Complex64::new(i.ca, 0.0), i.po, i.po.conj(), Complex64::new(i.qd, 0.0));
    Ok(CorrelationKernel { a: regression_generator(params), equal_time })
}

/// Spectrum of the same kernel computed by sampling `G(tau)` and transforming with
/// an FFT. Shares no code with the resolvent path beyond the kernel itself: the
/// propagator comes from a scaled Taylor series and the half-range integral from
/// Romberg-extrapolated trapezoid sums at three resolutions.
///
/// Returns the spectrum on the FFT bins `2 pi k hbar / T` with `|k| <= k_max`.
pub fn spectrum_via_fft(
    kernel: &CorrelationKernel,
    params: &SystemParams,
    det: &DetectionCoefficients,
    window: f64,
    n_coarse: usize,
    k_max: usize,
) -> Result<Spectrum> {
    det.validate()?;
    if !n_coarse.is_power_of_two() || k_max >= n_coarse / 2 {
        return Err(Error::InvalidParameter {
            name: "n_coarse",
            reason: "must be a power of two larger than 2 k_max".into(),
        });
    }
    let c = channel_weights(params, det);
    let cc = c.map(|z| z.conj());
    let start = kernel.equal_time * c;
    let bg_area = pedestal_area(kernel, params, det);
    let bg_rate = kernel.a[(0, 0)];

    let mut planner = FftPlanner::<f64>::new();
    let mut levels = Vec::with_capacity(3);
    for level in 0..3 {
        let n = n_coarse << level;
        let h = window / n as f64;
        let step = expm_taylor(&(kernel.a * Complex64::new(h, 0.0)));
        let bg_step = (bg_rate * h).exp();
        let mut buf = Vec::with_capacity(n);
        let mut v = start;
        let mut bg = Complex64::new(bg_area, 0.0);
        for _ in 0..n {
            buf.push(cc.dot(&v) + bg);
            v = step * v;
            bg *= bg_step;
        }
        let g0 = buf[0];
        planner.plan_fft_forward(n).process(&mut buf);
        let bins: Vec<Complex64> = (0..=2 * k_max)
            .map(|j| {
                let k = j as isize - k_max as isize;
                let idx = k.rem_euclid(n as isize) as usize;
                (buf[idx] - 0.5 * g0) * h
            })
            .collect();
        levels.push(bins);
    }
    // trapezoid error expands in even powers of h
    let r1: Vec<Complex64> = (0..levels[0].len())
        .map(|j| (4.0 * levels[1][j] - levels[0][j]) / 3.0)
        .collect();
    let r2: Vec<Complex64> = (0..levels[0].len())
        .map(|j| (4.0 * levels[2][j] - levels[1][j]) / 3.0)
        .collect();
    let scale = 1.0 / (std::f64::consts::PI * HBAR_UEV_NS);
    let intensity: Vec<f64> = (0..r1.len()).map(|j| ((16.0 * r2[j] - r1[j]) / 15.0).re * scale).collect();
    let d_omega = 2.0 * std::f64::consts::PI * HBAR_UEV_NS / window;
    let omega = (0..=2 * k_max).map(|j| (j as f64 - k_max as f64) * d_omega).collect();
    Ok(Spectrum { omega, intensity, frame: Frame::Offset })
}

/// [`spectrum_via_fft`] with the window and resolution chosen from the kernel: the
/// window covers 22 relaxation times of the slowest mode and the coarsest step keeps
/// `|nu - lambda| h <= 0.3` over a band of 10 linewidths around both resonances.
pub fn fft_reference(kernel: &CorrelationKernel, params: &SystemParams, det: &DetectionCoefficients) -> Result<Spectrum> {
    let ev = kernel.eigenvalues();
    let mut slowest = ev[0].re.abs().min(ev[1].re.abs());
    let mut fastest = ev[0].norm().max(ev[1].norm());
    if det.background_fraction > 0.0 {
        slowest = slowest.min(kernel.a[(0, 0)].re.abs());
        fastest = fastest.max(kernel.a[(0, 0)].norm());
    }
    if !(slowest > 0.0) {
        return Err(Error::NoDecay("regression generator has a non-decaying mode".into()));
    }
    let w = params.kappa.max(params.gamma + 2.0 * params.gamma_dp);
    let half = params.delta.abs() + params.g + 5.5 * w;
    let nu_max = half / HBAR_UEV_NS;
    let window = 34.0 / slowest;
    let n_coarse = (window * (nu_max + fastest) / 0.3).ceil() as usize;
    let n_coarse = n_coarse.next_power_of_two().max(64);
    let k_max = (nu_max * window / (2.0 * std::f64::consts::PI)).ceil() as usize;
    spectrum_via_fft(kernel, params, det, window, n_coarse, k_max)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
fn expm_taylor(m: &Matrix2<Complex64>) -> Matrix2<Complex64> {
    let norm = m.iter().map(|z| z.norm()).sum::<f64>();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = m / Complex64::new(2f64.powi(squarings as i32), 0.0);
    let mut term = Matrix2::identity();
    let mut sum = Matrix2::identity();
    for k in 1..=18 {
        term = term * scaled / Complex64::new(k as f64, 0.0);
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Fraction of cavity-fed background photons implied by a measured `g2(0)`.
pub fn background_fraction(g2_zero: f64) -> Result<f64> {
    check_finite("g2_zero", g2_zero)?;
    if !(0.0..2.0).contains(&g2_zero) {
        return Err(Error::InvalidParameter { name: "g2_zero", reason: format!("{g2_zero} outside [0, 2)") });
    }
    Ok(g2_zero / (2.0 - g2_zero))
}

/// Local maxima whose topographic prominence exceeds `min_prominence` times the
/// global maximum. Returns `(index, refined position)` pairs in grid order.
pub fn find_peaks(x: &[f64], y: &[f64], min_prominence: f64) -> Vec<(usize, f64)> {
    let n = y.len();
    if n < 3 {
        return Vec::new();
    }
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = min_prominence * top;
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if y[i] > y[i - 1] {
            // walk across flat tops
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let mid = (i + j) / 2;
                if prominence(y, mid) >= threshold {
                    peaks.push((mid, refine_vertex(x, y, mid)));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn prominence(y: &[f64], i: usize) -> f64 {
    let h = y[i];
    let mut left_min = h;
    let mut k = i;
    while k > 0 {
        k -= 1;
        if y[k] > h {
            break;
        }
        left_min = left_min.min(y[k]);
    }
    let mut right_min = h;
    let mut k = i;
    while k + 1 < y.len() {
        k += 1;
        if y[k] > h {
            break;
        }
        right_min = right_min.min(y[k]);
    }
    h - left_min.max(right_min)
}

/// Vertex of the parabola through the three samples around `i`.
fn refine_vertex(x: &[f64], y: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= y.len() {
        return x[i];
    }
    let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom == 0.0 {
        return x[i];
    }
    let shift = 0.5 * (a - c) / denom;
    x[i] + shift.clamp(-1.0, 1.0) * (x[i + 1] - x[i])
}

/// Full width at half maximum of the peak at index `i`, by linear interpolation of
/// the half-maximum crossings.
pub fn half_max_width(x: &[f64], y: &[f64], i: usize) -> Option<f64> {
    let half = 0.5 * y[i];
    let mut l = i;
    while l > 0 && y[l] > half {
        l -= 1;
    }
    let mut r = i;
    while r + 1 < y.len() && y[r] > half {
        r += 1;
    }
    if y[l] > half || y[r] > half {
        return None;
    }
    let xl = x[l] + (half - y[l]) / (y[l + 1] - y[l]) * (x[l + 1] - x[l]);
    let xr = x[r - 1] + (y[r - 1] - half) / (y[r - 1] - y[r]) * (x[r] - x[r - 1]);
    Some(xr - xl)
}

/// Separation of the two peaks of a vacuum-Rabi doublet.
pub fn rabi_splitting(spec: &Spectrum) -> Result<f64> {
    rabi_splitting_with(spec, DEFAULT_PROMINENCE)
}

pub fn rabi_splitting_with(spec: &Spectrum, min_prominence: f64) -> Result<f64> {
    let peaks = find_peaks(&spec.omega, &spec.intensity, min_prominence);
    match peaks.as_slice() {
        [(_, a), (_, b)] => Ok(b - a),
        _ => Err(Error::PeakCount { found: peaks.len() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn doublet(grid: &[f64], centers: [f64; 2], fwhm: f64) -> Spectrum {
        Spectrum {
            omega: grid.to_vec(),
            intensity: grid
                .iter()
                .map(|&w| lorentzian(w, centers[0], fwhm) + lorentzian(w, centers[1], fwhm))
                .collect(),
            frame: Frame::Offset,
        }
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn decoupled_generator_is_diagonal() {
        let p = SystemParams { g: 0.0, kappa: 110.0, gamma: 1.3, gamma_dp: 6.3, delta: 40.0, omega_qd: None };
        let a = regression_generator(&p);
        assert_eq!(a[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(a[(1, 0)], Complex64::new(0.0, 0.0));
        assert_relative_eq!(a[(0, 0)].re, -55.0 / HBAR_UEV_NS, max_relative = 1e-14);
        assert_relative_eq!(a[(0, 0)].im, -40.0 / HBAR_UEV_NS, max_relative = 1e-14);
        assert_relative_eq!(a[(1, 1)].re, -6.95 / HBAR_UEV_NS, max_relative = 1e-14);
    }

    #[test]
    fn lossless_eigenvalues_are_rabi_doublet() {
        let p = SystemParams { g: 30.0, kappa: 0.0, gamma: 0.0, gamma_dp: 0.0, delta: 0.0, omega_qd: None };
        let k = CorrelationKernel { a: regression_generator(&p), equal_time: Matrix2::zeros() };
        let ev = k.eigenvalues();
        let w = 30.0 / HBAR_UEV_NS;
        let mut ims = [ev[0].im, ev[1].im];
        ims.sort_by(f64::total_cmp);
        assert!(ev[0].re.abs() < 1e-12 && ev[1].re.abs() < 1e-12);
        assert_relative_eq!(ims[0], -w, max_relative = 1e-12);
        assert_relative_eq!(ims[1], w, max_relative = 1e-12);
    }

    #[test]
    fn background_fraction_values() {
        assert!((background_fraction(0.345).unwrap() - 0.2085).abs() < 5e-5);
        assert_eq!(background_fraction(0.0).unwrap(), 0.0);
        assert_eq!(background_fraction(1.0).unwrap(), 1.0);
        assert!(background_fraction(2.0).is_err());
        assert!(background_fraction(-0.1).is_err());
    }

    #[test]
    fn splitting_of_constructed_doublet() {
        let g = grid(-400.0, 400.0, 4001);
        let s = doublet(&g, [-57.0, 57.0], 30.0);
        // tail overlap pulls the maxima inward to +-56.967
        let split = rabi_splitting(&s).unwrap();
        assert!((split - 113.934).abs() < 0.01, "split = {split}");
        assert!((split / 114.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn single_peak_has_no_splitting() {
        let g = grid(-400.0, 400.0, 4001);
        let s = Spectrum {
            omega: g.clone(),
            intensity: g.iter().map(|&w| lorentzian(w, 3.0, 40.0)).collect(),
            frame: Frame::Offset,
        };
        assert!(matches!(rabi_splitting(&s), Err(Error::PeakCount { found: 1 })));
    }

    #[test]
    fn half_max_width_of_lorentzian() {
        let g = grid(-500.0, 500.0, 10001);
        let y: Vec<f64> = g.iter().map(|&w| lorentzian(w, 0.0, 60.0)).collect();
        assert!((half_max_width(&g, &y, 5000).unwrap() - 60.0).abs() < 1e-3);
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let p = SystemParams::photonic_crystal();
        let g = grid(-200.0, 200.0, 1001);
        assert!(matches!(
            emission_spectrum(&p, &DetectionCoefficients::default(), &g),
            Err(Error::GridTooNarrow(_))
        ));
    }

    #[test]
    fn background_fraction_must_stay_below_one() {
        let det = DetectionCoefficients::default().with_background(1.0);
        assert!(det.validate().is_err());
        let none = DetectionCoefficients { eta_ca: Complex64::new(0.0, 0.0), ..Default::default() };
        assert!(none.validate().is_err());
    }

    #[test]
    fn text_header_carries_frame() {
        let s = Spectrum { omega: vec![0.0, 1.0], intensity: vec![1.0, 2.0], frame: Frame::Offset };
        let t = s.to_text(Some(&SystemParams::micropillar()));
        assert!(t.starts_with("# frame = offset\n"));
        assert!(t.contains("# kappa_uev = 110"));
        assert_eq!(t.lines().filter(|l| !l.starts_with('#')).count(), 2);
    }

    #[test]
    fn taylor_exponential_matches_diagonal() {
        let m = Matrix2::new(
            Complex64::new(-3.0, 2.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.5, 0.0),
        );
        let e = expm_taylor(&m);
        assert!((e[(0, 0)] - Complex64::new(-3.0, 2.0).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - (-0.5f64).exp()).norm() < 1e-14);
    }
}
