//! Single-excitation dynamics of the dissipative Jaynes-Cummings model.
//!
//! The state is the emitter population `rho_qd`, the cavity population `rho_ca` and
//! the emitter-cavity cross coherence `rho_po` (identified with `<a^dag sigma_->`).
//! Their equations of motion are
//!
//! ```text
//! d rho_qd / dt = -g (rho_po + rho_po*) - gamma rho_qd
//! d rho_ca / dt =  g (rho_po + rho_po*) - kappa rho_ca
//! d rho_po / dt =  g (rho_qd - rho_ca) - (gamma_tot + i delta) rho_po
//! ```
//!
//! with `gamma_tot = (kappa + gamma + 2 gamma_dp) / 2`. All parameters are energies
//! in ueV and are converted to ns^-1 only when the generator is assembled.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_non_negative, check_positive, Error, Result};
use crate::numeric::brent;
use crate::ode::{Dopri5, Tolerance};
use crate::units::{energy_to_rate, rate_to_energy, wavelength_to_energy, HBAR_UEV_NS};

/// Largest allowed `dt * max(kappa, gamma_tot, 2g) / hbar` for [`propagate`].
pub const MAX_STEP_RATIO: f64 = 0.1;

/// Decay horizon in units of the slowest relaxation time.
pub const HORIZON_LIFETIMES: f64 = 20.0;

/// Residual population below which a trajectory counts as fully decayed.
pub const DECAY_THRESHOLD: f64 = 1e-6;

/// The five-rate Jaynes-Cummings parameter set. Rates and detuning in ueV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Emitter-cavity coupling strength.
    pub g: f64,
    /// Cavity loss rate.
    pub kappa: f64,
    /// Emitter decay rate into non-cavity modes.
    pub gamma: f64,
    /// Pure dephasing rate.
    pub gamma_dp: f64,
    /// Detuning `omega_qd - omega_ca`.
    pub delta: f64,
    /// Absolute emitter transition energy, used only for absolute-frequency spectra.
    #[serde(default)]
    pub omega_qd: Option<f64>,
}

impl SystemParams {
    pub fn new(g: f64, kappa: f64, gamma: f64, gamma_dp: f64, delta: f64) -> Result<Self> {
        let p = Self { g, kappa, gamma, gamma_dp, delta, omega_qd: None };
        p.validate()?;
        Ok(p)
    }

    /// QD in a micropillar cavity, detuning set to zero.
    pub fn micropillar() -> Self {
        Self { g: 22.6, kappa: 110.0, gamma: 1.3, gamma_dp: 6.3, delta: 0.0, omega_qd: None }
    }

    /// QD in an L3 photonic-crystal cavity with the coupling inferred from the
    /// spectral anti-crossing.
    pub fn photonic_crystal() -> Self {
        Self { g: 92.4, kappa: 195.0, gamma: 0.2, gamma_dp: 4.0, delta: 0.0, omega_qd: None }
    }

    /// Full validation: non-negative rates and a strictly positive cavity linewidth.
    pub fn validate(&self) -> Result<()> {
        self.validate_dynamics()?;
        check_positive("kappa", self.kappa)
    }

    /// Validation for pure time evolution, where the lossless limit is allowed.
    pub fn validate_dynamics(&self) -> Result<()> {
        check_non_negative("g", self.g)?;
        check_non_negative("kappa", self.kappa)?;
        check_non_negative("gamma", self.gamma)?;
        check_non_negative("gamma_dp", self.gamma_dp)?;
        check_finite("delta", self.delta)?;
        if let Some(w) = self.omega_qd {
            check_finite("omega_qd", w)?;
        }
        Ok(())
    }

    /// Total polarization decay rate `(kappa + gamma + 2 gamma_dp) / 2`.
    pub fn gamma_tot(&self) -> f64 {
        0.5 * (self.kappa + self.gamma + 2.0 * self.gamma_dp)
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    /// Fastest rate the output grid of [`propagate`] has to resolve, in ueV.
    pub fn max_rate(&self) -> f64 {
        self.kappa.max(self.gamma_tot()).max(2.0 * self.g)
    }

    /// Generator of `(rho_qd, rho_ca, Re rho_po, Im rho_po)` in ns^-1.
    pub fn generator(&self) -> Matrix4<f64> {
        let g = energy_to_rate(self.g);
        let k = energy_to_rate(self.kappa);
        let ga = energy_to_rate(self.gamma);
        let gt = energy_to_rate(self.gamma_tot());
        let d = energy_to_rate(self.delta);
        #[rustfmt::skip]
        let m = Matrix4::new(
            -ga, 0.0, -2.0 * g, 0.0,
            0.0, -k,   2.0 * g, 0.0,
            g,   -g,   -gt,     d,
            0.0, 0.0,  -d,      -gt,
        );
        m
    }
}

/// Time integrals of the populations and coherence over `[0, t_end]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationIntegrals {
    /// `int rho_qd dt` in ns.
    pub qd: f64,
    /// `int rho_ca dt` in ns.
    pub ca: f64,
    /// `int rho_po dt` in ns.
    pub po: Complex64,
    /// `int t rho_qd dt` in ns^2.
    pub t_qd: f64,
    /// `int t rho_ca dt` in ns^2.
    pub t_ca: f64,
}

impl PopulationIntegrals {
    /// Fraction of the initial excitation that left through the two loss channels.
    pub fn emitted_fraction(&self, params: &SystemParams) -> f64 {
        energy_to_rate(params.gamma) * self.qd + energy_to_rate(params.kappa) * self.ca
    }

    /// Closed form for the infinite-time integrals, `-M^-1 x0` and `M^-2 x0`, for a
    /// decaying generator `M`. Used as an oracle for the integrated dynamics.
    pub fn closed_form(params: &SystemParams) -> Option<Self> {
        let m = params.generator();
        let inv = m.try_inverse()?;
        let x0 = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let first = -(inv * x0);
        let second = inv * (inv * x0);
        Some(Self {
            qd: first[0],
            ca: first[1],
            po: Complex64::new(first[2], first[3]),
            t_qd: second[0],
            t_ca: second[1],
        })
    }
}

/// Sampled solution of the single-excitation dynamics, starting from an excited
/// emitter and an empty cavity.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub params: SystemParams,
    /// Uniform time grid in ns, starting at 0.
    pub times: Vec<f64>,
    pub rho_qd: Vec<f64>,
    pub rho_ca: Vec<f64>,
    pub rho_po: Vec<Complex64>,
    /// Integrals over the full grid, carried along as extra ODE components.
    pub integrals: PopulationIntegrals,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// `gamma int rho_qd dt + kappa int rho_ca dt`; equals 1 once fully decayed.
    pub fn energy_balance(&self) -> f64 {
        self.integrals.emitted_fraction(&self.params)
    }
}

const STATE_DIM: usize = 10;

/// Right-hand side of the dynamics augmented with running integrals:
/// `[qd, ca, Re po, Im po, int qd, int ca, int Re po, int Im po, int t qd, int t ca]`.
fn augmented_rhs(m: Matrix4<f64>) -> impl Fn(f64, &[f64; STATE_DIM], &mut [f64; STATE_DIM]) {
    move |t, y, dy| {
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += m[(i, j)] * y[j];
            }
            dy[i] = acc;
        }
        dy[4] = y[0];
        dy[5] = y[1];
        dy[6] = y[2];
        dy[7] = y[3];
        dy[8] = t * y[0];
        dy[9] = t * y[1];
    }
}

fn initial_state() -> [f64; STATE_DIM] {
    let mut y = [0.0; STATE_DIM];
    y[0] = 1.0;
    y
}

fn integrals_of(y: &[f64; STATE_DIM]) -> PopulationIntegrals {
    PopulationIntegrals {
        qd: y[4],
        ca: y[5],
        po: Complex64::new(y[6], y[7]),
        t_qd: y[8],
        t_ca: y[9],
    }
}

/// Integrate the dynamics on a uniform output grid `0, dt, ..., t_max`.
pub fn propagate(params: &SystemParams, t_max: f64, dt: f64) -> Result<Trajectory> {
    params.validate_dynamics()?;
    check_positive("dt", dt)?;
    check_positive("t_max", t_max)?;
    if t_max < 10.0 * dt {
        return Err(Error::InvalidParameter {
            name: "t_max",
            reason: format!("t_max = {t_max} must be at least 10 dt = {}", 10.0 * dt),
        });
    }
    let ratio = dt * energy_to_rate(params.max_rate());
    if ratio > MAX_STEP_RATIO * (1.0 + 1e-12) {
        return Err(Error::StepTooCoarse { dt, ratio });
    }

    let n = (t_max / dt).round() as usize + 1;
    let rhs = augmented_rhs(params.generator());
    let mut solver = Dopri5::<STATE_DIM>::new(Tolerance::default(), dt);
    let mut y = initial_state();
    let mut t = 0.0;

    let mut times = Vec::with_capacity(n);
    let mut rho_qd = Vec::with_capacity(n);
    let mut rho_ca = Vec::with_capacity(n);
    let mut rho_po = Vec::with_capacity(n);
    for k in 0..n {
        let tk = k as f64 * dt;
        solver.integrate_to(&rhs, &mut t, &mut y, tk)?;
        times.push(tk);
        rho_qd.push(y[0]);
        rho_ca.push(y[1]);
        rho_po.push(Complex64::new(y[2], y[3]));
    }

    Ok(Trajectory { params: *params, times, rho_qd, rho_ca, rho_po, integrals: integrals_of(&y) })
}

/// Slowest relaxation rate of the dynamics in ns^-1.
pub fn slowest_decay_rate(params: &SystemParams) -> Result<f64> {
    params.validate_dynamics()?;
    let m = params.generator();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let mut slowest = f64::INFINITY;
    for ev in m.complex_eigenvalues().iter() {
        if ev.re > -1e-12 * scale {
            return Err(Error::NoDecay(format!("generator has a non-decaying mode (eigenvalue {ev})")));
        }
        slowest = slowest.min(-ev.re);
    }
    Ok(slowest)
}

/// Default integration horizon: 20 relaxation times of the slowest mode.
pub fn default_horizon(params: &SystemParams) -> Result<f64> {
    Ok(HORIZON_LIFETIMES / slowest_decay_rate(params)?)
}

/// Default output step, comfortably inside the [`propagate`] step bound.
pub fn default_step(params: &SystemParams, horizon: f64) -> f64 {
    let by_rate = 0.5 * MAX_STEP_RATIO * HBAR_UEV_NS / params.max_rate().max(f64::MIN_POSITIVE);
    by_rate.min(horizon / 200.0)
}

/// Propagate to the default horizon on the default grid.
pub fn simulate(params: &SystemParams) -> Result<Trajectory> {
    let horizon = default_horizon(params)?;
    propagate(params, horizon, default_step(params, horizon))
}

/// End point of an integration run without a stored grid.
#[derive(Clone, Copy, Debug)]
pub struct DecayIntegrals {
    pub integrals: PopulationIntegrals,
    pub t_end: f64,
    pub final_qd: f64,
    pub final_ca: f64,
}

/// Integrate to the default horizon keeping only the running integrals.
pub fn integrate_decay(params: &SystemParams) -> Result<DecayIntegrals> {
    let horizon = default_horizon(params)?;
    let rhs = augmented_rhs(params.generator());
    let h0 = 0.05 * HBAR_UEV_NS / params.max_rate().max(f64::MIN_POSITIVE);
    let mut solver = Dopri5::<STATE_DIM>::new(Tolerance::default(), h0);
    let mut y = initial_state();
    let mut t = 0.0;
    solver.integrate_to(&rhs, &mut t, &mut y, horizon)?;
    Ok(DecayIntegrals { integrals: integrals_of(&y), t_end: horizon, final_qd: y[0], final_ca: y[1] })
}

/// Closed-form test oracle for the lossless limit: `cos^2(g t / hbar)`.
pub fn rabi_oracle(g: f64, t: f64) -> f64 {
    (energy_to_rate(g) * t).cos().powi(2)
}

/// Decay rate of the emitter after adiabatic elimination of the polarization,
/// `gamma + 2 g^2 gamma_tot / (gamma_tot^2 + delta^2)`, in ns^-1.
pub fn weak_coupling_rate(params: &SystemParams) -> f64 {
    let gt = params.gamma_tot();
    let energy = params.gamma + 2.0 * params.g * params.g * gt / (gt * gt + params.delta * params.delta);
    energy_to_rate(energy)
}

/// Which photon stream defines the mean decay time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayWeighting {
    /// Total emitted photon flux `gamma rho_qd + kappa rho_ca`.
    #[default]
    Emission,
    /// Emitter population `rho_qd`.
    Emitter,
    /// Cavity population `rho_ca`.
    Cavity,
}

fn mean_rate_from_integrals(ints: &PopulationIntegrals, params: &SystemParams, w: DecayWeighting) -> Result<f64> {
    let (num, den) = match w {
        DecayWeighting::Emitter => (ints.t_qd, ints.qd),
        DecayWeighting::Cavity => (ints.t_ca, ints.ca),
        DecayWeighting::Emission => {
            // mean emission time of -d/dt(rho_qd + rho_ca) is int (rho_qd + rho_ca) dt
            // over the emitted fraction
            let flux = ints.emitted_fraction(params);
            (ints.qd + ints.ca, flux)
        }
    };
    if den <= 0.0 || num <= 0.0 {
        return Err(Error::NoDecay(format!("{w:?} channel carries no population")));
    }
    Ok(den / num)
}

fn remaining(w: DecayWeighting, qd: f64, ca: f64) -> f64 {
    match w {
        DecayWeighting::Emitter => qd,
        DecayWeighting::Cavity => ca,
        DecayWeighting::Emission => qd + ca,
    }
}

/// Inverse mean decay time of a trajectory, weighted by the emitted photon flux.
pub fn mean_decay_rate(traj: &Trajectory) -> Result<f64> {
    mean_decay_rate_weighted(traj, DecayWeighting::default())
}

pub fn mean_decay_rate_weighted(traj: &Trajectory, weighting: DecayWeighting) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::InsufficientDecay { remaining: 1.0 });
    }
    // look at the tail rather than the last sample so that an oscillation node at
    // t_max does not pass for a decayed state
    let tail = (traj.len() / 20).max(1);
    let start = traj.len() - tail;
    let left = (start..traj.len())
        .map(|i| remaining(weighting, traj.rho_qd[i], traj.rho_ca[i]).abs())
        .fold(0.0, f64::max);
    if left >= DECAY_THRESHOLD {
        return Err(Error::InsufficientDecay { remaining: left });
    }
    mean_rate_from_integrals(&traj.integrals, &traj.params, weighting)
}

/// Mean decay rate at the default horizon without storing a trajectory.
pub fn mean_decay_rate_of(params: &SystemParams, weighting: DecayWeighting) -> Result<f64> {
    let run = integrate_decay(params)?;
    let left = remaining(weighting, run.final_qd, run.final_ca).abs();
    if left >= DECAY_THRESHOLD {
        return Err(Error::InsufficientDecay { remaining: left });
    }
    mean_rate_from_integrals(&run.integrals, params, weighting)
}

/// Forward model inverted by [`coupling_from_rate`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMode {
    /// Algebraic inverse of [`weak_coupling_rate`].
    #[default]
    Adiabatic,
    /// Root of the full-model mean decay rate.
    Full,
}

/// Coupling strength (ueV) that reproduces `target` (ns^-1) given the remaining
/// parameters. `params.g` is ignored.
pub fn coupling_from_rate(target: f64, params: &SystemParams, mode: InversionMode) -> Result<f64> {
    check_positive("target", target)?;
    params.validate()?;
    let background = energy_to_rate(params.gamma);
    let excess = target - background;
    if excess.abs() <= 1e-12 * target {
        return Ok(0.0);
    }
    if excess < 0.0 {
        return Err(Error::NoEnhancement { target, background });
    }
    let gt = params.gamma_tot();
    let adiabatic =
        (rate_to_energy(excess) * (gt * gt + params.delta * params.delta) / (2.0 * gt)).sqrt();
    match mode {
        InversionMode::Adiabatic => Ok(adiabatic),
        InversionMode::Full => {
            let weighting = DecayWeighting::default();
            let f = |g: f64| mean_decay_rate_of(&params.with_g(g), weighting).map(|r| r - target);
            let f_lo = background - target;
            let mut hi = 1.5 * adiabatic;
            let mut f_hi = f(hi)?;
            let mut doublings = 0;
            while f_hi < 0.0 {
                doublings += 1;
                if doublings > 12 {
                    return Err(Error::NoBracket { g_max: hi });
                }
                hi *= 2.0;
                f_hi = f(hi)?;
            }
            brent(f, 0.0, hi, f_lo, f_hi, 1e-6 * target, 1e-12 * hi)
        }
    }
}

/// Ratio of the cavity-modified to the background decay rate.
pub fn purcell_enhancement(rate_on: f64, rate_background: f64) -> Result<f64> {
    check_positive("rate_on", rate_on)?;
    check_positive("rate_background", rate_background)?;
    Ok(rate_on / rate_background)
}

/// `Q = hbar omega_ca / hbar kappa` from the mode wavelength and linewidth.
pub fn quality_factor(wavelength_nm: f64, kappa: f64) -> Result<f64> {
    check_positive("wavelength", wavelength_nm)?;
    check_positive("kappa", kappa)?;
    Ok(wavelength_to_energy(wavelength_nm) / kappa)
}
