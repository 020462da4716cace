use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{check_finite, Error, Result};
use crate::instrument::{Convolver, Domain, IrfKernel, SampledSignal};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig};
use crate::model::SystemParams;
use crate::spectra::{closed_form_kernel, spectrum_values, DetectionCoefficients};
use crate::units::energy_to_rate;

const MODEL: &str = "jc_cavity";
const NAMES: [&str; 3] = ["g", "amplitude", "offset"];

/// Parameters held fixed in a cavity-spectrum fit, all in ueV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JcFixedParams {
    pub kappa: f64,
    pub gamma: f64,
    pub gamma_dp: f64,
    pub delta: f64,
}

impl JcFixedParams {
    pub fn from_params(p: &SystemParams) -> Self {
        Self { kappa: p.kappa, gamma: p.gamma, gamma_dp: p.gamma_dp, delta: p.delta }
    }

    pub fn with_g(&self, g: f64) -> SystemParams {
        SystemParams {
            g,
            kappa: self.kappa,
            gamma: self.gamma,
            gamma_dp: self.gamma_dp,
            delta: self.delta,
            omega_qd: None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in
            [("kappa", self.kappa), ("gamma", self.gamma), ("gamma_dp", self.gamma_dp), ("delta", self.delta)]
        {
            check_finite(name, v)?;
        }
        self.with_g(1.0).validate()
    }
}

/// Cavity-channel spectrum at coupling `g`, scaled to area `amplitude` and shifted
/// by `offset` (ueV).
pub fn jc_model(fixed: &JcFixedParams, g: f64, amplitude: f64, offset: f64, omega: &[f64]) -> Result<Vec<f64>> {
    if g == 0.0 {
        return Err(Error::Degenerate("cavity is never populated at g = 0".into()));
    }
    let params = fixed.with_g(g);
    let kernel = closed_form_kernel(&params)?;
    let photons = energy_to_rate(params.kappa) * kernel.equal_time[(0, 0)].re;
    let shifted: Vec<f64> = omega.iter().map(|w| w - offset).collect();
    let s = spectrum_values(&kernel, &params, &DetectionCoefficients::cavity_only(), &shifted)?;
    Ok(s.into_iter().map(|v| amplitude * v / photons).collect())
}

struct JcProblem<'a> {
    fixed: JcFixedParams,
    x: &'a [f64],
    y: &'a [f64],
    conv: Option<Convolver>,
}

impl LeastSquaresProblem for JcProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn n_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let m = jc_model(&self.fixed, p[0], p[1], p[2], self.x)?;
        let m = match &self.conv {
            Some(c) => c.apply(&m),
            None => m,
        };
        for i in 0..out.len() {
            out[i] = self.y[i] - m[i];
        }
        Ok(())
    }
}

/// Fit the coupling strength to a cavity-channel spectrum, with the overall area
/// and an energy offset as nuisance parameters. The Jacobian is by central
/// differences.
pub fn fit_jc_cavity_spectrum(
    spec: &SampledSignal,
    fixed: &JcFixedParams,
    init_g: f64,
    irf: Option<&IrfKernel>,
) -> Result<FitResult> {
    fixed.validate()?;
    check_finite("init_g", init_g)?;
    if spec.domain != Domain::Spectral {
        return Err(Error::InvalidParameter { name: "spectrum", reason: "needs spectral-domain data".into() });
    }
    if init_g == 0.0 {
        return Err(Error::InvalidParameter { name: "init_g", reason: "start value must be non-zero".into() });
    }
    let conv = irf.map(|k| Convolver::new(k, spec.len()));

    // linear least squares for the starting amplitude
    let unit = jc_model(fixed, init_g, 1.0, 0.0, &spec.grid)?;
    let unit = match &conv {
        Some(c) => c.apply(&unit),
        None => unit,
    };
    let num: f64 = unit.iter().zip(&spec.values).map(|(a, b)| a * b).sum();
    let den: f64 = unit.iter().map(|a| a * a).sum();
    let amp0 = if den > 0.0 { num / den } else { spec.area() };

    let problem = JcProblem { fixed: *fixed, x: &spec.grid, y: &spec.values, conv };
    let report = levenberg_marquardt(&problem, &[init_g, amp0, 0.0], &LmConfig::default())?;
    let mut fit = FitResult::from_report(MODEL, &NAMES, &report, spec.len());
    // the model depends on g only through g^2
    fit.estimates[0] = fit.estimates[0].abs();
    Ok(fit)
}
