use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::FitResult;
use crate::error::{Error, Result};
use crate::instrument::{Convolver, Domain, IrfKernel, SampledSignal};
use crate::lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig};

/// Most exponential components the multi-exponential mode will try.
pub const MAX_COMPONENTS: usize = 3;
const F_TEST_LEVEL: f64 = 0.05;
const COLLAPSE_TOLERANCE: f64 = 0.01;
const VANISHING_WEIGHT: f64 = 1e-6;
const MAX_REWEIGHTS: usize = 10;
const REWEIGHT_TOLERANCE: f64 = 1e-7;

/// Variance used to weight the residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayWeights {
    /// `1 / max(counts, 1)` from the data.
    #[default]
    Counts,
    /// `1 / max(model, 1)`, iterated to self-consistency. Approaches the Poisson
    /// maximum-likelihood estimate and avoids the low bias of data weights at
    /// small counts.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    Single,
    Bi,
    /// Order chosen by an F-test on the residuals, up to [`MAX_COMPONENTS`].
    Multi,
}

impl DecayMode {
    fn components(self) -> usize {
        match self {
            DecayMode::Single => 1,
            DecayMode::Bi => 2,
            DecayMode::Multi => MAX_COMPONENTS,
        }
    }
}

impl std::str::FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(DecayMode::Single),
            "bi" => Ok(DecayMode::Bi),
            "multi" => Ok(DecayMode::Multi),
            _ => Err(Error::InvalidParameter { name: "mode", reason: format!("unknown decay mode '{s}'") }),
        }
    }
}

/// `baseline + IRF * sum_k A_k exp(-G_k t) H(t)`, time zero at the grid origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayModelParams {
    pub mode: DecayMode,
    /// ns^-1, descending.
    pub rates: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub baseline: f64,
}

impl DecayModelParams {
    pub fn from_fit(fit: &FitResult) -> Result<Self> {
        let k = (fit.estimates.len().saturating_sub(1)) / 2;
        if !fit.model.starts_with("exp_decay") || k == 0 {
            return Err(Error::InvalidParameter { name: "fit", reason: "not a decay fit".into() });
        }
        let mode = match k {
            1 => DecayMode::Single,
            2 => DecayMode::Bi,
            _ => DecayMode::Multi,
        };
        Ok(Self {
            mode,
            rates: (0..k).map(|j| fit.estimates[2 * j]).collect(),
            amplitudes: (0..k).map(|j| fit.estimates[2 * j + 1]).collect(),
            baseline: fit.estimates[2 * k],
        })
    }
}

fn step_fn(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Forward model on `grid` (ns). With `irf = None` the exponentials are not blurred.
pub fn decay_model(params: &DecayModelParams, grid: &[f64], irf: Option<&IrfKernel>) -> Vec<f64> {
    let raw: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let h = step_fn(t);
            if h == 0.0 {
                return 0.0;
            }
            params.rates.iter().zip(&params.amplitudes).map(|(g, a)| a * (-g * t).exp()).sum::<f64>() * h
        })
        .collect();
    let blurred = match irf {
        Some(k) => Convolver::new(k, grid.len()).apply(&raw),
        None => raw,
    };
    blurred.into_iter().map(|v| v + params.baseline).collect()
}

/// Parameters are `[ln G_1, A_1, ..., ln G_k, A_k, baseline]`; log rates keep the
/// exponentials bounded during the search.
struct DecayProblem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    sqrt_w: Vec<f64>,
    conv: Convolver,
    k: usize,
}

impl DecayProblem<'_> {
    fn basis(&self, log_rate: f64) -> (Vec<f64>, Vec<f64>) {
        let g = log_rate.exp();
        let mut e = Vec::with_capacity(self.t.len());
        let mut te = Vec::with_capacity(self.t.len());
        for &t in self.t {
            let v = if t >= 0.0 { step_fn(t) * (-g * t).exp() } else { 0.0 };
            e.push(v);
            te.push(t * v);
        }
        (e, te)
    }
}

impl LeastSquaresProblem for DecayProblem<'_> {
    fn n_params(&self) -> usize {
        2 * self.k + 1
    }

    fn n_residuals(&self) -> usize {
        self.t.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let mut raw = vec![0.0; self.t.len()];
        for j in 0..self.k {
            let (e, _) = self.basis(p[2 * j]);
            for (r, v) in raw.iter_mut().zip(e) {
                *r += p[2 * j + 1] * v;
            }
        }
        let m = self.conv.apply(&raw);
        let b = p[2 * self.k];
        for i in 0..out.len() {
            out[i] = (self.y[i] - m[i] - b) * self.sqrt_w[i];
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Degenerate("decay model overflowed".into()))
        }
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        for j in 0..self.k {
            let g = p[2 * j].exp();
            let a = p[2 * j + 1];
            let (e, te) = self.basis(p[2 * j]);
            let de = self.conv.apply(&e);
            let dte = self.conv.apply(&te);
            for i in 0..self.t.len() {
                // d/d ln G of A exp(-G t) is -A G t exp(-G t)
                jac[(i, 2 * j)] = a * g * dte[i] * self.sqrt_w[i];
                jac[(i, 2 * j + 1)] = -de[i] * self.sqrt_w[i];
            }
        }
        for i in 0..self.t.len() {
            jac[(i, 2 * self.k)] = -self.sqrt_w[i];
        }
        Ok(())
    }
}

/// Weighted least-squares line through `(x, y)`; returns (slope, intercept).
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    if x.len() < 2 || sw <= 0.0 {
        return None;
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

struct Seed {
    rates: Vec<f64>,
    amplitudes: Vec<f64>,
    baseline: f64,
}

fn baseline_estimate(t: &[f64], y: &[f64], irf: &IrfKernel) -> f64 {
    let cut = irf.grid.first().copied().unwrap_or(0.0).min(0.0) - 3.0 * irf.sigma();
    let pre: Vec<f64> = t.iter().zip(y).filter(|(&ti, _)| ti < cut).map(|(_, &v)| v).collect();
    if pre.len() >= 5 {
        pre.iter().sum::<f64>() / pre.len() as f64
    } else {
        0.0
    }
}

/// Log-linear peeling: the slowest component from the late half of the decay, each
/// faster one from what remains earlier on after subtracting the slower ones.
fn peel(t: &[f64], y: &[f64], irf: &IrfKernel, k: usize) -> Result<Seed> {
    let baseline = baseline_estimate(t, y, irf);
    let (i_peak, &peak) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty curve");
    let signal = peak - baseline;
    if signal <= 5.0 * baseline.max(1.0).sqrt() {
        return Err(Error::NoDecay(format!("peak {peak:.3e} does not rise above baseline {baseline:.3e}")));
    }
    let threshold = (5.0 * baseline.max(1.0).sqrt()).max(1e-3 * signal);
    let start = t
        .iter()
        .enumerate()
        .skip(i_peak)
        .find(|(_, &ti)| ti >= t[i_peak] + 2.0 * irf.sigma())
        .map(|(i, _)| i)
        .unwrap_or(i_peak);
    let mut resid: Vec<f64> = y.iter().map(|v| v - baseline).collect();
    let mut end = (start..t.len()).rev().find(|&i| resid[i] > threshold).map(|i| i + 1).unwrap_or(start);
    if end < start + 4 {
        end = (start + 4).min(t.len());
    }

    let mut rates = Vec::with_capacity(k);
    let mut amplitudes = Vec::with_capacity(k);
    let span = t[end - 1] - t[start];
    for j in 0..k {
        // the slowest component takes the late half, faster ones progressively earlier windows
        let frac = 0.5f64.powi(j as i32 + 1);
        let lo = start;
        let hi = if j == 0 { end } else { start + ((end - start) as f64 * frac).ceil() as usize };
        let lo = if j == 0 { start + (end - start) / 2 } else { lo };
        let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
        for i in lo..hi.max(lo + 2).min(t.len()) {
            if resid[i] > threshold {
                xs.push(t[i]);
                ys.push(resid[i].ln());
                ws.push(resid[i]);
            }
        }
        let fallback_rate = 4.0f64.powi(j as i32) * 3.0 / span.max(f64::MIN_POSITIVE);
        let (mut rate, mut amp) = match weighted_line(&xs, &ys, &ws) {
            Some((s, c)) if s < 0.0 => (-s, c.exp()),
            _ => (fallback_rate, signal / k as f64),
        };
        if let Some(&prev) = rates.last() {
            if rate < 2.0 * prev {
                rate = 4.0 * prev;
                amp = signal;
            }
        }
        for i in 0..t.len() {
            if t[i] >= 0.0 {
                resid[i] -= amp * (-rate * t[i]).exp();
            }
        }
        rates.push(rate);
        amplitudes.push(amp);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]));
    Ok(Seed {
        rates: order.iter().map(|&i| rates[i]).collect(),
        amplitudes: order.iter().map(|&i| amplitudes[i]).collect(),
        baseline,
    })
}

fn check_curve(curve: &SampledSignal, irf: &IrfKernel) -> Result<()> {
    if curve.domain != Domain::Temporal || irf.domain != Domain::Temporal {
        return Err(Error::InvalidParameter { name: "curve", reason: "decay fits need temporal data and IRF".into() });
    }
    // round-off from transformed synthetic curves is tolerated
    let floor = -1e-9 * curve.peak().abs();
    if let Some(v) = curve.values.iter().find(|v| **v < floor) {
        return Err(Error::InvalidParameter { name: "curve", reason: format!("negative count {v}") });
    }
    let (hc, hk) = (curve.step(), irf.step());
    if irf.weights.len() > 1 && ((hc - hk) / hc).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!("curve step {hc} differs from IRF step {hk}")));
    }
    Ok(())
}

fn fit_components(
    curve: &SampledSignal,
    irf: &IrfKernel,
    conv: &Convolver,
    k: usize,
    weights: DecayWeights,
) -> Result<FitResult> {
    let seed = peel(&curve.grid, &curve.values, irf, k)?;
    let mut problem = DecayProblem {
        t: &curve.grid,
        y: &curve.values,
        sqrt_w: curve.values.iter().map(|v| 1.0 / v.max(1.0).sqrt()).collect(),
        conv: conv.clone(),
        k,
    };
    let mut init: Vec<f64> = seed.rates.iter().zip(&seed.amplitudes).flat_map(|(g, a)| [g.ln(), *a]).collect();
    init.push(seed.baseline);
    let config = LmConfig::default();
    let mut report = levenberg_marquardt(&problem, &init, &config)?;
    if weights == DecayWeights::Model {
        for _ in 0..MAX_REWEIGHTS {
            let mut r = vec![0.0; curve.len()];
            problem.sqrt_w = vec![1.0; curve.len()];
            problem.residuals(&report.params, &mut r)?;
            // r = y - model with unit weights
            problem.sqrt_w = curve.values.iter().zip(&r).map(|(y, r)| 1.0 / (y - r).max(1.0).sqrt()).collect();
            let next = levenberg_marquardt(&problem, &report.params, &config)?;
            let change = next
                .params
                .iter()
                .zip(&report.params)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                .fold(0.0, f64::max);
            report = next;
            if change < REWEIGHT_TOLERANCE {
                break;
            }
        }
    }

    let names: Vec<String> =
        (1..=k).flat_map(|j| [format!("rate_{j}"), format!("amplitude_{j}")]).chain(["baseline".to_string()]).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut fit = FitResult::from_report(&format!("exp_decay_{k}"), &name_refs, &report, curve.len());

    // back to rates, sorted descending
    let mut comps: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|j| {
            let g = report.params[2 * j].exp();
            (g, g * report.std_errors[2 * j], report.params[2 * j + 1], report.std_errors[2 * j + 1])
        })
        .collect();
    comps.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (j, c) in comps.iter().enumerate() {
        fit.estimates[2 * j] = c.0;
        fit.std_errors[2 * j] = c.1;
        fit.estimates[2 * j + 1] = c.2;
        fit.std_errors[2 * j + 1] = c.3;
    }
    Ok(fit)
}

/// Reason a fitted set of components is unacceptable, if any.
fn defect(fit: &FitResult, k: usize) -> Option<&'static str> {
    let rates: Vec<f64> = (0..k).map(|j| fit.estimates[2 * j]).collect();
    if (0..k).any(|j| fit.estimates[2 * j + 1] < 0.0) {
        return Some("negative_amplitude");
    }
    if rates.windows(2).any(|w| (w[0] - w[1]) <= COLLAPSE_TOLERANCE * w[0]) {
        return Some("rate_collapse");
    }
    // integrated counts per component
    let weights: Vec<f64> = (0..k).map(|j| fit.estimates[2 * j + 1] / rates[j]).collect();
    let total: f64 = weights.iter().sum();
    if k > 1 && weights.iter().any(|w| *w < VANISHING_WEIGHT * total) {
        return Some("vanishing_component");
    }
    None
}

fn f_test_prefers(simple: &FitResult, rich: &FitResult) -> bool {
    let dof = rich.degrees_of_freedom as f64;
    if dof < 1.0 {
        return false;
    }
    let extra = 2.0;
    let f = ((simple.residual_sum - rich.residual_sum) / extra) / (rich.residual_sum / dof).max(f64::MIN_POSITIVE);
    let critical = FisherSnedecor::new(extra, dof).map(|d| d.inverse_cdf(1.0 - F_TEST_LEVEL)).unwrap_or(f64::INFINITY);
    f > critical
}

/// Multi-exponential fit of a photon-counting decay curve through the detector IRF.
///
/// Residuals are weighted by `1 / max(counts, 1)`. A fit whose rates collapse onto
/// each other, or that needs a negative amplitude, is redone with one component
/// fewer and flagged.
pub fn fit_decay(curve: &SampledSignal, irf: &IrfKernel, mode: DecayMode) -> Result<FitResult> {
    fit_decay_with(curve, irf, mode, DecayWeights::Counts)
}

/// As [`fit_decay`], with a choice of residual weights.
pub fn fit_decay_with(curve: &SampledSignal, irf: &IrfKernel, mode: DecayMode, weights: DecayWeights) -> Result<FitResult> {
    check_curve(curve, irf)?;
    let conv = Convolver::new(irf, curve.len());

    if mode == DecayMode::Multi {
        let mut best = fit_components(curve, irf, &conv, 1, weights)?;
        for k in 2..=MAX_COMPONENTS {
            match fit_components(curve, irf, &conv, k, weights) {
                Ok(rich) if defect(&rich, k).is_none() && f_test_prefers(&best, &rich) => best = rich,
                Ok(_) => break,
                Err(e @ Error::NoDecay(_)) => return Err(e),
                Err(e) => {
                    log::debug!("{k}-component decay fit rejected: {e}");
                    break;
                }
            }
        }
        best.model = format!("exp_decay_{}", (best.estimates.len() - 1) / 2);
        return Ok(best);
    }

    let mut flags = Vec::new();
    let mut k = mode.components();
    loop {
        let outcome = fit_components(curve, irf, &conv, k, weights);
        let reason = match &outcome {
            Ok(fit) => defect(fit, k),
            Err(Error::SingularCurvature(_)) if k > 1 => Some("rate_collapse"),
            Err(_) => None,
        };
        match reason {
            Some(r) if k > 1 => {
                flags.push(r.to_string());
                k -= 1;
            }
            _ => {
                let mut fit = outcome?;
                if k == 1 && fit.estimates[1] < 0.0 {
                    return Err(Error::NoDecay("best single component has negative amplitude".into()));
                }
                fit.flags.extend(flags);
                return Ok(fit);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::gaussian_irf;
    use crate::lm::jacobian_deviation;

    fn grid(step: f64, t0: f64, t1: f64) -> Vec<f64> {
        let n = ((t1 - t0) / step).round() as usize + 1;
        (0..n).map(|i| t0 + i as f64 * step).collect()
    }

    #[test]
    fn heaviside_half_at_origin() {
        let p = DecayModelParams { mode: DecayMode::Single, rates: vec![2.0], amplitudes: vec![4.0], baseline: 1.0 };
        let y = decay_model(&p, &[-0.1, 0.0, 0.5], None);
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 3.0);
        assert!((y[2] - (1.0 + 4.0 * (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn analytic_jacobian() {
        let t = grid(0.01, -1.0, 8.0);
        let irf = gaussian_irf(0.05, 0.01, Domain::Temporal).unwrap();
        let truth =
            DecayModelParams { mode: DecayMode::Bi, rates: vec![5.0, 0.4], amplitudes: vec![800.0, 90.0], baseline: 3.0 };
        let y = decay_model(&truth, &t, Some(&irf));
        let problem = DecayProblem {
            t: &t,
            y: &y,
            sqrt_w: y.iter().map(|v| 1.0 / v.max(1.0).sqrt()).collect(),
            conv: Convolver::new(&irf, t.len()),
            k: 2,
        };
        let dev = jacobian_deviation(&problem, &[1.4f64, 700.0, (0.5f64).ln(), 100.0, 2.0]).unwrap();
        assert!(dev < 1e-4, "{dev}");
    }

    #[test]
    fn exponential_through_gaussian_matches_exgaussian() {
        // closed form of exp(-G t) H(t) convolved with a unit-area Gaussian
        let step = 0.002;
        let t = grid(step, -1.0, 6.0);
        let irf = gaussian_irf(0.05, step, Domain::Temporal).unwrap();
        let s = irf.sigma();
        let g: f64 = 3.0;
        let p = DecayModelParams { mode: DecayMode::Single, rates: vec![g], amplitudes: vec![1.0], baseline: 0.0 };
        let y = decay_model(&p, &t, Some(&irf));
        let m = irf.mean();
        for (i, &ti) in t.iter().enumerate().step_by(50) {
            let tt = ti - m;
            let z = (tt / s - g * s) / std::f64::consts::SQRT_2;
            let exact = 0.5 * (-g * tt + 0.5 * g * g * s * s).exp() * statrs::function::erf::erfc(-z);
            assert!((y[i] - exact).abs() < 2e-3, "t={ti} {} vs {exact}", y[i]);
        }
    }

    #[test]
    fn flat_curve_has_no_decay() {
        let t = grid(0.01, -1.0, 5.0);
        let irf = gaussian_irf(0.05, 0.01, Domain::Temporal).unwrap();
        let curve = SampledSignal::new(t.clone(), vec![50.0; t.len()], Domain::Temporal).unwrap();
        assert!(matches!(fit_decay(&curve, &irf, DecayMode::Single), Err(Error::NoDecay(_))));
    }
}
