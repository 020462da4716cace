//! Seeded noise models and bias summaries for Monte-Carlo checks of the estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{decay_model, fit_decay_with, fit_lorentzian_pair, DecayMode, DecayWeights, DecayModelParams, FitResult, LorentzianPairParams};
use crate::error::{Error, Result};
use crate::instrument::{IrfKernel, SampledSignal};
use crate::parallel::{map_range, Execution};

/// Independent stream `index` under a master seed. Replicate `i` draws the same
/// numbers whatever order or thread it runs on.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One Poisson draw with the given mean; non-positive means give zero.
pub fn poisson_sample<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean > 0.0 && mean.is_finite() {
        Poisson::new(mean).expect("positive finite mean").sample(rng)
    } else {
        0.0
    }
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(values: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    values.iter().map(|v| v + normal.sample(rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub truth: f64,
    pub mean: f64,
    /// Standard error of the mean.
    pub sem: f64,
    pub bias: f64,
    pub replicates: usize,
}

impl BiasSummary {
    /// Whether the bias is smaller than one standard error of the mean.
    pub fn within_sem(&self) -> bool {
        self.bias.abs() < self.sem
    }
}

pub fn summarize_bias(estimates: &[f64], truth: f64) -> BiasSummary {
    let n = estimates.len();
    let mean = estimates.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    BiasSummary { truth, mean, sem: (var / n as f64).sqrt(), bias: mean - truth, replicates: n }
}

/// Per-parameter bias over replicate fits. Every replicate must converge.
fn collect(fits: Vec<Result<FitResult>>, truth: &[f64]) -> Result<Vec<(String, BiasSummary)>> {
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let first = fits.first().ok_or_else(|| Error::InvalidParameter { name: "replicates", reason: "none".into() })?;
    if let Some(f) = fits.iter().find(|f| f.names != first.names) {
        return Err(Error::Degenerate(format!("replicate fitted model {} instead of {}", f.model, first.model)));
    }
    Ok(first
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let est: Vec<f64> = fits.iter().map(|f| f.estimates[j]).collect();
            (name.clone(), summarize_bias(&est, truth[j]))
        })
        .collect())
}

/// Fit `replicates` copies of a Lorentzian pair with white Gaussian noise of
/// standard deviation `sigma`, started from the truth.
pub fn calibrate_lorentzian_pair(
    truth: &LorentzianPairParams,
    grid: &[f64],
    sigma: f64,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<(String, BiasSummary)>> {
    let clean: Vec<f64> = grid.iter().map(|&x| truth.value(x)).collect();
    let fits = map_range(replicates, exec, |i| {
        let mut rng = replicate_rng(seed, i as u64);
        let noisy = add_gaussian_noise(&clean, sigma, &mut rng);
        let s = SampledSignal::new(grid.to_vec(), noisy, crate::instrument::Domain::Spectral)?;
        fit_lorentzian_pair(&s, truth, None)
    });
    let t: Vec<f64> = truth.peaks.iter().flat_map(|p| [p.center, p.fwhm, p.height]).collect();
    collect(fits, &t)
}

/// Fit `replicates` Poisson realizations of a decay curve through `irf`.
pub fn calibrate_decay(
    truth: &DecayModelParams,
    grid: &[f64],
    irf: &IrfKernel,
    weights: DecayWeights,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<(String, BiasSummary)>> {
    let mean = decay_model(truth, grid, Some(irf));
    let mode = truth.mode;
    let fits = map_range(replicates, exec, |i| {
        let mut rng = replicate_rng(seed, i as u64);
        let counts: Vec<f64> = mean.iter().map(|&m| poisson_sample(&mut rng, m)).collect();
        let s = SampledSignal::new(grid.to_vec(), counts, crate::instrument::Domain::Temporal)?;
        fit_decay_with(&s, irf, if mode == DecayMode::Multi { DecayMode::Bi } else { mode }, weights)
    });
    let mut t: Vec<f64> = truth.rates.iter().zip(&truth.amplitudes).flat_map(|(g, a)| [*g, *a]).collect();
    t.push(truth.baseline);
    collect(fits, &t)
}
