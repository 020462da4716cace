//! Least-squares parameter estimation for spectra and decay curves, and the
//! derived quantities used to compare spectral and dynamical coupling strengths.

mod calibration;
mod coupling;
mod decay;
mod fit_result;
mod jc;
mod lorentzian;

pub use calibration::{
    add_gaussian_noise, calibrate_decay, calibrate_lorentzian_pair, poisson_sample, replicate_rng, summarize_bias,
    BiasSummary,
};
pub use coupling::{
    classify_coupling, classify_coupling_with, compare_coupling_estimates, strong_coupling_threshold,
    CouplingClassification, CouplingComparison, CouplingLabel, CouplingVerdict,
};
pub use decay::{decay_model, fit_decay, fit_decay_with, DecayMode, DecayModelParams, DecayWeights, MAX_COMPONENTS};
pub use fit_result::FitResult;
pub use jc::{fit_jc_cavity_spectrum, jc_model, JcFixedParams};
pub use lorentzian::{
    extract_sweep_record, fit_lorentzian_pair, seed_lorentzian_pair, LorentzianPairParams, LorentzianPeak,
    SweepRecord,
};
