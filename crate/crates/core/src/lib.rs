// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Cavity QED emitter–cavity modelling: single-excitation Jaynes-Cummings dynamics,
//! emission spectra from the quantum regression theorem, instrument response
//! handling and the least-squares inference used to extract coupling strengths.

pub mod error;
pub mod inference;
pub mod instrument;
pub mod io;
pub mod lm;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod ode;
pub mod spectra;
pub mod sweep;
pub mod units;

pub use error::{Error, Result};
pub use model::{
    coupling_from_rate, mean_decay_rate, propagate, purcell_enhancement, quality_factor,
    rabi_oracle, simulate, weak_coupling_rate, DecayWeighting, InversionMode, SystemParams,
    Trajectory,
};
pub use units::{energy_to_rate, rate_to_energy, RateUnit, RateValue, HBAR_UEV_NS};
