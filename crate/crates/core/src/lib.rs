//! Quantum Zeno dynamics of an exactly exponentially decaying two-level atom
//! whose emitted photon is watched by a photodetector with a finite detection
//! band.
//!
//! The crate offers two independent routes to the atomic survival probability:
//! direct propagation of the single-excitation amplitudes ([`dynamics`]) and the
//! resolvent built on the renormalized form factor ([`formfactor`],
//! [`spectral`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod formfactor;
pub mod model;
pub mod quad;
pub mod spectral;
pub mod spline;

pub use dynamics::{
    decay_rate_trace, discretize_continuum, propagate, response_delay, DiscretizedModel, DynamicsError,
    ProbabilityTrace,
};
pub use formfactor::{
    analytic_flat_band, form_factor_grid, renormalized_form_factor, sum_rule_defect, FormFactorError, FormFactorGrid,
    SumRuleDefect,
};
pub use model::{
    detector_response, qze_condition_report, validate_params, BandProfile, ConditionReport, DetectorBand, ModelParams,
    NumericalControls, ValidatedModel, Verdict,
};
pub use spectral::{
    perturbative_decay, self_energy, spectral_function, stage_rates, survival_amplitude_spectral, SpectralError,
    SpectralFunction,
};
