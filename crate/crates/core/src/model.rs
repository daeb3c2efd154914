//! Physical scenario: a two-level atom with decay rate `gamma` and transition
//! energy `omega`, radiating into a flat photon continuum whose modes are
//! absorbed by a detector with a finite detection band.
//!
//! Every routine in this crate is dimensionally homogeneous, so any energy unit
//! may be used as long as times are given in the inverse unit. The usual choice
//! is `gamma = 1`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use thiserror::Error;

/// Shape of the detector coupling density around the band center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandProfile {
    /// `1 / (1 + x^n)` with even `n`.
    PowerLaw { n: u32 },
    /// The `n -> inf` limit: a rectangular band with hard edges.
    FlatInfiniteN,
}

/// Detector band: photons with `|k - center| < delta` are absorbed on the
/// timescale `1 / eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorBand {
    pub eta: f64,
    pub delta: f64,
    pub profile: BandProfile,
    pub center: f64,
}

impl DetectorBand {
    pub fn power_law(eta: f64, delta: f64, n: u32, center: f64) -> Self {
        Self { eta, delta, profile: BandProfile::PowerLaw { n }, center }
    }

    pub fn flat(eta: f64, delta: f64, center: f64) -> Self {
        Self { eta, delta, profile: BandProfile::FlatInfiniteN, center }
    }

    /// Detector coupling density `eta_k`; see [`detector_response`].
    pub fn response(&self, k: f64) -> f64 {
        let peak = self.eta / (2.0 * PI);
        if self.eta == 0.0 {
            return 0.0;
        }
        let x = (k - self.center) / self.delta;
        match self.profile {
            BandProfile::PowerLaw { n } => {
                // x^n overflows to inf for huge |x|, which correctly gives 0.
                peak / (1.0 + x.abs().powi(n as i32))
            }
            BandProfile::FlatInfiniteN => {
                if x.abs() < 1.0 {
                    peak
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ eta_k dk` over the whole line.
    pub fn integrated_response(&self) -> f64 {
        let peak = self.eta / (2.0 * PI);
        match self.profile {
            BandProfile::PowerLaw { n } => {
                let n = n as f64;
                peak * self.delta * (2.0 * PI / n) / (PI / n).sin()
            }
            BandProfile::FlatInfiniteN => peak * 2.0 * self.delta,
        }
    }

    /// Energies where `eta_k` changes character: the band edges and center.
    pub fn features(&self) -> [f64; 3] {
        [self.center - self.delta, self.center, self.center + self.delta]
    }

    /// Half-width around the center beyond which `eta_k / (eta / 2π)` stays
    /// below `rel`.
    pub fn support_radius(&self, rel: f64) -> f64 {
        match self.profile {
            BandProfile::PowerLaw { n } => self.delta * (1.0 / rel - 1.0).max(1.0).powf(1.0 / n as f64),
            BandProfile::FlatInfiniteN => self.delta,
        }
    }

    fn violations(&self, out: &mut Vec<ParamError>) {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            out.push(ParamError::NegativeCoupling(self.eta));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            out.push(ParamError::NonPositiveBandwidth(self.delta));
        }
        if !self.center.is_finite() {
            out.push(ParamError::NonFinite("center"));
        }
        if let BandProfile::PowerLaw { n } = self.profile {
            if n % 2 == 1 {
                out.push(ParamError::OddExponent(n));
            } else if n < 2 {
                out.push(ParamError::ExponentTooSmall(n));
            }
        }
    }
}

/// Detector coupling density `eta_k = (eta/2π) / (1 + ((k - center)/delta)^n)`,
/// or `(eta/2π)` inside the band and zero outside for the flat profile.
pub fn detector_response(band: &DetectorBand, k: f64) -> f64 {
    band.response(k)
}

/// Truncation and resolution settings. `None` fields are filled from the
/// physical parameters by [`validate_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericalControls {
    /// Half-width of the retained photon grid around the band center.
    pub cutoff: Option<f64>,
    /// Photon grid spacing.
    pub dk: Option<f64>,
    /// Propagation horizon.
    pub horizon: Option<f64>,
    /// Integrator step.
    pub step: Option<f64>,
    /// Relative tolerance for the form-factor quadrature.
    pub quad_tol: f64,
    /// Accept a cutoff narrower than the default rule.
    pub force_cutoff: bool,
}

impl Default for NumericalControls {
    fn default() -> Self {
        Self { cutoff: None, dk: None, horizon: None, step: None, quad_tol: 1e-10, force_cutoff: false }
    }
}

/// Raw scenario as supplied by a caller or a config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub gamma: f64,
    pub omega: f64,
    pub band: DetectorBand,
    pub numerics: NumericalControls,
}

impl ModelParams {
    /// Band centered on the atomic line with a power-law profile, `gamma = 1`.
    pub fn centered(omega: f64, eta: f64, delta: f64, n: u32) -> Self {
        Self {
            gamma: 1.0,
            omega,
            band: DetectorBand::power_law(eta, delta, n, omega),
            numerics: NumericalControls::default(),
        }
    }

    /// The figure parameterization: `2πΔ/γ` and `η/γ` with `gamma = 1`,
    /// `omega = 0` and `n = 6`.
    pub fn from_figure_ratios(two_pi_delta: f64, eta: f64) -> Self {
        Self::centered(0.0, eta, two_pi_delta / (2.0 * PI), 6)
    }

    pub fn with_numerics(mut self, numerics: NumericalControls) -> Self {
        self.numerics = numerics;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("decay rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("band exponent must be even, got {0}")]
    OddExponent(u32),
    #[error("band exponent must be at least 2, got {0}")]
    ExponentTooSmall(u32),
    #[error("detector coupling must be non-negative, got {0}")]
    NegativeCoupling(f64),
    #[error("band half-width must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("cutoff {cutoff} is narrower than the band half-width {delta}")]
    BadWindow { cutoff: f64, delta: f64 },
    #[error("{0} must be positive and finite")]
    NonPositiveControl(&'static str),
    #[error("{0} is not finite")]
    NonFinite(&'static str),
}

/// Every violation found while validating a scenario.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct Violations(pub Vec<ParamError>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "invalid scenario: {}", msgs.join("; "))
    }
}

impl Violations {
    pub fn contains(&self, pred: impl Fn(&ParamError) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

/// A scenario that passed validation, with every numerical control resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatedModel {
    pub gamma: f64,
    pub omega: f64,
    pub band: DetectorBand,
    pub cutoff: f64,
    pub dk: f64,
    pub horizon: f64,
    pub step: f64,
    pub quad_tol: f64,
    /// True when the cutoff is below the default rule.
    pub non_default_cutoff: bool,
    /// Caller accepted a cutoff below the default rule.
    pub force_cutoff: bool,
}

impl ValidatedModel {
    /// Largest rate scale in the problem, `max(Δ, η, γ)`.
    pub fn rate_scale(&self) -> f64 {
        self.band.delta.max(self.band.eta).max(self.gamma)
    }

    /// The cutoff required by the default rule.
    pub fn default_cutoff(&self) -> f64 {
        DEFAULT_CUTOFF_FACTOR * self.rate_scale()
    }
}

/// Default photon-grid half-width in units of `max(Δ, η, γ)`.
pub const DEFAULT_CUTOFF_FACTOR: f64 = 10.0;
/// Default horizon in units of `1/γ`.
pub const DEFAULT_HORIZON: f64 = 5.0;
/// Default grid spacing as a fraction of the revival-guard bound `π / (2T)`.
pub const DEFAULT_DK_FRACTION: f64 = 0.9;
/// Default initial integrator step in units of `1 / max(Δ, η, γ)`.
pub const DEFAULT_STEP: f64 = 0.05;

pub fn validate_params(p: &ModelParams) -> Result<ValidatedModel, Violations> {
    let mut errs = Vec::new();
    if !(p.gamma > 0.0) || !p.gamma.is_finite() {
        errs.push(ParamError::NonPositiveRate(p.gamma));
    }
    if !p.omega.is_finite() {
        errs.push(ParamError::NonFinite("omega"));
    }
    p.band.violations(&mut errs);
    let n = &p.numerics;
    for (name, v) in [("cutoff", n.cutoff), ("dk", n.dk), ("horizon", n.horizon), ("step", n.step)] {
        if let Some(v) = v {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(ParamError::NonPositiveControl(name));
            }
        }
    }
    if !(n.quad_tol > 0.0) || !n.quad_tol.is_finite() {
        errs.push(ParamError::NonPositiveControl("quad_tol"));
    }
    if let Some(cutoff) = n.cutoff {
        if cutoff < p.band.delta {
            errs.push(ParamError::BadWindow { cutoff, delta: p.band.delta });
        }
    }
    if !errs.is_empty() {
        return Err(Violations(errs));
    }

    let scale = p.band.delta.max(p.band.eta).max(p.gamma);
    let horizon = n.horizon.unwrap_or(DEFAULT_HORIZON / p.gamma);
    let default_cutoff = DEFAULT_CUTOFF_FACTOR * scale;
    let cutoff = n.cutoff.unwrap_or(default_cutoff);
    Ok(ValidatedModel {
        gamma: p.gamma,
        omega: p.omega,
        band: p.band,
        cutoff,
        dk: n.dk.unwrap_or(DEFAULT_DK_FRACTION * FRAC_PI_2 / horizon),
        horizon,
        step: n.step.unwrap_or(DEFAULT_STEP / scale),
        quad_tol: n.quad_tol,
        non_default_cutoff: cutoff < default_cutoff,
        force_cutoff: n.force_cutoff,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Band covers the line and the in-band rate is strongly suppressed.
    QzeRegime,
    /// The line is inside the band but at least one condition fails.
    WeakSuppression,
    /// The atomic line lies outside the detection band.
    NoDetectionOverlap,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::QzeRegime => "QZE-regime",
            Verdict::WeakSuppression => "weak-suppression",
            Verdict::NoDetectionOverlap => "no-detection-overlap",
        })
    }
}

/// Upper bounds on `γ/Δ` and `τΔ` for the QZE verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionThresholds {
    pub linewidth: f64,
    pub response: f64,
}

impl Default for ConditionThresholds {
    fn default() -> Self {
        Self { linewidth: 0.1, response: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// `γ/Δ`
    pub ratio_linewidth: f64,
    /// `τΔ = Δ/η`
    pub ratio_response: f64,
    /// Flat-band estimate of `2π|g_Ω|²/γ`, i.e. `(2/π) arctan(2Δ/η)`.
    pub suppression_estimate: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("detector coupling is zero: response time undefined")]
    NoDetector,
}

pub fn qze_condition_report(m: &ValidatedModel) -> Result<ConditionReport, ModelError> {
    qze_condition_report_with(m, ConditionThresholds::default())
}

pub fn qze_condition_report_with(
    m: &ValidatedModel,
    thresholds: ConditionThresholds,
) -> Result<ConditionReport, ModelError> {
    let band = &m.band;
    if band.eta == 0.0 {
        return Err(ModelError::NoDetector);
    }
    let ratio_linewidth = m.gamma / band.delta;
    let ratio_response = band.delta / band.eta;
    let suppression_estimate = 2.0 / PI * (2.0 * band.delta / band.eta).atan();
    let verdict = if (m.omega - band.center).abs() >= band.delta {
        Verdict::NoDetectionOverlap
    } else if ratio_linewidth <= thresholds.linewidth && ratio_response <= thresholds.response {
        Verdict::QzeRegime
    } else {
        Verdict::WeakSuppression
    };
    Ok(ConditionReport { ratio_linewidth, ratio_response, suppression_estimate, verdict })
}
