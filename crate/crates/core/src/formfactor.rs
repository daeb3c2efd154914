//! Renormalized form factor `|g_μ|²`: the coupling density of the atom to the
//! single continuum left after the detector excitations are folded into the
//! photon modes,
//!
//! ```text
//! |g_μ|² = (γ/2π) ∫ dk  η_k / ((μ - k)² + (π η_k)²)
//! ```
//!
//! Each photon mode `k` becomes a Lorentzian of half-width `π η_k` centered on
//! `k`; the integrand is therefore sharply peaked at `k = μ` whenever `η_μ` is
//! small and degenerates into a delta function where `η_μ = 0`.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{BandProfile, DetectorBand};
use crate::quad::{self, QuadratureFailure, Tolerance};
use crate::spline::CubicSpline;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormFactorError {
    #[error(transparent)]
    Quadrature(#[from] QuadratureFailure),
    #[error("μ = {mu} sits exactly on a flat band edge: inner limit {inside:e}, outer limit {outside:e}")]
    BandEdge { mu: f64, inside: f64, outside: f64 },
    #[error("window [{lo}, {hi}] is too narrow: {reason}")]
    WindowTooNarrow { lo: f64, hi: f64, reason: String },
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("malformed form-factor table: {0}")]
    BadTable(String),
}

/// Free value `γ/2π` of the form factor.
pub fn free_value(gamma: f64) -> f64 {
    gamma / (2.0 * PI)
}

/// Peak region half-width around `k = μ`, in units of the local width `π η_μ`.
const PEAK_SPAN: f64 = 1e3;

/// `|g_μ|²` by adaptive quadrature.
pub fn renormalized_form_factor(band: &DetectorBand, gamma: f64, mu: f64, tol: f64) -> Result<f64, FormFactorError> {
    if !(tol > 0.0) {
        return Err(FormFactorError::BadTolerance);
    }
    if band.eta == 0.0 {
        return Ok(free_value(gamma));
    }
    let width = |k: f64| PI * band.response(k);
    let lorentz = |k: f64| {
        let h = width(k);
        let d = mu - k;
        h / (d * d + h * h) / PI
    };
    let qtol = Tolerance::relative(tol).with_abs(1e-300);
    let features = band.features();
    let a = width(mu);

    let mut total = 0.0;
    if a > 0.0 {
        // k = μ + a·tan θ flattens the Lorentzian peak of the mode at k = μ.
        let reach = PEAK_SPAN * a;
        let theta_max = PEAK_SPAN.atan();
        let mut thetas = vec![-theta_max, 0.0, theta_max];
        thetas.extend(features.iter().filter(|&&f| (f - mu).abs() < reach).map(|&f| ((f - mu) / a).atan()));
        thetas.sort_by(f64::total_cmp);
        thetas.dedup();
        let peak = move |theta: f64| {
            let u = theta.tan();
            let rho = width(mu + a * u) / a;
            rho * (1.0 + u * u) / (u * u + rho * rho) / PI
        };
        total += quad::integrate(peak, &thetas, qtol)?.value;
        // The side pieces only need accuracy relative to the peak.
        let side = qtol.with_abs(0.1 * tol * total);

        // Side pieces are parameterized by the distance d = |k - μ| so that the
        // 1/d² shoulders next to a very narrow peak keep full precision.
        for sign in [-1.0, 1.0] {
            let shoulder = move |d: f64| {
                let h = width(mu + sign * d);
                h / (d * d + h * h) / PI
            };
            let mut pts = vec![reach];
            // Decade breakpoints so the 1/d² shoulder is seen by the first rule.
            let far = (features[1] - mu).abs() + features[2] - features[1];
            let mut d = 10.0 * reach;
            while d < far {
                pts.push(d);
                d *= 10.0;
            }
            pts.extend(features.iter().map(|&f| sign * (f - mu)).filter(|&d| d > reach));
            pts.sort_by(f64::total_cmp);
            pts.push(f64::INFINITY);
            total += quad::integrate(shoulder, &pts, side)?.value;
        }
    } else {
        // η_μ = 0: the mode at μ is undamped and contributes its full unit weight.
        total += 1.0;
        let qtol = qtol.with_abs(0.1 * tol);
        match band.profile {
            BandProfile::FlatInfiniteN => {
                let (lo, hi) = (features[0], features[2]);
                let mut pts = vec![lo];
                if mu > lo && mu < hi {
                    pts.push(mu);
                }
                pts.push(hi);
                total += quad::integrate(lorentz, &pts, qtol)?.value;
            }
            BandProfile::PowerLaw { .. } => {
                // Only reachable when η_μ underflows; the rest of the line still counts.
                let mut pts = vec![f64::NEG_INFINITY];
                pts.extend(features.iter().copied());
                pts.push(f64::INFINITY);
                total += quad::integrate(lorentz, &pts, qtol)?.value;
            }
        }
    }
    Ok(free_value(gamma) * total)
}

/// Closed form of `|g_μ|²` for the flat (`n → ∞`) band.
///
/// Inside the band every mode has half-width `η/2`; outside, modes are undamped
/// and contribute the delta term `γ/2π`.
pub fn analytic_flat_band(gamma: f64, eta: f64, delta: f64, mu: f64, center: f64) -> Result<f64, FormFactorError> {
    let x = mu - center;
    let lorentz_part = if eta == 0.0 {
        if x.abs() < delta {
            free_value(gamma)
        } else {
            0.0
        }
    } else {
        let b = eta / 2.0;
        gamma / (2.0 * PI * PI) * (((x + delta) / b).atan() - ((x - delta) / b).atan())
    };
    if x.abs() == delta {
        return Err(FormFactorError::BandEdge { mu, inside: lorentz_part, outside: lorentz_part + free_value(gamma) });
    }
    let delta_part = if x.abs() > delta { free_value(gamma) } else { 0.0 };
    Ok(lorentz_part + delta_part)
}

/// Leading far-field coefficient: `|g_μ|² - γ/2π → C / (μ - center)²`.
pub fn tail_coefficient(band: &DetectorBand, gamma: f64) -> f64 {
    free_value(gamma) * band.integrated_response()
}

/// `|g_μ|²` sampled on a sorted energy grid, with a cubic interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct FormFactorGrid {
    pub mu: Vec<f64>,
    pub g2: Vec<f64>,
    pub window: (f64, f64),
    pub quad_tol: f64,
    pub gamma: f64,
    pub band: DetectorBand,
    /// Energies where `|g_μ|²` jumps; the interpolant is split there.
    pub discontinuities: Vec<f64>,
    pieces: Vec<CubicSpline>,
}

/// Offset used to place knots on either side of a flat-band edge.
const EDGE_OFFSET: f64 = 1e-9;
/// Ratio of the geometric knot clustering at band edges.
const EDGE_CLUSTER_RATIO: f64 = 1.2;

impl FormFactorGrid {
    pub fn from_samples(
        mu: Vec<f64>,
        g2: Vec<f64>,
        gamma: f64,
        band: DetectorBand,
        quad_tol: f64,
        discontinuities: Vec<f64>,
    ) -> Self {
        assert_eq!(mu.len(), g2.len());
        let window = (mu[0], mu[mu.len() - 1]);
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut cuts: Vec<f64> = discontinuities.clone();
        cuts.push(f64::INFINITY);
        for cut in cuts {
            let end = start + mu[start..].partition_point(|&m| m < cut);
            if end - start >= 2 {
                pieces.push(CubicSpline::new(mu[start..end].to_vec(), g2[start..end].to_vec()));
            }
            start = end;
            if start >= mu.len() {
                break;
            }
        }
        Self { mu, g2, window, quad_tol, gamma, band, discontinuities, pieces }
    }

    pub fn free_value(&self) -> f64 {
        free_value(self.gamma)
    }

    /// Continuous pieces of the interpolant, left to right.
    pub fn pieces(&self) -> &[CubicSpline] {
        &self.pieces
    }

    /// Interpolated `|g_μ|²`; the free value outside the window.
    pub fn interpolate(&self, mu: f64) -> f64 {
        if mu < self.window.0 || mu > self.window.1 {
            return self.free_value();
        }
        let idx = self.pieces.partition_point(|p| p.hi() < mu).min(self.pieces.len() - 1);
        self.pieces[idx].eval(mu)
    }

    pub fn tail_coefficient(&self) -> f64 {
        tail_coefficient(&self.band, self.gamma)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mu,g2,g2_over_free")?;
        let free = self.free_value();
        for (m, g) in self.mu.iter().zip(&self.g2) {
            writeln!(w, "{m},{g},{}", g / free)?;
        }
        Ok(())
    }
}

/// Reads a `mu,g2,g2_over_free` table and checks it: energies strictly
/// increasing, `|g_μ|² ≥ 0`, and the ratio column consistent with `γ`.
pub fn read_form_factor_csv<R: std::io::BufRead>(r: R, gamma: f64) -> Result<(Vec<f64>, Vec<f64>), FormFactorError> {
    let bad = |m: String| FormFactorError::BadTable(m);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))?.map_err(|e| bad(e.to_string()))?;
    if header.trim() != "mu,g2,g2_over_free" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let free = free_value(gamma);
    let (mut mu, mut g2) = (Vec::new(), Vec::new());
    for line in lines {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{line:?}: {e}")))?;
        if v.len() != 3 {
            return Err(bad(format!("{line:?}: expected 3 columns")));
        }
        if !(v[1] >= 0.0) {
            return Err(bad(format!("negative form factor {} at μ = {}", v[1], v[0])));
        }
        if (v[2] * free - v[1]).abs() > 1e-12 * v[1].max(free) {
            return Err(bad(format!("ratio column {} disagrees with γ = {gamma} at μ = {}", v[2], v[0])));
        }
        if mu.last().is_some_and(|&last: &f64| v[0] <= last) {
            return Err(bad(format!("energies not increasing at μ = {}", v[0])));
        }
        mu.push(v[0]);
        g2.push(v[1]);
    }
    if mu.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok((mu, g2))
}

/// Knot positions: uniform core over the band, geometric clustering toward
/// both band edges, and geometrically widening spacing out to the window edges.
pub fn grid_knots(band: &DetectorBand, window: (f64, f64), n_points: usize) -> Vec<f64> {
    let c = band.center;
    let d = band.delta;
    let n_core = (n_points / 2).max(16);
    let n_outer = (n_points / 8).max(8);
    let core = 4.0 * d;
    let mut pts = Vec::with_capacity(n_points + 200);
    let core_lo = (c - core).max(window.0);
    let core_hi = (c + core).min(window.1);
    for i in 0..=n_core {
        pts.push(core_lo + (core_hi - core_lo) * i as f64 / n_core as f64);
    }
    let feature = if band.eta > 0.0 { d.min(band.eta / 2.0) } else { d };
    let h0 = 1e-3 * feature;
    for edge in [c - d, c + d] {
        let mut off = h0;
        while off < d {
            pts.push(edge - off);
            pts.push(edge + off);
            off *= EDGE_CLUSTER_RATIO;
        }
    }
    for (from, to) in [(c + core, window.1), (c - core, window.0)] {
        let span = (to - c).abs();
        let start = (from - c).abs();
        if span <= start {
            continue;
        }
        let ratio = (span / start).powf(1.0 / n_outer as f64);
        let mut r = start;
        for _ in 0..n_outer {
            r *= ratio;
            pts.push(c + (to - c).signum() * r.min(span));
        }
    }
    pts.push(window.0);
    pts.push(window.1);
    if band.profile == BandProfile::FlatInfiniteN {
        let eps = EDGE_OFFSET * d;
        pts.retain(|&m| (m - (c - d)).abs() > eps && (m - (c + d)).abs() > eps);
        for edge in [c - d, c + d] {
            pts.push(edge - eps);
            pts.push(edge + eps);
        }
    }
    pts.retain(|&m| m >= window.0 && m <= window.1);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    pts
}

/// Dense `|g_μ|²` grid over `window` with about `n_points` knots (plus edge
/// clustering). Points are evaluated in parallel; results do not depend on the
/// thread count.
pub fn form_factor_grid(
    band: &DetectorBand,
    gamma: f64,
    window: (f64, f64),
    n_points: usize,
    tol: f64,
) -> Result<FormFactorGrid, FormFactorError> {
    let need = 5.0 * band.delta.max(band.eta);
    if window.0 > band.center - need || window.1 < band.center + need {
        return Err(FormFactorError::WindowTooNarrow {
            lo: window.0,
            hi: window.1,
            reason: format!("must cover the band center ± {need}"),
        });
    }
    let mu = grid_knots(band, window, n_points);
    let g2 = mu.par_iter().map(|&m| renormalized_form_factor(band, gamma, m, tol)).collect::<Result<Vec<_>, _>>()?;
    let discontinuities = match band.profile {
        BandProfile::FlatInfiniteN if band.eta > 0.0 => {
            vec![band.center - band.delta, band.center + band.delta]
        }
        _ => Vec::new(),
    };
    Ok(FormFactorGrid::from_samples(mu, g2, gamma, *band, tol, discontinuities))
}

/// Window `center ± half_width` in the form accepted by [`form_factor_grid`].
pub fn symmetric_window(band: &DetectorBand, half_width: f64) -> (f64, f64) {
    (band.center - half_width, band.center + half_width)
}

/// Parts of the sum-rule check `∫ (|g_μ|² − γ/2π) dμ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumRuleDefect {
    /// Integral of the deviation across the grid window.
    pub window_integral: f64,
    /// Leading-order contribution of the `C/(μ - center)²` tails beyond the window.
    pub tail_correction: f64,
    /// Full-line estimate: `window_integral + tail_correction`.
    pub residual: f64,
}

/// Relative size of `|g2 − γ/2π|` tolerated at the window edges.
pub const SUM_RULE_EDGE_TOL: f64 = 1e-3;

pub fn sum_rule_defect(grid: &FormFactorGrid) -> Result<SumRuleDefect, FormFactorError> {
    let free = grid.free_value();
    let (lo, hi) = grid.window;
    for &edge in [grid.g2[0], grid.g2[grid.g2.len() - 1]].iter() {
        if (edge - free).abs() >= SUM_RULE_EDGE_TOL * free {
            return Err(FormFactorError::WindowTooNarrow {
                lo,
                hi,
                reason: format!("edge deviation {:e} is not below {SUM_RULE_EDGE_TOL}·γ/2π", edge - free),
            });
        }
    }
    if grid.band.eta == 0.0 {
        return Ok(SumRuleDefect { window_integral: 0.0, tail_correction: 0.0, residual: 0.0 });
    }
    let mut window_integral = 0.0;
    for piece in grid.pieces() {
        window_integral += piece.integral() - free * (piece.hi() - piece.lo());
    }
    let c = grid.band.center;
    let tail_correction = grid.tail_coefficient() * (1.0 / (hi - c) + 1.0 / (c - lo));
    Ok(SumRuleDefect { window_integral, tail_correction, residual: window_integral + tail_correction })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-11;

    fn flat(eta: f64, delta: f64) -> DetectorBand {
        DetectorBand::flat(eta, delta, 0.0)
    }

    #[test]
    fn measurement_free_value() {
        let band = DetectorBand::power_law(0.0, 3.0, 6, 0.0);
        assert_eq!(renormalized_form_factor(&band, 2.0, 0.7, TOL).unwrap(), 1.0 / PI);
    }

    #[test]
    fn flat_band_quadrature_matches_closed_form() {
        for &(eta, delta) in &[(20.0, 1.0), (2.0, 1.0), (0.2, 1.0), (7.0, 3.0)] {
            let band = flat(eta, delta);
            for &mu in &[0.0, 0.3, -0.9, 0.999, 1.001, 2.5, -40.0, 300.0] {
                let mu = mu * delta;
                let q = renormalized_form_factor(&band, 1.0, mu, TOL).unwrap();
                let a = analytic_flat_band(1.0, eta, delta, mu, 0.0).unwrap();
                assert!((q - a).abs() < 1e-9 * a, "eta={eta} mu={mu}: {q} vs {a}");
            }
        }
    }

    #[test]
    fn analytic_center_value() {
        for r in [0.1, 1.0, 10.0] {
            let eta = 2.0 / r;
            let v = analytic_flat_band(1.0, eta, 1.0, 0.0, 0.0).unwrap();
            assert!((v - r.atan() / (PI * PI)).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_half_suppression_at_eta_two_delta() {
        let v = analytic_flat_band(1.0, 6.0, 3.0, 0.0, 0.0).unwrap();
        assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn analytic_free_limit() {
        let v = analytic_flat_band(1.0, 1e-12, 1.0, 0.0, 0.0).unwrap();
        assert!((v - free_value(1.0)).abs() < 1e-12);
        let v0 = analytic_flat_band(1.0, 0.0, 1.0, 0.2, 0.0).unwrap();
        assert_eq!(v0, free_value(1.0));
    }

    #[test]
    fn analytic_band_edge_is_two_valued() {
        match analytic_flat_band(1.0, 1.0, 1.0, 1.0, 0.0) {
            Err(FormFactorError::BandEdge { inside, outside, .. }) => {
                assert!((outside - inside - free_value(1.0)).abs() < 1e-15);
            }
            other => panic!("expected BandEdge, got {other:?}"),
        }
    }

    #[test]
    fn flat_band_is_monotone_in_eta_inside_band() {
        let mut prev = 0.0;
        for eta in [100.0, 10.0, 1.0, 0.1, 0.01] {
            let v = analytic_flat_band(1.0, eta, 1.0, 0.4, 0.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(prev < free_value(1.0));
    }

    #[test]
    fn far_field_tail_matches_coefficient() {
        let band = DetectorBand::power_law(2.0 * PI, 1.0, 6, 0.0);
        let x = 200.0;
        let v = renormalized_form_factor(&band, 1.0, x, 1e-12).unwrap() - free_value(1.0);
        let c = tail_coefficient(&band, 1.0) / (x * x);
        assert!((v - c).abs() < 1e-3 * c, "{v} vs {c}");
    }

    #[test]
    fn underresolved_budget_reports_failure() {
        let band = DetectorBand::power_law(1.0, 1.0, 6, 0.0);
        assert_eq!(renormalized_form_factor(&band, 1.0, 0.0, 0.0), Err(FormFactorError::BadTolerance));
    }

    #[test]
    fn grid_rejects_narrow_window() {
        let band = DetectorBand::power_law(1.0, 2.0, 6, 0.0);
        let e = form_factor_grid(&band, 1.0, (-5.0, 5.0), 100, 1e-8).unwrap_err();
        assert!(matches!(e, FormFactorError::WindowTooNarrow { .. }));
    }

    #[test]
    fn flat_band_grid_interpolant_respects_jumps() {
        let band = flat(0.5, 1.0);
        let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 20.0), 400, 1e-10).unwrap();
        assert_eq!(grid.pieces().len(), 3);
        for mu in [-1.5, -0.7, 0.0, 0.95, 1.05, 7.0] {
            let a = analytic_flat_band(1.0, 0.5, 1.0, mu, 0.0).unwrap();
            assert!((grid.interpolate(mu) - a).abs() < 1e-4 * a, "mu={mu}");
        }
    }

    #[test]
    fn measurement_free_grid_is_flat_and_defect_free() {
        let band = DetectorBand::power_law(0.0, 1.0, 6, 0.0);
        let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 50.0), 200, 1e-10).unwrap();
        assert!(grid.g2.iter().all(|&g| g == free_value(1.0)));
        let d = sum_rule_defect(&grid).unwrap();
        assert_eq!(d.residual, 0.0);
    }

    #[test]
    fn csv_has_header_and_ratio_column() {
        let band = DetectorBand::power_law(1.0, 1.0, 6, 0.0);
        let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 10.0), 50, 1e-8).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("mu,g2,g2_over_free"));
        assert_eq!(lines.count(), grid.mu.len());
    }
}
