//! Resolvent route to the atomic survival amplitude, built only on the
//! renormalized form factor:
//!
//! ```text
//! Σ(E + i0) = ∫ dμ |g_μ|² / (E - μ + i0)
//! A(E)      = |g_E|² / ((E - Ω - Re Σ(E))² + (π |g_E|²)²)
//! f(t)      = ∫ dE A(E) exp(-iEt)
//! ```
//!
//! plus the lowest-order perturbative decay law and the two stage rates.
//!
//! Outside the grid window the form factor is continued analytically as
//! `γ/2π + C/(μ - center)²`, so `Σ` is the full-line self-energy: with no
//! detector it is exactly `-iγ/2`, whatever the window. The Fourier transform
//! subtracts the free Lorentzian (transformed exactly) and integrates only the
//! remainder, which falls off as `1/E⁴`.

use std::f64::consts::PI;
use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::formfactor::{form_factor_grid, renormalized_form_factor, FormFactorError, FormFactorGrid};
use crate::model::ValidatedModel;
use crate::quad::gauss_legendre;
use crate::spline::Piece;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error(transparent)]
    FormFactor(#[from] FormFactorError),
    #[error("E = {e} is within {spacings} grid spacings of the window edge")]
    EdgeProximity { e: f64, spacings: f64 },
    #[error("spectral window [{lo}, {hi}] is too narrow: {reason}")]
    WindowTooNarrow { lo: f64, hi: f64, reason: String },
    #[error("t = {t} exceeds the horizon {horizon} resolved by the energy grid")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("t = {t} needs {needed} sub-intervals, above the budget {budget}")]
    UnderResolvedOscillation { t: f64, needed: usize, budget: usize },
    #[error("malformed spectrum: {0}")]
    BadSpectrum(String),
}

/// Closest approach to a window edge allowed in [`self_energy`], in units of
/// the local knot spacing.
pub const EDGE_SPACINGS: f64 = 5.0;

/// Pieces closer to `E` than this many of their own lengths are integrated
/// in closed form; the rest by Gauss–Legendre.
const NEAR_PIECES: f64 = 1.0;
const GL_ORDER: usize = 8;

/// `∫_{x0}^{x1} (P(μ) - g) / (E - μ) dμ` in closed form.
fn piece_pv_exact(p: &Piece, e: f64, g: f64) -> f64 {
    // Coefficients of P in powers of (μ - E).
    let s = e - p.x0;
    let c = p.c;
    let d0 = c[0] + s * (c[1] + s * (c[2] + s * c[3]));
    let d1 = c[1] + s * (2.0 * c[2] + 3.0 * s * c[3]);
    let d2 = c[2] + 3.0 * s * c[3];
    let d3 = c[3];
    let (u0, u1) = (p.x0 - e, p.x1 - e);
    let poly = d1 * (u1 - u0) + d2 * (u1 * u1 - u0 * u0) / 2.0 + d3 * (u1 * u1 * u1 - u0 * u0 * u0) / 3.0;
    let log = if d0 == g || u0 == 0.0 || u1 == 0.0 { 0.0 } else { (d0 - g) * (u0 / u1).abs().ln() };
    -poly + log
}

fn piece_pv_gauss(p: &Piece, e: f64, g: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let half = 0.5 * (p.x1 - p.x0);
    let mid = 0.5 * (p.x1 + p.x0);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let mu = mid + half * x;
        sum += w * (p.eval(mu) - g) / (e - mu);
    }
    sum * half
}

/// `∫_{|μ - c| > L} C / (μ - c)² / (E - μ) dμ` for the two tails beyond the
/// window, with `U = hi - c` and `L = c - lo`.
fn tail_pv(coeff: f64, e: f64, upper: f64, lower: f64) -> f64 {
    if coeff == 0.0 {
        return 0.0;
    }
    // Right: ∫_U^∞ du / (u² (e - u)); left: ∫_L^∞ dv / (v² (v + e)).
    let right = if (e / upper).abs() < 0.25 {
        -series(e / upper) / (upper * upper)
    } else {
        1.0 / (e * upper) - (upper / (upper - e)).ln() / (e * e)
    };
    let left = if (e / lower).abs() < 0.25 {
        series(-e / lower) / (lower * lower)
    } else {
        1.0 / (e * lower) - ((lower + e) / lower).ln() / (e * e)
    };
    coeff * (right + left)
}

/// `Σ_k r^k / (k + 2)`.
fn series(r: f64) -> f64 {
    let mut sum = 0.0;
    let mut p = 1.0;
    for k in 0..40 {
        sum += p / (k + 2) as f64;
        p *= r;
    }
    sum
}

/// Full-line self-energy `Σ(E + i0)`; `E` must sit inside the grid window.
pub fn self_energy(grid: &FormFactorGrid, e: f64) -> Result<Complex64, SpectralError> {
    let (lo, hi) = grid.window;
    let n = grid.mu.len();
    let (h_lo, h_hi) = (grid.mu[1] - grid.mu[0], grid.mu[n - 1] - grid.mu[n - 2]);
    let spacings = ((e - lo) / h_lo).min((hi - e) / h_hi);
    if !(spacings >= EDGE_SPACINGS) {
        return Err(SpectralError::EdgeProximity { e, spacings });
    }
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    Ok(self_energy_with(grid, e, &nodes, &weights))
}

fn self_energy_with(grid: &FormFactorGrid, e: f64, nodes: &[f64], weights: &[f64]) -> Complex64 {
    let (lo, hi) = grid.window;
    let g = grid.interpolate(e);
    let free = grid.free_value();
    let mut re = 0.0;
    for spline in grid.pieces() {
        for p in spline.pieces() {
            let len = p.x1 - p.x0;
            let dist = if e < p.x0 {
                p.x0 - e
            } else if e > p.x1 {
                e - p.x1
            } else {
                0.0
            };
            re += if dist < NEAR_PIECES * len {
                piece_pv_exact(&p, e, g)
            } else {
                piece_pv_gauss(&p, e, g, nodes, weights)
            };
        }
    }
    // Subtracted constant over the window, and the free background outside it
    // (whose full-line principal value vanishes).
    re += (g - free) * ((e - lo) / (hi - e)).ln();
    let c = grid.band.center;
    re += tail_pv(grid.tail_coefficient(), e - c, hi - c, c - lo);
    Complex64::new(re, -PI * g)
}

/// Spectral density of the atomic level on a nonuniform energy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFunction {
    /// Energies `E`.
    pub energy: Vec<f64>,
    /// `A(E)`, in inverse energy units.
    pub density: Vec<f64>,
    /// `|1 - ∫ A dE|` over the whole line.
    pub normalization_defect: f64,
    pub omega: f64,
    pub gamma: f64,
    /// `A - L` with `L` the free Lorentzian of width `γ` at `Ω`.
    remainder: Vec<f64>,
    horizon: f64,
}

pub const SPECTRUM_HEADER: &str = "E,A";

/// Free Lorentzian `(γ/2π) / ((E - Ω)² + γ²/4)`.
fn free_line(gamma: f64, x: f64) -> f64 {
    gamma / (2.0 * PI) / (x * x + gamma * gamma / 4.0)
}

/// Fraction of the peak above which the energy grid must resolve `exp(-iEt)`.
const RESOLVED_FRACTION: f64 = 1e-3;
/// Largest allowed `A(edge) / max A`.
pub const EDGE_DENSITY_TOL: f64 = 1e-6;

/// Energy grid: knots of the form-factor grid inside `window`, plus points
/// clustered geometrically around the line at `Ω`, about `n_points` of them.
fn energy_grid(grid: &FormFactorGrid, omega: f64, width: f64, window: (f64, f64), n_points: usize) -> Vec<f64> {
    let span = (window.1 - omega).max(omega - window.0);
    let c = (2.0 + 2.0 * (span / width).max(1.0).ln()) / n_points.max(16) as f64;
    let mut xs = Vec::new();
    let mut x = 0.0;
    while x < span {
        xs.push(x);
        x += c * x.max(width);
    }
    let mut e: Vec<f64> = xs
        .iter()
        .flat_map(|&x| [omega - x, omega + x])
        .chain(grid.mu.iter().copied())
        .filter(|&v| v >= window.0 && v <= window.1)
        .collect();
    e.push(window.0);
    e.push(window.1);
    e.sort_by(f64::total_cmp);
    e.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    e
}

/// `A(E)` over `window` (which must lie inside the grid window, away from its
/// edges) with about `n_points` energies.
pub fn spectral_function(
    grid: &FormFactorGrid,
    omega: f64,
    window: (f64, f64),
    n_points: usize,
) -> Result<SpectralFunction, SpectralError> {
    let gamma = grid.gamma;
    let too_narrow = |reason: String| SpectralError::WindowTooNarrow { lo: window.0, hi: window.1, reason };
    if !(window.0 < omega && omega < window.1) {
        return Err(too_narrow(format!("does not contain Ω = {omega}")));
    }
    let g_line = grid.interpolate(omega);
    let width = gamma.min(2.0 * PI * g_line).max(1e-3 * gamma);
    let energy = energy_grid(grid, omega, width, window, n_points);
    for &edge in &[energy[0], energy[energy.len() - 1]] {
        self_energy(grid, edge)?;
    }
    let (nodes, weights) = gauss_legendre(GL_ORDER);
    let density: Vec<f64> = energy
        .par_iter()
        .map(|&e| {
            let sigma = self_energy_with(grid, e, &nodes, &weights);
            let g = -sigma.im / PI;
            let d = e - omega - sigma.re;
            g / (d * d + sigma.im * sigma.im)
        })
        .collect();
    let peak = density.iter().copied().fold(0.0, f64::max);
    let edge = density[0].max(density[density.len() - 1]);
    if edge >= EDGE_DENSITY_TOL * peak {
        return Err(too_narrow(format!("A at the edges is {:e} of its peak", edge / peak)));
    }
    let remainder: Vec<f64> = energy.iter().zip(&density).map(|(&e, &a)| a - free_line(gamma, e - omega)).collect();
    let mut integral = 0.0;
    for i in 1..energy.len() {
        integral += 0.5 * (energy[i] - energy[i - 1]) * (remainder[i] + remainder[i - 1]);
    }
    let mut widest: f64 = 0.0;
    for i in 1..energy.len() {
        if density[i].max(density[i - 1]) > RESOLVED_FRACTION * peak {
            widest = widest.max(energy[i] - energy[i - 1]);
        }
    }
    Ok(SpectralFunction {
        energy,
        density,
        normalization_defect: integral.abs(),
        omega,
        gamma,
        remainder,
        horizon: 2.0 * PI / widest / 4.0,
    })
}

/// `∫_0^1 e^{-iθu} du` and `∫_0^1 u e^{-iθu} du`.
fn filon_moments(theta: f64) -> (Complex64, Complex64) {
    let z = Complex64::new(0.0, -theta);
    if theta.abs() < 1.0 {
        let mut i0 = Complex64::new(0.0, 0.0);
        let mut i1 = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 0..24 {
            i0 += term / (k + 1) as f64;
            i1 += term / (k + 2) as f64;
            term = term * z / (k + 1) as f64;
        }
        (i0, i1)
    } else {
        let ez = z.exp();
        let i0 = (ez - 1.0) / z;
        let i1 = (ez - i0) / z;
        (i0, i1)
    }
}

impl SpectralFunction {
    /// Largest time the energy grid resolves.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{SPECTRUM_HEADER}")?;
        for (e, a) in self.energy.iter().zip(&self.density) {
            writeln!(w, "{e:.15e},{a:.15e}")?;
        }
        Ok(())
    }

    /// Reads `E,A` rows back; `γ` and `Ω` are not part of the file.
    pub fn read_csv<R: BufRead>(r: R, gamma: f64, omega: f64) -> Result<Self, SpectralError> {
        let bad = |m: String| SpectralError::BadSpectrum(m);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?.map_err(|e| bad(e.to_string()))?;
        if header.trim() != SPECTRUM_HEADER {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let (mut energy, mut density) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',').map(|x| x.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(e)), Some(Ok(a)), None) => {
                    energy.push(e);
                    density.push(a);
                }
                _ => return Err(bad(format!("{line:?}: expected two numbers"))),
            }
        }
        if energy.len() < 2 {
            return Err(bad("fewer than two rows".into()));
        }
        let remainder: Vec<f64> = energy.iter().zip(&density).map(|(&e, &a)| a - free_line(gamma, e - omega)).collect();
        let mut integral = 0.0;
        for i in 1..energy.len() {
            integral += 0.5 * (energy[i] - energy[i - 1]) * (remainder[i] + remainder[i - 1]);
        }
        Ok(Self {
            energy,
            density,
            normalization_defect: integral.abs(),
            omega,
            gamma,
            remainder,
            horizon: f64::INFINITY,
        })
    }

    /// `A ≥ 0`, sorted energies, and the normalization budget.
    pub fn check_invariants(&self, tol: f64) -> Result<(), SpectralError> {
        let bad = |m: String| Err(SpectralError::BadSpectrum(m));
        if !self.energy.windows(2).all(|w| w[0] < w[1]) {
            return bad("energies not increasing".into());
        }
        if let Some((e, a)) = self.energy.iter().zip(&self.density).find(|(_, a)| !(**a >= 0.0)) {
            return bad(format!("A({e}) = {a} is negative"));
        }
        if !(self.normalization_defect < tol) {
            return bad(format!("normalization defect {:e} above {tol:e}", self.normalization_defect));
        }
        Ok(())
    }
}

/// `f(t) = ∫ A(E) exp(-iEt) dE`: the free Lorentzian part exactly, the
/// remainder by piecewise-linear Filon quadrature.
pub fn survival_amplitude_spectral(sf: &SpectralFunction, t: f64) -> Result<Complex64, SpectralError> {
    if t > sf.horizon {
        return Err(SpectralError::HorizonExceeded { t, horizon: sf.horizon });
    }
    let mut f = Complex64::from_polar((-sf.gamma * t / 2.0).exp(), -sf.omega * t);
    let (e, y) = (&sf.energy, &sf.remainder);
    for i in 1..e.len() {
        let h = e[i] - e[i - 1];
        let (i0, i1) = filon_moments(t * h);
        let phase = Complex64::from_polar(h, -e[i - 1] * t);
        f += phase * ((i0 - i1) * y[i - 1] + i1 * y[i]);
    }
    Ok(f)
}

/// `s(t) = |f(t)|²` at every time, in parallel.
pub fn survival_probability_spectral(sf: &SpectralFunction, times: &[f64]) -> Result<Vec<f64>, SpectralError> {
    times.par_iter().map(|&t| survival_amplitude_spectral(sf, t).map(|f| f.norm_sqr())).collect()
}

/// Largest number of sub-intervals [`perturbative_decay`] may use.
pub const OSCILLATION_BUDGET: usize = 20_000_000;
/// Sub-intervals per period of `sin²((μ - Ω) t / 2)`.
const POINTS_PER_PERIOD: f64 = 8.0;

/// `sin²(x t / 2) / (x / 2)²`.
fn sinc_kernel(x: f64, t: f64) -> f64 {
    let u = 0.5 * x * t;
    if u.abs() < 1e-4 {
        t * t * (1.0 - u * u / 3.0)
    } else {
        let s = u.sin();
        s * s / (0.5 * x * 0.5 * x)
    }
}

/// Lowest-order decay probability
/// `1 - s(t) = ∫ dμ |g_μ|² sin²((μ - Ω) t / 2) / ((μ - Ω) / 2)²`.
///
/// The free value integrates to `γ t` exactly over the whole line; only the
/// deviation from it is integrated over the grid window, on sub-intervals of at
/// most an eighth of the oscillation period. The `C/μ²` tails beyond the window
/// contribute below `4C/(3W³)` and are dropped.
pub fn perturbative_decay(grid: &FormFactorGrid, omega: f64, t: f64) -> Result<f64, SpectralError> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let free = grid.free_value();
    let max_len = 2.0 * PI / t / POINTS_PER_PERIOD;
    let mut needed = 0usize;
    for spline in grid.pieces() {
        for p in spline.pieces() {
            needed += ((p.x1 - p.x0) / max_len).ceil() as usize;
        }
    }
    if needed > OSCILLATION_BUDGET {
        return Err(SpectralError::UnderResolvedOscillation { t, needed, budget: OSCILLATION_BUDGET });
    }
    let (nodes, weights) = gauss_legendre(4);
    let mut pieces = Vec::new();
    for spline in grid.pieces() {
        pieces.extend(spline.pieces());
    }
    let parts: Vec<f64> = pieces
        .par_iter()
        .map(|p| {
            let m = ((p.x1 - p.x0) / max_len).ceil().max(1.0) as usize;
            let h = (p.x1 - p.x0) / m as f64;
            let mut sum = 0.0;
            for k in 0..m {
                let mid = p.x0 + (k as f64 + 0.5) * h;
                for (x, w) in nodes.iter().zip(&weights) {
                    let mu = mid + 0.5 * h * x;
                    sum += w * (p.eval(mu) - free) * sinc_kernel(mu - omega, t);
                }
            }
            sum * 0.5 * h
        })
        .collect();
    Ok(grid.gamma * t + parts.iter().sum::<f64>())
}

pub const PERTURBATIVE_HEADER: &str = "t,one_minus_s_pert";

pub fn write_perturbative_csv<W: Write>(mut w: W, rows: &[(f64, f64)]) -> io::Result<()> {
    writeln!(w, "{PERTURBATIVE_HEADER}")?;
    for (t, v) in rows {
        writeln!(w, "{t:.12e},{v:.12e}")?;
    }
    Ok(())
}

/// Reads a perturbative table back; rejects decreasing times and negative values.
pub fn read_perturbative_csv<R: BufRead>(r: R) -> Result<Vec<(f64, f64)>, SpectralError> {
    let bad = |m: String| SpectralError::BadSpectrum(m);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))?.map_err(|e| bad(e.to_string()))?;
    if header.trim() != PERTURBATIVE_HEADER {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for line in lines {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',').map(|x| x.trim().parse::<f64>());
        let (t, d) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(t)), Some(Ok(d)), None) => (t, d),
            _ => return Err(bad(format!("{line:?}: expected two numbers"))),
        };
        if !(d >= -1e-12) {
            return Err(bad(format!("negative decay {d} at t = {t}")));
        }
        if rows.last().is_some_and(|&(last, _)| t <= last) {
            return Err(bad(format!("times not increasing at t = {t}")));
        }
        rows.push((t, d));
    }
    Ok(rows)
}

/// `(γ, 2π |g_Ω|²)`: the decay rate before and after the detector responds.
pub fn stage_rates(p: &ValidatedModel) -> Result<(f64, f64), SpectralError> {
    let g2 = renormalized_form_factor(&p.band, p.gamma, p.omega, p.quad_tol)?;
    Ok((p.gamma, 2.0 * PI * g2))
}

/// Form-factor window half-width, in units of `max(Δ, η)`.
pub const WINDOW_FACTOR: f64 = 50.0;
/// Minimum form-factor window half-width in units of `γ`.
pub const MIN_WINDOW: f64 = 1000.0;
pub const DEFAULT_GRID_POINTS: usize = 1600;
pub const DEFAULT_SPECTRAL_POINTS: usize = 6000;

/// Form-factor window for the spectral route: the band center and `Ω` with a
/// margin of `max(50 max(Δ, η), 1000 γ)` on either side.
pub fn spectral_window(p: &ValidatedModel) -> (f64, f64) {
    let w = (WINDOW_FACTOR * p.band.delta.max(p.band.eta)).max(MIN_WINDOW * p.gamma);
    (p.band.center.min(p.omega) - w, p.band.center.max(p.omega) + w)
}

/// Form-factor grid and spectral function at the default resolution.
pub fn spectral_pipeline(p: &ValidatedModel) -> Result<(FormFactorGrid, SpectralFunction), SpectralError> {
    let window = spectral_window(p);
    let grid = form_factor_grid(&p.band, p.gamma, window, DEFAULT_GRID_POINTS, p.quad_tol)?;
    let n = grid.mu.len();
    let margin = (EDGE_SPACINGS + 1.0) * (grid.mu[1] - grid.mu[0]).max(grid.mu[n - 1] - grid.mu[n - 2]);
    let sf = spectral_function(&grid, p.omega, (window.0 + margin, window.1 - margin), DEFAULT_SPECTRAL_POINTS)?;
    Ok((grid, sf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filon_moments_match_across_branches() {
        for theta in [0.999f64, 1.001, -0.999] {
            let (a0, a1) = filon_moments(theta);
            let z = Complex64::new(0.0, -theta);
            let ez = z.exp();
            let c0 = (ez - 1.0) / z;
            let c1 = (ez - c0) / z;
            assert!((a0 - c0).norm() < 1e-13 && (a1 - c1).norm() < 1e-13);
        }
    }

    #[test]
    fn exact_piece_matches_gauss_away_from_pole() {
        let p = Piece { x0: 1.0, x1: 1.5, c: [0.3, -0.2, 0.7, 0.1] };
        let (n, w) = gauss_legendre(20);
        for e in [0.2, 2.3, -4.0] {
            let a = piece_pv_exact(&p, e, 0.25);
            let b = piece_pv_gauss(&p, e, 0.25, &n, &w);
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn tail_series_matches_closed_form() {
        let (u, l) = (50.0, 70.0);
        for e in [-12.4f64, -12.6, 12.4, 12.6, 0.0] {
            let closed = |e: f64| {
                let right = 1.0 / (e * u) - (u / (u - e)).ln() / (e * e);
                let left = 1.0 / (e * l) - ((l + e) / l).ln() / (e * e);
                right + left
            };
            let v = tail_pv(1.0, e, u, l);
            let reference = if e == 0.0 { -0.5 / (u * u) + 0.5 / (l * l) } else { closed(e) };
            assert!((v - reference).abs() < 1e-12 * reference.abs().max(1e-6), "{e}: {v} {reference}");
        }
    }

    #[test]
    fn sinc_kernel_is_continuous_at_zero() {
        let t = 3.0;
        assert!((sinc_kernel(1e-5, t) - sinc_kernel(0.0, t)).abs() < 1e-9);
        // Either side of the series branch at u = xt/2 = 1e-4.
        let at = |u: f64| sinc_kernel(2.0 * u / t, t);
        assert!((at(1e-4 * (1.0 - 1e-9)) - at(1e-4 * (1.0 + 1e-9))).abs() < 1e-12 * t * t);
    }
}
