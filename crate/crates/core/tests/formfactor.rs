use std::f64::consts::PI;

use zeno_core::formfactor::{
    analytic_flat_band, form_factor_grid, free_value, renormalized_form_factor, sum_rule_defect, symmetric_window,
};
use zeno_core::model::DetectorBand;

/// Brute-force trapezoid over a wide uniform k-grid, with the k^-8 far tails
/// added in closed form. Shares nothing with the adaptive route.
fn trapezoid_oracle(eta: f64, delta: f64, n: i32, mu: f64, step: f64, reach: f64) -> f64 {
    let peak = eta / (2.0 * PI);
    let density = |k: f64| peak / (1.0 + (k / delta).powi(n));
    let integrand = |k: f64| {
        let e = density(k);
        let d = mu - k;
        e / (d * d + PI * PI * e * e) / (2.0 * PI)
    };
    let steps = (2.0 * reach / step).round() as usize;
    let h = 2.0 * reach / steps as f64;
    // Kahan-compensated so that roundoff stays below the discretization error.
    let mut sum = 0.5 * (integrand(mu - reach) + integrand(mu + reach));
    let mut carry = 0.0;
    for i in 1..steps {
        let y = integrand(mu - reach + i as f64 * h) - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    // Beyond the reach (band centered at 0): integrand ≈ peak·delta^n / (2π k^(n+2)).
    let tail = 2.0 * peak * delta.powi(n) / (2.0 * PI * (n + 1) as f64 * reach.powi(n + 1));
    sum * h + tail
}

/// |g_Ω|² for n = 6, η/2πΔ = 1, γ = Δ = 1, frozen from `trapezoid_oracle`
/// at step 1e-4 over ±40Δ.
const G2_CENTER_N6_RATIO1: f64 = 0.052_819_008_194_262;

#[test]
fn trapezoid_oracle_reproduces_frozen_constant() {
    let v = trapezoid_oracle(2.0 * PI, 1.0, 6, 0.0, 1e-4, 40.0);
    assert!((v - G2_CENTER_N6_RATIO1).abs() < 1e-11 * G2_CENTER_N6_RATIO1, "{v:.15}");
}

#[test]
fn adaptive_quadrature_matches_oracle_constant() {
    let band = DetectorBand::power_law(2.0 * PI, 1.0, 6, 0.0);
    let v = renormalized_form_factor(&band, 1.0, 0.0, 1e-10).unwrap();
    assert!((v - G2_CENTER_N6_RATIO1).abs() < 1e-9 * G2_CENTER_N6_RATIO1, "{v:.15}");
}

#[test]
fn adaptive_quadrature_matches_oracle_off_center() {
    let band = DetectorBand::power_law(2.0 * PI * 0.1, 1.0, 6, 0.0);
    for mu in [0.5, 1.0, 1.7, 3.0] {
        let v = renormalized_form_factor(&band, 1.0, mu, 1e-11).unwrap();
        let o = trapezoid_oracle(2.0 * PI * 0.1, 1.0, 6, mu, 1e-5, 40.0);
        assert!((v - o).abs() < 1e-8 * o, "mu={mu}: {v} vs {o}");
    }
}

#[test]
fn arctan_limit_at_line_center() {
    for ratio in [0.1, 1.0, 10.0] {
        let delta = 3.0;
        let eta = 2.0 * delta / ratio;
        let band = DetectorBand::flat(eta, delta, 1.5);
        let q = renormalized_form_factor(&band, 1.0, 1.5, 1e-12).unwrap();
        let closed = ratio.atan() / (PI * PI);
        assert!((q - closed).abs() < 1e-6 * closed);
    }
}

fn fig2_band(ratio: f64) -> DetectorBand {
    let delta = 100.0 / (2.0 * PI);
    DetectorBand::power_law(ratio * 2.0 * PI * delta, delta, 6, 0.0)
}

#[test]
fn fig2_shapes() {
    let free = free_value(1.0);
    let mut centers = Vec::new();
    for ratio in [0.01, 0.1, 1.0] {
        let band = fig2_band(ratio);
        let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 50.0 * band.delta), 800, 1e-10).unwrap();
        assert!(grid.g2.iter().all(|&g| g > 0.0));
        let center = grid.interpolate(0.0);
        assert!(center < free);
        let overshoot = grid
            .mu
            .iter()
            .zip(&grid.g2)
            .filter(|(m, _)| m.abs() > band.delta && m.abs() < 3.0 * band.delta)
            .map(|(_, g)| *g)
            .fold(0.0, f64::max);
        assert!(overshoot > free, "ratio {ratio}");
        let edges = [grid.g2[0], *grid.g2.last().unwrap()];
        for e in edges {
            assert!((e - free).abs() < 1e-3 * free);
        }
        centers.push(center);
    }
    // Dip deepens with η/2πΔ; shallow for 0.01, deep for 1.
    assert!(centers[0] > 0.95 * free);
    assert!(centers[0] > centers[1] && centers[1] > centers[2]);
    assert!(centers[2] < 0.5 * free);
}

#[test]
fn sum_rule_defect_on_fig2_sets() {
    for ratio in [0.01, 0.1, 1.0] {
        let band = fig2_band(ratio);
        let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 50.0 * band.delta), 800, 1e-10).unwrap();
        let d = sum_rule_defect(&grid).unwrap();
        eprintln!("ratio {ratio}: {d:?}");
        assert!(d.residual.abs() < 1e-3, "ratio {ratio}: {d:?}");
    }
}

#[test]
fn window_part_of_defect_shrinks_like_inverse_window() {
    let band = fig2_band(1.0);
    let mut prev = None;
    for w in [50.0, 100.0, 200.0, 400.0] {
        let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, w * band.delta), 800, 1e-10).unwrap();
        let d = sum_rule_defect(&grid).unwrap();
        if let Some(p) = prev {
            let shrink = p / d.window_integral.abs();
            assert!(shrink >= 1.9, "window {w}: ratio {shrink}");
        }
        prev = Some(d.window_integral.abs());
    }
}

/// ∫ of the flat-band closed form over [c - w, c + w], minus the free value,
/// done by hand: ∫ atan(u/b) du = u·atan(u/b) − (b/2)·ln(u² + b²).
fn flat_band_window_deviation(eta: f64, delta: f64, w: f64) -> f64 {
    let b = eta / 2.0;
    let anti = |u: f64| u * (u / b).atan() - 0.5 * b * (u * u + b * b).ln();
    let lorentz = (anti(w + delta) - anti(-w + delta)) - (anti(w - delta) - anti(-w - delta));
    1.0 / (2.0 * PI * PI) * lorentz + free_value(1.0) * (2.0 * w - 2.0 * delta) - free_value(1.0) * 2.0 * w
}

#[test]
fn flat_band_sum_rule_closes_analytically() {
    let (eta, delta) = (1.0, 2.0);
    let mut prev = f64::INFINITY;
    for w in [20.0, 200.0, 2000.0, 20000.0] {
        let dev = flat_band_window_deviation(eta, delta, w);
        assert!(dev.abs() < prev);
        prev = dev.abs();
    }
    assert!(prev < 1e-3);
    let band = DetectorBand::flat(eta, delta, 0.0);
    let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 200.0), 2000, 1e-10).unwrap();
    let d = sum_rule_defect(&grid).unwrap();
    let exact = flat_band_window_deviation(eta, delta, 200.0);
    assert!((d.window_integral - exact).abs() < 1e-4, "{} vs {exact}", d.window_integral);
    assert!(d.residual.abs() < 1e-4, "{d:?}");
}

#[test]
fn grid_interpolant_tracks_closed_form_for_flat_band() {
    let band = DetectorBand::flat(2.0, 1.0, 0.0);
    let grid = form_factor_grid(&band, 1.0, symmetric_window(&band, 30.0), 600, 1e-11).unwrap();
    for (m, g) in grid.mu.iter().zip(&grid.g2) {
        let a = analytic_flat_band(1.0, 2.0, 1.0, *m, 0.0).unwrap();
        assert!((g - a).abs() < 1e-6 * a, "mu={m}");
    }
}
