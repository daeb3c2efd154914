use proptest::prelude::*;

use zeno_core::dynamics::{
    decay_rate_trace, discretize_continuum, propagate, response_delay, uniform_times, DynamicsError, ProbabilityTrace,
    NORM_TOL,
};
use zeno_core::formfactor::renormalized_form_factor;
use zeno_core::model::{validate_params, DetectorBand, ModelParams, ValidatedModel};

fn figure(two_pi_delta: f64, eta: f64) -> ValidatedModel {
    validate_params(&ModelParams::from_figure_ratios(two_pi_delta, eta)).unwrap()
}

fn run(m: &ValidatedModel, times: &[f64]) -> ProbabilityTrace {
    propagate(&discretize_continuum(m).unwrap(), times).unwrap()
}

/// Uniform samples plus a logarithmic run from `1e-2/Δ`.
fn figure_times(m: &ValidatedModel) -> Vec<f64> {
    let mut t = uniform_times(m.horizon, 500);
    let start = 1e-2 / m.band.delta;
    for i in 0..80 {
        let v = start * (m.horizon / start).powf(i as f64 / 80.0);
        t.push(v);
    }
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

#[test]
fn free_decay_is_exactly_exponential() {
    let m = figure(100.0, 0.0);
    let tr = run(&m, &figure_times(&m));
    for (t, s) in tr.t.iter().zip(&tr.s) {
        assert!((s - (-t).exp()).abs() < 1e-6, "t={t}");
    }
    assert!(decay_rate_trace(&tr, 1.0).iter().all(|(_, r)| (r + 1.0).abs() < 1e-9));
    assert!(matches!(response_delay(&tr), Err(DynamicsError::NoResponse { .. })));
}

#[test]
fn initial_probabilities() {
    let tr = run(&figure(100.0, 10.0), &[0.0, 0.5]);
    assert_eq!((tr.s[0], tr.eps[0], tr.r[0]), (1.0, 0.0, 0.0));
}

#[test]
fn norm_defect_within_budget_on_figure_sets() {
    for (d, e) in [(100.0, 1.5), (100.0, 100.0), (100.0, 10.0)] {
        let m = figure(d, e);
        let tr = run(&m, &figure_times(&m));
        assert!(tr.max_norm_defect() < NORM_TOL, "{d},{e}: {:e}", tr.max_norm_defect());
        tr.check_invariants(NORM_TOL).unwrap();
    }
}

#[test]
fn refined_grid_leaves_survival_unchanged() {
    for (d, e) in [(100.0, 1.5), (100.0, 10.0)] {
        let m = figure(d, e);
        let times = uniform_times(m.horizon, 100);
        let coarse = run(&m, &times);
        let mut fine = m;
        fine.dk /= 2.0;
        fine.cutoff *= 2.0;
        let fine = run(&fine, &times);
        let sup = coarse.s.iter().zip(&fine.s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(sup < 1e-4, "{d},{e}: {sup:e}");
    }
}

#[test]
fn identical_across_thread_counts() {
    let m = figure(100.0, 100.0);
    let times = uniform_times(1.0, 20);
    let d = discretize_continuum(&m).unwrap();
    let with = |n: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| propagate(&d, &times).unwrap())
    };
    let one = with(1);
    assert_eq!(one, with(3));
    assert_eq!(one, with(1));
}

#[test]
fn two_stage_decay_for_moderate_detector() {
    let m = figure(100.0, 10.0);
    let delta = m.band.delta;
    let suppressed = 2.0 * std::f64::consts::PI * renormalized_form_factor(&m.band, 1.0, 0.0, 1e-10).unwrap();
    let tr = run(&m, &[0.0, 0.1 / delta, 10.0 / delta]);
    let rates = decay_rate_trace(&tr, 1.0);
    assert!((rates[0].1 + 1.0).abs() < 0.1);
    assert!((rates[1].1 + suppressed).abs() < 0.1 * suppressed, "{} vs {suppressed}", rates[1].1);
}

#[test]
fn flat_band_with_eta_twice_delta_halves_the_rate() {
    let mut p = ModelParams::from_figure_ratios(100.0, 0.0);
    let delta = 50.0;
    p.band = DetectorBand::flat(2.0 * delta, delta, 0.0);
    let m = validate_params(&p).unwrap();
    let tr = run(&m, &[0.0, 2.5, 5.0]);
    let rates = decay_rate_trace(&tr, 1.0);
    assert!((rates[1].1 + 0.5).abs() < 0.02, "{}", rates[1].1);
    // Between the late samples the slope is the suppressed rate up to the band-edge tails.
    let slope = (tr.s[2].ln() - tr.s[1].ln()) / 2.5;
    assert!((slope + 0.5).abs() < 5e-3, "{slope}");
}

#[test]
fn detuned_band_enhances_decay() {
    let mut p = ModelParams::from_figure_ratios(100.0, 100.0);
    p.band.center = 5.0 * p.band.delta;
    let m = validate_params(&p).unwrap();
    let tr = run(&m, &[0.0, 2.5, 5.0]);
    let late = decay_rate_trace(&tr, 1.0)[1].1;
    assert!(late.abs() >= 1.0, "{late}");
    assert!(tr.max_norm_defect() < NORM_TOL);
}

#[test]
fn figure_one_detector_delay() {
    let m = figure(100.0, 1.5);
    let tr = run(&m, &uniform_times(m.horizon, 500));
    let d = response_delay(&tr).unwrap();
    assert!(d > 0.5 / 1.5 && d < 2.0 / 1.5, "{d}");
    // r lags behind 1 - s.
    let cross = |v: &[f64]| tr.t[v.iter().position(|&x| x >= 0.5).unwrap()];
    let one_minus_s: Vec<f64> = tr.s.iter().map(|s| 1.0 - s).collect();
    assert!(cross(&tr.r) > cross(&one_minus_s));
}

#[test]
fn csv_round_trip() {
    let m = figure(100.0, 10.0);
    let tr = run(&m, &uniform_times(m.horizon, 50));
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    assert!(buf.starts_with(b"t,s,eps,r,norm_defect\n"));
    let back = ProbabilityTrace::read_csv(&buf[..]).unwrap();
    back.check_invariants(NORM_TOL).unwrap();
    for (a, b) in back.s.iter().zip(&tr.s) {
        assert!((a - b).abs() < 1e-11);
    }
}

#[test]
fn rejects_samples_past_the_horizon() {
    let m = figure(100.0, 10.0);
    let d = discretize_continuum(&m).unwrap();
    assert!(matches!(propagate(&d, &[0.0, 6.0]), Err(DynamicsError::SampleOutOfRange { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn probabilities_stay_bounded_and_conserved(
        two_pi_delta in 20.0f64..150.0,
        eta in 0.0f64..30.0,
        half_n in 1u32..5,
        offset in -1.0f64..1.0,
    ) {
        let mut p = ModelParams::from_figure_ratios(two_pi_delta, eta);
        p.band = DetectorBand::power_law(eta, p.band.delta, 2 * half_n, offset * p.band.delta);
        p.numerics.horizon = Some(2.0);
        let m = validate_params(&p).unwrap();
        let tr = run(&m, &uniform_times(2.0, 40));
        prop_assert!(tr.check_invariants(NORM_TOL).is_ok(), "{:?}", tr.check_invariants(NORM_TOL));
    }
}
