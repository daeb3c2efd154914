//! Single-excitation dynamics on a discretized photon continuum.
//!
//! Each photon mode `k` is damped at rate `π η_k` by the detector (the detector
//! continuum is eliminated exactly). The part of the photon continuum outside
//! the retained grid is eliminated as well: a photon that the detector cannot
//! see only produces the Wigner–Weisskopf decay `γ/2` of the atomic amplitude.
//! To make that elimination exact for the whole line, the grid carries two
//! copies of every mode, the physical amplitude `b_j` and a free reference
//! `a_j` obeying the same equation without the detector damping:
//!
//! ```text
//! f'   = -(γ/2) f - i c Σ_j (b_j - a_j)
//! b_j' = -(i x_j + π η_j) b_j - i c f
//! a_j' = -i x_j a_j - i c f
//! ```
//!
//! with `x_j = k_j - Ω` (frame rotating at `Ω`) and `c = g √δk`. Without a
//! detector `b ≡ a` and `f = exp(-γt/2)` exactly. Photons outside the grid are
//! accounted for through `q(t) = ∫ γ|f|²` (everything the atom ever emitted), so
//! `eps = q - Σ|a_j|² + Σ|b_j|²`, and the absorbed probability `r` is integrated
//! from the detector flux `Σ_j 2π η_j |b_j|²` alongside the amplitudes.
//!
//! The linear part is diagonal and is integrated exactly with the Cox–Matthews
//! exponential Runge–Kutta scheme (ETDRK4); only the atom–mode coupling is
//! treated explicitly.

use std::f64::consts::PI;
use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{DetectorBand, ValidatedModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("grid spacing {dk} puts the revival at {revival}, not beyond four horizons (T = {horizon})")]
    RevivalGuardViolated { dk: f64, revival: f64, horizon: f64 },
    #[error("grid half-width {cutoff} is below the default {required}; force it explicitly")]
    WindowTooNarrow { cutoff: f64, required: f64 },
    #[error("sample time {t} lies outside [0, {horizon}]")]
    SampleOutOfRange { t: f64, horizon: f64 },
    #[error("norm defect {defect:e} exceeds tolerance {tol:e} at t = {t}")]
    ToleranceNotMet { defect: f64, tol: f64, t: f64 },
    #[error("absorbed probability never reaches 0.5 (max {max_r})")]
    NoResponse { max_r: f64 },
    #[error("malformed trace: {0}")]
    BadTrace(String),
}

/// Truncated photon grid and the couplings of the single-excitation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedModel {
    pub k_grid: Vec<f64>,
    /// `k_j - i π η_{k_j}`.
    pub mode_energy: Vec<Complex64>,
    /// `g √δk` with `g² = γ/2π`, identical for every mode.
    pub coupling: f64,
    pub horizon: f64,
    pub gamma: f64,
    pub omega: f64,
    pub dk: f64,
    pub step: f64,
    pub band: DetectorBand,
}

impl DiscretizedModel {
    pub fn len(&self) -> usize {
        self.k_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_grid.is_empty()
    }

    /// Time at which the discrete continuum recurs, `2π/δk`.
    pub fn revival_time(&self) -> f64 {
        2.0 * PI / self.dk
    }
}

/// Uniform grid `Ω + j δk`. The half-width is the configured cutoff, widened
/// symmetrically if needed so that it also spans `ω_c ± cutoff`.
pub fn discretize_continuum(p: &ValidatedModel) -> Result<DiscretizedModel, DynamicsError> {
    let revival = 2.0 * PI / p.dk;
    if !(revival > 4.0 * p.horizon) {
        return Err(DynamicsError::RevivalGuardViolated { dk: p.dk, revival, horizon: p.horizon });
    }
    let required = p.default_cutoff();
    if p.cutoff < required && !p.force_cutoff {
        return Err(DynamicsError::WindowTooNarrow { cutoff: p.cutoff, required });
    }
    let half = p.cutoff + (p.band.center - p.omega).abs();
    let m = (half / p.dk).floor() as i64;
    let k_grid: Vec<f64> = (-m..=m).map(|j| p.omega + j as f64 * p.dk).collect();
    let mode_energy = k_grid.iter().map(|&k| Complex64::new(k, -PI * p.band.response(k))).collect();
    Ok(DiscretizedModel {
        k_grid,
        mode_energy,
        coupling: (p.gamma / (2.0 * PI) * p.dk).sqrt(),
        horizon: p.horizon,
        gamma: p.gamma,
        omega: p.omega,
        dk: p.dk,
        step: p.step,
        band: p.band,
    })
}

/// Sampled probabilities. `r` is integrated from the absorbed flux, never
/// inferred from the other two.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilityTrace {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub eps: Vec<f64>,
    pub r: Vec<f64>,
    pub norm_defect: Vec<f64>,
}

pub const TRACE_HEADER: &str = "t,s,eps,r,norm_defect";

/// Norm-defect bound enforced by [`propagate`].
pub const NORM_TOL: f64 = 1e-6;

impl ProbabilityTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_norm_defect(&self) -> f64 {
        self.norm_defect.iter().copied().fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
                self.t[i], self.s[i], self.eps[i], self.r[i], self.norm_defect[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, DynamicsError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| DynamicsError::BadTrace("empty input".into()))?
            .map_err(|e| DynamicsError::BadTrace(e.to_string()))?;
        if header.trim() != TRACE_HEADER {
            return Err(DynamicsError::BadTrace(format!("unexpected header {header:?}")));
        }
        let mut out = Self::default();
        for line in lines {
            let line = line.map_err(|e| DynamicsError::BadTrace(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DynamicsError::BadTrace(format!("{line:?}: {e}")))?;
            if v.len() != 5 {
                return Err(DynamicsError::BadTrace(format!("{line:?}: expected 5 columns")));
            }
            out.t.push(v[0]);
            out.s.push(v[1]);
            out.eps.push(v[2]);
            out.r.push(v[3]);
            out.norm_defect.push(v[4]);
        }
        Ok(out)
    }

    /// Checks bounds, initial values and the norm-defect budget.
    pub fn check_invariants(&self, norm_tol: f64) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::BadTrace(m));
        if self.is_empty() {
            return bad("no samples".into());
        }
        if !self.t.windows(2).all(|w| w[0] < w[1]) {
            return bad("times not increasing".into());
        }
        if self.t[0] == 0.0 && ((self.s[0] - 1.0).abs() > 1e-12 || self.eps[0] != 0.0 || self.r[0] != 0.0) {
            return bad("initial state is not (1, 0, 0)".into());
        }
        let slack = 1e-9;
        for i in 0..self.len() {
            for (name, v) in [("s", self.s[i]), ("eps", self.eps[i]), ("r", self.r[i])] {
                if !(v >= -slack && v <= 1.0 + slack) {
                    return bad(format!("{name} = {v} out of [0, 1] at t = {}", self.t[i]));
                }
            }
            let d = (1.0 - self.s[i] - self.eps[i] - self.r[i]).abs();
            if d > norm_tol.max(self.norm_defect[i]) + 1e-12 {
                return bad(format!("norm defect {d:e} at t = {}", self.t[i]));
            }
        }
        if self.max_norm_defect() > norm_tol {
            return Err(DynamicsError::ToleranceNotMet {
                defect: self.max_norm_defect(),
                tol: norm_tol,
                t: self.t[self.norm_defect.iter().position(|&d| d > norm_tol).unwrap_or(0)],
            });
        }
        Ok(())
    }
}

/// `φ_1, φ_2, φ_3` of the exponential integrators.
fn phi123(z: Complex64) -> [Complex64; 3] {
    if z.norm() < 0.5 {
        // φ_k(z) = Σ_m z^m / (m + k)!
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut term = Complex64::new(1.0 / factorial(k + 1), 0.0);
            let mut sum = term;
            for m in 1..18 {
                term = term * z / (m + k + 1) as f64;
                sum += term;
            }
            *slot = sum;
        }
        out
    } else {
        let p1 = (z.exp() - 1.0) / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        [p1, p2, p3]
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// ETDRK4 weights for one diagonal entry `L` and step `h`.
#[derive(Debug, Clone, Copy)]
struct Etd {
    e: Complex64,
    e2: Complex64,
    /// `(h/2) φ_1(Lh/2)`
    q: Complex64,
    f1: Complex64,
    f2: Complex64,
    f3: Complex64,
}

impl Etd {
    fn new(l: Complex64, h: f64) -> Self {
        let z = l * h;
        let [p1, p2, p3] = phi123(z);
        let [h1, _, _] = phi123(z * 0.5);
        Self {
            e: z.exp(),
            e2: (z * 0.5).exp(),
            q: h1 * (h / 2.0),
            f1: (p1 - p2 * 3.0 + p3 * 4.0) * h,
            f2: (p2 - p3 * 2.0) * h,
            f3: (-p2 + p3 * 4.0) * h,
        }
    }
}

/// Per-mode weights for one step length, laid out for the fused sweep.
#[derive(Debug, Clone, Copy)]
struct ModeWeights {
    b: Etd,
    /// `(e2 - 1) q` of the damped copy.
    bp: Complex64,
    a_e: Complex64,
    a_e2: Complex64,
    a_f1: Complex64,
    a_f2: Complex64,
    a_f3: Complex64,
    /// Flux weight `2π η_j`.
    w: f64,
}

struct StepWeights {
    h: f64,
    atom: Etd,
    modes: Vec<ModeWeights>,
    /// `Σ (q_b - q_a)`
    dq: Complex64,
    /// `Σ (e2_b q_b - e2_a q_a)`
    deq: Complex64,
    /// `Σ w |q_b|²`
    wqq: f64,
}

impl StepWeights {
    fn new(active: &[ActiveMode], gamma: f64, h: f64) -> Self {
        let atom = Etd::new(Complex64::new(-gamma / 2.0, 0.0), h);
        let both: Vec<(ModeWeights, Complex64)> = active
            .par_iter()
            .with_min_len(CHUNK)
            .map(|m| {
                let la = Complex64::new(0.0, -m.x);
                let b = Etd::new(la - m.damping, h);
                let a = Etd::new(la, h);
                let mw = ModeWeights {
                    b,
                    bp: (b.e2 - 1.0) * b.q,
                    a_e: a.e,
                    a_e2: a.e2,
                    a_f1: a.f1,
                    a_f2: a.f2,
                    a_f3: a.f3,
                    w: 2.0 * m.damping,
                };
                (mw, a.q)
            })
            .collect();
        let mut dq = Complex64::new(0.0, 0.0);
        let mut deq = Complex64::new(0.0, 0.0);
        let mut wqq = 0.0;
        for (mw, aq) in &both {
            dq += mw.b.q - aq;
            deq += mw.b.e2 * mw.b.q - mw.a_e2 * aq;
            wqq += mw.w * mw.b.q.norm_sqr();
        }
        let modes = both.into_iter().map(|(mw, _)| mw).collect();
        Self { h, atom, modes, dq, deq, wqq }
    }
}

#[derive(Debug, Clone, Copy)]
struct ActiveMode {
    x: f64,
    damping: f64,
}

/// Mode sums gathered in one sweep, combined in chunk order.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    /// `Σ (b - a)`
    s: Complex64,
    /// `Σ (e2_b b - e2_a a)`
    w2: Complex64,
    /// `Σ (e_b b - e_a a)`
    w1: Complex64,
    /// `Σ w |e2_b b|²`
    a1: f64,
    /// `Σ w conj(e2_b b) q_b`
    a2: Complex64,
    /// `Σ w |v|²` with `v = e_b b + bp n0`
    b1: f64,
    /// `Σ w conj(v) q_b`
    b2: Complex64,
    /// `Σ w |b|²`
    flux: f64,
    bb: f64,
    aa: f64,
}

impl Sums {
    fn add(mut self, o: &Sums) -> Self {
        self.s += o.s;
        self.w2 += o.w2;
        self.w1 += o.w1;
        self.a1 += o.a1;
        self.a2 += o.a2;
        self.b1 += o.b1;
        self.b2 += o.b2;
        self.flux += o.flux;
        self.bb += o.bb;
        self.aa += o.aa;
        self
    }
}

const CHUNK: usize = 2048;

/// The four stage forcings `-i c f` of one step.
#[derive(Debug, Clone, Copy)]
struct Forcing {
    n0: Complex64,
    na: Complex64,
    nb: Complex64,
    nc: Complex64,
}

fn sweep(
    b: &mut [Complex64],
    a: &mut [Complex64],
    cur: &[ModeWeights],
    fo: Forcing,
    next: &[ModeWeights],
    next_n0: Complex64,
) -> Sums {
    let mut s = Sums::default();
    let nab = (fo.na + fo.nb) * 2.0;
    for j in 0..b.len() {
        let m = &cur[j];
        b[j] = m.b.e * b[j] + m.b.f1 * fo.n0 + m.b.f2 * nab + m.b.f3 * fo.nc;
        a[j] = m.a_e * a[j] + m.a_f1 * fo.n0 + m.a_f2 * nab + m.a_f3 * fo.nc;
        let m = &next[j];
        let (bj, aj) = (b[j], a[j]);
        let e2b = m.b.e2 * bj;
        let eb = m.b.e * bj;
        let v = eb + m.bp * next_n0;
        s.s += bj - aj;
        s.w2 += e2b - m.a_e2 * aj;
        s.w1 += eb - m.a_e * aj;
        s.a1 += m.w * e2b.norm_sqr();
        s.a2 += e2b.conj() * m.b.q * m.w;
        s.b1 += m.w * v.norm_sqr();
        s.b2 += v.conj() * m.b.q * m.w;
        let bn = bj.norm_sqr();
        s.flux += m.w * bn;
        s.bb += bn;
        s.aa += aj.norm_sqr();
    }
    s
}

fn parallel_sweep(
    b: &mut [Complex64],
    a: &mut [Complex64],
    cur: &[ModeWeights],
    fo: Forcing,
    next: &[ModeWeights],
    next_n0: Complex64,
) -> Sums {
    let partial: Vec<Sums> = b
        .par_chunks_mut(CHUNK)
        .zip(a.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(i, (bc, ac))| {
            let range = i * CHUNK..i * CHUNK + bc.len();
            sweep(bc, ac, &cur[range.clone()], fo, &next[range], next_n0)
        })
        .collect();
    partial.iter().fold(Sums::default(), |acc, p| acc.add(p))
}

/// Step growth rate after the initial transient, `h ≤ STEP_GROWTH · t`.
pub const STEP_GROWTH: f64 = 0.05;
/// Largest step, in units of `1 / max(η, γ)` and of the inverse of the fastest
/// oscillation the detector-dressed modes imprint on the atom, taken as
/// `4 |ω_c - Ω| + max(4Δ, 2R)` with `R` the band's support radius.
pub const STEP_CAP: f64 = 1.0;
/// Relative level of `η_k` defining the support radius in [`STEP_CAP`].
const SUPPORT_LEVEL: f64 = 0.02;

/// Local step target: the configured step during the initial transient,
/// then growing in proportion to `t` up to the cap.
fn step_target(m: &DiscretizedModel, t: f64) -> f64 {
    let band = &m.band;
    let reach = 4.0 * (band.center - m.omega).abs() + (4.0 * band.delta).max(2.0 * band.support_radius(SUPPORT_LEVEL));
    let cap = (STEP_CAP / band.eta.max(m.gamma)).min(STEP_CAP / reach);
    (STEP_GROWTH * t).clamp(m.step, cap.max(m.step))
}

/// Integrates from `f = 1` (excited atom, empty fields) and records the
/// probabilities at `sample_times`, which must be sorted and lie in `[0, T]`.
pub fn propagate(m: &DiscretizedModel, sample_times: &[f64]) -> Result<ProbabilityTrace, DynamicsError> {
    propagate_with(m, sample_times, NORM_TOL)
}

pub fn propagate_with(
    m: &DiscretizedModel,
    sample_times: &[f64],
    norm_tol: f64,
) -> Result<ProbabilityTrace, DynamicsError> {
    for &t in sample_times {
        if !(0.0..=m.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(DynamicsError::SampleOutOfRange { t, horizon: m.horizon });
        }
    }
    if !sample_times.windows(2).all(|w| w[0] <= w[1]) {
        return Err(DynamicsError::BadTrace("sample times must be sorted".into()));
    }
    // Modes with η_j = 0 have b_j ≡ a_j and drop out exactly.
    let active: Vec<ActiveMode> =
        m.mode_energy.iter().filter(|e| e.im < 0.0).map(|e| ActiveMode { x: e.re - m.omega, damping: -e.im }).collect();
    let gamma = m.gamma;
    let c = m.coupling;
    let mic = Complex64::new(0.0, -c);

    // Between consecutive samples: equal steps no longer than the local target.
    let mut segments: Vec<(f64, usize)> = Vec::with_capacity(sample_times.len());
    let mut t_prev = 0.0;
    for &t in sample_times {
        let span = t - t_prev;
        if span > 0.0 {
            let n = (span / step_target(m, t_prev) - 1e-9).ceil().max(1.0) as usize;
            segments.push((span / n as f64, n));
        } else {
            segments.push((0.0, 0));
        }
        t_prev = t;
    }
    let same = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x;

    let n = active.len();
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let mut f = Complex64::new(1.0, 0.0);
    let mut r = 0.0;
    let mut q = 0.0;
    let mut sums = Sums::default();
    let mut trace = ProbabilityTrace::default();
    let record = |trace: &mut ProbabilityTrace, t: f64, f: Complex64, r: f64, q: f64, sums: &Sums| {
        let s = f.norm_sqr();
        let eps = (sums.bb + q - sums.aa).max(0.0);
        trace.t.push(t);
        trace.s.push(s);
        trace.eps.push(eps);
        trace.r.push(r);
        trace.norm_defect.push((1.0 - (s + eps + r)).abs());
    };

    let mut cur: Option<StepWeights> = None;
    let mut pending: Option<StepWeights> = None;
    for (si, &(h, count)) in segments.iter().enumerate() {
        if count > 0 {
            if !cur.as_ref().is_some_and(|w| same(w.h, h)) {
                cur = match pending.take() {
                    Some(w) if same(w.h, h) => Some(w),
                    _ => Some(StepWeights::new(&active, gamma, h)),
                };
            }
            let following = segments[si + 1..].iter().find(|s| s.1 > 0).map(|s| s.0);
            for k in 0..count {
                let sw = cur.as_ref().unwrap();
                let next = match following {
                    Some(h2) if k + 1 == count && !same(h, h2) => {
                        if !pending.as_ref().is_some_and(|w| same(w.h, h2)) {
                            pending = Some(StepWeights::new(&active, gamma, h2));
                        }
                        pending.as_ref().unwrap()
                    }
                    _ => sw,
                };
                let at = &sw.atom;
                // `sums` were prepared with this step's weights by the previous sweep.
                let nf0 = mic * sums.s;
                let n0 = mic * f;
                let fa = at.e2 * f + at.q * nf0;
                let sa = sums.w2 + n0 * sw.dq;
                let na = mic * fa;
                let fb = at.e2 * f + at.q * (mic * sa);
                let sb = sums.w2 + na * sw.dq;
                let nb = mic * fb;
                let fc = at.e2 * fa + at.q * (mic * sb * 2.0 - nf0);
                let sc = sums.w1 + n0 * sw.deq + (nb * 2.0 - n0) * sw.dq;
                let nc = mic * fc;
                let f_next = at.e * f + at.f1 * nf0 + at.f2 * 2.0 * (mic * sa + mic * sb) + at.f3 * (mic * sc);

                let flux = |nx: Complex64| sums.a1 + 2.0 * (nx * sums.a2).re + nx.norm_sqr() * sw.wqq;
                let flux_c = sums.b1 + 2.0 * (nb * 2.0 * sums.b2).re + 4.0 * nb.norm_sqr() * sw.wqq;
                r += h / 6.0 * (sums.flux + 2.0 * flux(n0) + 2.0 * flux(na) + flux_c);
                q += h / 6.0 * gamma * (f.norm_sqr() + 2.0 * fa.norm_sqr() + 2.0 * fb.norm_sqr() + fc.norm_sqr());

                f = f_next;
                let forcing = Forcing { n0, na, nb, nc };
                sums = parallel_sweep(&mut b, &mut a, &sw.modes, forcing, &next.modes, mic * f);
            }
        }
        record(&mut trace, sample_times[si], f, r, q, &sums);
    }
    for i in 0..trace.len() {
        let d = trace.norm_defect[i];
        if !d.is_finite() || d > norm_tol {
            return Err(DynamicsError::ToleranceNotMet { defect: d, tol: norm_tol, t: trace.t[i] });
        }
    }
    Ok(trace)
}

/// Shift `d` that best aligns `r(t)` with `1 - s(t - d)` in the least-squares
/// sense, found by golden-section search on `[0, T/2]`.
pub fn response_delay(trace: &ProbabilityTrace) -> Result<f64, DynamicsError> {
    let max_r = trace.r.iter().copied().fold(0.0, f64::max);
    if !(max_r >= 0.5) {
        return Err(DynamicsError::NoResponse { max_r });
    }
    let t = &trace.t;
    let horizon = *t.last().unwrap();
    let one_minus_s = |x: f64| -> f64 {
        if x <= t[0] {
            return 1.0 - trace.s[0];
        }
        let i = t.partition_point(|&v| v <= x).min(t.len() - 1);
        let (t0, t1) = (t[i - 1], t[i]);
        let u = if t1 > t0 { (x - t0) / (t1 - t0) } else { 0.0 };
        1.0 - (trace.s[i - 1] + u * (trace.s[i] - trace.s[i - 1]))
    };
    let cost = |d: f64| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (ti, ri) in t.iter().zip(&trace.r) {
            if *ti >= d {
                let e = ri - one_minus_s(ti - d);
                sum += e * e;
                count += 1;
            }
        }
        sum / count.max(1) as f64
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, horizon / 2.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut c1, mut c2) = (cost(x1), cost(x2));
    while hi - lo > 1e-10 * horizon {
        if c1 <= c2 {
            hi = x2;
            x2 = x1;
            c2 = c1;
            x1 = hi - ratio * (hi - lo);
            c1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            c1 = c2;
            x2 = lo + ratio * (hi - lo);
            c2 = cost(x2);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(t, ln s / (γ t))` for every sample with `t > 0`.
pub fn decay_rate_trace(trace: &ProbabilityTrace, gamma: f64) -> Vec<(f64, f64)> {
    trace.t.iter().zip(&trace.s).filter(|(t, _)| **t > 0.0).map(|(&t, &s)| (t, s.ln() / (gamma * t))).collect()
}

/// `n + 1` uniform samples on `[0, T]`.
pub fn uniform_times(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_params, ModelParams};

    #[test]
    fn phi_functions_agree_across_branches() {
        for z in [Complex64::new(0.49, 0.1), Complex64::new(-0.3, 0.39), Complex64::new(0.0, 0.499)] {
            let series = phi123(z);
            let p1 = (z.exp() - 1.0) / z;
            let p2 = (p1 - 1.0) / z;
            let p3 = (p2 - 0.5) / z;
            for (s, c) in series.iter().zip([p1, p2, p3]) {
                assert!((s - c).norm() < 1e-13, "{z}: {s} vs {c}");
            }
        }
    }

    #[test]
    fn starts_from_excited_atom() {
        let m = validate_params(&ModelParams::from_figure_ratios(100.0, 1.5)).unwrap();
        let d = discretize_continuum(&m).unwrap();
        let tr = propagate(&d, &[0.0]).unwrap();
        assert_eq!((tr.s[0], tr.eps[0], tr.r[0]), (1.0, 0.0, 0.0));
    }

    #[test]
    fn revival_guard() {
        let mut p = ModelParams::from_figure_ratios(100.0, 1.5);
        p.numerics.dk = Some(0.4);
        let m = validate_params(&p).unwrap();
        assert!(matches!(discretize_continuum(&m), Err(DynamicsError::RevivalGuardViolated { .. })));
    }

    #[test]
    fn narrow_window_needs_force() {
        let mut p = ModelParams::from_figure_ratios(100.0, 1.5);
        p.numerics.cutoff = Some(50.0);
        let m = validate_params(&p).unwrap();
        assert!(matches!(discretize_continuum(&m), Err(DynamicsError::WindowTooNarrow { .. })));
        p.numerics.force_cutoff = true;
        assert!(discretize_continuum(&validate_params(&p).unwrap()).is_ok());
    }

    #[test]
    fn synthetic_delay_is_recovered() {
        let d0 = 0.37;
        let t = uniform_times(5.0, 2000);
        let s: Vec<f64> = t.iter().map(|x| (-x).exp()).collect();
        let r: Vec<f64> = t.iter().map(|x| if *x < d0 { 0.0 } else { 1.0 - (-(x - d0)).exp() }).collect();
        let tr = ProbabilityTrace { eps: vec![0.0; t.len()], norm_defect: vec![0.0; t.len()], t, s, r };
        let d = response_delay(&tr).unwrap();
        assert!((d - d0).abs() < 1e-3, "{d}");
    }
}
