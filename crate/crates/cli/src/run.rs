//! Product runners. Each writes its CSV files into one directory, re-reads them
//! through the owning module's checks and returns its summary lines.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;
use zeno_core::dynamics::{
    decay_rate_trace, discretize_continuum, propagate, response_delay, uniform_times, DynamicsError, ProbabilityTrace,
    NORM_TOL,
};
use zeno_core::formfactor::{
    form_factor_grid, read_form_factor_csv, renormalized_form_factor, sum_rule_defect, symmetric_window,
    FormFactorError,
};
use zeno_core::model::{qze_condition_report, validate_params, ModelError, ValidatedModel};
use zeno_core::spectral::{
    perturbative_decay, read_perturbative_csv, spectral_pipeline, spectral_window, stage_rates,
    survival_probability_spectral, write_perturbative_csv, SpectralError, SpectralFunction, DEFAULT_GRID_POINTS,
};

use crate::config::{ConfigError, Product, Settings};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{product}: {message}")]
    Numerical { product: Product, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Write { .. } => 1,
            RunError::Numerical { .. } => 2,
        }
    }
}

trait Attribute<T> {
    fn during(self, product: Product) -> Result<T, RunError>;
}

macro_rules! numerical {
    ($($err:ty),*) => {$(
        impl<T> Attribute<T> for Result<T, $err> {
            fn during(self, product: Product) -> Result<T, RunError> {
                self.map_err(|e| RunError::Numerical { product, message: e.to_string() })
            }
        }
    )*};
}

numerical!(DynamicsError, SpectralError, FormFactorError, ModelError);

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), RunError> {
    let wrap = |source| RunError::Write { path: path.to_path_buf(), source };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(wrap)?;
        w.flush().map_err(wrap)?;
    }
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

fn reopen(path: &Path) -> Result<BufReader<fs::File>, RunError> {
    fs::File::open(path).map(BufReader::new).map_err(|source| RunError::Write { path: path.to_path_buf(), source })
}

fn model(settings: &Settings) -> Result<ValidatedModel, RunError> {
    let cfg = settings.scenario()?;
    Ok(validate_params(&cfg.params).map_err(ConfigError::from)?)
}

fn samples(settings: &Settings) -> Result<usize, RunError> {
    Ok(settings.scenario()?.samples)
}

fn num(v: f64) -> String {
    v.to_string()
}

pub const FIG1_HEADER: &str = "t,one_minus_s,eps,r";
pub const FIG3_HEADER: &str = "t,ln_s_over_gamma_t";
pub const FIG3_REFERENCE_HEADER: &str = "curve,two_pi_delta,eta,free,suppressed";
/// Logarithmic samples added to the fig3 time grid.
pub const FIG3_LOG_SAMPLES: usize = 100;
/// Detector-to-bandwidth ratios `η/2πΔ` of the fig2 curves.
pub const FIG2_RATIOS: [f64; 3] = [0.01, 0.1, 1.0];
/// `(name, 2πΔ/γ, η/γ)` of the fig3 curves.
pub const FIG3_SETS: [(&str, f64, f64); 3] =
    [("solid", 100.0, 100.0), ("dotted", 100.0, 10.0), ("broken", 1000.0, 1000.0)];

/// Figure defaults for a `2πΔ/γ`, `η/γ` pair.
fn figure_defaults(two_pi_delta: f64, eta: f64) -> Vec<(&'static str, String)> {
    vec![("eta", num(eta)), ("delta", num(two_pi_delta / (2.0 * PI)))]
}

pub fn run_product(product: Product, settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    match product {
        Product::FormFactor => formfactor(settings, dir),
        Product::Evolve => evolve(settings, dir),
        Product::Spectral => spectral(settings, dir),
        Product::Report => report(settings, dir),
        Product::Fig1 => fig1(settings, dir),
        Product::Fig2 => fig2(settings, dir),
        Product::Fig3 => fig3(settings, dir),
    }
}

fn formfactor(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::FormFactor;
    let m = model(settings)?;
    let grid = form_factor_grid(&m.band, m.gamma, spectral_window(&m), DEFAULT_GRID_POINTS, m.quad_tol).during(p)?;
    let path = dir.join("formfactor.csv");
    write_atomic(&path, |w| grid.write_csv(w))?;
    read_form_factor_csv(reopen(&path)?, m.gamma).during(p)?;
    let g2 = renormalized_form_factor(&m.band, m.gamma, m.omega, m.quad_tol).during(p)?;
    let sum_rule = sum_rule_defect(&grid).during(p)?;
    Ok(vec![format!(
        "formfactor: g2_omega={g2:.6e} suppression={:.6} sum_rule_residual={:.3e}",
        2.0 * PI * g2 / m.gamma,
        sum_rule.residual
    )])
}

fn trace_for(m: &ValidatedModel, times: &[f64], p: Product) -> Result<ProbabilityTrace, RunError> {
    let d = discretize_continuum(m).during(p)?;
    propagate(&d, times).during(p)
}

fn delay_text(tr: &ProbabilityTrace, eta: f64) -> String {
    match response_delay(tr) {
        Ok(d) if eta > 0.0 => format!("delay={d:.6} delay_times_eta={:.4}", d * eta),
        Ok(d) => format!("delay={d:.6}"),
        Err(_) => "delay=none".into(),
    }
}

fn evolve(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::Evolve;
    let m = model(settings)?;
    let tr = trace_for(&m, &uniform_times(m.horizon, samples(settings)?), p)?;
    let path = dir.join("evolve.csv");
    write_atomic(&path, |w| tr.write_csv(w))?;
    ProbabilityTrace::read_csv(reopen(&path)?).and_then(|b| b.check_invariants(NORM_TOL)).during(p)?;
    let last = tr.len() - 1;
    Ok(vec![format!(
        "evolve: t={:.4} s={:.8} eps={:.8} r={:.8} max_norm_defect={:.3e} {}",
        tr.t[last],
        tr.s[last],
        tr.eps[last],
        tr.r[last],
        tr.max_norm_defect(),
        delay_text(&tr, m.band.eta)
    )])
}

fn spectral(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::Spectral;
    let m = model(settings)?;
    let (grid, sf) = spectral_pipeline(&m).during(p)?;
    let spectrum = dir.join("spectrum.csv");
    write_atomic(&spectrum, |w| sf.write_csv(w))?;
    SpectralFunction::read_csv(reopen(&spectrum)?, m.gamma, m.omega)
        .and_then(|b| b.check_invariants(1e-4))
        .during(p)?;

    let times = uniform_times(m.horizon, samples(settings)?);
    let rows = times
        .iter()
        .map(|&t| perturbative_decay(&grid, m.omega, t).map(|v| (t, v)))
        .collect::<Result<Vec<_>, _>>()
        .during(p)?;
    let pert = dir.join("perturbative.csv");
    write_atomic(&pert, |w| write_perturbative_csv(w, &rows))?;
    read_perturbative_csv(reopen(&pert)?).during(p)?;

    let (free, slow) = stage_rates(&m).during(p)?;
    let t_end = m.horizon.min(sf.horizon());
    let s_end = survival_probability_spectral(&sf, &[t_end]).during(p)?[0];
    Ok(vec![format!(
        "spectral: normalization_defect={:.3e} free_rate={free:.6} suppressed_rate={slow:.6} suppression={:.6} s({t_end:.4})={s_end:.8}",
        sf.normalization_defect,
        slow / free
    )])
}

fn report(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::Report;
    let m = model(settings)?;
    let r = qze_condition_report(&m).during(p)?;
    let (free, slow) = stage_rates(&m).during(p)?;
    let line = format!(
        "report: gamma_over_delta={:.4} tau_delta={:.4} verdict={} suppression_estimate={:.6} suppression={:.6}",
        r.ratio_linewidth,
        r.ratio_response,
        r.verdict,
        r.suppression_estimate,
        slow / free
    );
    write_atomic(&dir.join("report.txt"), |w| writeln!(w, "{line}"))?;
    Ok(vec![line])
}

fn fig1(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::Fig1;
    let settings = settings.with_defaults(&figure_defaults(100.0, 1.5))?;
    let m = model(&settings)?;
    let tr = trace_for(&m, &uniform_times(m.horizon, samples(&settings)?), p)?;
    let path = dir.join("fig1.csv");
    write_atomic(&path, |w| {
        writeln!(w, "{FIG1_HEADER}")?;
        for i in 0..tr.len() {
            writeln!(w, "{:.12e},{:.12e},{:.12e},{:.12e}", tr.t[i], 1.0 - tr.s[i], tr.eps[i], tr.r[i])?;
        }
        Ok(())
    })?;
    check_table(&path, FIG1_HEADER, |row| row[1..].iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v))).during(p)?;
    let last = tr.len() - 1;
    Ok(vec![format!(
        "fig1: r({:.4})={:.6} one_minus_s={:.6} max_norm_defect={:.3e} {}",
        tr.t[last],
        tr.r[last],
        1.0 - tr.s[last],
        tr.max_norm_defect(),
        delay_text(&tr, m.band.eta)
    )])
}

fn fig2(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::Fig2;
    if settings.contains("eta") {
        return Err(ConfigError::Conflict("fig2 sets eta from its fixed ratios eta/2πΔ; drop `eta`".into()).into());
    }
    let base = settings.with_defaults(&figure_defaults(100.0, 0.0)[1..])?;
    let delta: f64 = model(&base.with_defaults(&[("eta", "0".into())])?)?.band.delta;
    let mut lines = Vec::new();
    for ratio in FIG2_RATIOS {
        let mut s = base.clone();
        s.set("eta", num(ratio * 2.0 * PI * delta))?;
        let m = model(&s)?;
        let window = symmetric_window(&m.band, 50.0 * m.band.delta);
        let grid = form_factor_grid(&m.band, m.gamma, window, DEFAULT_GRID_POINTS, m.quad_tol).during(p)?;
        let path = dir.join(format!("fig2_{ratio}.csv"));
        write_atomic(&path, |w| grid.write_csv(w))?;
        read_form_factor_csv(reopen(&path)?, m.gamma).during(p)?;
        let dip = grid.g2.iter().copied().fold(f64::INFINITY, f64::min) / grid.free_value();
        let residual = sum_rule_defect(&grid).during(p)?.residual;
        lines.push(format!(
            "fig2: eta_over_2pi_delta={ratio} min_g2_over_free={dip:.6} sum_rule_residual={residual:.3e}"
        ));
    }
    Ok(lines)
}

/// Uniform samples on `[0, T]` merged with a logarithmic run from `1e-2/Δ`.
pub fn fig3_times(m: &ValidatedModel, uniform: usize) -> Vec<f64> {
    let mut t = uniform_times(m.horizon, uniform);
    let start = 1e-2 / m.band.delta;
    if start < m.horizon {
        let ratio = m.horizon / start;
        t.extend((0..FIG3_LOG_SAMPLES).map(|i| start * ratio.powf(i as f64 / FIG3_LOG_SAMPLES as f64)));
    }
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn fig3(settings: &Settings, dir: &Path) -> Result<Vec<String>, RunError> {
    let p = Product::Fig3;
    let mut refs = Vec::new();
    let mut lines = Vec::new();
    for (name, two_pi_delta, eta) in FIG3_SETS {
        let s = settings.with_defaults(&figure_defaults(two_pi_delta, eta))?;
        let m = model(&s)?;
        let tr = trace_for(&m, &fig3_times(&m, samples(&s)?), p)?;
        let rates = decay_rate_trace(&tr, m.gamma);
        let path = dir.join(format!("fig3_{name}.csv"));
        write_atomic(&path, |w| {
            writeln!(w, "{FIG3_HEADER}")?;
            for (t, r) in &rates {
                writeln!(w, "{t:.12e},{r:.12e}")?;
            }
            Ok(())
        })?;
        check_table(&path, FIG3_HEADER, |row| row[1] <= 1e-9).during(p)?;
        let (free, slow) = stage_rates(&m).during(p)?;
        refs.push((name, 2.0 * PI * m.band.delta / m.gamma, m.band.eta / m.gamma, -free / m.gamma, -slow / m.gamma));
        let late = rates.last().map_or(f64::NAN, |r| r.1);
        lines.push(format!(
            "fig3: curve={name} late_rate={late:.6} suppressed_reference={:.6} max_norm_defect={:.3e}",
            -slow / m.gamma,
            tr.max_norm_defect()
        ));
    }
    write_atomic(&dir.join("fig3_reference.csv"), |w| {
        writeln!(w, "{FIG3_REFERENCE_HEADER}")?;
        for (name, d, e, free, slow) in &refs {
            writeln!(w, "{name},{d},{e},{free},{slow}")?;
        }
        Ok(())
    })?;
    Ok(lines)
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct TableError(String);

numerical!(TableError);

/// Re-reads a numeric table and applies `row_ok` to every row.
fn check_table(path: &Path, header: &str, row_ok: impl Fn(&[f64]) -> bool) -> Result<usize, TableError> {
    let text = fs::read_to_string(path).map_err(|e| TableError(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(TableError(format!("{}: unexpected header", path.display())));
    }
    let width = header.split(',').count();
    let mut prev = f64::NEG_INFINITY;
    let mut n = 0;
    for line in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| TableError(format!("{}: {line:?}: {e}", path.display())))?;
        if row.len() != width || !(row[0] > prev) || !row_ok(&row) {
            return Err(TableError(format!("{}: row {line:?} fails its checks", path.display())));
        }
        prev = row[0];
        n += 1;
    }
    Ok(n)
}
