#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use config::{ConfigError, Product, Settings};
use run::{run_product, RunError};

#[derive(Parser)]
#[command(name = "zeno", version, about = "Zeno dynamics of a decaying atom under a finite-band photodetector")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `out` in the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Extra `key=value` pair applied after the config file
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Renormalized form factor on the spectral window
    Formfactor,
    /// Survival, error and detection probabilities
    Evolve,
    /// Spectral function and perturbative decay
    Spectral,
    /// Regime conditions and stage rates
    Report,
    /// Detector response against atomic decay
    Fig1,
    /// Form-factor dips for three detector strengths
    Fig2,
    /// Decay-rate traces for three detectors
    Fig3,
    /// Run `products` at every point of the sweep lists
    Sweep,
}

impl Command {
    fn product(self) -> Option<Product> {
        Some(match self {
            Command::Formfactor => Product::FormFactor,
            Command::Evolve => Product::Evolve,
            Command::Spectral => Product::Spectral,
            Command::Report => Product::Report,
            Command::Fig1 => Product::Fig1,
            Command::Fig2 => Product::Fig2,
            Command::Fig3 => Product::Fig3,
            Command::Sweep => return None,
        })
    }
}

fn settings(cli: &Cli) -> Result<Settings, ConfigError> {
    let mut s = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for pair in &cli.overrides {
        s.apply_override(pair)?;
    }
    Ok(s)
}

fn out_dir(cli: &Cli, s: &Settings) -> PathBuf {
    cli.out.clone().or_else(|| s.get("out").map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn sweep(s: &Settings, out: &Path) -> Result<Vec<String>, RunError> {
    let products = s.scenario()?.products;
    if products.is_empty() {
        return Err(ConfigError::EmptyList("products").into());
    }
    let points = s.sweep_points()?;
    let results: Vec<Result<Vec<String>, RunError>> = points
        .par_iter()
        .map(|(name, point)| {
            let dir = out.join(name);
            let mut lines = Vec::new();
            for &p in &products {
                for line in run_product(p, point, &dir)? {
                    lines.push(format!("{name}: {line}"));
                }
            }
            Ok(lines)
        })
        .collect();
    let mut lines = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(l) => lines.extend(l),
            Err(e) if first_err.is_none() => first_err = Some(e),
            Err(e) => eprintln!("error: {e}"),
        }
    }
    for l in &lines {
        println!("{l}");
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(Vec::new()),
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| ConfigError::Conflict(format!("thread pool: {e}")))?;
    }
    let s = settings(cli)?;
    let out = out_dir(cli, &s);
    let lines = match cli.command.product() {
        Some(p) => run_product(p, &s, &out)?,
        None => sweep(&s, &out)?,
    };
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
