//! Sample a target ensemble and print its label census.
//!
//! ```text
//! cargo run --release --example ensemble -- --count 50 --out runs/ensemble
//! ```

use std::error::Error;
use std::path::PathBuf;

use clap::Parser;

use cardio_ukf::io::write_targets;
use cardio_ukf::model::ParameterVector;
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::{build_ensemble, label_census, SamplingConfig, TargetCase};

#[derive(Parser, Debug)]
pub struct Opts {
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 20_251_017)]
    pub seed: u64,
    /// Directory for `targets.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(opts: &Opts) -> Result<Vec<TargetCase>, Box<dyn Error>> {
    let cfg = SamplingConfig {
        seed: opts.seed,
        ..SamplingConfig::default()
    };
    let targets = build_ensemble(&cfg, opts.count, &SolverConfig::default())?;
    let drawn = targets.last().map(|t| t.seed + 1).unwrap_or(0);
    println!("{} plausible targets from {drawn} draws", targets.len());
    for (label, n) in label_census(&targets) {
        println!("  {label:<20} {n:>3}");
    }
    let nominal = ParameterVector::nominal().to_array();
    println!("parameter spread (min / max relative to nominal):");
    for (i, name) in ParameterVector::NAMES.iter().enumerate() {
        let r: Vec<f64> = targets.iter().map(|t| t.params.to_array()[i] / nominal[i]).collect();
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("  {name:<7} {lo:.2} / {hi:.2}");
    }
    if let Some(dir) = &opts.out {
        write_targets(&dir.join("targets.json"), &targets)?;
        println!("wrote {}", dir.join("targets.json").display());
    }
    Ok(targets)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse()).map(|_| ())
}
