//! Per-step UKF against the batch-interval UKF on the same targets.

use std::error::Error;

use clap::Parser;

use cardio_ukf::experiments::{matrix_specs, run_matrix, summarize, FilterKind, InitialGuess, MatrixBlock, RunRecord};
use cardio_ukf::filter::FilterConfig;
use cardio_ukf::model::{ObservationSubset, ParameterVector};
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::{build_ensemble, SamplingConfig};

#[derive(Parser, Debug)]
pub struct Opts {
    #[arg(long, default_value_t = 5)]
    pub targets: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 100)]
    pub cycles: usize,
}

pub fn run(opts: &Opts) -> Result<Vec<RunRecord>, Box<dyn Error>> {
    let solver = SolverConfig::default();
    let targets = build_ensemble(&SamplingConfig::default(), opts.targets, &solver)?;
    let guess = InitialGuess::new(ParameterVector::nominal(), &solver)?;
    let block = MatrixBlock {
        subsets: vec![ObservationSubset::full()],
        noise_levels: vec![opts.noise],
    };
    let kinds = [FilterKind::Modified, FilterKind::Original];
    let specs = matrix_specs(&targets, &[block], &kinds, opts.cycles, 5, 20_251_017);
    let records = run_matrix(&targets, &specs, &guess, &FilterConfig::default(), &solver, 0, |r| {
        eprintln!("target {} {}: {:?} in {:.1} s", r.spec.target_id, r.spec.filter_kind, r.status, r.wall_time);
    })?;

    println!("{:<9} {:>5} {:>9}  mean final accuracy %", "filter", "runs", "diverged");
    println!("{:<26}{}", "", ParameterVector::NAMES.map(|n| format!("{n:>7}")).join(""));
    for kind in kinds {
        let sel: Vec<&RunRecord> = records.iter().filter(|r| r.spec.filter_kind == kind).collect();
        let s = summarize(&sel, kind);
        let acc: String = s.mean_accuracy.iter().map(|a| format!("{a:7.1}")).collect();
        println!("{:<9} {:>5} {:>9}  {acc}", kind.to_string(), s.runs, s.diverged + s.solver_failed);
    }
    Ok(records)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse()).map(|_| ())
}
