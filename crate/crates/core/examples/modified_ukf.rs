//! Estimate all ten parameters of one target with the batch-interval UKF.
//!
//! ```text
//! cargo run --release --example modified_ukf -- --subset 1,2,3,4 --noise 0.01 --cycles 100
//! ```

use std::error::Error;

use clap::Parser;

use cardio_ukf::experiments::{accuracy, InitialGuess};
use cardio_ukf::filter::{initial_estimate, run_modified_ukf, FilterConfig};
use cardio_ukf::model::{ObservationSubset, ParameterVector};
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::{build_ensemble, target_signals, NoiseSpec, SamplingConfig};

#[derive(Parser, Debug)]
pub struct Opts {
    #[arg(long, default_value = "1,2,3,4")]
    pub subset: ObservationSubset,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 100)]
    pub cycles: usize,
    /// Which target of the default ensemble (1-based).
    #[arg(long, default_value_t = 1)]
    pub target: usize,
}

pub fn run(opts: &Opts) -> Result<[f64; 10], Box<dyn Error>> {
    let solver = SolverConfig::default();
    let target = build_ensemble(&SamplingConfig::default(), opts.target, &solver)?.remove(opts.target - 1);
    let noise = NoiseSpec {
        sigma_noise: opts.noise,
        ..NoiseSpec::default()
    };
    let window = [target_signals(&target, &noise, &solver)?.window(&opts.subset)];
    let guess = InitialGuess::new(ParameterVector::nominal(), &solver)?;
    let cfg = FilterConfig {
        cycles: opts.cycles,
        ..FilterConfig::default()
    };
    let init = initial_estimate(&guess.state, &guess.params, &cfg);
    let trace = run_modified_ukf(&window, &init, &opts.subset, &cfg, &solver)?;

    println!("{:>5} {:>9}  accuracy % ({})", "iter", "|innov|", ParameterVector::NAMES.join(" "));
    let every = (opts.cycles / 10).max(1);
    for e in trace.entries.iter().filter(|e| e.iter % every == 0 || e.iter == 1) {
        let a = accuracy(&e.params(), &target.params)?;
        let a: Vec<String> = a.iter().map(|v| format!("{v:5.1}")).collect();
        println!("{:>5} {:>9.2}  {}", e.iter, e.innovation_norm, a.join(" "));
    }
    let last = trace.last().ok_or("empty trace")?;
    Ok(accuracy(&last.params(), &target.params)?)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse()).map(|_| ())
}
