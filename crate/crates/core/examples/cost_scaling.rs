//! Wall time per filter iteration as the number of observed signals grows,
//! for both gain solvers.

use std::error::Error;
use std::time::Instant;

use clap::Parser;

use cardio_ukf::experiments::InitialGuess;
use cardio_ukf::filter::{initial_estimate, run_modified_ukf, FilterConfig};
use cardio_ukf::model::{ObservationSubset, ParameterVector};
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::{build_ensemble, target_signals, NoiseSpec, SamplingConfig};
use cardio_ukf::ukf::GainSolver;

#[derive(Parser, Debug)]
pub struct Opts {
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    /// Also time the dense a × a gain (seconds per iteration at four signals).
    #[arg(long)]
    pub dense: bool,
}

/// `(signals, gain, seconds per iteration)`.
pub type Timing = (usize, GainSolver, f64);

pub fn run(opts: &Opts) -> Result<Vec<Timing>, Box<dyn Error>> {
    let solver = SolverConfig::default();
    let target = build_ensemble(&SamplingConfig::default(), 1, &solver)?.remove(0);
    let signals = target_signals(&target, &NoiseSpec::default(), &solver)?;
    let guess = InitialGuess::new(ParameterVector::nominal(), &solver)?;
    let mut gains = vec![GainSolver::LowRank];
    if opts.dense {
        gains.push(GainSolver::Dense);
    }
    let mut out = Vec::new();
    for gain in gains {
        let cfg = FilterConfig {
            cycles: opts.iters,
            gain_solver: gain,
            ..FilterConfig::default()
        };
        let init = initial_estimate(&guess.state, &guess.params, &cfg);
        let mut base = None;
        for subset in ["1", "1,4", "1,2,4", "1,2,3,4"] {
            let subset: ObservationSubset = subset.parse()?;
            let window = [signals.window(&subset)];
            let started = Instant::now();
            let done = match run_modified_ukf(&window, &init, &subset, &cfg, &solver) {
                Ok(t) => t.entries.len(),
                Err(e) => e.trace.entries.len().max(1),
            };
            let per = started.elapsed().as_secs_f64() / done as f64;
            let b = *base.get_or_insert(per);
            println!(
                "{gain:?} {:<8} a = {:>5}: {:>9.1} ms/iteration ({:.1}x)",
                subset.label(),
                window[0].values.len(),
                1e3 * per,
                per / b
            );
            out.push((subset.len(), gain, per));
        }
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse()).map(|_| ())
}
