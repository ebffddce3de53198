//! Corrupt a target's signals at several noise levels and report how far the
//! observations sit from the truth.

use std::error::Error;
use std::path::PathBuf;

use clap::Parser;

use cardio_ukf::config::RunConfig;
use cardio_ukf::io::{observation_csv, observation_file_name, write_file};
use cardio_ukf::model::InternalState;
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::{build_ensemble, target_signals, NoiseSpec, SamplingConfig};

#[derive(Parser, Debug)]
pub struct Opts {
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.10])]
    pub noise: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub smoothing_window: usize,
    /// Directory for the observation CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(opts: &Opts) -> Result<(), Box<dyn Error>> {
    let solver = SolverConfig::default();
    let target = build_ensemble(&SamplingConfig::default(), 1, &solver)?.remove(0);
    println!("target {} ({} labels)", target.id, target.labels.len());
    for &sigma in &opts.noise {
        let spec = NoiseSpec {
            sigma_noise: sigma,
            smoothing_window: opts.smoothing_window,
            seed: 7,
        };
        let s = target_signals(&target, &spec, &solver)?;
        let rel: Vec<String> = (0..4)
            .map(|k| {
                let truth: Vec<f64> = s.truth.cycle.samples.iter().map(|x| x.signal(k as u8 + 1)).collect();
                let num: f64 = truth.iter().zip(&s.observed[k]).map(|(a, b)| (a - b).powi(2)).sum();
                let den: f64 = truth.iter().map(|a| a * a).sum();
                format!("{} {:.2}%", InternalState::NAMES[k], 100.0 * (num / den).sqrt())
            })
            .collect();
        println!("  sigma {sigma}: relative RMS deviation {}", rel.join(", "));
        if let Some(dir) = &opts.out {
            let path = dir.join(observation_file_name(target.id, sigma));
            write_file(&path, &observation_csv(&s, &RunConfig::default().hash())?)?;
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse())
}
