//! Run a small identifiability matrix and write the report files.
//!
//! ```text
//! cargo run --release --example heatmap_report -- --targets 5 --cycles 50 --out runs/heatmap
//! ```

use std::error::Error;
use std::path::PathBuf;

use clap::Parser;

use cardio_ukf::config::RunConfig;
use cardio_ukf::experiments::{heatmap, matrix_specs, null_baseline, run_matrix, FilterKind, InitialGuess, MatrixBlock};
use cardio_ukf::io::{build_report, Report};
use cardio_ukf::model::{ObservationSubset, ParameterVector};
use cardio_ukf::synth::build_ensemble;

#[derive(Parser, Debug)]
pub struct Opts {
    #[arg(long, default_value_t = 5)]
    pub targets: usize,
    #[arg(long, default_value_t = 50)]
    pub cycles: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Run every one of the 15 subsets instead of a representative four.
    #[arg(long)]
    pub all_subsets: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(opts: &Opts) -> Result<Report, Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.experiment.count = opts.targets;
    cfg.filter.cycles = opts.cycles;
    let subsets = if opts.all_subsets {
        ObservationSubset::all_nonempty()
    } else {
        ["1,2,3,4", "1,4", "2,4", "1"].iter().map(|s| s.parse().unwrap()).collect()
    };
    cfg.experiment.matrix = vec![MatrixBlock {
        subsets,
        noise_levels: vec![opts.noise],
    }];

    let targets = build_ensemble(&cfg.model, opts.targets, &cfg.solver)?;
    let guess = InitialGuess::new(cfg.model.nominal, &cfg.solver)?;
    let specs = matrix_specs(&targets, &cfg.experiment.matrix, &[FilterKind::Modified], opts.cycles, 5, cfg.experiment.seed);
    let records = run_matrix(&targets, &specs, &guess, &cfg.filter, &cfg.solver, 0, |_| {})?;

    let threshold = 95.0;
    let table = heatmap(&records, targets.len(), &null_baseline(&guess.params, &targets, threshold), threshold, opts.noise, FilterKind::Modified);
    println!("% of targets at >= {threshold}% accuracy (blank = not run)");
    print!("{:<8}", "");
    let shown: Vec<usize> = (0..table.columns.len()).filter(|c| table.cells[0][*c].is_some()).collect();
    for c in &shown {
        print!("{:>9}", table.columns[*c]);
    }
    println!();
    for (p, name) in ParameterVector::NAMES.iter().enumerate() {
        print!("{name:<8}");
        for c in &shown {
            print!("{:>9.0}", table.cells[p][*c].unwrap_or(f64::NAN));
        }
        println!();
    }

    let report = build_report(&cfg, &targets, &records, &cfg.experiment.thresholds)?;
    if let Some(dir) = &opts.out {
        for p in report.write(dir)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(report)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse()).map(|_| ())
}
