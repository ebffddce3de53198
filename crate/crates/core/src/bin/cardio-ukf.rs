//! Command-line driver: `generate` targets, `run` filter experiments and
//! `report` heatmaps and comparisons from a run directory.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 the
//! target ensemble could not be filled.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, Subcommand};

use cardio_ukf::config::RunConfig;
use cardio_ukf::experiments::{matrix_specs, run_matrix, FilterKind, InitialGuess, MatrixBlock};
use cardio_ukf::io::{
    build_report, merge_records, observation_csv, observation_file_name, read_records, read_targets, records_jsonl,
    write_file, write_targets,
};
use cardio_ukf::model::ObservationSubset;
use cardio_ukf::synth::{build_ensemble, label_census, target_signals, NoiseSpec, SynthError};

#[derive(Parser)]
#[command(name = "cardio-ukf", version, about = "Batch-interval UKF parameter estimation for a one-chamber heart model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample plausible targets and write their noisy observations.
    Generate {
        /// JSON run config (defaults apply to missing keys).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory (overrides experiment.output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of targets (overrides experiment.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run the configured matrix, or the slice selected by the overrides.
    Run {
        /// JSON run config; defaults to <out>/config.json.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Observation subset, e.g. 1,4.
        #[arg(long)]
        subset: Option<ObservationSubset>,
        /// Noise level, e.g. 0.01.
        #[arg(long)]
        noise: Option<f64>,
        /// modified or original.
        #[arg(long)]
        filter: Option<FilterKind>,
        #[arg(long)]
        target_id: Option<usize>,
        /// Filter iterations (overrides filter.cycles).
        #[arg(long)]
        cycles: Option<usize>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write heatmaps, null baseline, comparison and blind-state CSVs.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accuracy thresholds in percent, e.g. 98,95,90.
        #[arg(long, value_delimiter = ',')]
        threshold: Vec<f64>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Infeasible(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn load_config(path: Option<&Path>, fallback_dir: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut cfg = match (path, fallback_dir) {
        (Some(p), _) => RunConfig::load(p).map_err(usage)?,
        (None, Some(dir)) if dir.join("config.json").exists() => RunConfig::load(&dir.join("config.json")).map_err(usage)?,
        _ => RunConfig::default(),
    };
    cfg.apply_seed_env().map_err(usage)?;
    Ok(cfg)
}

fn generate(config: Option<PathBuf>, out: Option<PathBuf>, count: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load_config(config.as_deref(), None)?;
    if let Some(out) = out {
        cfg.experiment.output_dir = out;
    }
    if let Some(c) = count {
        cfg.experiment.count = c;
    }
    cfg.validate().map_err(usage)?;
    let dir = cfg.experiment.output_dir.clone();
    eprintln!("sampling {} targets", cfg.experiment.count);
    let targets = build_ensemble(&cfg.model, cfg.experiment.count, &cfg.solver).map_err(|e| match e {
        SynthError::EnsembleInfeasible { .. } => Failure::Infeasible(e.to_string()),
        SynthError::InvalidConfig(_) => usage(e),
        SynthError::Solver(_) => data(e),
    })?;
    let hash = cfg.hash();
    write_file(&dir.join("config.json"), &(cfg.to_json_pretty() + "\n")).map_err(data)?;
    write_targets(&dir.join("targets.json"), &targets).map_err(data)?;
    for t in &targets {
        for &sigma in &cfg.experiment.noise_levels {
            let spec = NoiseSpec {
                sigma_noise: sigma,
                smoothing_window: cfg.experiment.smoothing_window,
                seed: cardio_ukf::experiments::derive_seed(cfg.experiment.seed, t.id),
            };
            let signals = target_signals(t, &spec, &cfg.solver).map_err(data)?;
            let csv = observation_csv(&signals, &hash).map_err(data)?;
            write_file(&dir.join(observation_file_name(t.id, sigma)), &csv).map_err(data)?;
        }
    }
    println!("label census ({} targets)", targets.len());
    for (label, n) in label_census(&targets) {
        println!("  {label:<20} {n:>4}  ({:.0}%)", 100.0 * n as f64 / targets.len() as f64);
    }
    let none = targets.iter().filter(|t| t.labels.is_empty()).count();
    println!("  {:<20} {none:>4}", "none");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    subset: Option<ObservationSubset>,
    noise: Option<f64>,
    filter: Option<FilterKind>,
    target_id: Option<usize>,
    cycles: Option<usize>,
    jobs: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config.as_deref(), out.as_deref())?;
    if let Some(out) = out {
        cfg.experiment.output_dir = out;
    }
    if let Some(c) = cycles {
        cfg.filter.cycles = c;
    }
    if let Some(j) = jobs {
        cfg.experiment.jobs = j;
    }
    if let Some(n) = noise {
        if !(0.0..1.0).contains(&n) {
            return Err(Failure::Usage(format!("--noise {n} is outside [0, 1)")));
        }
    }
    cfg.validate().map_err(usage)?;
    let dir = cfg.experiment.output_dir.clone();
    let mut targets = read_targets(&dir.join("targets.json")).map_err(data)?;
    if let Some(id) = target_id {
        targets.retain(|t| t.id == id);
        if targets.is_empty() {
            return Err(Failure::Data(format!("no target with id {id}")));
        }
    }

    let mut blocks = cfg.experiment.matrix.clone();
    if subset.is_some() || noise.is_some() {
        let all_subsets: Vec<ObservationSubset> = blocks.iter().flat_map(|b| b.subsets.clone()).collect();
        let all_noise: Vec<f64> = blocks.iter().flat_map(|b| b.noise_levels.clone()).collect();
        blocks = vec![MatrixBlock {
            subsets: subset.map(|s| vec![s]).unwrap_or(all_subsets),
            noise_levels: noise.map(|n| vec![n]).unwrap_or(all_noise),
        }];
    }
    let filters = filter.map(|f| vec![f]).unwrap_or_else(|| cfg.experiment.filters.clone());
    let specs = matrix_specs(
        &targets,
        &blocks,
        &filters,
        cfg.filter.cycles,
        cfg.experiment.smoothing_window,
        cfg.experiment.seed,
    );
    let guess = InitialGuess::new(cfg.model.nominal, &cfg.solver).map_err(data)?;
    let total = specs.len();
    let done = AtomicUsize::new(0);
    eprintln!("running {total} filter runs");
    let records = run_matrix(&targets, &specs, &guess, &cfg.filter, &cfg.solver, cfg.experiment.jobs, |r| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!(
            "[{k}/{total}] target {} subset {} noise {} {}: {:?} ({:.2} s)",
            r.spec.target_id, r.spec.subset, r.spec.noise.sigma_noise, r.spec.filter_kind, r.status, r.wall_time
        );
    })
    .map_err(data)?;

    let path = dir.join("records.jsonl");
    let existing = if path.exists() { read_records(&path).map_err(data)? } else { Vec::new() };
    let merged = merge_records(existing, records);
    write_file(&path, &records_jsonl(&merged)).map_err(data)?;
    eprintln!("{} records in {}", merged.len(), path.display());
    Ok(())
}

fn report(out: Option<PathBuf>, threshold: Vec<f64>) -> Result<(), Failure> {
    let mut cfg = load_config(None, out.as_deref())?;
    if let Some(out) = out {
        cfg.experiment.output_dir = out;
    }
    let thresholds = if threshold.is_empty() { cfg.experiment.thresholds.clone() } else { threshold };
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=100.0).contains(*t)) {
        return Err(Failure::Usage(format!("--threshold {t} is outside [0, 100]")));
    }
    let dir = cfg.experiment.output_dir.clone();
    let targets = read_targets(&dir.join("targets.json")).map_err(data)?;
    let records = read_records(&dir.join("records.jsonl")).map_err(data)?;
    let report = build_report(&cfg, &targets, &records, &thresholds).map_err(data)?;
    for p in report.write(&dir).map_err(data)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate { config, out, count } => generate(config, out, count),
        Command::Run {
            config,
            out,
            subset,
            noise,
            filter,
            target_id,
            cycles,
            jobs,
        } => run(config, out, subset, noise, filter, target_id, cycles, jobs),
        Command::Report { out, threshold } => report(out, threshold),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
