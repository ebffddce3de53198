//! Simulate the heart model to steady state and export one cycle.
//!
//! ```text
//! cargo run --release --example simulate -- --out runs/simulate --e-max 2.0
//! ```

use std::error::Error;
use std::path::PathBuf;

use clap::Parser;

use cardio_ukf::config::RunConfig;
use cardio_ukf::io::{trajectory_csv, write_file};
use cardio_ukf::model::{derived_metrics, ParameterVector};
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::steady_cycle;

#[derive(Parser, Debug)]
pub struct Opts {
    /// Directory for `steady_cycle.csv`; nothing is written when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Peak elastance override, mmHg/mL.
    #[arg(long)]
    pub e_max: Option<f64>,
    /// Systemic resistance override, mmHg s/mL.
    #[arg(long)]
    pub r_s: Option<f64>,
}

pub fn run(opts: &Opts) -> Result<(), Box<dyn Error>> {
    let mut params = ParameterVector::nominal();
    if let Some(v) = opts.e_max {
        params.e_max = v;
    }
    if let Some(v) = opts.r_s {
        params.r_s = v;
    }
    let solver = SolverConfig::default();
    let sc = steady_cycle(&params, &solver)?;
    let m = derived_metrics(&sc.cycle.samples, &params)?;
    println!("steady after {} warm-up cycles, {} samples per cycle", sc.warmup_cycles, sc.cycle.len());
    println!("  SBP/DBP     {:.1}/{:.1} mmHg", m.sbp, m.dbp);
    println!("  LVEDP       {:.1} mmHg", m.lv_edp);
    println!("  SV / EF     {:.1} mL / {:.1} %", m.sv, 100.0 * m.ef);
    println!("  CO          {:.2} L/min", m.co);
    if let Some(dir) = &opts.out {
        let path = dir.join("steady_cycle.csv");
        write_file(&path, &trajectory_csv(&sc.cycle, &RunConfig::default().hash())?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run(&Opts::parse())
}
