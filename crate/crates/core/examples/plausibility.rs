//! Clinical metrics, the plausibility gate and pathophysiology labels for a
//! few hand-picked parameter sets.

use std::error::Error;

use cardio_ukf::model::{derived_metrics, ParameterVector};
use cardio_ukf::solver::SolverConfig;
use cardio_ukf::synth::{classify_pathophysiology, plausibility_check, steady_cycle, Plausibility};

pub fn cases() -> Vec<(&'static str, ParameterVector)> {
    let n = ParameterVector::nominal();
    vec![
        ("nominal", n),
        ("stiff arteries", ParameterVector { c_sa: 0.5, ..n }),
        ("weak ventricle", ParameterVector { e_max: 0.6, ..n }),
        ("high resistance", ParameterVector { r_s: 2.0, ..n }),
        ("vasodilated", ParameterVector { r_s: 0.5, ..n }),
    ]
}

pub fn run() -> Result<(), Box<dyn Error>> {
    let solver = SolverConfig::default();
    println!("{:<16} {:>7} {:>7} {:>6}  gate / labels", "case", "SBP", "DBP", "EF%");
    for (name, p) in cases() {
        let sc = steady_cycle(&p, &solver)?;
        let m = derived_metrics(&sc.cycle.samples, &p)?;
        let gate = match plausibility_check(&m) {
            Plausibility::Pass => "pass".to_string(),
            Plausibility::Fail(reasons) => format!("reject ({})", reasons.join(", ")),
        };
        let labels: Vec<String> = classify_pathophysiology(&m).iter().map(|l| l.to_string()).collect();
        println!("{name:<16} {:>7.1} {:>7.1} {:>6.1}  {gate} {}", m.sbp, m.dbp, 100.0 * m.ef, labels.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
