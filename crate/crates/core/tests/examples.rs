//! Every example runs end to end at reduced size.

#[allow(dead_code)]
#[path = "../examples/simulate.rs"]
mod simulate;
#[allow(dead_code)]
#[path = "../examples/plausibility.rs"]
mod plausibility;
#[allow(dead_code)]
#[path = "../examples/ensemble.rs"]
mod ensemble;
#[allow(dead_code)]
#[path = "../examples/corrupt_signals.rs"]
mod corrupt_signals;
#[allow(dead_code)]
#[path = "../examples/modified_ukf.rs"]
mod modified_ukf;
#[allow(dead_code)]
#[path = "../examples/compare_filters.rs"]
mod compare_filters;
#[allow(dead_code)]
#[path = "../examples/heatmap_report.rs"]
mod heatmap_report;
#[allow(dead_code)]
#[path = "../examples/blind_psa.rs"]
mod blind_psa;
#[allow(dead_code)]
#[path = "../examples/cost_scaling.rs"]
mod cost_scaling;
#[allow(dead_code)]
#[path = "../examples/config.rs"]
mod config;

use cardio_ukf::experiments::FilterKind;
use cardio_ukf::ukf::GainSolver;

#[test]
fn simulate_writes_a_cycle() {
    let dir = tempfile::tempdir().unwrap();
    simulate::run(&simulate::Opts { out: Some(dir.path().into()), e_max: Some(2.0), r_s: None }).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("steady_cycle.csv")).unwrap();
    assert!(csv.starts_with("# config-hash: "));
    assert_eq!(csv.lines().nth(1), Some("t,p_lv,p_sa,p_sv,V_lv"));
}

#[test]
fn plausibility_cases_run() {
    assert_eq!(plausibility::cases().len(), 5);
    plausibility::run().unwrap();
}

#[test]
fn ensemble_writes_targets() {
    let dir = tempfile::tempdir().unwrap();
    let t = ensemble::run(&ensemble::Opts { count: 4, seed: 3, out: Some(dir.path().into()) }).unwrap();
    assert_eq!(t.len(), 4);
    assert!(dir.path().join("targets.json").exists());
}

#[test]
fn corrupt_signals_writes_each_level() {
    let dir = tempfile::tempdir().unwrap();
    let opts = corrupt_signals::Opts { noise: vec![0.0, 0.05], smoothing_window: 5, out: Some(dir.path().into()) };
    corrupt_signals::run(&opts).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn modified_ukf_reports_final_accuracy() {
    let opts = modified_ukf::Opts { subset: "1,2,3,4".parse().unwrap(), noise: 0.01, cycles: 15, target: 1 };
    let acc = modified_ukf::run(&opts).unwrap();
    assert!(acc.iter().all(|a| a.is_finite()));
}

#[test]
fn compare_filters_runs_both_kinds() {
    let r = compare_filters::run(&compare_filters::Opts { targets: 1, noise: 0.05, cycles: 2 }).unwrap();
    assert_eq!(r.len(), 2);
    assert!(r.iter().any(|r| r.spec.filter_kind == FilterKind::Original));
}

#[test]
fn heatmap_report_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let opts = heatmap_report::Opts { targets: 2, cycles: 2, noise: 0.01, all_subsets: false, out: Some(dir.path().into()) };
    let report = heatmap_report::run(&opts).unwrap();
    for t in ["98", "95", "90"] {
        assert!(report.get(&format!("heatmap_{t}_0.01.csv")).is_some(), "missing {t}");
    }
    assert!(dir.path().join("null_baseline.csv").exists());
}

#[test]
fn blind_psa_reports_each_target() {
    let out = blind_psa::run(&blind_psa::Opts { targets: 1, cycles: 3, noise: 0.01 }).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn cost_scaling_times_every_subset_size() {
    let out = cost_scaling::run(&cost_scaling::Opts { iters: 1, dense: false }).unwrap();
    assert_eq!(out.len(), 4);
    assert!(out.iter().all(|(_, g, t)| *g == GainSolver::LowRank && *t > 0.0));
}

#[test]
fn config_defaults_validate() {
    let cfg = config::run(None).unwrap();
    assert_eq!(cfg.hash().len(), 16);
}
