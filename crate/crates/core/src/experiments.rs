//! Ensemble experiments: run matrices over targets, observation subsets and
//! noise levels, plus the summaries built from their records (accuracy
//! heatmaps, null baseline, convergence bands, blind state error).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{
    initial_estimate, run_modified_ukf, run_original_ukf, FilterConfig, FilterError, TraceEntry, TraceStatus,
};
use crate::model::{InternalState, ObservationSubset, ParameterVector, N_PARAMS};
use crate::solver::{integrate_into, SolverConfig, SolverError};
use crate::synth::{steady_cycle, stream_rng, target_signals, NoiseSpec, Stream, TargetCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("target parameter {index} is zero")]
    ZeroTarget { index: usize },
    #[error("unknown target id {0}")]
    UnknownTarget(usize),
    #[error("initial guess cannot be simulated: {0}")]
    Guess(SolverError),
    #[error("re-simulation failed: {0}")]
    Resimulation(SolverError),
    #[error("record has no trace entries")]
    EmptyTrace,
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

/// `100 (1 - |θ̂ - θ| / θ)`, floored at 0.
pub fn accuracy(estimate: &ParameterVector, target: &ParameterVector) -> Result<[f64; N_PARAMS], ExperimentError> {
    let (e, t) = (estimate.to_array(), target.to_array());
    if let Some(index) = t.iter().position(|v| *v == 0.0) {
        return Err(ExperimentError::ZeroTarget { index });
    }
    Ok(std::array::from_fn(|i| (100.0 * (1.0 - (e[i] - t[i]).abs() / t[i].abs())).max(0.0)))
}

/// Percentage of targets whose initial guess already meets `threshold`.
pub fn null_baseline(guess: &ParameterVector, targets: &[TargetCase], threshold: f64) -> [f64; N_PARAMS] {
    let mut hits = [0usize; N_PARAMS];
    for t in targets {
        if let Ok(acc) = accuracy(guess, &t.params) {
            for (h, a) in hits.iter_mut().zip(acc) {
                if a >= threshold {
                    *h += 1;
                }
            }
        }
    }
    hits.map(|h| 100.0 * h as f64 / targets.len().max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Modified,
    Original,
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Modified => "modified",
            FilterKind::Original => "original",
        })
    }
}

impl FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modified" => Ok(FilterKind::Modified),
            "original" => Ok(FilterKind::Original),
            _ => Err(format!("unknown filter {s:?} (expected modified or original)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub target_id: usize,
    pub subset: ObservationSubset,
    /// Noise level, smoothing window and the target's derived noise seed.
    pub noise: NoiseSpec,
    pub filter_kind: FilterKind,
    pub cycles: usize,
}

impl RunSpec {
    /// Sort key used for every aggregation.
    pub fn key(&self) -> (usize, ObservationSubset, u64, FilterKind) {
        (self.target_id, self.subset.clone(), self.noise.sigma_noise.to_bits(), self.filter_kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    Diverged,
    SolverFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub status: RunStatus,
    /// Accuracy of the last recorded estimate (the initial guess when nothing was recorded).
    pub final_accuracy: Vec<f64>,
    pub final_params: ParameterVector,
    /// Why the run stopped early, if it did.
    pub message: Option<String>,
    pub wall_time: f64,
    pub trace: Vec<TraceEntry>,
}

impl RunRecord {
    pub fn last_entry(&self) -> Option<&TraceEntry> {
        self.trace.last()
    }
}

/// Shared starting point of every run: the guess parameters and the start
/// of their steady cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialGuess {
    pub params: ParameterVector,
    pub state: InternalState,
}

impl InitialGuess {
    pub fn new(params: ParameterVector, solver: &SolverConfig) -> Result<Self, ExperimentError> {
        let sc = steady_cycle(&params, solver).map_err(ExperimentError::Guess)?;
        Ok(Self {
            params,
            state: sc.next_start,
        })
    }
}

/// Seed for target `target_id` derived from the experiment seed.
pub fn derive_seed(seed: u64, target_id: usize) -> u64 {
    stream_rng(seed, Stream::Derive, target_id as u64).next_u64()
}

/// One block of the run matrix: every subset at every noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixBlock {
    pub subsets: Vec<ObservationSubset>,
    pub noise_levels: Vec<f64>,
}

/// Specs for `targets × blocks × filters`, deduplicated and sorted by
/// `(target, subset, noise, filter)`.
pub fn matrix_specs(
    targets: &[TargetCase],
    blocks: &[MatrixBlock],
    filters: &[FilterKind],
    cycles: usize,
    smoothing_window: usize,
    seed: u64,
) -> Vec<RunSpec> {
    let mut combos = BTreeSet::new();
    for b in blocks {
        for s in &b.subsets {
            for n in &b.noise_levels {
                for f in filters {
                    combos.insert((s.clone(), n.to_bits(), *f));
                }
            }
        }
    }
    let mut specs = Vec::new();
    for t in targets {
        let noise_seed = derive_seed(seed, t.id);
        for (subset, noise, filter_kind) in &combos {
            specs.push(RunSpec {
                target_id: t.id,
                subset: subset.clone(),
                noise: NoiseSpec {
                    sigma_noise: f64::from_bits(*noise),
                    smoothing_window,
                    seed: noise_seed,
                },
                filter_kind: *filter_kind,
                cycles,
            });
        }
    }
    specs.sort_by_key(RunSpec::key);
    specs
}

/// Execute one run. Failures are recorded in the status, never returned.
pub fn run_one(
    target: &TargetCase,
    spec: &RunSpec,
    guess: &InitialGuess,
    filter: &FilterConfig,
    solver: &SolverConfig,
) -> RunRecord {
    let started = Instant::now();
    let cfg = FilterConfig {
        cycles: spec.cycles,
        ..filter.clone()
    };
    let init = initial_estimate(&guess.state, &guess.params, &cfg);
    let (status, trace, message) = match target_signals(target, &spec.noise, solver) {
        Err(e) => (RunStatus::SolverFailed, Vec::new(), Some(format!("target simulation: {e}"))),
        Ok(signals) => {
            let window = [signals.window(&spec.subset)];
            match spec.filter_kind {
                FilterKind::Modified => match run_modified_ukf(&window, &init, &spec.subset, &cfg, solver) {
                    Ok(t) => (RunStatus::Converged, t.entries, None),
                    Err(e) => {
                        let status = match e.source {
                            FilterError::SigmaPropagationFailed { .. } => RunStatus::SolverFailed,
                            _ => RunStatus::Diverged,
                        };
                        (status, e.trace.entries.clone(), Some(e.to_string()))
                    }
                },
                FilterKind::Original => match run_original_ukf(&window, &init, &spec.subset, &cfg, solver) {
                    Ok(t) => match t.status {
                        TraceStatus::Completed => (RunStatus::Converged, t.entries, None),
                        TraceStatus::Diverged { iter, reason } => {
                            (RunStatus::Diverged, t.entries, Some(format!("cycle {iter}: {reason}")))
                        }
                    },
                    Err(e) => (RunStatus::Diverged, Vec::new(), Some(e.to_string())),
                },
            }
        }
    };
    let final_params = trace.last().map(TraceEntry::params).unwrap_or(guess.params);
    let final_accuracy = accuracy(&final_params, &target.params)
        .map(|a| a.to_vec())
        .unwrap_or_else(|_| vec![0.0; N_PARAMS]);
    RunRecord {
        spec: spec.clone(),
        status,
        final_accuracy,
        final_params,
        message,
        wall_time: started.elapsed().as_secs_f64(),
        trace,
    }
}

/// Run every spec on a pool of `jobs` workers (0 = one per core). Records
/// come back in spec order; `progress` sees each record as it finishes.
pub fn run_matrix<F>(
    targets: &[TargetCase],
    specs: &[RunSpec],
    guess: &InitialGuess,
    filter: &FilterConfig,
    solver: &SolverConfig,
    jobs: usize,
    progress: F,
) -> Result<Vec<RunRecord>, ExperimentError>
where
    F: Fn(&RunRecord) + Sync,
{
    for s in specs {
        if !targets.iter().any(|t| t.id == s.target_id) {
            return Err(ExperimentError::UnknownTarget(s.target_id));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    // Sigma points stay sequential inside a run; the pool parallelises runs.
    let filter = FilterConfig {
        parallel: false,
        ..filter.clone()
    };
    Ok(pool.install(|| {
        specs
            .par_iter()
            .map(|s| {
                let target = targets.iter().find(|t| t.id == s.target_id).expect("checked above");
                let r = run_one(target, s, guess, &filter, solver);
                progress(&r);
                r
            })
            .collect()
    }))
}

/// Rows are parameters in [`ParameterVector::NAMES`] order; columns are the
/// 15 subsets followed by the null baseline. Cells without records are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatmapTable {
    pub threshold: f64,
    pub noise: f64,
    pub filter_kind: FilterKind,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl HeatmapTable {
    pub fn cell(&self, param: usize, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|s| s == column)?;
        self.cells[param][c]
    }
}

/// Percentage of `n_targets` whose final accuracy meets `threshold`, per
/// parameter and subset, counting failed runs as misses.
pub fn heatmap(
    records: &[RunRecord],
    n_targets: usize,
    null: &[f64; N_PARAMS],
    threshold: f64,
    noise: f64,
    filter_kind: FilterKind,
) -> HeatmapTable {
    let subsets = ObservationSubset::all_nonempty();
    let mut columns: Vec<String> = subsets.iter().map(ObservationSubset::label).collect();
    columns.push("null".into());
    let mut cells = vec![vec![None; columns.len()]; N_PARAMS];
    for (c, subset) in subsets.iter().enumerate() {
        let matching: Vec<&RunRecord> = records
            .iter()
            .filter(|r| &r.spec.subset == subset && r.spec.noise.sigma_noise == noise && r.spec.filter_kind == filter_kind)
            .collect();
        if matching.is_empty() {
            continue;
        }
        for (p, row) in cells.iter_mut().enumerate() {
            let hits = matching.iter().filter(|r| r.final_accuracy.get(p).is_some_and(|a| *a >= threshold)).count();
            row[c] = Some(100.0 * hits as f64 / n_targets.max(1) as f64);
        }
    }
    for (p, row) in cells.iter_mut().enumerate() {
        row[subsets.len()] = Some(null[p]);
    }
    HeatmapTable {
        threshold,
        noise,
        filter_kind,
        columns,
        cells,
    }
}

/// Fraction (percent) of records reaching `threshold` on parameter `p`.
pub fn success_rate(records: &[&RunRecord], p: usize, threshold: f64) -> f64 {
    let hits = records.iter().filter(|r| r.final_accuracy[p] >= threshold).count();
    100.0 * hits as f64 / records.len().max(1) as f64
}

/// Ensemble statistics at one iteration of a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub iter: usize,
    /// Runs still recording at this iteration.
    pub active: usize,
    /// Mean of `θ̂ / θ_target` per parameter.
    pub ratio_mean: [f64; N_PARAMS],
    /// Standard deviation of `θ̂ / θ_target` per parameter.
    pub ratio_sd: [f64; N_PARAMS],
    pub accuracy_mean: [f64; N_PARAMS],
}

/// Per-iteration mean trajectory and spread across the records' targets.
pub fn convergence(records: &[&RunRecord], targets: &[TargetCase]) -> Vec<ConvergenceRow> {
    let cycles = records.iter().map(|r| r.spec.cycles).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(cycles);
    for k in 0..cycles {
        let mut ratios: Vec<[f64; N_PARAMS]> = Vec::new();
        let mut accs: Vec<[f64; N_PARAMS]> = Vec::new();
        for r in records {
            let (Some(e), Some(t)) = (r.trace.get(k), targets.iter().find(|t| t.id == r.spec.target_id)) else {
                continue;
            };
            let (p, tp) = (e.params().to_array(), t.params.to_array());
            ratios.push(std::array::from_fn(|i| p[i] / tp[i]));
            if let Ok(a) = accuracy(&e.params(), &t.params) {
                accs.push(a);
            }
        }
        let n = ratios.len();
        let mean = |v: &[[f64; N_PARAMS]], i: usize| v.iter().map(|x| x[i]).sum::<f64>() / v.len().max(1) as f64;
        let ratio_mean: [f64; N_PARAMS] = std::array::from_fn(|i| mean(&ratios, i));
        let ratio_sd = std::array::from_fn(|i| {
            if n < 2 {
                return 0.0;
            }
            let m = ratio_mean[i];
            (ratios.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        rows.push(ConvergenceRow {
            iter: k + 1,
            active: n,
            ratio_mean,
            ratio_sd,
            accuracy_mean: std::array::from_fn(|i| mean(&accs, i)),
        });
    }
    rows
}

/// Outcome counts and mean final accuracy of one filter kind.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterSummary {
    pub filter_kind: FilterKind,
    pub runs: usize,
    pub converged: usize,
    pub diverged: usize,
    pub solver_failed: usize,
    pub mean_accuracy: [f64; N_PARAMS],
    /// Runs with at least 8 parameters at ≥ 98 %.
    pub runs_8_of_10_at_98: usize,
}

pub fn summarize(records: &[&RunRecord], filter_kind: FilterKind) -> FilterSummary {
    let count = |s: RunStatus| records.iter().filter(|r| r.status == s).count();
    let n = records.len().max(1) as f64;
    FilterSummary {
        filter_kind,
        runs: records.len(),
        converged: count(RunStatus::Converged),
        diverged: count(RunStatus::Diverged),
        solver_failed: count(RunStatus::SolverFailed),
        mean_accuracy: std::array::from_fn(|i| records.iter().map(|r| r.final_accuracy[i]).sum::<f64>() / n),
        runs_8_of_10_at_98: records
            .iter()
            .filter(|r| r.final_accuracy.iter().filter(|a| **a >= 98.0).count() >= 8)
            .count(),
    }
}

/// Paired true and re-simulated arterial pressure over one cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct BlindStateReport {
    pub target_id: usize,
    pub t: Vec<f64>,
    pub p_sa_true: Vec<f64>,
    pub p_sa_est: Vec<f64>,
    /// Root-mean-square error, mmHg.
    pub rmse: f64,
    /// True pulse pressure, mmHg.
    pub pulse_pressure: f64,
}

impl BlindStateReport {
    pub fn relative_error(&self) -> f64 {
        self.rmse / self.pulse_pressure
    }
}

/// Re-simulate the last estimate of `record` over one target cycle and
/// compare its `p_sa` with the noise-free truth.
///
/// The estimate's state belongs to the end of the last Kalman interval, which
/// is also the start of the next target cycle; integration continues in
/// absolute time from there.
pub fn blind_state_error(
    record: &RunRecord,
    target: &TargetCase,
    tau_k: f64,
    solver: &SolverConfig,
) -> Result<BlindStateReport, ExperimentError> {
    let last = record.last_entry().ok_or(ExperimentError::EmptyTrace)?;
    let truth = steady_cycle(&target.params, solver).map_err(ExperimentError::Resimulation)?;
    let n = truth.cycle.samples.len();
    let params = last.params();
    params
        .validate()
        .map_err(|e| ExperimentError::Resimulation(SolverError::Model(e)))?;
    let t0 = last.iter as f64 * solver.steps_for(tau_k) as f64 * solver.dt_output;
    let mut est = Vec::with_capacity(n + 1);
    integrate_into(&params, &last.state(), t0, n, solver, &mut est).map_err(ExperimentError::Resimulation)?;
    let p_sa_true: Vec<f64> = truth.cycle.samples.iter().map(|s| s.p_sa).collect();
    let p_sa_est: Vec<f64> = est[..n].iter().map(|s| s.p_sa).collect();
    let rmse = (p_sa_true.iter().zip(&p_sa_est).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
    let max = p_sa_true.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = p_sa_true.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BlindStateReport {
        target_id: target.id,
        t: (0..n).map(|i| truth.cycle.time(i)).collect(),
        p_sa_true,
        p_sa_est,
        rmse,
        pulse_pressure: max - min,
    })
}

/// `count` distinct target ids drawn without replacement from `ids`.
pub fn select_targets(ids: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, Stream::Selection, 0);
    let mut picked: Vec<usize> = sample(&mut rng, ids.len(), count.min(ids.len()))
        .into_iter()
        .map(|i| ids[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaled(p: &ParameterVector, f: [f64; N_PARAMS]) -> ParameterVector {
        let a = p.to_array();
        ParameterVector::from_array(std::array::from_fn(|i| a[i] * f[i]))
    }

    #[test]
    fn accuracy_definition() {
        let t = ParameterVector::nominal();
        assert_eq!(accuracy(&t, &t).unwrap(), [100.0; N_PARAMS]);
        let mut f = [1.0; N_PARAMS];
        f[0] = 1.02;
        f[1] = 2.2;
        let a = accuracy(&scaled(&t, f), &t).unwrap();
        assert!((a[0] - 98.0).abs() < 1e-9);
        assert_eq!(a[1], 0.0);
        let mut z = t;
        z.r_s = 0.0;
        assert_eq!(accuracy(&t, &z), Err(ExperimentError::ZeroTarget { index: 4 }));
    }

    fn case(id: usize, params: ParameterVector) -> TargetCase {
        TargetCase {
            id,
            params,
            metrics: crate::model::ClinicalMetrics {
                sbp: 120.0,
                dbp: 80.0,
                lv_edp: 8.0,
                sv: 70.0,
                ef: 0.55,
                co: 5.0,
                pulse_pressure: 40.0,
            },
            labels: BTreeSet::new(),
            seed: id as u64,
        }
    }

    #[test]
    fn null_baseline_edges() {
        let nom = ParameterVector::nominal();
        let targets = vec![case(1, scaled(&nom, [1.5; N_PARAMS])), case(2, nom)];
        assert_eq!(null_baseline(&nom, &targets, 0.0), [100.0; N_PARAMS]);
        assert_eq!(null_baseline(&nom, &targets, 98.0), [50.0; N_PARAMS]);
    }

    #[test]
    fn specs_are_sorted_and_complete() {
        let nom = ParameterVector::nominal();
        let targets = vec![case(2, nom), case(1, nom)];
        let blocks = [
            MatrixBlock {
                subsets: ObservationSubset::all_nonempty(),
                noise_levels: vec![0.01],
            },
            MatrixBlock {
                subsets: vec![ObservationSubset::full()],
                noise_levels: vec![0.05, 0.01],
            },
        ];
        let specs = matrix_specs(&targets, &blocks, &[FilterKind::Modified], 10, 5, 7);
        assert_eq!(specs.len(), 2 * 16);
        assert!(specs.windows(2).all(|w| w[0].key() < w[1].key()));
        assert_ne!(specs[0].noise.seed, specs[16].noise.seed);
    }

    #[test]
    fn selection_is_deterministic() {
        let ids: Vec<usize> = (1..=20).collect();
        let a = select_targets(&ids, 12, 3);
        assert_eq!(a, select_targets(&ids, 12, 3));
        assert_eq!(a.len(), 12);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
