//! Synthetic targets: truncated-normal parameter draws, a plausibility gate on
//! the resulting haemodynamics, pathophysiology labels and corrupted
//! observation signals.
//!
//! Randomness comes from ChaCha8 streams. A stream is identified by
//! `(seed, purpose, id)`: the generator is seeded with `seed` and its stream
//! number set to `purpose << 32 | id`, so every candidate draw and every
//! target's noise is independent of how many other streams were consumed.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    derived_metrics, observe, ClinicalMetrics, InternalState, ObservationSubset, ObservationWindow, ParameterVector,
};
use crate::solver::{run_to_steady_state, SolverConfig, SolverError, SteadyCycle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("{rejections} consecutive candidate parameter sets were rejected")]
    EnsembleInfeasible { rejections: usize },
    #[error("invalid sampling configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Purposes for stream splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Candidate = 1,
    Noise = 2,
    Selection = 3,
    Derive = 4,
}

pub fn stream_rng(seed: u64, purpose: Stream, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | (id & 0xffff_ffff));
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub nominal: ParameterVector,
    /// Half-width of the truncation interval relative to nominal.
    pub spread: f64,
    pub seed: u64,
    /// Parameters held at their nominal value.
    pub fixed: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            nominal: ParameterVector::nominal(),
            spread: 0.6,
            seed: 20_251_017,
            fixed: vec!["tau".into()],
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.spread >= 0.0 && self.spread < 1.0) {
            return Err(SynthError::InvalidConfig(format!(
                "model.spread must lie in [0, 1), got {}",
                self.spread
            )));
        }
        for name in &self.fixed {
            if !ParameterVector::NAMES.contains(&name.as_str()) {
                return Err(SynthError::InvalidConfig(format!("model.fixed: unknown parameter {name:?}")));
            }
        }
        self.nominal
            .validate()
            .map_err(|e| SynthError::InvalidConfig(format!("model.nominal: {e}")))
    }
}

/// Each free component from `N(θ, (spread/3 · θ)²)` truncated by rejection to
/// `[(1 - spread) θ, (1 + spread) θ]`.
pub fn sample_target<R: Rng + ?Sized>(cfg: &SamplingConfig, rng: &mut R) -> ParameterVector {
    let nominal = cfg.nominal.to_array();
    let mut out = nominal;
    for (i, (v, mu)) in out.iter_mut().zip(nominal).enumerate() {
        let name = ParameterVector::NAMES[i];
        if cfg.spread == 0.0 || cfg.fixed.iter().any(|f| f == name) {
            continue;
        }
        let sd = cfg.spread / 3.0 * mu;
        let (lo, hi) = ((1.0 - cfg.spread) * mu, (1.0 + cfg.spread) * mu);
        *v = loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = mu + sd * z;
            if (lo..=hi).contains(&x) {
                break x;
            }
        };
    }
    ParameterVector::from_array(out)
}

/// Relaxed plausibility limits, inclusive.
#[derive(Clone, Copy, Debug)]
pub struct Limits;

impl Limits {
    pub const SBP: (f64, f64) = (60.0, 250.0);
    pub const DBP: (f64, f64) = (30.0, 150.0);
    pub const LVEDP_MAX: f64 = 40.0;
    pub const SV: (f64, f64) = (20.0, 180.0);
    pub const EF: (f64, f64) = (0.15, 0.85);
    pub const CO: (f64, f64) = (2.0, 12.0);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Plausibility {
    Pass,
    Fail(Vec<String>),
}

impl Plausibility {
    pub fn passed(&self) -> bool {
        matches!(self, Plausibility::Pass)
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn plausibility_check(m: &ClinicalMetrics) -> Plausibility {
    let mut reasons = Vec::new();
    let mut range = |name: &str, v: f64, (lo, hi): (f64, f64)| {
        if !(v >= lo) {
            reasons.push(format!("{name} lower"));
        }
        if !(v <= hi) {
            reasons.push(format!("{name} upper"));
        }
    };
    range("SBP", m.sbp, Limits::SBP);
    range("DBP", m.dbp, Limits::DBP);
    range("LVEDP", m.lv_edp, (f64::NEG_INFINITY, Limits::LVEDP_MAX));
    range("SV", m.sv, Limits::SV);
    range("EF", m.ef, Limits::EF);
    range("CO", m.co, Limits::CO);
    if reasons.is_empty() {
        Plausibility::Pass
    } else {
        Plausibility::Fail(reasons)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "Hypotension")]
    Hypotension,
    #[serde(rename = "HTN-Stage-2")]
    HypertensionStage2,
    #[serde(rename = "Hypertensive-Crisis")]
    HypertensiveCrisis,
    #[serde(rename = "HFrEF")]
    Hfref,
    #[serde(rename = "Wide-Pulse-Pressure")]
    WidePulsePressure,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Hypotension,
        Label::HypertensionStage2,
        Label::HypertensiveCrisis,
        Label::Hfref,
        Label::WidePulsePressure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Hypotension => "Hypotension",
            Label::HypertensionStage2 => "HTN-Stage-2",
            Label::HypertensiveCrisis => "Hypertensive-Crisis",
            Label::Hfref => "HFrEF",
            Label::WidePulsePressure => "Wide-Pulse-Pressure",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

pub fn classify_pathophysiology(m: &ClinicalMetrics) -> BTreeSet<Label> {
    let mut out = BTreeSet::new();
    if m.sbp < 90.0 || m.dbp < 60.0 {
        out.insert(Label::Hypotension);
    }
    if m.sbp >= 140.0 || m.dbp >= 90.0 {
        out.insert(Label::HypertensionStage2);
    }
    if m.sbp > 200.0 || m.dbp > 120.0 {
        out.insert(Label::HypertensiveCrisis);
    }
    if m.ef < 0.40 {
        out.insert(Label::Hfref);
    }
    if m.pulse_pressure > 60.0 {
        out.insert(Label::WidePulsePressure);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Standard deviation of the multiplicative noise.
    pub sigma_noise: f64,
    pub smoothing_window: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_noise: 0.01,
            smoothing_window: 5,
            seed: 20_251_017,
        }
    }
}

/// Centred moving average with half-width `window / 2`, shrinking at the ends.
pub fn smooth(y: &[f64], window: usize) -> Vec<f64> {
    let h = window / 2;
    let n = y.len();
    if h == 0 || n == 0 {
        return y.to_vec();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in y {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            if lo == hi {
                return y[i];
            }
            // Direct sum keeps constant inputs exact.
            let s: f64 = y[lo..=hi].iter().sum();
            s / (hi - lo + 1) as f64
        })
        .collect()
}

/// Multiplicative Gaussian noise, before smoothing.
pub fn add_noise<R: Rng + ?Sized>(y: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    y.iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            (1.0 + sigma * z) * v
        })
        .collect()
}

/// `y_obs = smooth((1 + ε) y_true)` with `ε ~ N(0, σ²)` i.i.d.
pub fn corrupt_signal<R: Rng + ?Sized>(y_true: &[f64], spec: &NoiseSpec, rng: &mut R) -> Vec<f64> {
    smooth(&add_noise(y_true, spec.sigma_noise, rng), spec.smoothing_window)
}

/// A plausible target parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetCase {
    pub id: usize,
    pub params: ParameterVector,
    pub metrics: ClinicalMetrics,
    pub labels: BTreeSet<Label>,
    /// Candidate stream index this case was drawn from.
    pub seed: u64,
}

/// Warm-up of a parameter set from the shared starting state.
pub fn steady_cycle(params: &ParameterVector, solver: &SolverConfig) -> Result<SteadyCycle, SolverError> {
    run_to_steady_state(params, &InternalState::default_initial(params), solver)
}

/// Evaluate one candidate: steady state, metrics, gate.
pub fn evaluate_candidate(params: &ParameterVector, solver: &SolverConfig) -> Option<(ClinicalMetrics, BTreeSet<Label>)> {
    params.validate().ok()?;
    let sc = steady_cycle(params, solver).ok()?;
    let m = derived_metrics(&sc.cycle.samples, params).ok()?;
    if !m.ef.is_finite() || !plausibility_check(&m).passed() {
        return None;
    }
    let labels = classify_pathophysiology(&m);
    Some((m, labels))
}

pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

/// Draw candidates from consecutive streams until `count` pass the gate.
pub fn build_ensemble(cfg: &SamplingConfig, count: usize, solver: &SolverConfig) -> Result<Vec<TargetCase>, SynthError> {
    cfg.validate()?;
    let nominal_ok = evaluate_candidate(&cfg.nominal, solver).is_some();
    if !nominal_ok {
        return Err(SynthError::InvalidConfig("nominal parameters fail the plausibility gate".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut draw = 0u64;
    let mut rejections = 0usize;
    while out.len() < count {
        let mut rng = stream_rng(cfg.seed, Stream::Candidate, draw);
        let params = sample_target(cfg, &mut rng);
        match evaluate_candidate(&params, solver) {
            Some((metrics, labels)) => {
                rejections = 0;
                out.push(TargetCase {
                    id: out.len() + 1,
                    params,
                    metrics,
                    labels,
                    seed: draw,
                });
            }
            None => {
                rejections += 1;
                if rejections > MAX_CONSECUTIVE_REJECTIONS {
                    return Err(SynthError::EnsembleInfeasible { rejections });
                }
            }
        }
        draw += 1;
    }
    Ok(out)
}

/// Label counts over an ensemble, in [`Label::ALL`] order.
pub fn label_census(cases: &[TargetCase]) -> Vec<(Label, usize)> {
    Label::ALL
        .iter()
        .map(|l| (*l, cases.iter().filter(|c| c.labels.contains(l)).count()))
        .collect()
}

/// Noise-free and corrupted steady cycle of one target, all four signals.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSignals {
    pub truth: SteadyCycle,
    /// Corrupted signals in observation-index order (p_lv, p_sa, p_sv, V_lv).
    pub observed: [Vec<f64>; 4],
    pub dt: f64,
}

impl TargetSignals {
    /// Observation window for `subset`, built from the corrupted signals.
    pub fn window(&self, subset: &ObservationSubset) -> ObservationWindow {
        let samples = self.observed[0].len();
        let mut values = Vec::with_capacity(subset.len() * samples);
        for &idx in subset.indices() {
            values.extend_from_slice(&self.observed[idx as usize - 1]);
        }
        ObservationWindow {
            values,
            subset: subset.clone(),
            dt: self.dt,
            samples,
        }
    }

    /// Noise-free window for `subset`.
    pub fn truth_window(&self, subset: &ObservationSubset) -> ObservationWindow {
        observe(&self.truth.cycle.samples, self.dt, subset).expect("steady cycle is non-empty")
    }
}

/// Steady cycle of `case` with every signal corrupted from the target's own
/// noise stream. Signals are corrupted in index order, so any subset sees
/// the same noisy samples.
pub fn target_signals(case: &TargetCase, noise: &NoiseSpec, solver: &SolverConfig) -> Result<TargetSignals, SolverError> {
    let truth = steady_cycle(&case.params, solver)?;
    let mut rng = stream_rng(noise.seed, Stream::Noise, case.id as u64);
    let observed = std::array::from_fn(|k| {
        let sig: Vec<f64> = truth.cycle.samples.iter().map(|s| s.signal(k as u8 + 1)).collect();
        corrupt_signal(&sig, noise, &mut rng)
    });
    Ok(TargetSignals {
        dt: truth.cycle.dt,
        truth,
        observed,
    })
}
