//! Joint state/parameter filters for the circulation model.
//!
//! The augmented vector is `[p_lv, p_sa, p_sv, V_lv, θ]` (14 entries). Two
//! variants share the sigma-point machinery of [`crate::ukf`]:
//!
//! * [`run_modified_ukf`] takes one filter step per Kalman interval. Every
//!   sigma point is integrated over the whole interval with its own
//!   parameters and the full sampled output of the interval forms one
//!   observation vector of length `a = |subset| · τ_k / δt`.
//! * [`run_original_ukf`] corrects after every solver step against the
//!   `|subset|` instantaneous samples, carrying the state between steps.
//!
//! Internally both work in coordinates divided by the magnitude of the
//! initial guess, so that covariance repair sees entries of comparable size.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InternalState, ObservationSubset, ObservationWindow, ParameterVector, N_PARAMS, N_STATES};
use crate::solver::{advance, integrate_into, SolverConfig, SolverError};
use crate::ukf::{
    correct, sigma_points, unscented_moments, AugmentedEstimate, GainSolver, PsdRepair, SigmaWeights, UkfError,
    UtParams,
};

/// Augmented dimension `L`.
pub const AUG_DIM: usize = N_STATES + N_PARAMS;

/// Smallest ventricular volume handed to the solver, mL.
pub const MIN_VOLUME: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("sigma point {index} failed to propagate: {source}")]
    SigmaPropagationFailed { index: usize, source: SolverError },
    #[error(transparent)]
    Ukf(#[from] UkfError),
    #[error("target data: {0}")]
    Data(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

/// A failed run with everything recorded before the failure.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("filter stopped at iteration {iteration}: {source}")]
pub struct FilterRunError {
    pub iteration: usize,
    pub source: FilterError,
    pub trace: FilterTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Measurement noise standard deviation relative to each signal's mean magnitude.
    pub r_rel: f64,
    /// Parameter random-walk standard deviation relative to the current estimate.
    pub q_param_rel: f64,
    /// Absolute floor added to the first rung of covariance jitter.
    pub jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            r_rel: 0.05,
            q_param_rel: 1e-3,
            jitter: 0.0,
        }
    }
}

/// What happens to the internal-state block of the mean after a correction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateUpdate {
    /// Keep the Kalman-corrected end-of-interval state.
    #[default]
    Corrected,
    /// Restart from the propagated (uncorrected) mean state.
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub ut: UtParams,
    pub noise: NoiseConfig,
    /// Kalman interval, s.
    pub tau_k: f64,
    pub cycles: usize,
    pub gain_solver: GainSolver,
    pub state_update: StateUpdate,
    /// Initial parameter standard deviation relative to the guess.
    pub p0_param_rel: f64,
    /// Initial state standard deviation relative to the guess.
    pub p0_state_rel: f64,
    /// Minimum initial state variance (squared physical units).
    pub p0_state_floor: f64,
    /// Upper clamp for decoded sigma-point parameters, as a multiple of the guess.
    pub clamp_factor: f64,
    /// Trace of the scaled covariance beyond which the per-step filter is
    /// declared diverged.
    pub divergence_bound: f64,
    /// Propagate sigma points on the rayon pool.
    pub parallel: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            ut: UtParams::default(),
            noise: NoiseConfig::default(),
            tau_k: 1.0,
            cycles: 100,
            gain_solver: GainSolver::LowRank,
            state_update: StateUpdate::Corrected,
            p0_param_rel: 0.2,
            p0_state_rel: 0.05,
            p0_state_floor: 1.0,
            clamp_factor: 10.0,
            divergence_bound: 1e3,
            parallel: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        self.ut.validate(AUG_DIM)?;
        let checks = [
            ("filter.noise.r_rel", self.noise.r_rel, self.noise.r_rel > 0.0),
            ("filter.noise.q_param_rel", self.noise.q_param_rel, self.noise.q_param_rel >= 0.0),
            ("filter.noise.jitter", self.noise.jitter, self.noise.jitter >= 0.0),
            ("filter.tau_k", self.tau_k, self.tau_k > 0.0),
            ("filter.p0_param_rel", self.p0_param_rel, self.p0_param_rel > 0.0),
            ("filter.p0_state_rel", self.p0_state_rel, self.p0_state_rel >= 0.0),
            ("filter.p0_state_floor", self.p0_state_floor, self.p0_state_floor >= 0.0),
            ("filter.clamp_factor", self.clamp_factor, self.clamp_factor > 1.0),
            ("filter.divergence_bound", self.divergence_bound, self.divergence_bound > 0.0),
        ];
        for (name, value, ok) in checks {
            if !(ok && value.is_finite()) {
                return Err(FilterError::InvalidConfig(format!("{name} = {value} is out of range")));
            }
        }
        if self.cycles == 0 {
            return Err(FilterError::InvalidConfig("filter.cycles must be >= 1".into()));
        }
        Ok(())
    }

    fn repair(&self) -> PsdRepair {
        PsdRepair {
            abs_floor: self.noise.jitter,
            ..PsdRepair::default()
        }
    }
}

/// Concatenate a state and a parameter vector into the augmented layout.
pub fn augment(state: &InternalState, params: &ParameterVector) -> DVector<f64> {
    DVector::from_iterator(AUG_DIM, state.to_array().into_iter().chain(params.to_array()))
}

/// Split an augmented vector back into state and parameters (no clamping).
pub fn split(x: &DVector<f64>) -> (InternalState, ParameterVector) {
    let s = [x[0], x[1], x[2], x[3]];
    let mut p = [0.0; N_PARAMS];
    p.copy_from_slice(&x.as_slice()[N_STATES..AUG_DIM]);
    (InternalState::from_array(s), ParameterVector::from_array(p))
}

/// Untuned diagonal starting covariance, identical for every target.
pub fn initial_estimate(guess_state: &InternalState, guess: &ParameterVector, cfg: &FilterConfig) -> AugmentedEstimate {
    let mean = augment(guess_state, guess);
    let mut cov = DMatrix::zeros(AUG_DIM, AUG_DIM);
    for i in 0..N_STATES {
        let sd = cfg.p0_state_rel * mean[i].abs();
        cov[(i, i)] = (sd * sd).max(cfg.p0_state_floor);
    }
    for i in N_STATES..AUG_DIM {
        let sd = cfg.p0_param_rel * mean[i].abs();
        cov[(i, i)] = sd * sd;
    }
    AugmentedEstimate { mean, cov }
}

/// Box `[reference / clamp_factor, clamp_factor · reference]` per parameter,
/// with `tau_ep` (a fraction of the period) capped at 1.
pub fn parameter_bounds(reference: &ParameterVector, clamp_factor: f64) -> ([f64; N_PARAMS], [f64; N_PARAMS]) {
    let r = reference.to_array();
    let lo = r.map(|v| v.abs() / clamp_factor);
    let mut hi = r.map(|v| v.abs() * clamp_factor);
    hi[1] = hi[1].min(1.0);
    (lo, hi)
}

/// Map a sigma point into the physical domain before integration: parameters
/// into [`parameter_bounds`], timing and elastance ordering restored by a
/// small shift, volume and pressures kept non-negative.
pub fn decode_point(x: &DVector<f64>, reference: &ParameterVector, clamp_factor: f64) -> (InternalState, ParameterVector) {
    let (mut state, params) = split(x);
    state.v_lv = state.v_lv.max(MIN_VOLUME);
    state.p_sa = state.p_sa.max(0.0);
    state.p_sv = state.p_sv.max(0.0);
    let (lo, hi) = parameter_bounds(reference, clamp_factor);
    let r = reference.to_array();
    let mut a = params.to_array();
    for i in 0..N_PARAMS {
        a[i] = if a[i].is_nan() { r[i] } else { a[i].clamp(lo[i], hi[i]) };
    }
    let mut p = ParameterVector::from_array(a);
    if p.tau_es >= p.tau_ep {
        p.tau_es = p.tau_ep * (1.0 - 1e-6);
    }
    if p.e_min >= p.e_max {
        p.e_min = p.e_max * (1.0 - 1e-6);
    }
    (state, p)
}

/// Project the parameter block of a (scaled) mean into the decoding box so
/// the next sigma-point set is centred on an admissible model.
fn project_mean(est: &mut AugmentedEstimate, scaling: &Scaling, reference: &ParameterVector, clamp_factor: f64) {
    let (lo, hi) = parameter_bounds(reference, clamp_factor);
    for i in 0..N_PARAMS {
        let k = N_STATES + i;
        let d = scaling.d[k];
        let v = est.mean[k] * d;
        if v.is_finite() {
            est.mean[k] = v.clamp(lo[i], hi[i]) / d;
        }
    }
}

/// Sigma points propagated over one Kalman interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatedInterval {
    /// End-of-interval augmented vectors (L × n).
    pub x_pred: DMatrix<f64>,
    /// Observation windows, one column per point (a × n).
    pub y_pred: DMatrix<f64>,
}

/// Integrate every sigma point (physical units, columns of `points`) over
/// `[t0, t0 + tau_k]` from its own state with its own parameters. `t0` is
/// absolute model time, so a wrong period shows up as phase drift across
/// intervals.
#[allow(clippy::too_many_arguments)]
pub fn propagate_interval(
    points: &DMatrix<f64>,
    t0: f64,
    subset: &ObservationSubset,
    tau_k: f64,
    solver: &SolverConfig,
    reference: &ParameterVector,
    clamp_factor: f64,
    parallel: bool,
) -> Result<PropagatedInterval, FilterError> {
    let steps = solver.steps_for(tau_k);
    if steps == 0 {
        return Err(FilterError::InvalidConfig("Kalman interval shorter than one solver step".into()));
    }
    let n = points.ncols();
    let a = subset.len() * steps;
    let one = |i: usize| -> Result<(DVector<f64>, Vec<f64>), FilterError> {
        let col = points.column(i).into_owned();
        let (state, params) = decode_point(&col, reference, clamp_factor);
        let mut samples = Vec::with_capacity(steps + 1);
        integrate_into(&params, &state, t0, steps, solver, &mut samples)
            .map_err(|source| FilterError::SigmaPropagationFailed { index: i, source })?;
        let end = samples[steps];
        let mut y = Vec::with_capacity(a);
        for &idx in subset.indices() {
            y.extend(samples[..steps].iter().map(|s| s.signal(idx)));
        }
        let mut x = col;
        for (k, v) in end.to_array().into_iter().enumerate() {
            x[k] = v;
        }
        Ok((x, y))
    };
    let results: Vec<_> = if parallel {
        (0..n).into_par_iter().map(one).collect()
    } else {
        (0..n).map(one).collect()
    };
    let mut x_pred = DMatrix::zeros(points.nrows(), n);
    let mut y_pred = DMatrix::zeros(a, n);
    for (i, r) in results.into_iter().enumerate() {
        let (x, y) = r?;
        x_pred.set_column(i, &x);
        y_pred.column_mut(i).copy_from_slice(&y);
    }
    Ok(PropagatedInterval { x_pred, y_pred })
}

/// Diagonal measurement variance `(r_rel · mean|signal|)²` per sample.
pub fn measurement_noise(window: &ObservationWindow, r_rel: f64) -> DVector<f64> {
    let mut r = DVector::zeros(window.len());
    for k in 0..window.subset.len() {
        let sig = window.signal(k);
        let m = sig.iter().map(|v| v.abs()).sum::<f64>() / sig.len() as f64;
        let var = (r_rel * m).powi(2).max(f64::MIN_POSITIVE);
        r.rows_mut(k * window.samples, window.samples).fill(var);
    }
    r
}

/// One recorded filter iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub innovation_norm: f64,
}

impl TraceEntry {
    fn from_estimate(iter: usize, est: &AugmentedEstimate, innovation_norm: f64) -> Self {
        Self {
            iter,
            mean: est.mean.iter().copied().collect(),
            cov_diag: est.cov.diagonal().iter().copied().collect(),
            innovation_norm,
        }
    }

    pub fn params(&self) -> ParameterVector {
        let mut p = [0.0; N_PARAMS];
        p.copy_from_slice(&self.mean[N_STATES..AUG_DIM]);
        ParameterVector::from_array(p)
    }

    pub fn state(&self) -> InternalState {
        InternalState::from_array([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    Diverged { iter: usize, reason: String },
}

/// Per-iteration estimates of one filter run (physical units).
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrace {
    pub entries: Vec<TraceEntry>,
    pub status: TraceStatus,
    /// Full belief after the last recorded iteration.
    pub final_estimate: AugmentedEstimate,
}

impl FilterTrace {
    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    /// JSON-lines rendering, one entry per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialise"));
            out.push('\n');
        }
        out
    }
}

/// Diagonal change of variables `x = D z` used internally.
struct Scaling {
    d: DVector<f64>,
}

impl Scaling {
    fn new(reference: &DVector<f64>) -> Self {
        Self {
            d: reference.map(|v| if v.abs() > 1e-12 { v.abs() } else { 1.0 }),
        }
    }

    fn to_internal(&self, est: &AugmentedEstimate) -> AugmentedEstimate {
        let mean = est.mean.component_div(&self.d);
        let cov = DMatrix::from_fn(AUG_DIM, AUG_DIM, |i, j| est.cov[(i, j)] / (self.d[i] * self.d[j]));
        AugmentedEstimate { mean, cov }
    }

    fn to_physical(&self, est: &AugmentedEstimate) -> AugmentedEstimate {
        let mean = est.mean.component_mul(&self.d);
        let cov = DMatrix::from_fn(AUG_DIM, AUG_DIM, |i, j| est.cov[(i, j)] * self.d[i] * self.d[j]);
        AugmentedEstimate { mean, cov }
    }

    fn points_to_physical(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = pts.clone();
        for mut c in out.column_iter_mut() {
            c.component_mul_assign(&self.d);
        }
        out
    }

    fn points_to_internal(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = pts.clone();
        for mut c in out.column_iter_mut() {
            c.component_div_assign(&self.d);
        }
        out
    }
}

fn add_parameter_noise(est: &mut AugmentedEstimate, q_rel: f64) {
    if q_rel == 0.0 {
        return;
    }
    for i in N_STATES..AUG_DIM {
        let sd = q_rel * est.mean[i];
        est.cov[(i, i)] += sd * sd;
    }
}

fn check_windows(target: &[ObservationWindow], subset: &ObservationSubset, steps: usize) -> Result<(), FilterError> {
    if target.is_empty() {
        return Err(FilterError::Data("no target windows".into()));
    }
    for (k, w) in target.iter().enumerate() {
        if &w.subset != subset || w.samples != steps {
            return Err(FilterError::Data(format!(
                "window {k} has subset {} with {} samples, expected {} with {}",
                w.subset, w.samples, subset, steps
            )));
        }
    }
    Ok(())
}

/// Batch-interval UKF. Iteration `k` corrects against `target[k % target.len()]`.
///
/// `reference` anchors the sigma-point clamp (normally the initial guess).
pub fn run_modified_ukf(
    target: &[ObservationWindow],
    init: &AugmentedEstimate,
    subset: &ObservationSubset,
    cfg: &FilterConfig,
    solver: &SolverConfig,
) -> Result<FilterTrace, Box<FilterRunError>> {
    let fail = |iteration: usize, source: FilterError, entries: Vec<TraceEntry>, est: &AugmentedEstimate| {
        Box::new(FilterRunError {
            iteration,
            source,
            trace: FilterTrace {
                status: TraceStatus::Diverged { iter: iteration, reason: "error".into() },
                entries,
                final_estimate: est.clone(),
            },
        })
    };
    if let Err(e) = cfg.validate().and_then(|_| solver.validate().map_err(|e| FilterError::InvalidConfig(e.to_string()))) {
        return Err(fail(0, e, Vec::new(), init));
    }
    let steps = solver.steps_for(cfg.tau_k);
    if let Err(e) = check_windows(target, subset, steps) {
        return Err(fail(0, e, Vec::new(), init));
    }

    let (_, reference) = split(&init.mean);
    let scaling = Scaling::new(&init.mean);
    let r_diag = measurement_noise(&target[0], cfg.noise.r_rel);
    let repair = cfg.repair();
    let weights = cfg.ut.weights(AUG_DIM);

    let mut est = scaling.to_internal(init);
    let mut entries = Vec::with_capacity(cfg.cycles);
    for iter in 1..=cfg.cycles {
        let window = &target[(iter - 1) % target.len()];
        let t0 = (iter - 1) as f64 * steps as f64 * solver.dt_output;
        let step = modified_step(&est, t0, window, &r_diag, &weights, &scaling, &reference, subset, cfg, solver, &repair);
        match step {
            Ok((next, innov)) => {
                est = next;
                entries.push(TraceEntry::from_estimate(iter, &scaling.to_physical(&est), innov));
            }
            Err(e) => return Err(fail(iter, e, entries, &scaling.to_physical(&est))),
        }
    }
    Ok(FilterTrace {
        entries,
        status: TraceStatus::Completed,
        final_estimate: scaling.to_physical(&est),
    })
}

#[allow(clippy::too_many_arguments)]
fn modified_step(
    est: &AugmentedEstimate,
    t0: f64,
    window: &ObservationWindow,
    r_diag: &DVector<f64>,
    weights: &SigmaWeights,
    scaling: &Scaling,
    reference: &ParameterVector,
    subset: &ObservationSubset,
    cfg: &FilterConfig,
    solver: &SolverConfig,
    repair: &PsdRepair,
) -> Result<(AugmentedEstimate, f64), FilterError> {
    let sp = sigma_points(est, &cfg.ut, repair)?;
    let physical = scaling.points_to_physical(&sp.points);
    let prop = propagate_interval(&physical, t0, subset, cfg.tau_k, solver, reference, cfg.clamp_factor, cfg.parallel)?;
    let x_pts = scaling.points_to_internal(&prop.x_pred);
    let (x_mean, x_cov) = unscented_moments(&x_pts, &weights.w_mean, &weights.w_cov)?;
    let prior = AugmentedEstimate { mean: x_mean, cov: x_cov };
    let y_obs = DVector::from_column_slice(&window.values);
    let c = correct(&prior, &x_pts, &prop.y_pred, &y_obs, r_diag, weights, cfg.gain_solver, repair)?;
    let mut post = c.posterior;
    project_mean(&mut post, scaling, reference, cfg.clamp_factor);
    if cfg.state_update == StateUpdate::Predicted {
        for i in 0..N_STATES {
            post.mean[i] = prior.mean[i];
        }
    }
    add_parameter_noise(&mut post, cfg.noise.q_param_rel);
    Ok((post, c.innovation_norm))
}

/// Per-step UKF baseline. `target` holds consecutive windows (tiled when
/// shorter than `cycles`); the state mean is carried between steps and one
/// trace entry is recorded per window. Divergence ends the run with a
/// [`TraceStatus::Diverged`] trace instead of an error.
pub fn run_original_ukf(
    target: &[ObservationWindow],
    init: &AugmentedEstimate,
    subset: &ObservationSubset,
    cfg: &FilterConfig,
    solver: &SolverConfig,
) -> Result<FilterTrace, FilterError> {
    cfg.validate()?;
    solver.validate().map_err(|e| FilterError::InvalidConfig(e.to_string()))?;
    let steps = solver.steps_for(cfg.tau_k);
    check_windows(target, subset, steps)?;

    let (_, reference) = split(&init.mean);
    let scaling = Scaling::new(&init.mean);
    let n_obs = subset.len();
    let r_window = measurement_noise(&target[0], cfg.noise.r_rel);
    let r_diag = DVector::from_fn(n_obs, |k, _| r_window[k * steps]);
    let repair = cfg.repair();
    let weights = cfg.ut.weights(AUG_DIM);
    let dt = solver.dt_output;

    let mut est = scaling.to_internal(init);
    let mut entries = Vec::with_capacity(cfg.cycles);
    let mut x_pts = DMatrix::zeros(AUG_DIM, weights.len());
    let mut y_pts = DMatrix::zeros(n_obs, weights.len());
    for cycle in 1..=cfg.cycles {
        let mut sq = 0.0;
        for j in 0..steps {
            // Observation at sample j + 1, wrapping into the next window.
            let (w_idx, s_idx) = if j + 1 < steps { (cycle - 1, j + 1) } else { (cycle, 0) };
            let window = &target[w_idx % target.len()];
            let y_obs = DVector::from_fn(n_obs, |k, _| window.signal(k)[s_idx]);
            let t = ((cycle - 1) * steps + j) as f64 * dt;
            let outcome = original_step(
                &est, t, &y_obs, &r_diag, &weights, &scaling, &reference, subset, cfg, solver, &repair, &mut x_pts,
                &mut y_pts,
            );
            match outcome {
                Ok((next, innov)) if healthy(&next, cfg.divergence_bound) => {
                    est = next;
                    sq += innov * innov;
                }
                Ok(_) => {
                    return Ok(diverged(entries, cycle, "covariance or mean blow-up".into(), &scaling, &est));
                }
                Err(e) => return Ok(diverged(entries, cycle, e.to_string(), &scaling, &est)),
            }
        }
        entries.push(TraceEntry::from_estimate(cycle, &scaling.to_physical(&est), sq.sqrt()));
    }
    Ok(FilterTrace {
        entries,
        status: TraceStatus::Completed,
        final_estimate: scaling.to_physical(&est),
    })
}

fn healthy(est: &AugmentedEstimate, bound: f64) -> bool {
    est.mean.iter().all(|v| v.is_finite()) && est.cov.trace().is_finite() && est.cov.trace() <= bound
}

fn diverged(
    entries: Vec<TraceEntry>,
    iter: usize,
    reason: String,
    scaling: &Scaling,
    est: &AugmentedEstimate,
) -> FilterTrace {
    FilterTrace {
        entries,
        status: TraceStatus::Diverged { iter, reason },
        final_estimate: scaling.to_physical(est),
    }
}

#[allow(clippy::too_many_arguments)]
fn original_step(
    est: &AugmentedEstimate,
    t: f64,
    y_obs: &DVector<f64>,
    r_diag: &DVector<f64>,
    weights: &SigmaWeights,
    scaling: &Scaling,
    reference: &ParameterVector,
    subset: &ObservationSubset,
    cfg: &FilterConfig,
    solver: &SolverConfig,
    repair: &PsdRepair,
    x_pts: &mut DMatrix<f64>,
    y_pts: &mut DMatrix<f64>,
) -> Result<(AugmentedEstimate, f64), FilterError> {
    let sp = sigma_points(est, &cfg.ut, repair)?;
    for i in 0..sp.len() {
        let phys = sp.points.column(i).component_mul(&scaling.d);
        let (state, params) = decode_point(&phys, reference, cfg.clamp_factor);
        let next = advance(t, &state, &params, solver)
            .map_err(|source| FilterError::SigmaPropagationFailed { index: i, source })?;
        for (k, v) in next.to_array().into_iter().enumerate() {
            x_pts[(k, i)] = v / scaling.d[k];
        }
        for k in N_STATES..AUG_DIM {
            x_pts[(k, i)] = sp.points[(k, i)];
        }
        for (k, &idx) in subset.indices().iter().enumerate() {
            y_pts[(k, i)] = next.signal(idx);
        }
    }
    let (x_mean, x_cov) = unscented_moments(x_pts, &weights.w_mean, &weights.w_cov)?;
    let prior = AugmentedEstimate { mean: x_mean, cov: x_cov };
    let c = correct(&prior, x_pts, y_pts, y_obs, r_diag, weights, cfg.gain_solver, repair)?;
    let mut post = c.posterior;
    project_mean(&mut post, scaling, reference, cfg.clamp_factor);
    add_parameter_noise(&mut post, cfg.noise.q_param_rel);
    Ok((post, c.innovation_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::observe;
    use crate::solver::run_to_steady_state;
    use crate::ukf::GainSolver;

    struct Fixture {
        params: ParameterVector,
        start: InternalState,
        solver: SolverConfig,
    }

    fn fixture() -> Fixture {
        let params = ParameterVector::nominal();
        let solver = SolverConfig::default();
        let sc = run_to_steady_state(&params, &InternalState::default_initial(&params), &solver).unwrap();
        Fixture {
            params,
            start: sc.next_start,
            solver,
        }
    }

    fn truth_window(f: &Fixture, subset: &ObservationSubset) -> ObservationWindow {
        let sc = run_to_steady_state(&f.params, &f.start, &f.solver).unwrap();
        observe(&sc.cycle.samples, f.solver.dt_output, subset).unwrap()
    }

    fn rel_change(a: &ParameterVector, b: &ParameterVector) -> f64 {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .map(|(x, y)| ((x - y) / y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn truth_start_is_a_fixed_point() {
        let f = fixture();
        let subset = ObservationSubset::full();
        let window = truth_window(&f, &subset);
        let cfg = FilterConfig {
            cycles: 10,
            noise: NoiseConfig {
                q_param_rel: 0.0,
                ..NoiseConfig::default()
            },
            ..FilterConfig::default()
        };
        let init = initial_estimate(&f.start, &f.params, &cfg);
        let trace = run_modified_ukf(&[window], &init, &subset, &cfg, &f.solver).unwrap();
        assert_eq!(trace.entries.len(), 10);
        for e in &trace.entries {
            assert!(rel_change(&e.params(), &f.params) < 1e-4, "iter {}: {:?}", e.iter, e.params());
        }
        // Covariance only shrinks without process noise.
        let d0 = init.cov.diagonal();
        let d1 = &trace.entries[9].cov_diag;
        assert!(d1.iter().zip(d0.iter()).all(|(a, b)| *a <= *b * (1.0 + 1e-9)));
    }

    // With a wide prior the unscented mean carries a genuine second-order
    // bias (E[1/R] != 1/E[R]), so the sanity check uses a tight prior.
    #[test]
    fn original_filter_stays_at_truth() {
        let f = fixture();
        let subset: ObservationSubset = "1,4".parse().unwrap();
        let window = truth_window(&f, &subset);
        let cfg = FilterConfig {
            cycles: 2,
            p0_param_rel: 1e-3,
            p0_state_rel: 1e-3,
            p0_state_floor: 1e-6,
            noise: NoiseConfig {
                q_param_rel: 0.0,
                ..NoiseConfig::default()
            },
            ..FilterConfig::default()
        };
        let init = initial_estimate(&f.start, &f.params, &cfg);
        let trace = run_original_ukf(&[window], &init, &subset, &cfg, &f.solver).unwrap();
        assert_eq!(trace.status, TraceStatus::Completed);
        assert!(rel_change(&trace.last().unwrap().params(), &f.params) < 1e-3);
    }

    #[test]
    fn low_rank_and_dense_gains_agree() {
        let f = fixture();
        let subset: ObservationSubset = "2".parse().unwrap();
        let mut window = truth_window(&f, &subset);
        // Perturb the data so the update is not trivial.
        for (i, v) in window.values.iter_mut().enumerate() {
            *v *= 1.0 + 0.01 * ((i as f64) * 0.37).sin();
        }
        let run = |gain_solver| {
            let cfg = FilterConfig {
                cycles: 2,
                gain_solver,
                ..FilterConfig::default()
            };
            let init = initial_estimate(&f.start, &f.params, &cfg);
            run_modified_ukf(&[window.clone()], &init, &subset, &cfg, &f.solver).unwrap()
        };
        let (lr, dense) = (run(GainSolver::LowRank), run(GainSolver::Dense));
        for (a, b) in lr.entries.iter().zip(&dense.entries) {
            for (x, y) in a.mean.iter().zip(&b.mean) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_spread_points_give_identical_windows() {
        let f = fixture();
        let x = augment(&f.start, &f.params);
        let points = DMatrix::from_fn(AUG_DIM, 5, |i, _| x[i]);
        let subset = ObservationSubset::full();
        let p = propagate_interval(&points, 0.0, &subset, 1.0, &f.solver, &f.params, 10.0, false).unwrap();
        assert_eq!(p.y_pred.nrows(), 4000);
        for c in 1..5 {
            assert_eq!(p.y_pred.column(c), p.y_pred.column(0));
            assert_eq!(p.x_pred.column(c), p.x_pred.column(0));
        }
        // Parameters ride along unchanged.
        assert_eq!(p.x_pred.rows(N_STATES, N_PARAMS), points.rows(N_STATES, N_PARAMS));
    }

    #[test]
    fn parallel_propagation_matches_sequential() {
        let f = fixture();
        let cfg = FilterConfig::default();
        let est = initial_estimate(&f.start, &f.params, &cfg);
        let sp = sigma_points(&est, &cfg.ut, &PsdRepair::default()).unwrap();
        let subset: ObservationSubset = "1,4".parse().unwrap();
        let seq = propagate_interval(&sp.points, 0.0, &subset, 1.0, &f.solver, &f.params, 10.0, false).unwrap();
        let par = propagate_interval(&sp.points, 0.0, &subset, 1.0, &f.solver, &f.params, 10.0, true).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn decoding_restores_a_valid_model() {
        let nominal = ParameterVector::nominal();
        let mut p = nominal;
        p.tau_es = 0.9;
        p.tau_ep = 3.0;
        p.r_s = -4.0;
        p.e_min = 50.0;
        let mut state = InternalState::default_initial(&nominal);
        state.v_lv = -3.0;
        let (s, d) = decode_point(&augment(&state, &p), &nominal, 10.0);
        assert!(d.validate().is_ok(), "{d:?}");
        assert_eq!(d.tau_ep, 1.0);
        assert_eq!(d.r_s, nominal.r_s / 10.0);
        assert!(d.e_min < d.e_max);
        assert_eq!(s.v_lv, MIN_VOLUME);
    }

    #[test]
    fn window_mismatch_is_a_data_error() {
        let f = fixture();
        let window = truth_window(&f, &"1".parse().unwrap());
        let cfg = FilterConfig::default();
        let init = initial_estimate(&f.start, &f.params, &cfg);
        let err = run_modified_ukf(&[window], &init, &"1,4".parse().unwrap(), &cfg, &f.solver).unwrap_err();
        assert!(matches!(err.source, FilterError::Data(_)));
        assert!(err.trace.entries.is_empty());
    }
}
