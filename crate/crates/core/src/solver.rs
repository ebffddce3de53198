//! Fixed-step RK4 integration of the circulation model.
//!
//! Only `V_lv`, `p_sa` and `p_sv` are integrated; `p_lv` is recomputed from the
//! elastance law at every stage and at every output sample.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ventricular_pressure, InternalState, ModelError, ParameterVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("integration produced a non-finite state at t = {time}")]
    SolverDiverged { time: f64 },
    #[error("ventricular volume became non-positive at t = {time}")]
    NonPhysiological { time: f64 },
    #[error("no steady state after {cycles} warm-up cycles")]
    NotConverged { cycles: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Output sampling interval, s.
    pub dt_output: f64,
    /// Internal RK4 steps per output sample.
    pub substeps: usize,
    pub max_warmup_cycles: usize,
    /// Relative per-cycle change of the signal extrema that counts as steady.
    pub steady_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt_output: 0.001,
            substeps: 1,
            max_warmup_cycles: 50,
            steady_tol: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt_output.is_finite() && self.dt_output > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "solver.dt_output must be > 0, got {}",
                self.dt_output
            )));
        }
        if self.substeps == 0 {
            return Err(SolverError::InvalidConfig("solver.substeps must be >= 1".into()));
        }
        if !(self.steady_tol.is_finite() && self.steady_tol > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "solver.steady_tol must be > 0, got {}",
                self.steady_tol
            )));
        }
        Ok(())
    }

    /// Output samples needed to cover `duration` (rounded to the nearest step).
    pub fn steps_for(&self, duration: f64) -> usize {
        (duration / self.dt_output).round() as usize
    }
}

/// Uniformly sampled states starting at `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<InternalState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn last(&self) -> &InternalState {
        self.samples.last().expect("trajectory is never empty")
    }
}

#[derive(Clone, Copy, Debug)]
struct Dyn {
    v: f64,
    p_sa: f64,
    p_sv: f64,
}

impl Dyn {
    #[inline]
    fn axpy(self, h: f64, d: &Dyn) -> Dyn {
        Dyn {
            v: self.v + h * d.v,
            p_sa: self.p_sa + h * d.p_sa,
            p_sv: self.p_sv + h * d.p_sv,
        }
    }

    fn is_finite(&self) -> bool {
        self.v.is_finite() && self.p_sa.is_finite() && self.p_sv.is_finite()
    }
}

/// Open/closed configuration of the two valves. Within a step the valve
/// configuration is frozen so that the right-hand side is smooth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Valves {
    mitral: bool,
    aortic: bool,
}

/// Valve driving pressures: (p_sv - p_lv, p_lv - p_sa).
#[inline]
fn gradients(t: f64, y: &Dyn, params: &ParameterVector) -> (f64, f64) {
    let p_lv = ventricular_pressure(t, y.v, params);
    (y.p_sv - p_lv, p_lv - y.p_sa)
}

#[inline]
fn valves_at(t: f64, y: &Dyn, params: &ParameterVector) -> Valves {
    let (gm, ga) = gradients(t, y, params);
    Valves {
        mitral: gm > 0.0,
        aortic: ga > 0.0,
    }
}

#[inline]
fn deriv(t: f64, y: Dyn, params: &ParameterVector, valves: Valves) -> Dyn {
    let p_lv = ventricular_pressure(t, y.v, params);
    let q_mv = if valves.mitral { (y.p_sv - p_lv) / params.r_mv } else { 0.0 };
    let q_ao = if valves.aortic { (p_lv - y.p_sa) / params.z_ao } else { 0.0 };
    let q_s = (y.p_sa - y.p_sv) / params.r_s;
    Dyn {
        v: q_mv - q_ao,
        p_sa: (q_ao - q_s) / params.c_sa,
        p_sv: (q_s - q_mv) / params.c_sv,
    }
}

#[inline]
fn rk4_step(t: f64, y: Dyn, h: f64, params: &ParameterVector, valves: Valves) -> Dyn {
    let k1 = deriv(t, y, params, valves);
    let k2 = deriv(t + 0.5 * h, y.axpy(0.5 * h, &k1), params, valves);
    let k3 = deriv(t + 0.5 * h, y.axpy(0.5 * h, &k2), params, valves);
    let k4 = deriv(t + h, y.axpy(h, &k3), params, valves);
    Dyn {
        v: y.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        p_sa: y.p_sa + h / 6.0 * (k1.p_sa + 2.0 * k2.p_sa + 2.0 * k3.p_sa + k4.p_sa),
        p_sv: y.p_sv + h / 6.0 * (k1.p_sv + 2.0 * k2.p_sv + 2.0 * k3.p_sv + k4.p_sv),
    }
}

/// Time from `t` to the next activation breakpoint (cycle onset, end-systole,
/// end of relaxation), where the elastance loses smoothness.
#[inline]
fn to_next_breakpoint(t: f64, params: &ParameterVector) -> f64 {
    let phase = t.rem_euclid(params.tau);
    let t_es = params.tau_es * params.tau;
    let t_ep = params.tau_ep * params.tau;
    let next = if phase < t_es {
        t_es
    } else if phase < t_ep {
        t_ep
    } else {
        params.tau
    };
    next - phase
}

const MAX_PIECES: usize = 16;

/// One internal step of length `h` from `(t, y)`, split at activation
/// breakpoints and at located valve openings/closings.
fn piecewise_step(t: f64, y: Dyn, h: f64, params: &ParameterVector) -> Dyn {
    let t_end = t + h;
    let mut tc = t;
    let mut yc = y;
    let mut forced: Option<Valves> = None;
    let min_piece = h * 1e-9;
    for _ in 0..MAX_PIECES {
        let remaining = t_end - tc;
        if remaining <= min_piece {
            return yc;
        }
        let bp = to_next_breakpoint(tc, params);
        let piece = if bp > min_piece && bp < remaining { bp } else { remaining };
        let valves = forced.take().unwrap_or_else(|| valves_at(tc, &yc, params));
        let y1 = rk4_step(tc, yc, piece, params, valves);
        if !y1.is_finite() {
            return y1;
        }
        let after = valves_at(tc + piece, &y1, params);
        if after == valves {
            tc += piece;
            yc = y1;
            continue;
        }
        // A valve switched inside the piece: find the earliest crossing.
        let (g0m, g0a) = gradients(tc, &yc, params);
        let mut theta = 1.0;
        let mut which = valves;
        if after.mitral != valves.mitral {
            let th = locate(tc, yc, piece, params, valves, g0m, |g| g.0);
            if th < theta {
                theta = th;
                which = Valves { mitral: after.mitral, ..valves };
            }
        }
        if after.aortic != valves.aortic {
            let th = locate(tc, yc, piece, params, valves, g0a, |g| g.1);
            if th < theta {
                theta = th;
                which = Valves { aortic: after.aortic, ..valves };
            }
        }
        if theta * piece <= min_piece || theta >= 1.0 {
            tc += piece;
            yc = y1;
            continue;
        }
        let sub = theta * piece;
        yc = rk4_step(tc, yc, sub, params, valves);
        tc += sub;
        forced = Some(which);
    }
    // Event cascade cap reached: finish with the sign-based configuration.
    let remaining = t_end - tc;
    if remaining > min_piece {
        let valves = valves_at(tc, &yc, params);
        yc = rk4_step(tc, yc, remaining, params, valves);
    }
    yc
}

/// Fraction of `h` at which the selected valve gradient changes sign, by
/// Illinois false position on the RK4 step length.
fn locate(
    t: f64,
    y: Dyn,
    h: f64,
    params: &ParameterVector,
    valves: Valves,
    g_start: f64,
    pick: impl Fn((f64, f64)) -> f64,
) -> f64 {
    let eval = |theta: f64| {
        let ys = rk4_step(t, y, theta * h, params, valves);
        pick(gradients(t + theta * h, &ys, params))
    };
    let (mut a, mut fa) = (0.0_f64, g_start);
    let (mut b, mut fb) = (1.0_f64, eval(1.0));
    if fa == 0.0 || fa.signum() == fb.signum() {
        return 1.0;
    }
    let mut side = 0i8;
    for _ in 0..60 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = eval(c);
        if fc == 0.0 || (b - a) < 1e-13 {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    // Crossing lies in [a, b]; step to its far edge so the sign has flipped.
    b
}

#[inline]
fn to_state(t: f64, y: Dyn, params: &ParameterVector) -> InternalState {
    InternalState {
        p_lv: ventricular_pressure(t, y.v, params),
        p_sa: y.p_sa,
        p_sv: y.p_sv,
        v_lv: y.v,
    }
}

/// Advance one output interval. Parameters must already be validated.
#[inline]
pub(crate) fn advance(
    t: f64,
    state: &InternalState,
    params: &ParameterVector,
    cfg: &SolverConfig,
) -> Result<InternalState, SolverError> {
    let h = cfg.dt_output / cfg.substeps as f64;
    let mut y = Dyn {
        v: state.v_lv,
        p_sa: state.p_sa,
        p_sv: state.p_sv,
    };
    for k in 0..cfg.substeps {
        y = piecewise_step(t + k as f64 * h, y, h, params);
    }
    let t_end = t + cfg.dt_output;
    let next = to_state(t_end, y, params);
    if !(next.p_lv.is_finite() && y.v.is_finite() && y.p_sa.is_finite() && y.p_sv.is_finite()) {
        return Err(SolverError::SolverDiverged { time: t_end });
    }
    if next.v_lv <= 0.0 {
        return Err(SolverError::NonPhysiological { time: t_end });
    }
    Ok(next)
}

/// Integrate `steps` output intervals from local time `t0`, appending
/// `steps + 1` samples (including the initial one) to `out`.
pub(crate) fn integrate_into(
    params: &ParameterVector,
    init: &InternalState,
    t0: f64,
    steps: usize,
    cfg: &SolverConfig,
    out: &mut Vec<InternalState>,
) -> Result<(), SolverError> {
    let mut s = to_state(t0, Dyn { v: init.v_lv, p_sa: init.p_sa, p_sv: init.p_sv }, params);
    if !s.is_valid() {
        return Err(if s.v_lv <= 0.0 && s.v_lv.is_finite() {
            SolverError::NonPhysiological { time: t0 }
        } else {
            SolverError::SolverDiverged { time: t0 }
        });
    }
    out.reserve(steps + 1);
    out.push(s);
    for k in 0..steps {
        s = advance(t0 + k as f64 * cfg.dt_output, &s, params, cfg)?;
        out.push(s);
    }
    Ok(())
}

/// Classical RK4 from `t = 0` over `duration`, sampled every `dt_output`
/// including the initial point. `init.p_lv` is ignored and recomputed.
pub fn integrate(
    params: &ParameterVector,
    init: &InternalState,
    duration: f64,
    config: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    config.validate()?;
    params.validate()?;
    if !(duration.is_finite() && duration >= config.dt_output) {
        return Err(SolverError::InvalidConfig(format!(
            "duration {duration} shorter than one output step"
        )));
    }
    let steps = config.steps_for(duration);
    let mut samples = Vec::new();
    integrate_into(params, init, 0.0, steps, config, &mut samples)?;
    Ok(Trajectory {
        t0: 0.0,
        dt: config.dt_output,
        samples,
    })
}

/// Outcome of a warm-up run.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyCycle {
    /// One cycle of `round(tau / dt)` samples starting at activation onset.
    pub cycle: Trajectory,
    /// State at the end of the returned cycle (start of the next one).
    pub next_start: InternalState,
    /// Cycles integrated before the returned one.
    pub warmup_cycles: usize,
}

fn extrema(samples: &[InternalState]) -> [f64; 8] {
    let mut e = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY,
        f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for s in samples {
        for (k, v) in s.to_array().into_iter().enumerate() {
            e[2 * k] = e[2 * k].min(v);
            e[2 * k + 1] = e[2 * k + 1].max(v);
        }
    }
    e
}

fn max_relative_change(a: &[f64; 8], b: &[f64; 8]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-9))
        .fold(0.0, f64::max)
}

/// Cycle-by-cycle change metric of the warm-up, exposed for diagnostics.
pub fn warmup_changes(
    params: &ParameterVector,
    init: &InternalState,
    cycles: usize,
    config: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    config.validate()?;
    params.validate()?;
    let steps = cycle_steps(params, config)?;
    let mut start = *init;
    let mut prev: Option<[f64; 8]> = None;
    let mut out = Vec::with_capacity(cycles);
    let mut buf = Vec::new();
    for _ in 0..cycles {
        buf.clear();
        integrate_into(params, &start, 0.0, steps, config, &mut buf)?;
        start = buf[steps];
        let e = extrema(&buf[..steps]);
        if let Some(p) = prev {
            out.push(max_relative_change(&p, &e));
        }
        prev = Some(e);
    }
    Ok(out)
}

fn cycle_steps(params: &ParameterVector, config: &SolverConfig) -> Result<usize, SolverError> {
    let steps = config.steps_for(params.tau);
    if steps < 2 {
        return Err(ModelError::CycleTooShort(steps).into());
    }
    Ok(steps)
}

/// Integrate whole cycles until the per-cycle extrema of all four signals
/// change by less than `steady_tol`, then return the following cycle.
///
/// Each cycle restarts the activation at phase zero and spans
/// `round(tau / dt_output)` samples.
pub fn run_to_steady_state(
    params: &ParameterVector,
    init: &InternalState,
    config: &SolverConfig,
) -> Result<SteadyCycle, SolverError> {
    config.validate()?;
    params.validate()?;
    let steps = cycle_steps(params, config)?;
    let mut start = *init;
    let mut prev: Option<[f64; 8]> = None;
    let mut buf = Vec::with_capacity(steps + 1);
    for cycle in 1..=config.max_warmup_cycles {
        buf.clear();
        integrate_into(params, &start, 0.0, steps, config, &mut buf)?;
        start = buf[steps];
        let e = extrema(&buf[..steps]);
        let settled = prev.is_some_and(|p| max_relative_change(&p, &e) < config.steady_tol);
        prev = Some(e);
        if settled {
            buf.clear();
            integrate_into(params, &start, 0.0, steps, config, &mut buf)?;
            let next_start = buf[steps];
            buf.truncate(steps);
            return Ok(SteadyCycle {
                cycle: Trajectory {
                    t0: 0.0,
                    dt: config.dt_output,
                    samples: buf,
                },
                next_start,
                warmup_cycles: cycle,
            });
        }
    }
    Err(SolverError::NotConverged {
        cycles: config.max_warmup_cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal() -> (ParameterVector, InternalState) {
        let p = ParameterVector::nominal();
        (p, InternalState::default_initial(&p))
    }

    #[test]
    fn fence_post_count() {
        let (p, s) = nominal();
        let tr = integrate(&p, &s, 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(tr.len(), 1001);
        assert_eq!(tr.time(1000), 1.0);
    }

    #[test]
    fn closed_valves_keep_volume_over_one_step() {
        let p = ParameterVector::nominal();
        // Late diastole with venous pressure below ventricular pressure.
        let t = 0.5;
        let v = 120.0;
        let p_lv = ventricular_pressure(t, v, &p);
        let s = InternalState { p_lv, p_sa: 90.0, p_sv: p_lv - 1.0, v_lv: v };
        let next = advance(t, &s, &p, &SolverConfig::default()).unwrap();
        assert_eq!(next.v_lv, v);
    }

    #[test]
    fn determinism() {
        let (p, s) = nominal();
        let cfg = SolverConfig::default();
        let a = integrate(&p, &s, 2.0, &cfg).unwrap();
        let b = integrate(&p, &s, 2.0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nominal_settles() {
        let (p, s) = nominal();
        let sc = run_to_steady_state(&p, &s, &SolverConfig::default()).unwrap();
        assert!(sc.warmup_cycles <= 50);
        assert_eq!(sc.cycle.len(), 1000);
    }

    #[test]
    fn on_orbit_start_needs_one_comparison() {
        let (p, s) = nominal();
        let cfg = SolverConfig::default();
        let sc = run_to_steady_state(&p, &s, &cfg).unwrap();
        let again = run_to_steady_state(&p, &sc.cycle.samples[0], &cfg).unwrap();
        assert_eq!(again.warmup_cycles, 2);
    }

    #[test]
    fn vanishing_resistance_is_reported() {
        let (mut p, s) = nominal();
        p.r_s = 1e-9;
        let r = run_to_steady_state(&p, &s, &SolverConfig::default());
        match r {
            Err(SolverError::NonPhysiological { .. })
            | Err(SolverError::NotConverged { .. })
            | Err(SolverError::SolverDiverged { .. }) => {}
            Ok(sc) => panic!("expected failure, got {} warm-up cycles", sc.warmup_cycles),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig { substeps: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { dt_output: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let (p, s) = nominal();
        assert!(integrate(&p, &s, 1e-4, &SolverConfig::default()).is_err());
    }
}
