//! One-chamber heart with a closed systemic loop.
//!
//! The left ventricle is a time-varying elastance chamber coupled through two
//! diode valves to a systemic arterial and a systemic venous compliance. The
//! ventricular pressure is algebraic, `p_lv = E(t) (V_lv - V_0)`, so only
//! `V_lv`, `p_sa` and `p_sv` carry dynamics; [`InternalState`] still exposes
//! all four quantities because they are the observable signals.
//!
//! Activation follows a double-cosine shape:
//!
//! ```text
//! e(t) = (1 - cos(pi t / T_es)) / 2                      0    <= t < T_es
//!      = (1 + cos(pi (t - T_es) / (T_ep - T_es))) / 2    T_es <= t < T_ep
//!      = 0                                               otherwise
//! E(t) = E_min + (E_max - E_min) e(t mod tau)
//! ```
//!
//! with `T_es = tau_es * tau` and `T_ep = tau_ep * tau`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unstressed ventricular volume in mL. Not estimated.
pub const UNSTRESSED_VOLUME: f64 = 10.0;

/// Number of model parameters.
pub const N_PARAMS: usize = 10;

/// Number of internal (physiological) states.
pub const N_STATES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} is not strictly positive and finite")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("timing fractions must satisfy 0 < tau_es < tau_ep <= 1 (got tau_es = {tau_es}, tau_ep = {tau_ep})")]
    TimingOrder { tau_es: f64, tau_ep: f64 },
    #[error("E_min ({e_min}) must be below E_max ({e_max})")]
    ElastanceOrder { e_min: f64, e_max: f64 },
    #[error("time {0} is not a finite non-negative value")]
    BadTime(f64),
    #[error("state is not finite or has non-positive volume: {0:?}")]
    BadState(InternalState),
    #[error("observation subset is empty")]
    EmptySubset,
    #[error("invalid observation index {0}; expected 1..=4")]
    BadSubsetIndex(u8),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("a cycle needs at least 2 samples, got {0}")]
    CycleTooShort(usize),
}

/// The ten model parameters, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterVector {
    /// End-systole as a fraction of the cycle.
    pub tau_es: f64,
    /// End of relaxation as a fraction of the cycle.
    pub tau_ep: f64,
    /// Mitral valve resistance, mmHg s/mL.
    #[serde(rename = "R_mv")]
    pub r_mv: f64,
    /// Aortic valve impedance, mmHg s/mL.
    #[serde(rename = "Z_ao")]
    pub z_ao: f64,
    /// Systemic vascular resistance, mmHg s/mL.
    #[serde(rename = "R_s")]
    pub r_s: f64,
    /// Systemic arterial compliance, mL/mmHg.
    #[serde(rename = "C_sa")]
    pub c_sa: f64,
    /// Systemic venous compliance, mL/mmHg.
    #[serde(rename = "C_sv")]
    pub c_sv: f64,
    /// Peak elastance, mmHg/mL.
    #[serde(rename = "E_max")]
    pub e_max: f64,
    /// Diastolic elastance, mmHg/mL.
    #[serde(rename = "E_min")]
    pub e_min: f64,
    /// Heart period, s.
    pub tau: f64,
}

impl ParameterVector {
    /// Symbol names in canonical order.
    pub const NAMES: [&'static str; N_PARAMS] = [
        "tau_es", "tau_ep", "R_mv", "Z_ao", "R_s", "C_sa", "C_sv", "E_max", "E_min", "tau",
    ];

    /// Configuration default around which targets are sampled.
    pub const fn nominal() -> Self {
        Self {
            tau_es: 0.3,
            tau_ep: 0.45,
            r_mv: 0.006,
            z_ao: 0.033,
            r_s: 1.11,
            c_sa: 1.13,
            c_sv: 11.0,
            e_max: 1.5,
            e_min: 0.03,
            tau: 1.0,
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.tau_es,
            self.tau_ep,
            self.r_mv,
            self.z_ao,
            self.r_s,
            self.c_sa,
            self.c_sv,
            self.e_max,
            self.e_min,
            self.tau,
        ]
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        Self {
            tau_es: a[0],
            tau_ep: a[1],
            r_mv: a[2],
            z_ao: a[3],
            r_s: a[4],
            c_sa: a[5],
            c_sv: a[6],
            e_max: a[7],
            e_min: a[8],
            tau: a[9],
        }
    }

    // Negated comparisons so that NaN is rejected.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in Self::NAMES.iter().zip(self.to_array()) {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositiveParameter { name, value });
            }
        }
        if !(self.tau_es < self.tau_ep && self.tau_ep <= 1.0) {
            return Err(ModelError::TimingOrder {
                tau_es: self.tau_es,
                tau_ep: self.tau_ep,
            });
        }
        if !(self.e_min < self.e_max) {
            return Err(ModelError::ElastanceOrder {
                e_min: self.e_min,
                e_max: self.e_max,
            });
        }
        Ok(())
    }
}

impl Default for ParameterVector {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Pressures (mmHg) and ventricular volume (mL).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InternalState {
    pub p_lv: f64,
    pub p_sa: f64,
    pub p_sv: f64,
    #[serde(rename = "V_lv")]
    pub v_lv: f64,
}

impl InternalState {
    pub const NAMES: [&'static str; N_STATES] = ["p_lv", "p_sa", "p_sv", "V_lv"];

    pub fn to_array(&self) -> [f64; N_STATES] {
        [self.p_lv, self.p_sa, self.p_sv, self.v_lv]
    }

    pub fn from_array(a: [f64; N_STATES]) -> Self {
        Self {
            p_lv: a[0],
            p_sa: a[1],
            p_sv: a[2],
            v_lv: a[3],
        }
    }

    /// Signal by 1-based observation index (1 = p_lv, 2 = p_sa, 3 = p_sv, 4 = V_lv).
    pub fn signal(&self, index: u8) -> f64 {
        match index {
            1 => self.p_lv,
            2 => self.p_sa,
            3 => self.p_sv,
            4 => self.v_lv,
            _ => panic!("observation index {index} out of range"),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.v_lv > 0.0
    }

    /// Volume held in the compliant compartments plus the ventricle.
    pub fn stressed_volume(&self, params: &ParameterVector) -> f64 {
        self.v_lv + params.c_sa * self.p_sa + params.c_sv * self.p_sv
    }

    /// Start-of-simulation state used for warm-up runs.
    pub fn default_initial(params: &ParameterVector) -> Self {
        let v_lv = 120.0;
        Self {
            p_lv: params.e_min * (v_lv - UNSTRESSED_VOLUME),
            p_sa: 80.0,
            p_sv: 8.0,
            v_lv,
        }
    }
}

/// Time derivative of the dynamic part of the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub dp_sa: f64,
    pub dp_sv: f64,
    pub dv_lv: f64,
}

/// Flows through the three resistive elements, mL/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flows {
    pub mitral: f64,
    pub aortic: f64,
    pub systemic: f64,
}

/// Normalised activation in [0, 1]. Assumes validated parameters and `t >= 0`.
#[inline]
pub(crate) fn activation(t: f64, params: &ParameterVector) -> f64 {
    let t_hat = t.rem_euclid(params.tau);
    let t_es = params.tau_es * params.tau;
    let t_ep = params.tau_ep * params.tau;
    if t_hat < t_es {
        0.5 * (1.0 - (PI * t_hat / t_es).cos())
    } else if t_hat < t_ep {
        0.5 * (1.0 + (PI * (t_hat - t_es) / (t_ep - t_es)).cos())
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn elastance_unchecked(t: f64, params: &ParameterVector) -> f64 {
    params.e_min + (params.e_max - params.e_min) * activation(t, params)
}

/// Ventricular elastance at time `t`, periodic in `params.tau`.
pub fn elastance(t: f64, params: &ParameterVector) -> Result<f64, ModelError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(ModelError::BadTime(t));
    }
    params.validate()?;
    Ok(elastance_unchecked(t, params))
}

/// Ventricular pressure implied by the current volume.
#[inline]
pub fn ventricular_pressure(t: f64, v_lv: f64, params: &ParameterVector) -> f64 {
    elastance_unchecked(t, params) * (v_lv - UNSTRESSED_VOLUME)
}

#[inline]
pub fn flows(state: &InternalState, params: &ParameterVector) -> Flows {
    Flows {
        mitral: ((state.p_sv - state.p_lv) / params.r_mv).max(0.0),
        aortic: ((state.p_lv - state.p_sa) / params.z_ao).max(0.0),
        systemic: (state.p_sa - state.p_sv) / params.r_s,
    }
}

/// Right-hand side of the circulation ODE. `state.p_lv` is used as given; the
/// integrator keeps it consistent with the elastance law.
#[inline]
pub fn model_rhs(_t: f64, state: &InternalState, params: &ParameterVector) -> StateDerivative {
    let q = flows(state, params);
    StateDerivative {
        dv_lv: q.mitral - q.aortic,
        dp_sa: (q.aortic - q.systemic) / params.c_sa,
        dp_sv: (q.systemic - q.mitral) / params.c_sv,
    }
}

/// 1-based indices into [`InternalState`]: 1 = p_lv, 2 = p_sa, 3 = p_sv, 4 = V_lv.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct ObservationSubset(Vec<u8>);

impl ObservationSubset {
    pub fn new(indices: impl IntoIterator<Item = u8>) -> Result<Self, ModelError> {
        let mut v: Vec<u8> = indices.into_iter().collect();
        if v.is_empty() {
            return Err(ModelError::EmptySubset);
        }
        if let Some(&bad) = v.iter().find(|&&i| !(1..=4).contains(&i)) {
            return Err(ModelError::BadSubsetIndex(bad));
        }
        v.sort_unstable();
        v.dedup();
        Ok(Self(v))
    }

    pub fn full() -> Self {
        Self(vec![1, 2, 3, 4])
    }

    /// All 15 non-empty subsets, ordered by size then lexicographically.
    pub fn all_nonempty() -> Vec<Self> {
        let mut out: Vec<Self> = (1u8..16)
            .map(|mask| Self((1..=4).filter(|i| mask & (1 << (i - 1)) != 0).collect()))
            .collect();
        out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        out
    }

    pub fn indices(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Label such as `"1,4"`.
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl std::str::FromStr for ObservationSubset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut idx = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let i: u8 = part.parse().map_err(|_| ModelError::BadSubsetIndex(0))?;
            idx.push(i);
        }
        Self::new(idx)
    }
}

impl std::fmt::Display for ObservationSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl TryFrom<Vec<u8>> for ObservationSubset {
    type Error = ModelError;

    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ObservationSubset> for Vec<u8> {
    fn from(s: ObservationSubset) -> Self {
        s.0
    }
}

/// Flattened, signal-major observation vector over one Kalman interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationWindow {
    pub values: Vec<f64>,
    pub subset: ObservationSubset,
    pub dt: f64,
    /// Samples per signal.
    pub samples: usize,
}

impl ObservationWindow {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Samples of the `k`-th signal of the subset (0-based position).
    pub fn signal(&self, k: usize) -> &[f64] {
        &self.values[k * self.samples..(k + 1) * self.samples]
    }
}

/// Flatten the selected signals of `samples`: all samples of the first
/// index, then all samples of the next, and so on.
pub fn observe(
    samples: &[InternalState],
    dt: f64,
    subset: &ObservationSubset,
) -> Result<ObservationWindow, ModelError> {
    if subset.is_empty() {
        return Err(ModelError::EmptySubset);
    }
    if samples.is_empty() {
        return Err(ModelError::EmptyTrajectory);
    }
    let mut values = Vec::with_capacity(subset.len() * samples.len());
    for &idx in subset.indices() {
        values.extend(samples.iter().map(|s| s.signal(idx)));
    }
    Ok(ObservationWindow {
        values,
        subset: subset.clone(),
        dt,
        samples: samples.len(),
    })
}

/// Summary haemodynamics of one steady-state cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalMetrics {
    pub sbp: f64,
    pub dbp: f64,
    pub lv_edp: f64,
    pub sv: f64,
    pub ef: f64,
    pub co: f64,
    pub pulse_pressure: f64,
}

/// Metrics of one steady cycle sampled uniformly.
///
/// End-diastole is the last sample at which mitral flow drops from positive to
/// zero; without such a transition the sample of maximum volume is used.
pub fn derived_metrics(
    cycle: &[InternalState],
    params: &ParameterVector,
) -> Result<ClinicalMetrics, ModelError> {
    if cycle.len() < 2 {
        return Err(ModelError::CycleTooShort(cycle.len()));
    }
    let fold = |f: fn(&InternalState) -> f64| {
        cycle.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    };
    let (dbp, sbp) = fold(|s| s.p_sa);
    let (v_min, v_max) = fold(|s| s.v_lv);

    let mitral: Vec<f64> = cycle.iter().map(|s| flows(s, params).mitral).collect();
    let closure = (1..cycle.len())
        .rev()
        .find(|&j| mitral[j - 1] > 0.0 && mitral[j] <= 0.0);
    let ed_index = closure.unwrap_or_else(|| {
        cycle
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.v_lv.total_cmp(&b.1.v_lv))
            .map(|(i, _)| i)
            .unwrap_or(0)
    });

    let sv = v_max - v_min;
    Ok(ClinicalMetrics {
        sbp,
        dbp,
        lv_edp: cycle[ed_index].p_lv,
        sv,
        ef: if v_max > 0.0 { sv / v_max } else { 0.0 },
        co: sv * (60.0 / params.tau) / 1000.0,
        pulse_pressure: sbp - dbp,
    })
}
