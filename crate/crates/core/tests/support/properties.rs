//! Property checks shared by the `properties` test target and the acceptance
//! suite. Each check returns `Err(description)` on the first violation.

#![allow(dead_code)]

use cardio_ukf::experiments::{
    accuracy, heatmap, null_baseline, run_matrix, run_one, FilterKind, InitialGuess, RunRecord, RunSpec,
};
use cardio_ukf::filter::FilterConfig;
use cardio_ukf::model::{elastance, InternalState, ParameterVector, N_PARAMS};
use cardio_ukf::solver::{integrate, SolverConfig};
use cardio_ukf::synth::{
    add_noise, build_ensemble, sample_target, smooth, stream_rng, NoiseSpec, SamplingConfig, Stream, TargetCase,
};
use cardio_ukf::ukf::{
    correct, innovation_covariances, sigma_points, unscented_moments, AugmentedEstimate, GainSolver, PsdRepair,
    UtParams,
};
use nalgebra::{DMatrix, DVector};

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Deterministic SPD matrix and mean of dimension `dim` from `seed`.
pub fn random_estimate(dim: usize, seed: u64) -> AugmentedEstimate {
    use rand::Rng;
    let mut rng = stream_rng(seed, Stream::Selection, 99);
    let mean = DVector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
    AugmentedEstimate::new(mean, cov).expect("valid estimate")
}

/// `V_lv + C_sa p_sa + C_sv p_sv` is constant along a trajectory.
pub fn stressed_volume_conserved(params: &ParameterVector, duration: f64) -> Check {
    let solver = SolverConfig::default();
    let init = InternalState::default_initial(params);
    let traj = integrate(params, &init, duration, &solver).map_err(|e| e.to_string())?;
    let v0 = init.stressed_volume(params);
    for (i, s) in traj.samples.iter().enumerate() {
        let v = s.stressed_volume(params);
        ensure((v - v0).abs() <= 1e-9 * v0.abs(), || format!("sample {i}: stressed volume {v} vs {v0}"))?;
    }
    Ok(())
}

/// `E_min <= E(t) <= E_max` and `E(t + tau) = E(t)`.
pub fn elastance_bounded_periodic(params: &ParameterVector, t: f64) -> Check {
    let e = elastance(t, params).map_err(|e| e.to_string())?;
    let tol = 1e-12 * params.e_max;
    ensure(e >= params.e_min - tol && e <= params.e_max + tol, || {
        format!("E({t}) = {e} outside [{}, {}]", params.e_min, params.e_max)
    })?;
    let later = elastance(t + params.tau, params).map_err(|e| e.to_string())?;
    ensure((later - e).abs() <= 1e-9 * params.e_max, || format!("E({t}) = {e} but E(t + tau) = {later}"))
}

/// Sigma points reproduce the mean and covariance they were drawn from.
pub fn sigma_moments_exact(est: &AugmentedEstimate, ut: &UtParams) -> Check {
    let sp = sigma_points(est, ut, &PsdRepair::default()).map_err(|e| e.to_string())?;
    let (mean, cov) = unscented_moments(&sp.points, &sp.weights.w_mean, &sp.weights.w_cov).map_err(|e| e.to_string())?;
    let dm = (&mean - &est.mean).amax();
    let dc = (&cov - &est.cov).amax();
    ensure(dm <= 1e-10 && dc <= 1e-10, || format!("mean error {dm:e}, covariance error {dc:e}"))
}

/// For a linear observation `y = H x` the unscented update equals the
/// closed-form Kalman update.
pub fn linear_gaussian_matches_kalman(dim: usize, n_obs: usize, seed: u64, gain: GainSolver) -> Check {
    use rand::Rng;
    let prior = random_estimate(dim, seed);
    let mut rng = stream_rng(seed, Stream::Selection, 7);
    let h = DMatrix::from_fn(n_obs, dim, |_, _| rng.random_range(-1.0..1.0));
    let r = DVector::from_fn(n_obs, |_, _| rng.random_range(0.2..1.0));
    let y_obs = DVector::from_fn(n_obs, |_, _| rng.random_range(-3.0..3.0));

    let ut = UtParams::default();
    let repair = PsdRepair::default();
    let sp = sigma_points(&prior, &ut, &repair).map_err(|e| e.to_string())?;
    let y_pts = &h * &sp.points;
    let c = correct(&prior, &sp.points, &y_pts, &y_obs, &r, &sp.weights, gain, &repair).map_err(|e| e.to_string())?;

    let s = &h * &prior.cov * h.transpose() + DMatrix::from_diagonal(&r);
    let k = &prior.cov * h.transpose() * s.clone().try_inverse().ok_or("singular S")?;
    let mean = &prior.mean + &k * (&y_obs - &h * &prior.mean);
    let cov = &prior.cov - &k * &h * &prior.cov;

    let scale = prior.cov.amax().max(1.0);
    let dm = (&c.posterior.mean - &mean).amax();
    let dc = (&c.posterior.cov - &cov).amax() / scale;
    let dk = (&c.gain - &k).amax();
    ensure(dm <= 1e-8 && dc <= 1e-8 && dk <= 1e-8, || {
        format!("{gain:?}: mean {dm:e}, covariance {dc:e}, gain {dk:e}")
    })
}

/// The gain solves `K P_yy = P_xy`.
pub fn gain_identity(dim: usize, n_obs: usize, seed: u64, gain: GainSolver) -> Check {
    use rand::Rng;
    let prior = random_estimate(dim, seed);
    let mut rng = stream_rng(seed, Stream::Selection, 8);
    let ut = UtParams { alpha: 0.5, ..UtParams::default() };
    let repair = PsdRepair::default();
    let sp = sigma_points(&prior, &ut, &repair).map_err(|e| e.to_string())?;
    // Mildly nonlinear observation.
    let y_pts = DMatrix::from_fn(n_obs, sp.points.ncols(), |i, j| {
        let x = sp.points.column(j);
        x[i % dim] + 0.1 * x[(i + 1) % dim].powi(2)
    });
    let r = DVector::from_fn(n_obs, |_, _| rng.random_range(0.2..1.0));
    let y_obs = DVector::zeros(n_obs);
    let (mean, cov) = unscented_moments(&sp.points, &sp.weights.w_mean, &sp.weights.w_cov).map_err(|e| e.to_string())?;
    let predicted = AugmentedEstimate { mean, cov };
    let c = correct(&predicted, &sp.points, &y_pts, &y_obs, &r, &sp.weights, gain, &repair).map_err(|e| e.to_string())?;
    let (p_yy, p_xy) = innovation_covariances(&predicted, &sp.points, &y_pts, &c.y_mean, &r, &sp.weights);
    let resid = (&c.gain * &p_yy - &p_xy).amax() / p_xy.amax().max(1.0);
    ensure(resid <= 1e-9, || format!("{gain:?}: |K P_yy - P_xy| = {resid:e}"))
}

/// Error ratio of RK4 when the step halves, against a fine reference.
pub fn rk4_order_ratio(params: &ParameterVector) -> Result<f64, String> {
    let duration = 2.0 * params.tau;
    let init = InternalState::default_initial(params);
    let run = |dt: f64, substeps: usize| {
        let cfg = SolverConfig { dt_output: dt, substeps, ..SolverConfig::default() };
        integrate(params, &init, duration, &cfg).map(|t| *t.last()).map_err(|e| e.to_string())
    };
    let reference = run(0.01, 256)?;
    let err = |s: &InternalState| {
        let (a, b) = (s.to_array(), reference.to_array());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let coarse = err(&run(0.01, 4)?);
    let fine = err(&run(0.01, 8)?);
    Ok(coarse / fine)
}

pub fn rk4_fourth_order(params: &ParameterVector) -> Check {
    let ratio = rk4_order_ratio(params)?;
    ensure((14.0..=18.0).contains(&ratio), || format!("error ratio {ratio:.3} outside 16 ± 2"))
}

/// Every free draw lies in `[(1 - s) θ, (1 + s) θ]`; fixed ones equal nominal.
pub fn truncated_normal_bounded(cfg: &SamplingConfig, seed: u64, draws: usize) -> Check {
    let nominal = cfg.nominal.to_array();
    for d in 0..draws {
        let mut rng = stream_rng(seed, Stream::Candidate, d as u64);
        let p = sample_target(cfg, &mut rng).to_array();
        for i in 0..N_PARAMS {
            let name = ParameterVector::NAMES[i];
            if cfg.fixed.iter().any(|f| f == name) {
                ensure(p[i] == nominal[i], || format!("fixed {name} moved to {}", p[i]))?;
                continue;
            }
            let (lo, hi) = ((1.0 - cfg.spread) * nominal[i], (1.0 + cfg.spread) * nominal[i]);
            ensure(p[i] >= lo && p[i] <= hi, || format!("draw {d}: {name} = {} outside [{lo}, {hi}]", p[i]))?;
        }
    }
    Ok(())
}

/// Window 1 and constant inputs pass smoothing unchanged; zero noise is the
/// identity; smoothing never leaves the input range.
pub fn smoothing_noise_identities(y: &[f64], window: usize, seed: u64) -> Check {
    ensure(smooth(y, 1) == y, || "window 1 changed the signal".into())?;
    let c = vec![y.first().copied().unwrap_or(1.0); y.len()];
    let c0 = c.first().copied().unwrap_or(0.0);
    ensure(smooth(&c, window).iter().all(|v| (v - c0).abs() <= 1e-14 * c0.abs()), || {
        "constant signal changed by smoothing".into()
    })?;
    let mut rng = stream_rng(seed, Stream::Noise, 0);
    ensure(add_noise(y, 0.0, &mut rng) == y, || "zero noise changed the signal".into())?;
    let s = smooth(y, window);
    ensure(s.len() == y.len(), || "length changed".into())?;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    ensure(s.iter().all(|v| *v >= lo - tol && *v <= hi + tol), || "smoothed value outside input range".into())
}

/// Heatmap cells never decrease as the threshold loosens.
pub fn heatmap_monotone(records: &[RunRecord], targets: &[TargetCase], guess: &ParameterVector, thresholds: &[f64]) -> Check {
    let mut ts = thresholds.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let kinds = [FilterKind::Modified, FilterKind::Original];
    let mut noises: Vec<f64> = records.iter().map(|r| r.spec.noise.sigma_noise).collect();
    noises.sort_by(|a, b| a.partial_cmp(b).unwrap());
    noises.dedup();
    for &noise in &noises {
        for kind in kinds {
            let tables: Vec<_> = ts
                .iter()
                .map(|t| heatmap(records, targets.len(), &null_baseline(guess, targets, *t), *t, noise, kind))
                .collect();
            for w in tables.windows(2) {
                for (p, (strict, loose)) in w[0].cells.iter().zip(&w[1].cells).enumerate() {
                    for (c, (a, b)) in strict.iter().zip(loose).enumerate() {
                        if let (Some(a), Some(b)) = (a, b) {
                            ensure(a <= b, || {
                                format!(
                                    "{} column {}: {a} at {} > {b} at {}",
                                    ParameterVector::NAMES[p],
                                    w[0].columns[c],
                                    w[0].threshold,
                                    w[1].threshold
                                )
                            })?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn without_wall_time(mut r: RunRecord) -> RunRecord {
    r.wall_time = 0.0;
    r
}

/// Small shared fixture: two targets and the nominal guess.
pub struct Fixture {
    pub targets: Vec<TargetCase>,
    pub guess: InitialGuess,
    pub solver: SolverConfig,
}

pub fn fixture(count: usize) -> Fixture {
    let solver = SolverConfig::default();
    let targets = build_ensemble(&SamplingConfig::default(), count, &solver).expect("ensemble");
    let guess = InitialGuess::new(ParameterVector::nominal(), &solver).expect("guess");
    Fixture { targets, guess, solver }
}

pub fn spec(target: &TargetCase, subset: &str, sigma: f64, kind: FilterKind, cycles: usize, seed: u64) -> RunSpec {
    RunSpec {
        target_id: target.id,
        subset: subset.parse().expect("subset"),
        noise: NoiseSpec { sigma_noise: sigma, smoothing_window: 5, seed },
        filter_kind: kind,
        cycles,
    }
}

/// Re-executing a run from the same spec gives an identical record.
pub fn run_is_deterministic(f: &Fixture, kind: FilterKind, cycles: usize) -> Check {
    let s = spec(&f.targets[0], "1,2,3,4", 0.05, kind, cycles, 11);
    let filter = FilterConfig::default();
    let a = without_wall_time(run_one(&f.targets[0], &s, &f.guess, &filter, &f.solver));
    let b = without_wall_time(run_one(&f.targets[0], &s, &f.guess, &filter, &f.solver));
    ensure(!a.trace.is_empty(), || "run recorded nothing".into())?;
    // Bit-level comparison: serialising both keeps NaN-free records comparable.
    let (ja, jb) = (serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    ensure(a == b && ja == jb, || format!("{kind} run differs on re-execution"))
}

/// Changing target `j`'s seed leaves every record of the other targets unchanged.
pub fn seed_isolation(f: &Fixture, cycles: usize) -> Check {
    let filter = FilterConfig::default();
    let specs: Vec<RunSpec> = f.targets.iter().map(|t| spec(t, "1,4", 0.05, FilterKind::Modified, cycles, 100 + t.id as u64)).collect();
    let mut changed = specs.clone();
    changed[0].noise.seed = 4242;
    let a = run_matrix(&f.targets, &specs, &f.guess, &filter, &f.solver, 1, |_| {}).map_err(|e| e.to_string())?;
    let b = run_matrix(&f.targets, &changed, &f.guess, &filter, &f.solver, 1, |_| {}).map_err(|e| e.to_string())?;
    ensure(a.len() == specs.len() && b.len() == specs.len(), || "record count changed".into())?;
    ensure(without_wall_time(a[0].clone()) != without_wall_time(b[0].clone()), || "re-seeded target was unaffected".into())?;
    for (x, y) in a.into_iter().zip(b).skip(1) {
        ensure(without_wall_time(x) == without_wall_time(y), || "another target's record changed".into())?;
    }
    Ok(())
}

/// `accuracy(c θ̂, c θ) = accuracy(θ̂, θ)`.
pub fn accuracy_scale_invariant(est: &ParameterVector, target: &ParameterVector, c: f64) -> Check {
    let scale = |p: &ParameterVector| ParameterVector::from_array(p.to_array().map(|v| v * c));
    let a = accuracy(est, target).map_err(|e| e.to_string())?;
    let b = accuracy(&scale(est), &scale(target)).map_err(|e| e.to_string())?;
    for i in 0..N_PARAMS {
        ensure((a[i] - b[i]).abs() <= 1e-9, || format!("{}: {} vs {}", ParameterVector::NAMES[i], a[i], b[i]))?;
    }
    Ok(())
}
