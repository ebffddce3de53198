//! Property-based invariants of the model, solver, unscented transform,
//! synthetic data and experiment bookkeeping.

#[path = "support/properties.rs"]
mod properties;

use cardio_ukf::experiments::{run_one, FilterKind};
use cardio_ukf::filter::FilterConfig;
use cardio_ukf::model::ParameterVector;
use cardio_ukf::synth::SamplingConfig;
use cardio_ukf::ukf::{GainSolver, UtParams};
use proptest::prelude::*;

use properties::*;

fn params_strategy() -> impl Strategy<Value = ParameterVector> {
    (any::<u64>(), 0.0..0.6f64).prop_map(|(seed, spread)| {
        let cfg = SamplingConfig { spread, fixed: vec![], ..SamplingConfig::default() };
        let mut rng = cardio_ukf::synth::stream_rng(seed, cardio_ukf::synth::Stream::Candidate, 0);
        cardio_ukf::synth::sample_target(&cfg, &mut rng)
    })
    .prop_filter("valid parameters", |p| p.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn stressed_volume_is_conserved(p in params_strategy()) {
        stressed_volume_conserved(&p, 2.0 * p.tau).unwrap();
    }

    #[test]
    fn elastance_is_bounded_and_periodic(p in params_strategy(), t in 0.0..20.0f64) {
        elastance_bounded_periodic(&p, t).unwrap();
    }

    #[test]
    fn sigma_points_reproduce_moments(dim in 1usize..15, seed in any::<u64>(), alpha in prop::sample::select(vec![1e-3, 0.1, 1.0])) {
        let est = random_estimate(dim, seed);
        sigma_moments_exact(&est, &UtParams { alpha, ..UtParams::default() }).unwrap();
    }

    #[test]
    fn linear_update_matches_kalman(dim in 1usize..15, n_obs in 1usize..40, seed in any::<u64>()) {
        linear_gaussian_matches_kalman(dim, n_obs, seed, GainSolver::LowRank).unwrap();
        linear_gaussian_matches_kalman(dim, n_obs, seed, GainSolver::Dense).unwrap();
    }

    #[test]
    fn gain_solves_innovation_system(dim in 1usize..15, n_obs in 1usize..40, seed in any::<u64>()) {
        gain_identity(dim, n_obs, seed, GainSolver::LowRank).unwrap();
        gain_identity(dim, n_obs, seed, GainSolver::Dense).unwrap();
    }

    #[test]
    fn truncated_draws_stay_in_bounds(spread in 0.0..0.99f64, seed in any::<u64>()) {
        let cfg = SamplingConfig { spread, fixed: vec!["tau".into()], ..SamplingConfig::default() };
        truncated_normal_bounded(&cfg, seed, 20).unwrap();
    }

    #[test]
    fn smoothing_and_noise_identities(y in prop::collection::vec(-1e3..1e3f64, 1..200), window in 1usize..12, seed in any::<u64>()) {
        smoothing_noise_identities(&y, window, seed).unwrap();
    }

    #[test]
    fn accuracy_is_scale_invariant(est in params_strategy(), target in params_strategy(), c in 1e-3..1e3f64) {
        accuracy_scale_invariant(&est, &target, c).unwrap();
    }
}

#[test]
fn rk4_is_fourth_order() {
    rk4_fourth_order(&ParameterVector::nominal()).unwrap();
}

#[test]
fn full_runs_are_deterministic() {
    let f = fixture(1);
    run_is_deterministic(&f, FilterKind::Modified, 3).unwrap();
    run_is_deterministic(&f, FilterKind::Original, 1).unwrap();
}

#[test]
fn reseeding_one_target_leaves_others_alone() {
    seed_isolation(&fixture(3), 2).unwrap();
}

#[test]
fn heatmaps_are_threshold_monotone() {
    let f = fixture(3);
    let filter = FilterConfig::default();
    let mut records = Vec::new();
    for t in &f.targets {
        for subset in ["1,2,3,4", "1,4", "2"] {
            let s = spec(t, subset, 0.01, FilterKind::Modified, 3, t.id as u64);
            records.push(run_one(t, &s, &f.guess, &filter, &f.solver));
        }
    }
    heatmap_monotone(&records, &f.targets, &f.guess.params, &[98.0, 95.0, 90.0, 50.0, 0.0]).unwrap();
}
