//! Cross-module properties through the public API, on random small MDPs.

use appo_core::appo::{self, AppoConfig, StepSize};
use appo_core::datagen::{self, LinkFunction, PreferenceDataset, TrajectoryPairDataset};
use appo_core::estimators::{self, MleOptions};
use appo_core::mdp::fixtures::{random_dims, random_mdp, random_policy, random_reward};
use appo_core::mdp::{
    performance_difference, policy_evaluation, trajectory_distribution, trajectory_return, visitation,
    DEFAULT_ENUMERATION_CAP,
};
use appo_core::{oracle, rng, TabularPolicy};
use proptest::prelude::*;

fn case(seed: u64) -> (appo_core::EpisodicMdp, TabularPolicy, TabularPolicy) {
    let mut r = rng::stream(seed, 0);
    let dims = random_dims(&mut r, 3, 3, 3);
    let mdp = random_mdp(&mut r, dims, 1.0, true);
    let a = random_policy(&mut r, dims, true);
    let b = random_policy(&mut r, dims, false);
    (mdp, a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_matches_trajectory_enumeration(seed in any::<u64>()) {
        let (mdp, pi, _) = case(seed);
        let dist = trajectory_distribution(&mdp, &pi, DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert!((dist.total_mass() - 1.0).abs() < 1e-12);
        let by_paths: f64 = dist
            .entries
            .iter()
            .map(|(t, p)| p * trajectory_return(mdp.true_reward(), t).unwrap())
            .sum();
        let v = policy_evaluation(&mdp, &pi, mdp.true_reward()).unwrap().value(0, mdp.initial_state());
        prop_assert!((by_paths - v).abs() < 1e-12);
    }

    #[test]
    fn visitation_is_the_step_marginal_of_the_path_law(seed in any::<u64>()) {
        let (mdp, pi, _) = case(seed);
        let dims = mdp.dims();
        let d = visitation(&mdp, &pi).unwrap();
        let dist = trajectory_distribution(&mdp, &pi, DEFAULT_ENUMERATION_CAP).unwrap();
        let mut marg = vec![0.0; dims.cells()];
        for (t, p) in &dist.entries {
            for c in t.cells(&dims) {
                marg[c] += p;
            }
        }
        for (i, m) in marg.iter().enumerate() {
            let (h, s, a) = dims.unflatten(i);
            prop_assert!((m - d.state_action(h, s, a)).abs() < 1e-12);
        }
    }

    #[test]
    fn performance_difference_is_the_value_gap(seed in any::<u64>()) {
        let (mdp, a, b) = case(seed);
        let s0 = mdp.initial_state();
        let gap = policy_evaluation(&mdp, &a, mdp.true_reward()).unwrap().value(0, s0)
            - policy_evaluation(&mdp, &b, mdp.true_reward()).unwrap().value(0, s0);
        let pdl = performance_difference(&mdp, &a, &b, mdp.true_reward()).unwrap();
        prop_assert!((gap - pdl).abs() < 1e-10);
    }

    #[test]
    fn optimal_policy_dominates(seed in any::<u64>()) {
        let (mdp, a, b) = case(seed);
        let (_, v_star) = oracle::optimal_policy(&mdp);
        for pi in [&a, &b] {
            prop_assert!(oracle::suboptimality(&mdp, pi).unwrap() >= -1e-12);
            prop_assert!(v_star <= mdp.return_bound() + 1e-12);
        }
    }

    #[test]
    fn step_concentrability_never_exceeds_trajectory(seed in any::<u64>()) {
        let (mdp, pi, pi_ref) = case(seed);
        let rep = datagen::concentrability(&mdp, &pi_ref, &pi, DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert!(rep.c_step <= rep.c_traj * (1.0 + 1e-12));
        prop_assert!(rep.c_step >= 1.0 - 1e-12);
    }

    #[test]
    fn exact_l1_is_zero_for_a_shifted_reward(seed in any::<u64>(), shift in 0.0f64..0.2) {
        let (mdp, _, pi_ref) = case(seed);
        let dims = mdp.dims();
        let mut r = rng::stream(seed, 1);
        let base = random_reward(&mut r, dims, 0.0, 0.1);
        // a per-trajectory constant shift leaves every return difference intact
        let shifted = appo_core::RewardModel::from_fn(dims, |h, s, a| {
            base.get(h, s, a) + if h == 0 { shift } else { 0.0 }
        });
        let target = oracle::L1Target::Reward(&shifted);
        let loss = oracle::exact_l1_loss(target, &base, &pi_ref, &mdp, DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert!(loss.abs() < 1e-12);
    }
}

fn datasets(seed: u64) -> (appo_core::EpisodicMdp, TabularPolicy, TrajectoryPairDataset, PreferenceDataset) {
    let (mdp, _, pi_ref) = case(seed);
    let link = LinkFunction::sigmoid(mdp.return_bound());
    let traj = datagen::generate_traj_dataset(&mdp, &pi_ref, 300, seed, "ref").unwrap();
    let pref = datagen::generate_pref_dataset(&mdp, &pi_ref, 300, &link, seed, "ref").unwrap();
    (mdp, pi_ref, traj, pref)
}

#[test]
fn datasets_round_trip_through_jsonl() {
    let (mdp, _, traj, pref) = datasets(3);
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf).unwrap();
    let back = TrajectoryPairDataset::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, traj);
    assert_eq!(back.provenance.mdp_hash, mdp.content_hash());
    let mut buf = Vec::new();
    pref.write_jsonl(&mut buf).unwrap();
    assert_eq!(PreferenceDataset::read_jsonl(buf.as_slice()).unwrap(), pref);
}

#[test]
fn offline_pipeline_on_random_mdps() {
    for seed in 0..8 {
        let (mdp, _, traj, pref) = datasets(seed);
        let dims = mdp.dims();
        let link = LinkFunction::sigmoid(mdp.return_bound());
        let (r_hat, fit) = estimators::reward_mle(&pref, &link, dims, mdp.step_bound(), &MleOptions::default()).unwrap();
        assert!(fit.loss <= fit.initial_loss);
        assert!(r_hat.within(0.0, mdp.step_bound()));
        let (p_hat, inner) = appo::prepare_offline_data(&traj, dims, 1.0, seed % 2 == 0).unwrap();
        let config = AppoConfig {
            iterations: 20,
            eta: StepSize::Auto,
            lambda: 2.0,
            ..AppoConfig::default()
        };
        let (mixture, log) = appo::run_appo(&config, &inner, &r_hat, &p_hat, mdp.return_bound(), Some(&mdp)).unwrap();
        assert_eq!(mixture.len(), 20);
        assert_eq!(log.len(), 20);
        for rec in log.records() {
            assert!(rec.entropy >= 0.0 && rec.entropy <= (dims.num_actions as f64).ln() + 1e-12);
            let v = rec.exact_value_true_reward.unwrap();
            assert!((-1e-12..=mdp.return_bound() + 1e-12).contains(&v));
        }
        for f in log.models() {
            assert!(f.within(0.0, mdp.return_bound()));
        }
        assert!(oracle::mixture_suboptimality(&mdp, &mixture).unwrap() >= -1e-9);

        let again = appo::run_appo(&config, &inner, &r_hat, &p_hat, mdp.return_bound(), Some(&mdp)).unwrap();
        assert_eq!(again.0, mixture, "seed {seed}: run is not deterministic");
    }
}

#[test]
fn rollout_pipeline_is_seeded() {
    let (mdp, pi_ref, traj, pref) = datasets(11);
    let link = LinkFunction::sigmoid(mdp.return_bound());
    let (r_hat, _) = estimators::reward_mle(&pref, &link, mdp.dims(), mdp.step_bound(), &MleOptions::default()).unwrap();
    let config = AppoConfig {
        iterations: 5,
        seed: 4,
        ..AppoConfig::default()
    };
    let run = || appo::run_appo_rollout(&config, &mdp, &pi_ref, &traj, &r_hat, 50, 50).unwrap();
    let (a, log) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    assert_eq!(log.len(), 5);
    assert!(oracle::mixture_suboptimality(&mdp, &a).unwrap() >= -1e-9);
}
