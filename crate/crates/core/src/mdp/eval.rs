use super::{Dims, EpisodicMdp, RewardModel, TabularPolicy, Trajectory, TransitionKernel, ValueTable, VisitationDistributions};
use crate::error::{Error, Result};

/// Default cap on the number of trajectories enumerated by oracle routines.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

impl AsRef<TransitionKernel> for TransitionKernel {
    fn as_ref(&self) -> &TransitionKernel {
        self
    }
}

impl AsRef<TransitionKernel> for EpisodicMdp {
    fn as_ref(&self) -> &TransitionKernel {
        self.transitions()
    }
}

/// Output of backward induction: `V_h(s)` for `h` in `0..=H` and `Q_h(s, a)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    dims: Dims,
    v: Vec<f64>,
    pub q: ValueTable,
}

impl Evaluation {
    /// `V_h(s)`; `h == H` is the terminal layer and always zero.
    pub fn value(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.dims.num_states + s]
    }

    pub fn values_at(&self, h: usize) -> &[f64] {
        let n = self.dims.num_states;
        &self.v[h * n..(h + 1) * n]
    }
}

/// Exact policy evaluation by backward induction under `model`'s transitions.
///
/// `Q_h = r_h + P_h V_{h+1}`, `V_h(s) = sum_a pi_h(a|s) Q_h(s, a)`, `V_H = 0`.
pub fn policy_evaluation(
    model: &impl AsRef<TransitionKernel>,
    policy: &TabularPolicy,
    reward: &RewardModel,
) -> Result<Evaluation> {
    let kernel = model.as_ref();
    let dims = kernel.dims();
    dims.expect_same(&policy.dims(), "policy")?;
    dims.expect_same(&reward.dims(), "reward")?;

    let n = dims.num_states;
    let mut v = vec![0.0; (dims.horizon + 1) * n];
    let mut q = ValueTable::zeros(dims);
    for h in (0..dims.horizon).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * n);
        let next = &tail[..n];
        for s in 0..n {
            let mut vs = 0.0;
            for a in 0..dims.num_actions {
                let qa = reward.get(h, s, a) + kernel.expect(h, s, a, next);
                q.set(h, s, a, qa);
                vs += policy.prob(h, s, a) * qa;
            }
            head[h * n + s] = vs;
        }
    }
    Ok(Evaluation { dims, v, q })
}

/// Forward recursion for `d^pi_h(s)` and `d^pi_h(s, a)` from the fixed initial state.
pub fn visitation(mdp: &EpisodicMdp, policy: &TabularPolicy) -> Result<VisitationDistributions> {
    let dims = mdp.dims();
    dims.expect_same(&policy.dims(), "policy")?;
    let n = dims.num_states;
    let mut state = vec![0.0; dims.horizon * n];
    let mut state_action = vec![0.0; dims.cells()];
    state[mdp.initial_state()] = 1.0;
    for h in 0..dims.horizon {
        for s in 0..n {
            let ds = state[h * n + s];
            if ds == 0.0 {
                continue;
            }
            for a in 0..dims.num_actions {
                let dsa = ds * policy.prob(h, s, a);
                state_action[dims.idx(h, s, a)] = dsa;
                if h + 1 < dims.horizon && dsa > 0.0 {
                    for (next, p) in mdp.transitions().row(h, s, a).iter().enumerate() {
                        state[(h + 1) * n + next] += dsa * p;
                    }
                }
            }
        }
    }
    Ok(VisitationDistributions {
        dims,
        state_action,
        state,
    })
}

/// Support of `d^pi(tau)`: every positive-probability trajectory with its probability.
#[derive(Debug, Clone)]
pub struct TrajectoryDistribution {
    pub entries: Vec<(Trajectory, f64)>,
}

impl TrajectoryDistribution {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, tau: &Trajectory) -> f64 {
        self.entries
            .binary_search_by(|(t, _)| t.cmp(tau))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn check_enumeration(dims: &Dims, cap: usize) -> Result<()> {
    let count = ((dims.num_states * dims.num_actions) as f64).powi(dims.horizon as i32);
    if count > cap as f64 {
        return Err(Error::EnumerationInfeasible { count, cap });
    }
    Ok(())
}

/// Enumerates `d^pi(tau)` over all length-`H` trajectories.
///
/// Only positive-probability trajectories are returned, sorted. Fails when
/// `(S * A)^H` exceeds `cap`.
pub fn trajectory_distribution(
    mdp: &EpisodicMdp,
    policy: &TabularPolicy,
    cap: usize,
) -> Result<TrajectoryDistribution> {
    let dims = mdp.dims();
    dims.expect_same(&policy.dims(), "policy")?;
    check_enumeration(&dims, cap)?;

    let mut entries = Vec::new();
    let mut steps = Vec::with_capacity(dims.horizon);
    enumerate(mdp, policy, 0, mdp.initial_state(), 1.0, &mut steps, &mut entries);
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(TrajectoryDistribution { entries })
}

fn enumerate(
    mdp: &EpisodicMdp,
    policy: &TabularPolicy,
    h: usize,
    s: usize,
    mass: f64,
    steps: &mut Vec<(usize, usize)>,
    out: &mut Vec<(Trajectory, f64)>,
) {
    let dims = mdp.dims();
    for a in 0..dims.num_actions {
        let pa = mass * policy.prob(h, s, a);
        if pa == 0.0 {
            continue;
        }
        steps.push((s, a));
        if h + 1 == dims.horizon {
            out.push((Trajectory::new(steps.clone()), pa));
        } else {
            for (next, p) in mdp.transitions().row(h, s, a).iter().enumerate() {
                if *p > 0.0 {
                    enumerate(mdp, policy, h + 1, next, pa * p, steps, out);
                }
            }
        }
        steps.pop();
    }
}

/// `r(tau) = sum_h r_h(s_h, a_h)`.
pub fn trajectory_return(reward: &RewardModel, tau: &Trajectory) -> Result<f64> {
    let dims = reward.dims();
    tau.validate(&dims)?;
    Ok(tau
        .steps()
        .iter()
        .enumerate()
        .map(|(h, &(s, a))| reward.get(h, s, a))
        .sum())
}

/// Unchecked return for trajectories already validated against `reward`'s dims.
#[inline]
pub(crate) fn return_of(reward: &RewardModel, tau: &Trajectory) -> f64 {
    tau.steps()
        .iter()
        .enumerate()
        .map(|(h, &(s, a))| reward.get(h, s, a))
        .sum()
}

/// Right-hand side of the performance difference lemma:
/// `sum_h E_{s ~ d^{pi_a}_h} < Q^{pi_b}_h(s, .), pi_a(.|s) - pi_b(.|s) >`,
/// which equals `V^{pi_a}_1(s_1) - V^{pi_b}_1(s_1)`.
pub fn performance_difference(
    mdp: &EpisodicMdp,
    policy_a: &TabularPolicy,
    policy_b: &TabularPolicy,
    reward: &RewardModel,
) -> Result<f64> {
    let dims = mdp.dims();
    dims.expect_same(&policy_b.dims(), "policy_b")?;
    let d_a = visitation(mdp, policy_a)?;
    let q_b = policy_evaluation(mdp, policy_b, reward)?.q;
    let mut total = 0.0;
    for h in 0..dims.horizon {
        for s in 0..dims.num_states {
            let ds = d_a.state(h, s);
            if ds == 0.0 {
                continue;
            }
            let inner: f64 = (0..dims.num_actions)
                .map(|a| q_b.get(h, s, a) * (policy_a.prob(h, s, a) - policy_b.prob(h, s, a)))
                .sum();
            total += ds * inner;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{chain_mdp, random_dims, random_mdp, random_policy};
    use crate::rng;

    /// Brute force over every `(S*A)^H` sequence, including zero-probability ones.
    fn brute_force_value(mdp: &EpisodicMdp, policy: &TabularPolicy, reward: &RewardModel) -> f64 {
        let dims = mdp.dims();
        let sa = dims.num_states * dims.num_actions;
        let total = sa.pow(dims.horizon as u32);
        let mut value = 0.0;
        for code in 0..total {
            let mut c = code;
            let mut steps = Vec::new();
            for _ in 0..dims.horizon {
                steps.push(((c % sa) / dims.num_actions, c % dims.num_actions));
                c /= sa;
            }
            if steps[0].0 != mdp.initial_state() {
                continue;
            }
            let mut p = 1.0;
            let mut ret = 0.0;
            for (h, &(s, a)) in steps.iter().enumerate() {
                p *= policy.prob(h, s, a);
                ret += reward.get(h, s, a);
                if h + 1 < dims.horizon {
                    p *= mdp.transitions().row(h, s, a)[steps[h + 1].0];
                }
            }
            value += p * ret;
        }
        value
    }

    fn greedy_chain_policy() -> TabularPolicy {
        TabularPolicy::deterministic(chain_mdp().dims(), &[1, 1, 1, 1]).unwrap()
    }

    #[test]
    fn chain_values_match_enumeration() {
        let mdp = chain_mdp();
        let uniform = TabularPolicy::uniform(mdp.dims());
        let v = policy_evaluation(&mdp, &uniform, mdp.true_reward()).unwrap();
        let oracle = brute_force_value(&mdp, &uniform, mdp.true_reward());
        assert!((oracle - 0.5).abs() < 1e-15);
        assert!((v.value(0, 0) - oracle).abs() < 1e-12);

        let greedy = greedy_chain_policy();
        let v = policy_evaluation(&mdp, &greedy, mdp.true_reward()).unwrap();
        assert!((brute_force_value(&mdp, &greedy, mdp.true_reward()) - 1.0).abs() < 1e-15);
        assert!((v.value(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mut r = rng::stream(3, 0);
        let mdp = random_mdp(&mut r, Dims::new(3, 3, 2).unwrap(), 1.0, false);
        let pi = random_policy(&mut r, mdp.dims(), false);
        let ev = policy_evaluation(&mdp, &pi, &RewardModel::zeros(mdp.dims())).unwrap();
        assert!(ev.q.as_slice().iter().all(|q| *q == 0.0));
        assert!((0..=3).all(|h| ev.values_at(h).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn dimension_mismatch_names_the_field() {
        let mdp = chain_mdp();
        let wrong = TabularPolicy::uniform(Dims::new(2, 3, 2).unwrap());
        let err = policy_evaluation(&mdp, &wrong, mdp.true_reward()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { ref what, .. } if what.contains("num_states")));
        assert!(visitation(&mdp, &wrong).is_err());
    }

    #[test]
    fn visitation_examples() {
        let mdp = chain_mdp();
        let d = visitation(&mdp, &TabularPolicy::uniform(mdp.dims())).unwrap();
        assert_eq!(d.state(0, 0), 1.0);
        assert_eq!(d.state(0, 1), 0.0);
        assert!((d.state(1, 1) - 0.5).abs() < 1e-15);

        let d = visitation(&mdp, &greedy_chain_policy()).unwrap();
        for h in 0..2 {
            let layer: Vec<f64> = (0..2).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| d.state_action(h, s, a)).collect();
            assert_eq!(layer.iter().filter(|p| **p == 1.0).count(), 1);
            assert_eq!(layer.iter().filter(|p| **p == 0.0).count(), 3);
        }
    }

    #[test]
    fn chain_trajectory_distribution() {
        let mdp = chain_mdp();
        let dist = trajectory_distribution(&mdp, &TabularPolicy::uniform(mdp.dims()), DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(dist.len(), 4);
        assert!(dist.entries.iter().all(|(_, p)| (p - 0.25).abs() < 1e-15));

        let dist = trajectory_distribution(&mdp, &greedy_chain_policy(), DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(dist.entries, vec![(Trajectory::new(vec![(0, 1), (1, 1)]), 1.0)]);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let mdp = chain_mdp();
        let err = trajectory_distribution(&mdp, &TabularPolicy::uniform(mdp.dims()), 15).unwrap_err();
        assert!(matches!(err, Error::EnumerationInfeasible { cap: 15, .. }));
        assert!(trajectory_distribution(&mdp, &TabularPolicy::uniform(mdp.dims()), 16).is_ok());
    }

    #[test]
    fn trajectory_returns() {
        let mdp = chain_mdp();
        let both = Trajectory::new(vec![(0, 1), (1, 1)]);
        let mixed = Trajectory::new(vec![(0, 1), (1, 0)]);
        assert_eq!(trajectory_return(&RewardModel::zeros(mdp.dims()), &both).unwrap(), 0.0);
        assert!((trajectory_return(mdp.true_reward(), &both).unwrap() - 1.0).abs() < 1e-15);
        assert!((trajectory_return(mdp.true_reward(), &mixed).unwrap() - 0.5).abs() < 1e-15);
        let bad = Trajectory::new(vec![(0, 1), (2, 0)]);
        assert!(matches!(trajectory_return(mdp.true_reward(), &bad), Err(Error::IndexOutOfRange { .. })));
        let short = Trajectory::new(vec![(0, 1)]);
        assert!(trajectory_return(mdp.true_reward(), &short).is_err());
    }

    #[test]
    fn performance_difference_examples() {
        let mdp = chain_mdp();
        let uniform = TabularPolicy::uniform(mdp.dims());
        let greedy = greedy_chain_policy();
        let same = performance_difference(&mdp, &uniform, &uniform, mdp.true_reward()).unwrap();
        assert_eq!(same, 0.0);
        let pd = performance_difference(&mdp, &greedy, &uniform, mdp.true_reward()).unwrap();
        assert!((pd - 0.5).abs() < 1e-12);
    }

    #[test]
    fn backward_induction_matches_enumeration_on_random_mdps() {
        let mut r = rng::stream(11, 0);
        for _ in 0..200 {
            let dims = random_dims(&mut r, 4, 3, 4);
            let mdp = random_mdp(&mut r, dims, 1.0, true);
            let pi = random_policy(&mut r, dims, true);
            let v = policy_evaluation(&mdp, &pi, mdp.true_reward()).unwrap().value(0, mdp.initial_state());
            let dist = trajectory_distribution(&mdp, &pi, DEFAULT_ENUMERATION_CAP).unwrap();
            assert!((dist.total_mass() - 1.0).abs() < 1e-10);
            let by_dist: f64 = dist
                .entries
                .iter()
                .map(|(t, p)| p * trajectory_return(mdp.true_reward(), t).unwrap())
                .sum();
            assert!((v - by_dist).abs() < 1e-10);
            assert!((v - brute_force_value(&mdp, &pi, mdp.true_reward())).abs() < 1e-10);

            let d = visitation(&mdp, &pi).unwrap();
            for h in 0..dims.horizon {
                let layer: f64 = (0..dims.num_states)
                    .flat_map(|s| (0..dims.num_actions).map(move |a| (s, a)))
                    .map(|(s, a)| d.state_action(h, s, a))
                    .sum();
                assert!((layer - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn performance_difference_matches_value_gap() {
        let mut r = rng::stream(12, 0);
        for _ in 0..150 {
            let dims = random_dims(&mut r, 4, 3, 4);
            let mdp = random_mdp(&mut r, dims, 1.0, true);
            let a = random_policy(&mut r, dims, true);
            let b = random_policy(&mut r, dims, true);
            let s1 = mdp.initial_state();
            let va = policy_evaluation(&mdp, &a, mdp.true_reward()).unwrap().value(0, s1);
            let vb = policy_evaluation(&mdp, &b, mdp.true_reward()).unwrap().value(0, s1);
            let pd = performance_difference(&mdp, &a, &b, mdp.true_reward()).unwrap();
            assert!((pd - (va - vb)).abs() < 1e-10, "{pd} vs {}", va - vb);
        }
    }
}
