//! Brute-force ground truth on enumeration-scale MDPs: optimal policies,
//! exact losses and sub-optimality, and the identity and bound checks run
//! by `verify`.

use serde::{Deserialize, Serialize};

use crate::appo::{induced_reward, prepare_offline_data, run_appo, AppoConfig, MixturePolicy, StepSize};
use crate::datagen::{concentrability, generate_traj_dataset, ConcentrabilityReport};
use crate::error::{Error, Result};
use crate::mdp::fixtures::{random_policy, random_reward, random_values};
use crate::mdp::{
    argmax, performance_difference, policy_evaluation, return_of, trajectory_distribution, EpisodicMdp, RewardModel,
    TabularPolicy, TransitionKernel, ValueTable,
};
use crate::rng::{self, streams};

/// Backward induction on the true reward. Greedy rows break ties toward the
/// lowest action index. Returns the policy and `V*_1(s_1)`.
pub fn optimal_policy(mdp: &EpisodicMdp) -> (TabularPolicy, f64) {
    let dims = mdp.dims();
    let (n, k) = (dims.num_states, dims.num_actions);
    let reward = mdp.true_reward();
    let mut actions = vec![0; dims.horizon * n];
    let mut next_v = vec![0.0; n];
    for h in (0..dims.horizon).rev() {
        let mut v = vec![0.0; n];
        for s in 0..n {
            let q: Vec<f64> = (0..k)
                .map(|a| {
                    let future: f64 = mdp.transitions().row(h, s, a).iter().zip(&next_v).map(|(p, x)| p * x).sum();
                    reward.get(h, s, a) + future
                })
                .collect();
            let best = argmax(&q);
            actions[h * n + s] = best;
            v[s] = q[best];
        }
        next_v = v;
    }
    let policy = TabularPolicy::deterministic(dims, &actions).expect("actions are in range");
    (policy, next_v[mdp.initial_state()])
}

/// `V^pi_1(s_1)` under `reward`.
pub fn value(mdp: &EpisodicMdp, policy: &TabularPolicy, reward: &RewardModel) -> Result<f64> {
    Ok(policy_evaluation(mdp, policy, reward)?.value(0, mdp.initial_state()))
}

/// `V*_1(s_1) - V^pi_1(s_1)` under the true reward.
pub fn suboptimality(mdp: &EpisodicMdp, policy: &TabularPolicy) -> Result<f64> {
    let (_, v_star) = optimal_policy(mdp);
    Ok(v_star - value(mdp, policy, mdp.true_reward())?)
}

/// Sub-optimality of a uniform episode-level mixture.
pub fn mixture_suboptimality(mdp: &EpisodicMdp, mixture: &MixturePolicy) -> Result<f64> {
    let (_, v_star) = optimal_policy(mdp);
    Ok(v_star - crate::appo::mixture_value(mixture, mdp, mdp.true_reward())?)
}

/// What `exact_l1_loss` compares against `r_hat`.
#[derive(Debug, Clone, Copy)]
pub enum L1Target<'a> {
    Reward(&'a RewardModel),
    /// The reward induced by `f` under `(model, policy)`.
    Induced {
        f: &'a ValueTable,
        model: &'a TransitionKernel,
        policy: &'a TabularPolicy,
    },
}

/// `E_{tau0, tau1 ~ pi_ref} |(r(tau0) - r(tau1)) - (r_hat(tau0) - r_hat(tau1))|`
/// by a double loop over the enumerated trajectory distribution.
pub fn exact_l1_loss(
    target: L1Target<'_>,
    r_hat: &RewardModel,
    pi_ref: &TabularPolicy,
    mdp: &EpisodicMdp,
    cap: usize,
) -> Result<f64> {
    let reward = match target {
        L1Target::Reward(r) => r.clone(),
        L1Target::Induced { f, model, policy } => induced_reward(f, model, policy)?,
    };
    mdp.dims().expect_same(&reward.dims(), "reward")?;
    mdp.dims().expect_same(&r_hat.dims(), "reward estimate")?;
    let dist = trajectory_distribution(mdp, pi_ref, cap)?;
    let diffs: Vec<(f64, f64)> = dist
        .entries
        .iter()
        .map(|(t, p)| (*p, return_of(&reward, t) - return_of(r_hat, t)))
        .collect();
    let mut total = 0.0;
    for (p0, d0) in &diffs {
        for (p1, d1) in &diffs {
            total += p0 * p1 * (d0 - d1).abs();
        }
    }
    Ok(total)
}

/// The three terms of the per-iteration sub-optimality decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Reward estimation error.
    pub term_i: f64,
    /// Optimization error.
    pub term_ii: f64,
    /// Policy update regret.
    pub term_iii: f64,
    /// `V*_{r*} - V^{pi_t}_{r*}`, evaluated directly.
    pub total: f64,
}

impl Decomposition {
    pub fn residual(&self) -> f64 {
        (self.term_i + self.term_ii + self.term_iii - self.total).abs()
    }
}

/// Splits `V^{pi*}_{r*} - V^{pi_t}_{r*}` into estimation error, optimization
/// error and update regret, with `r_t` the reward induced by `f_t` under the
/// true transitions and `pi_t`. Each term is a sum of exact values.
pub fn decomposition_witness(
    mdp: &EpisodicMdp,
    pi_ref: &TabularPolicy,
    r_hat: &RewardModel,
    f_t: &ValueTable,
    pi_t: &TabularPolicy,
) -> Result<Decomposition> {
    let (pi_star, _) = optimal_policy(mdp);
    let r_star = mdp.true_reward();
    let r_t = induced_reward(f_t, mdp, pi_t)?;
    let v = |pi: &TabularPolicy, r: &RewardModel| value(mdp, pi, r);

    let star_minus_hat = r_star.minus(r_hat)?;
    let hat_minus_t = r_hat.minus(&r_t)?;
    let term_i = v(&pi_star, &star_minus_hat)? - v(pi_ref, &star_minus_hat)?;
    let term_ii = v(&pi_star, &hat_minus_t)? - v(pi_ref, &hat_minus_t)? - v(pi_t, r_star)? + v(pi_ref, r_star)?
        + v(pi_t, &r_t)?
        - v(pi_ref, &r_t)?;
    let term_iii = v(&pi_star, &r_t)? - v(pi_t, &r_t)?;
    let total = v(&pi_star, r_star)? - v(pi_t, r_star)?;
    Ok(Decomposition {
        term_i,
        term_ii,
        term_iii,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// `(1/T) sum_t (V^{pi*}_{r_t} - V^{pi_t}_{r_t})`
    pub average_regret: f64,
    /// `R H sqrt(ln|A| / (2T))`
    pub bound: f64,
    pub iterations: usize,
}

impl RegretReport {
    pub fn holds(&self) -> bool {
        self.average_regret <= self.bound + 1e-9
    }
}

/// Average regret of the policy iterates against the optimal policy, with
/// `r_t` induced by each `f_t` under the true transitions and `pi_t`.
pub fn npg_regret(mdp: &EpisodicMdp, iterates: &[TabularPolicy], models: &[ValueTable]) -> Result<RegretReport> {
    if iterates.is_empty() {
        return Err(Error::Empty("policy iterates".into()));
    }
    if iterates.len() != models.len() {
        return Err(Error::DimensionMismatch {
            what: "value iterates".into(),
            expected: iterates.len(),
            got: models.len(),
        });
    }
    let (pi_star, _) = optimal_policy(mdp);
    let mut total = 0.0;
    for (pi, f) in iterates.iter().zip(models) {
        let r_t = induced_reward(f, mdp, pi)?;
        total += value(mdp, &pi_star, &r_t)? - value(mdp, pi, &r_t)?;
    }
    let t = iterates.len() as f64;
    let dims = mdp.dims();
    Ok(RegretReport {
        average_regret: total / t,
        bound: mdp.return_bound() * dims.horizon as f64 * ((dims.num_actions as f64).ln() / (2.0 * t)).sqrt(),
        iterations: iterates.len(),
    })
}

/// Every deterministic policy when there are at most `limit` of them.
pub fn deterministic_policies(mdp: &EpisodicMdp, limit: usize) -> Option<Vec<TabularPolicy>> {
    let dims = mdp.dims();
    let rows = dims.horizon * dims.num_states;
    let count = (dims.num_actions as f64).powi(rows as i32);
    if count > limit as f64 {
        return None;
    }
    let count = count as usize;
    let mut out = Vec::with_capacity(count);
    let mut actions = vec![0; rows];
    for code in 0..count {
        let mut c = code;
        for a in actions.iter_mut() {
            *a = c % dims.num_actions;
            c /= dims.num_actions;
        }
        out.push(TabularPolicy::deterministic(dims, &actions).expect("actions are in range"));
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Nonnegative amount by which the check is off (identity residual or
    /// bound excess); infinite when nothing could be measured.
    #[serde(with = "crate::serde_float")]
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, residual: f64, tolerance: f64, detail: String) -> Self {
        let residual = residual.max(0.0);
        CheckResult {
            name: name.into(),
            passed: residual <= tolerance,
            residual,
            tolerance,
            detail,
        }
    }

    /// A check that failed before it could measure anything.
    pub fn failed(name: &str, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            residual: f64::INFINITY,
            tolerance: 0.0,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub optimal_value: Option<f64>,
    pub optimal_policy: Option<TabularPolicy>,
    /// Concentrability of the optimal policy against itself.
    pub self_concentrability: Option<ConcentrabilityReport>,
    /// Concentrability of the optimal policy against the uniform policy.
    pub uniform_concentrability: Option<ConcentrabilityReport>,
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    /// Report for an input that failed validation.
    pub fn invalid_input(error: &Error) -> Self {
        OracleReport {
            optimal_value: None,
            optimal_policy: None,
            self_concentrability: None,
            uniform_concentrability: None,
            checks: vec![CheckResult::failed("validation", error.to_string())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Random draws per identity check.
    pub draws: usize,
    pub enumeration_cap: usize,
    /// Policy iterations for the regret check.
    pub regret_iterations: usize,
    /// Trajectory pairs behind the regret-check run.
    pub regret_pairs: usize,
    /// Exhaustive policy search only below this many deterministic policies.
    pub policy_search_limit: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            draws: 100,
            enumeration_cap: crate::mdp::DEFAULT_ENUMERATION_CAP,
            regret_iterations: 50,
            regret_pairs: 1000,
            policy_search_limit: 100_000,
        }
    }
}

/// Runs the invariant suite on `mdp`: Bellman round trip, performance
/// difference, decomposition identity, regret bound, concentrability
/// ordering, l1 symmetry and optimality of backward induction.
pub fn verify_suite(mdp: &EpisodicMdp, seed: u64, opts: &VerifyOptions) -> Result<OracleReport> {
    let dims = mdp.dims();
    let cap = opts.enumeration_cap;
    crate::mdp::trajectory_distribution(mdp, &TabularPolicy::uniform(dims), cap)?;
    let mut rng = rng::stream(seed, streams::VERIFY);
    let (pi_star, v_star) = optimal_policy(mdp);
    let step = mdp.step_bound();
    let bound = mdp.return_bound();
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..opts.draws {
        let pi = random_policy(&mut rng, dims, true);
        let f = random_values(&mut rng, dims, 0.0, bound);
        let q = policy_evaluation(mdp, &pi, &induced_reward(&f, mdp, &pi)?)?.q;
        worst = worst.max(q.max_abs_diff(&f));
    }
    checks.push(CheckResult::new("bellman_round_trip", worst, 1e-10, format!("{} draws", opts.draws)));

    let mut worst: f64 = 0.0;
    for _ in 0..opts.draws {
        let a = random_policy(&mut rng, dims, true);
        let b = random_policy(&mut rng, dims, true);
        let lhs = value(mdp, &a, mdp.true_reward())? - value(mdp, &b, mdp.true_reward())?;
        worst = worst.max((lhs - performance_difference(mdp, &a, &b, mdp.true_reward())?).abs());
    }
    checks.push(CheckResult::new("performance_difference", worst, 1e-10, format!("{} draws", opts.draws)));

    let mut worst: f64 = 0.0;
    for _ in 0..opts.draws {
        let pi_ref = random_policy(&mut rng, dims, false);
        let r_hat = random_reward(&mut rng, dims, 0.0, step);
        let f = random_values(&mut rng, dims, 0.0, bound);
        let pi_t = random_policy(&mut rng, dims, true);
        worst = worst.max(decomposition_witness(mdp, &pi_ref, &r_hat, &f, &pi_t)?.residual());
    }
    checks.push(CheckResult::new("decomposition", worst, 1e-9, format!("{} draws", opts.draws)));

    let pi_ref = TabularPolicy::uniform(dims);
    let data = generate_traj_dataset(mdp, &pi_ref, opts.regret_pairs, seed, "uniform")?;
    let (p_hat, pairs) = prepare_offline_data(&data, dims, 1.0, false)?;
    let config = AppoConfig {
        iterations: opts.regret_iterations,
        eta: StepSize::Auto,
        lambda: 1.0,
        seed,
        ..AppoConfig::default()
    };
    let (mixture, log) = run_appo(&config, &pairs, mdp.true_reward(), &p_hat, bound, None)?;
    let regret = npg_regret(mdp, mixture.iterates(), log.models())?;
    checks.push(CheckResult::new(
        "npg_regret_bound",
        regret.average_regret - regret.bound,
        1e-9,
        format!("average regret {} vs bound {} over T = {}", regret.average_regret, regret.bound, regret.iterations),
    ));

    let mut worst: f64 = 0.0;
    for _ in 0..opts.draws {
        let a = random_policy(&mut rng, dims, false);
        let b = random_policy(&mut rng, dims, true);
        let c = concentrability(mdp, &a, &b, cap)?;
        worst = worst.max(c.c_step - c.c_traj);
    }
    checks.push(CheckResult::new("c_step_le_c_traj", worst, 1e-12, format!("{} draws", opts.draws)));

    let mut worst: f64 = 0.0;
    for _ in 0..opts.draws.min(20) {
        let pi = random_policy(&mut rng, dims, false);
        let r = random_reward(&mut rng, dims, 0.0, step);
        let r_hat = random_reward(&mut rng, dims, 0.0, step);
        let forward = exact_l1_loss(L1Target::Reward(&r), &r_hat, &pi, mdp, cap)?;
        let swapped = exact_l1_loss(L1Target::Reward(&r_hat), &r, &pi, mdp, cap)?;
        worst = worst.max((forward - swapped).abs());
    }
    checks.push(CheckResult::new("l1_symmetry", worst, 1e-12, String::new()));

    match deterministic_policies(mdp, opts.policy_search_limit) {
        Some(all) => {
            let mut best = f64::NEG_INFINITY;
            for p in &all {
                best = best.max(value(mdp, p, mdp.true_reward())?);
            }
            checks.push(CheckResult::new(
                "optimal_policy",
                best - v_star,
                1e-10,
                format!("{} deterministic policies", all.len()),
            ));
        }
        None => log::info!("skipping exhaustive policy search: too many deterministic policies"),
    }

    let self_report = concentrability(mdp, &pi_star, &pi_star, cap)?;
    checks.push(CheckResult::new(
        "self_concentrability",
        (self_report.c_traj - 1.0).abs(),
        1e-12,
        format!("C_tr = {}", self_report.c_traj),
    ));
    let uniform_report = concentrability(mdp, &pi_ref, &pi_star, cap)?;

    Ok(OracleReport {
        optimal_value: Some(v_star),
        optimal_policy: Some(pi_star),
        self_concentrability: Some(self_report),
        uniform_concentrability: Some(uniform_report),
        checks,
    })
}
