//! The adversarial solvers: `run_appo` (fully offline, value-space inner
//! problem) and `run_appo_rollout` (simulator-assisted, reward-space inner
//! problem), with the induced-reward map, the trajectory-pair l1 losses and
//! the exponentiated-weights policy update.

mod runlog;
mod solver;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datagen::{rollout, rollout_with, ConcentrabilityReport, TrajectoryPairDataset};
use crate::error::{Error, Result};
use crate::estimators::{pe_subroutine, transition_mle, TransitionModel};
use crate::mdp::{
    policy_evaluation, return_of, trajectory_distribution, visitation, Dims, EpisodicMdp, RewardModel, TabularPolicy,
    Trajectory, TransitionKernel, ValueTable,
};
use crate::rng::{self, streams};

pub use runlog::{IterationRecord, RunLog};
pub use solver::SolverOptions;
use solver::{L1Problem, WeightedPair};

/// `sqrt(2 ln|A| / (R^2 T))`.
pub fn auto_eta(return_bound: f64, num_actions: usize, iterations: usize) -> f64 {
    (2.0 * (num_actions as f64).ln() / (return_bound * return_bound * iterations as f64)).sqrt()
}

/// Policy step size: either derived from `(R, |A|, T)` or fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

impl FromStr for StepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(StepSize::Auto);
        }
        s.parse::<f64>()
            .map(StepSize::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("eta must be \"auto\" or a number, got {s:?}")))
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Auto => f.write_str("auto"),
            StepSize::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for StepSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppoConfig {
    /// Number of policy iterations `T`.
    pub iterations: usize,
    pub eta: StepSize,
    /// Weight of the trajectory-pair l1 penalty.
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Fit transitions on the first half of the pairs and run the inner
    /// problem on the second half.
    #[serde(default)]
    pub split_data: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AppoConfig {
    fn default() -> Self {
        AppoConfig {
            iterations: 100,
            eta: StepSize::Auto,
            lambda: 1.0,
            solver: SolverOptions::default(),
            split_data: false,
            seed: 0,
        }
    }
}

impl AppoConfig {
    pub fn eta_for(&self, return_bound: f64, num_actions: usize) -> f64 {
        match self.eta {
            StepSize::Auto => auto_eta(return_bound, num_actions, self.iterations),
            StepSize::Fixed(v) => v,
        }
    }

    /// Checks parameter ranges. Returns warnings, such as `lambda <= C_tr`
    /// when a concentrability report is supplied.
    pub fn validate(&self, concentrability: Option<&ConcentrabilityReport>) -> Result<Vec<String>> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        if let StepSize::Fixed(v) = self.eta {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("eta must be positive, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let mut warnings = Vec::new();
        if let Some(report) = concentrability {
            if self.lambda <= report.c_traj {
                let msg = format!(
                    "lambda = {} does not exceed the trajectory concentrability C_tr = {}",
                    self.lambda, report.c_traj
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        Ok(warnings)
    }
}

/// `r_h(s,a) = f_h(s,a) - sum_{s'} P_h(s'|s,a) sum_{a'} pi_{h+1}(a'|s') f_{h+1}(s',a')`,
/// with `f_{H+1} = 0`. Not clipped to the reward box.
pub fn induced_reward(f: &ValueTable, model: &impl AsRef<TransitionKernel>, policy: &TabularPolicy) -> Result<RewardModel> {
    let kernel = model.as_ref();
    let dims = f.dims();
    dims.expect_same(&kernel.dims(), "transition model")?;
    dims.expect_same(&policy.dims(), "policy")?;
    let next_values: Vec<f64> = (0..dims.horizon * dims.num_states)
        .map(|row| {
            let (h, s) = (row / dims.num_states, row % dims.num_states);
            policy.row(h, s).iter().zip(f.row(h, s)).map(|(p, v)| p * v).sum()
        })
        .collect();
    Ok(RewardModel::from_fn(dims, |h, s, a| {
        let mut value = f.get(h, s, a);
        if h + 1 < dims.horizon {
            let base = (h + 1) * dims.num_states;
            value -= kernel
                .row(h, s, a)
                .iter()
                .enumerate()
                .map(|(next, p)| p * next_values[base + next])
                .sum::<f64>();
        }
        value
    }))
}

/// Sparse coefficients of `f -> r_f(tau)` for the induced reward under `(P, pi)`.
fn induced_return_row(tau: &Trajectory, kernel: &TransitionKernel, policy: &TabularPolicy) -> Vec<(usize, f64)> {
    let dims = kernel.dims();
    let mut coef: BTreeMap<usize, f64> = BTreeMap::new();
    for (h, &(s, a)) in tau.steps().iter().enumerate() {
        *coef.entry(dims.idx(h, s, a)).or_default() += 1.0;
        if h + 1 < dims.horizon {
            for (next, p) in kernel.row(h, s, a).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for (b, q) in policy.row(h + 1, next).iter().enumerate() {
                    if *q > 0.0 {
                        *coef.entry(dims.idx(h + 1, next, b)).or_default() -= p * q;
                    }
                }
            }
        }
    }
    coef.into_iter().filter(|(_, c)| *c != 0.0).collect()
}

fn indicator_row(tau: &Trajectory, dims: &Dims) -> Vec<(usize, f64)> {
    let mut coef: BTreeMap<usize, f64> = BTreeMap::new();
    for c in tau.cells(dims) {
        *coef.entry(c).or_default() += 1.0;
    }
    coef.into_iter().collect()
}

/// The offline data as the inner problems consume it: step marginals over
/// every trajectory, and trajectory pairs deduplicated with weights.
#[derive(Debug, Clone)]
pub struct DataSummary {
    dims: Dims,
    /// `mu_h(s,a)`
    step_marginals: Vec<f64>,
    trajectories: Vec<Trajectory>,
    pairs: Vec<WeightedPair>,
}

impl DataSummary {
    /// Empirical summary: marginals over the `2N` flattened trajectories,
    /// pair weights `count / N`.
    pub fn from_dataset(data: &TrajectoryPairDataset, dims: Dims) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("trajectory pair dataset".into()));
        }
        data.validate(&dims)?;
        let mut step_marginals = vec![0.0; dims.cells()];
        let unit = 1.0 / (2 * data.len()) as f64;
        for tau in data.flattened() {
            for c in tau.cells(&dims) {
                step_marginals[c] += unit;
            }
        }
        let mut ids: BTreeMap<&Trajectory, usize> = BTreeMap::new();
        for tau in data.flattened() {
            let next = ids.len();
            ids.entry(tau).or_insert(next);
        }
        let mut trajectories = vec![Trajectory::new(Vec::new()); ids.len()];
        for (t, i) in &ids {
            trajectories[*i] = (*t).clone();
        }
        let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (t0, t1) in &data.pairs {
            *counts.entry((ids[t0], ids[t1])).or_default() += 1.0;
        }
        let n = data.len() as f64;
        let pairs = counts
            .into_iter()
            .map(|((u0, u1), c)| WeightedPair { u0, u1, weight: c / n })
            .collect();
        Ok(DataSummary {
            dims,
            step_marginals,
            trajectories,
            pairs,
        })
    }

    /// Population summary under `pi_ref`: exact visitation and pair weights
    /// `d(tau0) d(tau1)` from trajectory enumeration.
    pub fn exact(mdp: &EpisodicMdp, pi_ref: &TabularPolicy, cap: usize) -> Result<Self> {
        let dims = mdp.dims();
        let dist = trajectory_distribution(mdp, pi_ref, cap)?;
        let step_marginals = visitation(mdp, pi_ref)?.state_action_slice().to_vec();
        let trajectories: Vec<Trajectory> = dist.entries.iter().map(|(t, _)| t.clone()).collect();
        let mut pairs = Vec::with_capacity(trajectories.len() * trajectories.len());
        for (u0, (_, p0)) in dist.entries.iter().enumerate() {
            for (u1, (_, p1)) in dist.entries.iter().enumerate() {
                pairs.push(WeightedPair { u0, u1, weight: p0 * p1 });
            }
        }
        Ok(DataSummary {
            dims,
            step_marginals,
            trajectories,
            pairs,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn step_marginal(&self, h: usize, s: usize, a: usize) -> f64 {
        self.step_marginals[self.dims.idx(h, s, a)]
    }

    pub fn num_unique_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_unique_pairs(&self) -> usize {
        self.pairs.len()
    }

    fn targets(&self, r_hat: &RewardModel) -> Vec<f64> {
        let returns: Vec<f64> = self.trajectories.iter().map(|t| return_of(r_hat, t)).collect();
        self.pairs.iter().map(|p| returns[p.u0] - returns[p.u1]).collect()
    }

    /// `c_h(s,a) = mu_h(s) pi_h(a|s) - mu_h(s,a)`, so that `c.f` is
    /// `sum_h E_data[f_h(s_h, pi_h) - f_h(s_h, a_h)]`.
    fn advantage_coefficients(&self, policy: &TabularPolicy) -> Vec<f64> {
        let dims = self.dims;
        let mut c = vec![0.0; dims.cells()];
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                let range = dims.row(h, s);
                let state_mass: f64 = self.step_marginals[range.clone()].iter().sum();
                for (a, i) in range.enumerate() {
                    c[i] = state_mass * policy.prob(h, s, a) - self.step_marginals[i];
                }
            }
        }
        c
    }

    fn value_problem(
        &self,
        model: &TransitionKernel,
        r_hat: &RewardModel,
        policy: &TabularPolicy,
        lambda: f64,
        return_bound: f64,
    ) -> Result<L1Problem<'_>> {
        self.dims.expect_same(&model.dims(), "transition model")?;
        self.dims.expect_same(&r_hat.dims(), "reward estimate")?;
        self.dims.expect_same(&policy.dims(), "policy")?;
        Ok(L1Problem {
            linear: self.advantage_coefficients(policy),
            rows: self.trajectories.iter().map(|t| induced_return_row(t, model, policy)).collect(),
            pairs: &self.pairs,
            targets: self.targets(r_hat),
            lambda,
            lo: 0.0,
            hi: return_bound,
        })
    }

    fn reward_problem(&self, rollout_freq: Vec<f64>, r_hat: &RewardModel, lambda: f64, step_bound: f64) -> L1Problem<'_> {
        let linear = rollout_freq.iter().zip(&self.step_marginals).map(|(a, b)| a - b).collect();
        L1Problem {
            linear,
            rows: self.trajectories.iter().map(|t| indicator_row(t, &self.dims)).collect(),
            pairs: &self.pairs,
            targets: self.targets(r_hat),
            lambda,
            lo: 0.0,
            hi: step_bound,
        }
    }
}

/// Mean over pairs of `|(r_f(tau0) - r_f(tau1)) - (r_hat(tau0) - r_hat(tau1))|`
/// with `r_f` the reward induced by `f` under `(P, pi)`.
pub fn l1_dev_loss(
    f: &ValueTable,
    model: &impl AsRef<TransitionKernel>,
    r_hat: &RewardModel,
    policy: &TabularPolicy,
    data: &TrajectoryPairDataset,
) -> Result<f64> {
    let summary = DataSummary::from_dataset(data, f.dims())?;
    summary.l1_dev(f, model, r_hat, policy)
}

/// `sum_h E_data[f_h(s_h, pi_h) - f_h(s_h, a_h)] + lambda * l1_dev_loss`.
pub fn inner_objective(
    f: &ValueTable,
    model: &impl AsRef<TransitionKernel>,
    r_hat: &RewardModel,
    policy: &TabularPolicy,
    data: &TrajectoryPairDataset,
    lambda: f64,
) -> Result<f64> {
    let summary = DataSummary::from_dataset(data, f.dims())?;
    summary.inner_objective(f, model, r_hat, policy, lambda)
}

impl DataSummary {
    pub fn l1_dev(
        &self,
        f: &ValueTable,
        model: &impl AsRef<TransitionKernel>,
        r_hat: &RewardModel,
        policy: &TabularPolicy,
    ) -> Result<f64> {
        self.dims.expect_same(&f.dims(), "value table")?;
        let problem = self.value_problem(model.as_ref(), r_hat, policy, 1.0, f64::INFINITY)?;
        Ok(problem.deviation(f.as_slice()))
    }

    pub fn inner_objective(
        &self,
        f: &ValueTable,
        model: &impl AsRef<TransitionKernel>,
        r_hat: &RewardModel,
        policy: &TabularPolicy,
        lambda: f64,
    ) -> Result<f64> {
        self.dims.expect_same(&f.dims(), "value table")?;
        let problem = self.value_problem(model.as_ref(), r_hat, policy, lambda, f64::INFINITY)?;
        Ok(problem.objective(f.as_slice()))
    }
}

/// Result of the value-space inner minimization.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub f: ValueTable,
    pub objective: f64,
    pub l1_dev: f64,
    pub warm_start_objective: f64,
    /// Objective at `Q^{pi}_{r_hat}` under the estimated transitions.
    pub comparator_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of the reward-space inner minimization.
#[derive(Debug, Clone)]
pub struct RewardSolution {
    pub r: RewardModel,
    pub objective: f64,
    pub l1_dev: f64,
    pub warm_start_l1_dev: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `E_rollouts[r(tau)] - E_data[r(tau)] + lambda * mean |Δr - Δr_hat|`
/// over `r in [0, step_bound]`, where `visits` holds the per-step visit
/// frequencies of the current policy's rollouts. `r_hat` competes as a
/// candidate alongside the iterates started from `warm_start`.
pub fn optimize_reward(
    summary: &DataSummary,
    visits: &RewardModel,
    r_hat: &RewardModel,
    lambda: f64,
    step_bound: f64,
    opts: &SolverOptions,
    warm_start: &RewardModel,
) -> Result<RewardSolution> {
    let dims = summary.dims;
    dims.expect_same(&visits.dims(), "visit frequencies")?;
    dims.expect_same(&r_hat.dims(), "reward estimate")?;
    dims.expect_same(&warm_start.dims(), "warm start")?;
    let problem = summary.reward_problem(visits.as_slice().to_vec(), r_hat, lambda, step_bound);
    let clip = |r: &RewardModel| -> Vec<f64> { r.as_slice().iter().map(|v| v.clamp(0.0, step_bound)).collect() };
    let start = clip(warm_start);
    let sol = problem.minimize(&start, &[&clip(r_hat)], opts, step_bound);
    Ok(RewardSolution {
        l1_dev: problem.deviation(&sol.x),
        warm_start_l1_dev: problem.deviation(&start),
        r: RewardModel::new(dims, sol.x)?,
        objective: sol.objective,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Projected subgradient descent on the inner objective over `f in [0, R]`.
///
/// Starts at `warm_start` (or the comparator when absent) and returns the
/// best iterate seen, which never does worse than either starting point.
#[allow(clippy::too_many_arguments)]
pub fn optimize_f(
    policy: &TabularPolicy,
    model: &impl AsRef<TransitionKernel>,
    r_hat: &RewardModel,
    summary: &DataSummary,
    lambda: f64,
    return_bound: f64,
    opts: &SolverOptions,
    warm_start: Option<&ValueTable>,
) -> Result<InnerSolution> {
    let kernel = model.as_ref();
    let problem = summary.value_problem(kernel, r_hat, policy, lambda, return_bound)?;
    let comparator = policy_evaluation(kernel, policy, r_hat)?.q;
    let start = warm_start.unwrap_or(&comparator);
    summary.dims.expect_same(&start.dims(), "warm start")?;

    let clip = |t: &ValueTable| -> Vec<f64> { t.as_slice().iter().map(|v| v.clamp(0.0, return_bound)).collect() };
    let start_x = clip(start);
    let comparator_x = clip(&comparator);
    let sol = problem.minimize(&start_x, &[&comparator_x], opts, return_bound);
    if !sol.converged {
        log::debug!("inner value solve stopped after {} iterations", sol.iterations);
    }
    Ok(InnerSolution {
        l1_dev: problem.deviation(&sol.x),
        warm_start_objective: problem.objective(&start_x),
        comparator_objective: problem.objective(&comparator_x),
        f: ValueTable::new(summary.dims, sol.x)?,
        objective: sol.objective,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// `pi'_h(a|s) ∝ pi_h(a|s) exp(eta f_h(s,a))`, computed in the log domain.
/// Zero-probability actions stay at zero.
pub fn policy_update(policy: &TabularPolicy, f: &ValueTable, eta: f64) -> Result<TabularPolicy> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be >= 0, got {eta}")));
    }
    let dims = policy.dims();
    dims.expect_same(&f.dims(), "value table")?;
    let mut probs = Vec::with_capacity(dims.cells());
    let mut logits = vec![0.0; dims.num_actions];
    for h in 0..dims.horizon {
        for s in 0..dims.num_states {
            let mut top = f64::NEG_INFINITY;
            for ((l, p), v) in logits.iter_mut().zip(policy.row(h, s)).zip(f.row(h, s)) {
                *l = if *p > 0.0 { p.ln() + eta * v } else { f64::NEG_INFINITY };
                top = top.max(*l);
            }
            let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = weights.iter().sum();
            probs.extend(weights.iter().map(|w| w / total));
        }
    }
    Ok(TabularPolicy::from_raw(dims, probs))
}

/// Uniform mixture over iterates, mixed at the episode level: each episode
/// draws one iterate uniformly and follows it throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile")]
pub struct MixturePolicy {
    iterates: Vec<TabularPolicy>,
}

#[derive(Deserialize)]
struct MixtureFile {
    iterates: Vec<TabularPolicy>,
}

impl TryFrom<MixtureFile> for MixturePolicy {
    type Error = Error;

    fn try_from(file: MixtureFile) -> Result<Self> {
        MixturePolicy::new(file.iterates)
    }
}

impl MixturePolicy {
    pub fn new(iterates: Vec<TabularPolicy>) -> Result<Self> {
        let Some(first) = iterates.first() else {
            return Err(Error::Empty("mixture policy".into()));
        };
        let dims = first.dims();
        for p in &iterates[1..] {
            dims.expect_same(&p.dims(), "mixture iterate")?;
        }
        Ok(MixturePolicy { iterates })
    }

    pub fn iterates(&self) -> &[TabularPolicy] {
        &self.iterates
    }

    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.iterates[0].dims()
    }

    /// Return of one episode: pick an iterate uniformly, then roll it out.
    pub fn sample_return<R: Rng + ?Sized>(&self, mdp: &EpisodicMdp, reward: &RewardModel, rng: &mut R) -> f64 {
        let i = rng.random_range(0..self.iterates.len());
        return_of(reward, &rollout(mdp, &self.iterates[i], rng))
    }
}

/// `(1/T) sum_t V^{pi^t}_1(s_1)`.
pub fn mixture_value(mixture: &MixturePolicy, mdp: &EpisodicMdp, reward: &RewardModel) -> Result<f64> {
    if mixture.is_empty() {
        return Err(Error::Empty("mixture policy".into()));
    }
    let mut total = 0.0;
    for p in mixture.iterates() {
        total += policy_evaluation(mdp, p, reward)?.value(0, mdp.initial_state());
    }
    Ok(total / mixture.len() as f64)
}

/// Sets `r_hat` to `step_bound` on every `(h, s, a)` the data never visits.
pub fn optimistic_corruption(r_hat: &RewardModel, data: &TrajectoryPairDataset, step_bound: f64) -> Result<RewardModel> {
    let dims = r_hat.dims();
    data.validate(&dims)?;
    let mut seen = vec![false; dims.cells()];
    for tau in data.flattened() {
        for c in tau.cells(&dims) {
            seen[c] = true;
        }
    }
    let values = r_hat
        .as_slice()
        .iter()
        .zip(&seen)
        .map(|(v, s)| if *s { *v } else { step_bound })
        .collect();
    RewardModel::new(dims, values)
}

/// Transition estimate and the pairs the inner problem runs on. With
/// `split`, the first half of the pairs fits the transitions and the second
/// half feeds the inner problem; otherwise both use everything.
pub fn prepare_offline_data(
    data: &TrajectoryPairDataset,
    dims: Dims,
    smoothing: f64,
    split: bool,
) -> Result<(TransitionModel, TrajectoryPairDataset)> {
    if split {
        let (first, second) = data.split_halves();
        if second.is_empty() {
            return Err(Error::Empty("second half of the split trajectory dataset".into()));
        }
        Ok((transition_mle(&first, dims, smoothing)?, second))
    } else {
        Ok((transition_mle(data, dims, smoothing)?, data.clone()))
    }
}

fn exact_value(oracle: Option<&EpisodicMdp>, policy: &TabularPolicy) -> Result<Option<f64>> {
    oracle
        .map(|mdp| Ok(policy_evaluation(mdp, policy, mdp.true_reward())?.value(0, mdp.initial_state())))
        .transpose()
}

/// Fully offline solver. Each iteration solves the value-space inner problem
/// against the current policy, then takes an exponentiated-weights step.
///
/// `oracle`, when given, only feeds the exact-value column of the log.
pub fn run_appo(
    config: &AppoConfig,
    data: &TrajectoryPairDataset,
    r_hat: &RewardModel,
    p_hat: &TransitionModel,
    return_bound: f64,
    oracle: Option<&EpisodicMdp>,
) -> Result<(MixturePolicy, RunLog)> {
    config.validate(None)?;
    let dims = r_hat.dims();
    dims.expect_same(&p_hat.dims(), "transition model")?;
    let summary = DataSummary::from_dataset(data, dims)?;
    let eta = config.eta_for(return_bound, dims.num_actions);
    let started = Instant::now();

    let mut policy = TabularPolicy::uniform(dims);
    let mut iterates = Vec::with_capacity(config.iterations);
    let mut log = RunLog::default();
    let mut warm: Option<ValueTable> = None;
    for t in 1..=config.iterations {
        let inner = optimize_f(&policy, p_hat, r_hat, &summary, config.lambda, return_bound, &config.solver, warm.as_ref())?;
        let next = policy_update(&policy, &inner.f, eta)?;
        log.push(
            IterationRecord {
                iter: t,
                inner_obj: inner.objective,
                l1_dev: inner.l1_dev,
                exact_value_true_reward: exact_value(oracle, &policy)?,
                entropy: next.mean_entropy(),
                seconds: started.elapsed().as_secs_f64(),
            },
            inner.f.clone(),
        );
        iterates.push(std::mem::replace(&mut policy, next));
        warm = Some(inner.f);
    }
    Ok((MixturePolicy::new(iterates)?, log))
}

/// Simulator-assisted solver. Each iteration draws `k1` rollouts of the
/// current policy, solves the reward-space inner problem over
/// `[0, R/H]`, estimates `Q` of the current policy under that reward with `k2`
/// rollouts per step, and takes an exponentiated-weights step.
pub fn run_appo_rollout(
    config: &AppoConfig,
    mdp: &EpisodicMdp,
    pi_ref: &TabularPolicy,
    data: &TrajectoryPairDataset,
    r_hat: &RewardModel,
    k1: usize,
    k2: usize,
) -> Result<(MixturePolicy, RunLog)> {
    config.validate(None)?;
    if k1 == 0 || k2 == 0 {
        return Err(Error::InvalidParameter("K1 and K2 must be at least 1".into()));
    }
    let dims = mdp.dims();
    dims.expect_same(&r_hat.dims(), "reward estimate")?;
    dims.expect_same(&pi_ref.dims(), "reference policy")?;
    let summary = DataSummary::from_dataset(data, dims)?;
    let eta = config.eta_for(mdp.return_bound(), dims.num_actions);
    let step_bound = mdp.step_bound();
    let mut rng = rng::stream(config.seed, streams::ROLLOUT);
    let started = Instant::now();

    let mut policy = TabularPolicy::uniform(dims);
    let mut iterates = Vec::with_capacity(config.iterations);
    let mut log = RunLog::default();
    let mut warm = r_hat.clone();
    for t in 1..=config.iterations {
        let mut freq = vec![0.0; dims.cells()];
        let unit = 1.0 / k1 as f64;
        for _ in 0..k1 {
            let tau = rollout_with(mdp, &mut rng, |h, s| policy.row(h, s));
            for c in tau.cells(&dims) {
                freq[c] += unit;
            }
        }
        let visits = RewardModel::new(dims, freq)?;
        let inner = optimize_reward(&summary, &visits, r_hat, config.lambda, step_bound, &config.solver, &warm)?;
        let q = pe_subroutine(mdp, pi_ref, &policy, &inner.r, k2, &mut rng)?;
        let next = policy_update(&policy, &q.values, eta)?;
        log.push(
            IterationRecord {
                iter: t,
                inner_obj: inner.objective,
                l1_dev: inner.l1_dev,
                exact_value_true_reward: exact_value(Some(mdp), &policy)?,
                entropy: next.mean_entropy(),
                seconds: started.elapsed().as_secs_f64(),
            },
            q.values,
        );
        iterates.push(std::mem::replace(&mut policy, next));
        warm = inner.r;
    }
    Ok((MixturePolicy::new(iterates)?, log))
}
