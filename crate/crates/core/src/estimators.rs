//! Maximum-likelihood reward and transition estimation, and Monte Carlo
//! policy evaluation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{rollout_with, LinkFunction, PreferenceDataset, TrajectoryPairDataset};
use crate::error::{Error, Result};
use crate::mdp::io::{from_nested4, to_nested4, Nested4};
use crate::mdp::{Dims, EpisodicMdp, RewardModel, TabularPolicy, Trajectory, TransitionKernel, ValueTable};

/// Smallest argument passed to `ln` when evaluating the preference likelihood.
pub const LOG_CLAMP: f64 = 1e-12;

/// Estimated transitions `P_hat_h(s' | s, a)` with their visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    kernel: TransitionKernel,
    smoothing: f64,
    /// `[h][s][a][s']` transition counts.
    counts: Vec<u64>,
}

impl AsRef<TransitionKernel> for TransitionModel {
    fn as_ref(&self) -> &TransitionKernel {
        &self.kernel
    }
}

impl TransitionModel {
    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn dims(&self) -> Dims {
        self.kernel.dims()
    }

    /// Number of observed transitions out of `(h, s, a)`.
    pub fn visits(&self, h: usize, s: usize, a: usize) -> u64 {
        let n = self.dims().num_states;
        let start = self.dims().idx(h, s, a) * n;
        self.counts[start..start + n].iter().sum()
    }

    /// Wraps a known kernel (e.g. the true `P*`) with zero counts.
    pub fn exact(kernel: TransitionKernel) -> Self {
        let len = kernel.as_slice().len();
        TransitionModel {
            kernel,
            smoothing: 0.0,
            counts: vec![0; len],
        }
    }
}

/// Categorical maximum likelihood with additive smoothing:
/// `P_hat_h(s'|s,a) = (n(h,s,a,s') + alpha) / (n(h,s,a) + alpha * S)`.
///
/// Both members of every pair contribute. Unvisited rows are uniform.
pub fn transition_mle(data: &TrajectoryPairDataset, dims: Dims, alpha: f64) -> Result<TransitionModel> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("smoothing must be >= 0, got {alpha}")));
    }
    data.validate(&dims)?;
    let n = dims.num_states;
    let mut counts = vec![0u64; dims.cells() * n];
    for tau in data.flattened() {
        for (h, pair) in tau.steps().windows(2).enumerate() {
            let (s, a) = pair[0];
            let next = pair[1].0;
            counts[dims.idx(h, s, a) * n + next] += 1;
        }
    }
    let mut probs = vec![0.0; counts.len()];
    for cell in 0..dims.cells() {
        let row = &counts[cell * n..(cell + 1) * n];
        let total: u64 = row.iter().sum();
        let denom = total as f64 + alpha * n as f64;
        for (next, c) in row.iter().enumerate() {
            probs[cell * n + next] = if denom > 0.0 {
                (*c as f64 + alpha) / denom
            } else {
                1.0 / n as f64
            };
        }
    }
    Ok(TransitionModel {
        kernel: TransitionKernel::new(dims, probs)?,
        smoothing: alpha,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iters: usize,
    pub step: f64,
    /// Stop once the projected-gradient infinity norm falls to this level.
    pub tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iters: 5000,
            step: 0.5,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFitReport {
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    /// Infinity norm of the projected gradient at exit.
    pub grad_norm: f64,
    pub converged: bool,
    /// Set when some `phi` value was clamped at [`LOG_CLAMP`] before taking logs.
    pub clamped: bool,
    /// Loss after every accepted iteration, starting with the initial loss.
    pub losses: Vec<f64>,
}

/// Preference data aggregated by unique trajectory pair.
struct PreferenceTable {
    trajectories: Vec<Trajectory>,
    /// `(index of tau0, index of tau1, count with y = 1, count with y = 0)`
    pairs: Vec<(usize, usize, f64, f64)>,
    total: f64,
}

impl PreferenceTable {
    fn new(data: &PreferenceDataset) -> Self {
        let mut ids: BTreeMap<&Trajectory, usize> = BTreeMap::new();
        for s in &data.samples {
            for t in [&s.tau0, &s.tau1] {
                let next = ids.len();
                ids.entry(t).or_insert(next);
            }
        }
        let mut trajectories = vec![Trajectory::new(Vec::new()); ids.len()];
        for (t, i) in &ids {
            trajectories[*i] = (*t).clone();
        }
        let mut pairs: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        for s in &data.samples {
            let e = pairs.entry((ids[&s.tau0], ids[&s.tau1])).or_default();
            if s.y {
                e.0 += 1.0;
            } else {
                e.1 += 1.0;
            }
        }
        PreferenceTable {
            trajectories,
            pairs: pairs.into_iter().map(|((a, b), (n1, n0))| (a, b, n1, n0)).collect(),
            total: data.samples.len() as f64,
        }
    }

    fn returns(&self, reward: &[f64], dims: &Dims) -> Vec<f64> {
        self.trajectories
            .iter()
            .map(|t| t.cells(dims).map(|c| reward[c]).sum())
            .collect()
    }

    /// Negative mean log-likelihood and whether any argument was clamped.
    fn loss(&self, link: &LinkFunction, reward: &[f64], dims: &Dims) -> (f64, bool) {
        let ret = self.returns(reward, dims);
        let mut clamped = false;
        let mut total = 0.0;
        for &(i0, i1, n1, n0) in &self.pairs {
            let delta = ret[i1] - ret[i0];
            for (n, x) in [(n1, delta), (n0, -delta)] {
                if n > 0.0 {
                    let p = link.phi(x);
                    if !(p > LOG_CLAMP) {
                        clamped = true;
                    }
                    total -= n * p.max(LOG_CLAMP).ln();
                }
            }
        }
        (total / self.total, clamped)
    }

    fn gradient(&self, link: &LinkFunction, reward: &[f64], dims: &Dims) -> Vec<f64> {
        let ret = self.returns(reward, dims);
        let mut d_ret = vec![0.0; ret.len()];
        for &(i0, i1, n1, n0) in &self.pairs {
            let delta = ret[i1] - ret[i0];
            // d/d delta of -(n1 ln phi(delta) + n0 ln phi(-delta))
            let g = -(n1 * link.dphi(delta) / link.phi(delta).max(LOG_CLAMP))
                + n0 * link.dphi(-delta) / link.phi(-delta).max(LOG_CLAMP);
            d_ret[i1] += g;
            d_ret[i0] -= g;
        }
        let mut grad = vec![0.0; dims.cells()];
        for (t, g) in self.trajectories.iter().zip(&d_ret) {
            for c in t.cells(dims) {
                grad[c] += g / self.total;
            }
        }
        grad
    }
}

fn project(x: &mut [f64], lo: f64, hi: f64) {
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

fn projected_gradient_norm(x: &[f64], grad: &[f64], lo: f64, hi: f64) -> f64 {
    x.iter()
        .zip(grad)
        .map(|(v, g)| (v - (v - g).clamp(lo, hi)).abs())
        .fold(0.0, f64::max)
}

/// Bradley-Terry style maximum likelihood over the tabular box `[0, step_bound]`.
///
/// Projected gradient descent from the box midpoint. A step that fails to
/// decrease the loss is halved (up to 50 times), so the recorded losses are
/// non-increasing.
pub fn reward_mle(
    data: &PreferenceDataset,
    link: &LinkFunction,
    dims: Dims,
    step_bound: f64,
    opts: &MleOptions,
) -> Result<(RewardModel, MleFitReport)> {
    if data.is_empty() {
        return Err(Error::Empty("preference dataset".into()));
    }
    if !link.kappa().is_finite() {
        return Err(Error::InvalidParameter("link kappa must be finite".into()));
    }
    data.validate(&dims)?;
    let table = PreferenceTable::new(data);

    let (lo, hi) = (0.0, step_bound);
    let mut x = vec![0.5 * step_bound; dims.cells()];
    let (mut loss, mut clamped) = table.loss(link, &x, &dims);
    let initial_loss = loss;
    let mut losses = vec![loss];
    let mut grad = table.gradient(link, &x, &dims);
    let mut grad_norm = projected_gradient_norm(&x, &grad, lo, hi);
    let mut iterations = 0;
    let mut converged = grad_norm <= opts.tol;

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let mut step = opts.step;
        let mut accepted = None;
        for _ in 0..50 {
            let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v - step * g).collect();
            project(&mut cand, lo, hi);
            let (cand_loss, cand_clamped) = table.loss(link, &cand, &dims);
            if cand_loss < loss {
                accepted = Some((cand, cand_loss, cand_clamped));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_loss, cand_clamped)) = accepted else {
            // no descent direction left at machine precision
            converged = true;
            break;
        };
        x = cand;
        loss = cand_loss;
        clamped |= cand_clamped;
        losses.push(loss);
        grad = table.gradient(link, &x, &dims);
        grad_norm = projected_gradient_norm(&x, &grad, lo, hi);
        converged = grad_norm <= opts.tol;
    }
    if clamped {
        log::warn!("reward MLE clamped link values at {LOG_CLAMP} before taking logs");
    }
    if !converged {
        log::warn!("reward MLE stopped after {iterations} iterations with projected gradient {grad_norm:.3e}");
    }
    let report = MleFitReport {
        loss,
        initial_loss,
        iterations,
        grad_norm,
        converged,
        clamped,
        losses,
    };
    Ok((RewardModel::new(dims, x)?, report))
}

/// Empirical negative log-likelihood of `reward` on `data`.
pub fn preference_loss(data: &PreferenceDataset, link: &LinkFunction, reward: &RewardModel) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("preference dataset".into()));
    }
    let dims = reward.dims();
    data.validate(&dims)?;
    Ok(PreferenceTable::new(data).loss(link, reward.as_slice(), &dims).0)
}

/// Monte Carlo action-value estimate with per-cell visit counts.
#[derive(Debug, Clone)]
pub struct MonteCarloQ {
    pub values: ValueTable,
    /// Number of rollouts that landed on each `(h, s, a)` at step `h`.
    pub visits: Vec<u64>,
}

impl MonteCarloQ {
    pub fn visited(&self, h: usize, s: usize, a: usize) -> bool {
        self.visits[self.values.dims().idx(h, s, a)] > 0
    }
}

/// Monte Carlo policy evaluation with rollouts through the simulator.
///
/// For each step `h`, `k` rollouts act with `pi_ref` before `h`, with
/// `(pi_ref + pi_t) / 2` at `h`, and with `pi_t` after `h`. The tabular
/// least-squares fit of the reward-to-go is the per-cell sample mean;
/// unvisited cells get `R / 2`.
pub fn pe_subroutine<R: Rng + ?Sized>(
    mdp: &EpisodicMdp,
    pi_ref: &TabularPolicy,
    pi_t: &TabularPolicy,
    reward: &RewardModel,
    k: usize,
    rng: &mut R,
) -> Result<MonteCarloQ> {
    if k == 0 {
        return Err(Error::InvalidParameter("rollout count K must be at least 1".into()));
    }
    let dims = mdp.dims();
    dims.expect_same(&pi_ref.dims(), "reference policy")?;
    dims.expect_same(&pi_t.dims(), "current policy")?;
    dims.expect_same(&reward.dims(), "reward")?;
    let blend = pi_ref.blend(pi_t, 0.5)?;

    let mut sums = vec![0.0; dims.cells()];
    let mut visits = vec![0u64; dims.cells()];
    for h in 0..dims.horizon {
        for _ in 0..k {
            let tau = rollout_with(mdp, rng, |j, s| {
                if j < h {
                    pi_ref.row(j, s)
                } else if j == h {
                    blend.row(j, s)
                } else {
                    pi_t.row(j, s)
                }
            });
            let to_go: f64 = tau.steps()[h..]
                .iter()
                .enumerate()
                .map(|(i, &(s, a))| reward.get(h + i, s, a))
                .sum();
            let (s, a) = tau.steps()[h];
            let cell = dims.idx(h, s, a);
            sums[cell] += to_go;
            visits[cell] += 1;
        }
    }
    let fallback = 0.5 * mdp.return_bound();
    let values = sums
        .iter()
        .zip(&visits)
        .map(|(sum, n)| if *n > 0 { sum / *n as f64 } else { fallback })
        .collect();
    Ok(MonteCarloQ {
        values: ValueTable::new(dims, values)?,
        visits,
    })
}

/// Serialized transition model: the MDP array layout plus smoothing and counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionModelFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub smoothing: f64,
    /// `[h][s][a][s']`
    pub transitions: Nested4,
    /// `[h][s][a][s']`
    pub counts: Vec<Vec<Vec<Vec<u64>>>>,
}

impl From<&TransitionModel> for TransitionModelFile {
    fn from(model: &TransitionModel) -> Self {
        let dims = model.dims();
        let counts_f: Vec<f64> = model.counts.iter().map(|c| *c as f64).collect();
        let counts = to_nested4(&dims, &counts_f)
            .into_iter()
            .map(|l| l.into_iter().map(|r| r.into_iter().map(|v| v.into_iter().map(|c| c as u64).collect()).collect()).collect())
            .collect();
        TransitionModelFile {
            num_states: dims.num_states,
            num_actions: dims.num_actions,
            horizon: dims.horizon,
            smoothing: model.smoothing,
            transitions: to_nested4(&dims, model.kernel.as_slice()),
            counts,
        }
    }
}

impl TryFrom<TransitionModelFile> for TransitionModel {
    type Error = Error;

    fn try_from(file: TransitionModelFile) -> Result<Self> {
        let dims = Dims::new(file.horizon, file.num_states, file.num_actions)?;
        let kernel = TransitionKernel::new(dims, from_nested4(&dims, &file.transitions, "transitions")?)?;
        let counts_f: Nested4 = file
            .counts
            .iter()
            .map(|l| l.iter().map(|r| r.iter().map(|v| v.iter().map(|c| *c as f64).collect()).collect()).collect())
            .collect();
        let counts = from_nested4(&dims, &counts_f, "counts")?.into_iter().map(|c| c as u64).collect();
        Ok(TransitionModel {
            kernel,
            smoothing: file.smoothing,
            counts,
        })
    }
}
