//! Finite episodic MDPs and the tabular objects defined over them.
//!
//! Steps are indexed `0..horizon` internally. Every per-step table is stored
//! flat in `[h][s][a]` order and every transition kernel in `[h][s][a][s']`
//! order.

mod eval;
pub mod fixtures;
pub(crate) mod io;

pub use eval::{
    performance_difference, policy_evaluation, trajectory_distribution, trajectory_return,
    visitation, Evaluation, TrajectoryDistribution, DEFAULT_ENUMERATION_CAP,
};
pub(crate) use eval::return_of;
pub use io::{MdpFile, TableFile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows summing to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
}

impl Dims {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize) -> Result<Self> {
        if horizon == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidParameter(format!(
                "dimensions must be positive (H={horizon}, S={num_states}, A={num_actions})"
            )));
        }
        Ok(Dims {
            horizon,
            num_states,
            num_actions,
        })
    }

    /// Number of `(h, s, a)` cells.
    pub fn cells(&self) -> usize {
        self.horizon * self.num_states * self.num_actions
    }

    #[inline]
    pub fn idx(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    /// Inverse of [`Dims::idx`].
    pub fn unflatten(&self, i: usize) -> (usize, usize, usize) {
        let a = i % self.num_actions;
        let hs = i / self.num_actions;
        (hs / self.num_states, hs % self.num_states, a)
    }

    #[inline]
    pub(crate) fn row(&self, h: usize, s: usize) -> std::ops::Range<usize> {
        let start = self.idx(h, s, 0);
        start..start + self.num_actions
    }

    pub(crate) fn check_cell(&self, h: usize, s: usize, a: usize) -> Result<()> {
        if h >= self.horizon {
            return Err(Error::index("step", h, self.horizon));
        }
        if s >= self.num_states {
            return Err(Error::index("state", s, self.num_states));
        }
        if a >= self.num_actions {
            return Err(Error::index("action", a, self.num_actions));
        }
        Ok(())
    }

    /// Errors unless `other` has the same horizon, states and actions.
    pub fn expect_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self.horizon != other.horizon {
            return Err(Error::dims(format!("{what} horizon"), self.horizon, other.horizon));
        }
        if self.num_states != other.num_states {
            return Err(Error::dims(
                format!("{what} num_states"),
                self.num_states,
                other.num_states,
            ));
        }
        if self.num_actions != other.num_actions {
            return Err(Error::dims(
                format!("{what} num_actions"),
                self.num_actions,
                other.num_actions,
            ));
        }
        Ok(())
    }
}

fn check_simplex(row: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution {
            location: location(),
            reason: format!("entry {p} is negative or non-finite"),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution {
            location: location(),
            reason: format!("row sums to {sum}"),
        });
    }
    Ok(())
}

/// Per-step transition kernels `P_h(s' | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    dims: Dims,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        let expected = dims.cells() * dims.num_states;
        if probs.len() != expected {
            return Err(Error::dims("transition table", expected, probs.len()));
        }
        let kernel = TransitionKernel { dims, probs };
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                for a in 0..dims.num_actions {
                    check_simplex(kernel.row(h, s, a), || {
                        format!("transitions[h={h}][s={s}][a={a}]")
                    })?;
                }
            }
        }
        Ok(kernel)
    }

    pub fn from_fn(dims: Dims, mut p: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut probs = Vec::with_capacity(dims.cells() * dims.num_states);
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                for a in 0..dims.num_actions {
                    for next in 0..dims.num_states {
                        probs.push(p(h, s, a, next));
                    }
                }
            }
        }
        Self::new(dims, probs)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.dims.idx(h, s, a) * self.dims.num_states;
        &self.probs[start..start + self.dims.num_states]
    }

    /// `(P_h g)(s, a) = E_{s' ~ P_h(.|s,a)} g(s')`.
    #[inline]
    pub fn expect(&self, h: usize, s: usize, a: usize, g: &[f64]) -> f64 {
        self.row(h, s, a).iter().zip(g).map(|(p, v)| p * v).sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Stochastic per-step policy `pi_h(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "io::PolicyFile", into = "io::PolicyFile")]
pub struct TabularPolicy {
    dims: Dims,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.cells() {
            return Err(Error::dims("policy table", dims.cells(), probs.len()));
        }
        let policy = TabularPolicy { dims, probs };
        for h in 0..dims.horizon {
            for s in 0..dims.num_states {
                check_simplex(policy.row(h, s), || format!("policy[h={h}][s={s}]"))?;
            }
        }
        Ok(policy)
    }

    pub fn uniform(dims: Dims) -> Self {
        TabularPolicy {
            dims,
            probs: vec![1.0 / dims.num_actions as f64; dims.cells()],
        }
    }

    /// Deterministic policy from an action table indexed `[h][s]`.
    pub fn deterministic(dims: Dims, actions: &[usize]) -> Result<Self> {
        let rows = dims.horizon * dims.num_states;
        if actions.len() != rows {
            return Err(Error::dims("deterministic action table", rows, actions.len()));
        }
        let mut probs = vec![0.0; dims.cells()];
        for (hs, &a) in actions.iter().enumerate() {
            if a >= dims.num_actions {
                return Err(Error::index("action", a, dims.num_actions));
            }
            probs[hs * dims.num_actions + a] = 1.0;
        }
        Ok(TabularPolicy { dims, probs })
    }

    /// Unchecked constructor for rows already known to be simplex points.
    pub(crate) fn from_raw(dims: Dims, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), dims.cells());
        TabularPolicy { dims, probs }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        &self.probs[self.dims.row(h, s)]
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[self.dims.idx(h, s, a)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Pointwise mixture `w * self + (1 - w) * other`.
    pub fn blend(&self, other: &TabularPolicy, w: f64) -> Result<TabularPolicy> {
        self.dims.expect_same(&other.dims, "policy blend")?;
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| w * p + (1.0 - w) * q)
            .collect();
        Ok(TabularPolicy::from_raw(self.dims, probs))
    }

    /// Mean Shannon entropy (nats) over all `(h, s)` rows.
    pub fn mean_entropy(&self) -> f64 {
        let rows = self.dims.horizon * self.dims.num_states;
        let total: f64 = self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        total / rows as f64
    }

    /// Greedy action per `(h, s)` row; ties go to the lowest index.
    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.dims.horizon * self.dims.num_states)
            .map(|hs| argmax(&self.probs[hs * self.dims.num_actions..(hs + 1) * self.dims.num_actions]))
            .collect()
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// A length-`H` sequence of `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Trajectory { steps }
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        if self.steps.len() != dims.horizon {
            return Err(Error::dims("trajectory length", dims.horizon, self.steps.len()));
        }
        for (h, &(s, a)) in self.steps.iter().enumerate() {
            dims.check_cell(h, s, a)?;
        }
        Ok(())
    }

    /// Flat `(h, s, a)` cell indices visited by this trajectory.
    pub fn cells<'a>(&'a self, dims: &'a Dims) -> impl Iterator<Item = usize> + 'a {
        self.steps
            .iter()
            .enumerate()
            .map(move |(h, &(s, a))| dims.idx(h, s, a))
    }
}

macro_rules! step_table {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            dims: Dims,
            values: Vec<f64>,
        }

        impl $name {
            pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
                if values.len() != dims.cells() {
                    return Err(Error::dims(stringify!($name), dims.cells(), values.len()));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    let (h, s, a) = dims.unflatten(i);
                    return Err(Error::InvalidParameter(format!(
                        "non-finite entry at [h={h}][s={s}][a={a}]"
                    )));
                }
                Ok($name { dims, values })
            }

            pub fn zeros(dims: Dims) -> Self {
                Self::constant(dims, 0.0)
            }

            pub fn constant(dims: Dims, c: f64) -> Self {
                $name { dims, values: vec![c; dims.cells()] }
            }

            pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
                let mut values = Vec::with_capacity(dims.cells());
                for h in 0..dims.horizon {
                    for s in 0..dims.num_states {
                        for a in 0..dims.num_actions {
                            values.push(f(h, s, a));
                        }
                    }
                }
                $name { dims, values }
            }

            pub fn dims(&self) -> Dims {
                self.dims
            }

            #[inline]
            pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
                self.values[self.dims.idx(h, s, a)]
            }

            #[inline]
            pub fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
                let i = self.dims.idx(h, s, a);
                self.values[i] = v;
            }

            #[inline]
            pub fn row(&self, h: usize, s: usize) -> &[f64] {
                &self.values[self.dims.row(h, s)]
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.values
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.values
            }

            /// True when every entry lies in `[lo, hi]`.
            pub fn within(&self, lo: f64, hi: f64) -> bool {
                self.values.iter().all(|v| *v >= lo && *v <= hi)
            }

            /// Validates every entry against `[lo, hi]`.
            pub fn check_box(&self, lo: f64, hi: f64) -> Result<()> {
                match self.values.iter().position(|v| *v < lo || *v > hi) {
                    None => Ok(()),
                    Some(i) => {
                        let (h, s, a) = self.dims.unflatten(i);
                        Err(Error::OutOfBounds {
                            location: format!("{}[h={h}][s={s}][a={a}]", stringify!($name)),
                            value: self.values[i],
                            lo,
                            hi,
                        })
                    }
                }
            }

            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.values
                    .iter()
                    .zip(&other.values)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            }

            /// `f_h o pi_h (s) = sum_a pi_h(a|s) f_h(s, a)`.
            #[inline]
            pub fn policy_average(&self, policy: &TabularPolicy, h: usize, s: usize) -> f64 {
                self.row(h, s).iter().zip(policy.row(h, s)).map(|(f, p)| f * p).sum()
            }
        }
    };
}

step_table!(
    /// Per-step reward `r_h(s, a)`. Entries are unconstrained here; fitted
    /// models and true rewards are box-checked where they are produced.
    RewardModel
);

step_table!(
    /// Per-step action-value table `f_h(s, a)` (also houses `Q^pi`).
    ValueTable
);

impl RewardModel {
    /// Linear combination `self - other`, used for decomposition terms.
    pub fn minus(&self, other: &RewardModel) -> Result<RewardModel> {
        self.dims.expect_same(&other.dims, "reward difference")?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x - y).collect();
        Ok(RewardModel { dims: self.dims, values })
    }
}

/// State-action and state visitation distributions `d^pi_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationDistributions {
    dims: Dims,
    state_action: Vec<f64>,
    state: Vec<f64>,
}

impl VisitationDistributions {
    pub fn state_action(&self, h: usize, s: usize, a: usize) -> f64 {
        self.state_action[self.dims.idx(h, s, a)]
    }

    pub fn state(&self, h: usize, s: usize) -> f64 {
        self.state[h * self.dims.num_states + s]
    }

    pub fn state_action_slice(&self) -> &[f64] {
        &self.state_action
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
}

/// A finite episodic MDP with a fixed initial state and ground-truth reward.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicMdp {
    dims: Dims,
    initial_state: usize,
    return_bound: f64,
    transitions: TransitionKernel,
    reward: RewardModel,
}

impl EpisodicMdp {
    /// Builds and validates an MDP. The true reward must lie in the per-step
    /// box `[0, R/H]`, so every trajectory return lies in `[0, R]`.
    pub fn new(
        initial_state: usize,
        return_bound: f64,
        transitions: TransitionKernel,
        reward: RewardModel,
    ) -> Result<Self> {
        let dims = transitions.dims();
        dims.expect_same(&reward.dims(), "reward")?;
        if initial_state >= dims.num_states {
            return Err(Error::index("initial_state", initial_state, dims.num_states));
        }
        if !(return_bound.is_finite() && return_bound > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "return_bound must be positive, got {return_bound}"
            )));
        }
        reward.check_box(0.0, return_bound / dims.horizon as f64)?;
        Ok(EpisodicMdp {
            dims,
            initial_state,
            return_bound,
            transitions,
            reward,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    pub fn num_states(&self) -> usize {
        self.dims.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.dims.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Trajectory return bound `R`.
    pub fn return_bound(&self) -> f64 {
        self.return_bound
    }

    /// Per-step reward bound `R / H`.
    pub fn step_bound(&self) -> f64 {
        self.return_bound / self.dims.horizon as f64
    }

    pub fn transitions(&self) -> &TransitionKernel {
        &self.transitions
    }

    pub fn true_reward(&self) -> &RewardModel {
        &self.reward
    }
}
