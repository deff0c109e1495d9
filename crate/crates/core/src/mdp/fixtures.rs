//! Standard instances and random generators used by tests, benches and `verify`.

use rand::Rng;

use super::{Dims, EpisodicMdp, RewardModel, TabularPolicy, TransitionKernel, ValueTable};

/// The two-state, two-action, horizon-2 chain.
///
/// Start in state 0; action `a` moves deterministically to state `a` and
/// pays `0.5` when `a == 1`, else `0`. `R = 1`.
pub fn chain_mdp() -> EpisodicMdp {
    let dims = Dims::new(2, 2, 2).expect("static dims");
    let transitions = TransitionKernel::from_fn(dims, |_, _, a, next| if next == a { 1.0 } else { 0.0 })
        .expect("static kernel");
    let reward = RewardModel::from_fn(dims, |_, _, a| if a == 1 { 0.5 } else { 0.0 });
    EpisodicMdp::new(0, 1.0, transitions, reward).expect("static mdp")
}

/// A random point on the simplex; with `sparse`, each entry is independently
/// zeroed with probability 1/3 (at least one entry survives).
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, sparse: bool) -> Vec<f64> {
    loop {
        let mut row: Vec<f64> = (0..n)
            .map(|_| {
                if sparse && rng.random::<f64>() < 1.0 / 3.0 {
                    0.0
                } else {
                    -(1.0 - rng.random::<f64>()).ln()
                }
            })
            .collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|p| *p /= sum);
            // absorb rounding so the row sums to one to machine precision
            let drift = 1.0 - row.iter().sum::<f64>();
            let i = super::argmax(&row);
            row[i] += drift;
            return row;
        }
    }
}

pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, dims: Dims, return_bound: f64, sparse: bool) -> EpisodicMdp {
    let n = dims.num_states;
    let mut probs = Vec::with_capacity(dims.cells() * n);
    for _ in 0..dims.cells() {
        probs.extend(random_simplex(rng, n, sparse));
    }
    let transitions = TransitionKernel::new(dims, probs).expect("random rows are simplex points");
    let step = return_bound / dims.horizon as f64;
    let reward = RewardModel::from_fn(dims, |_, _, _| step * rng.random::<f64>());
    let initial = rng.random_range(0..n);
    EpisodicMdp::new(initial, return_bound, transitions, reward).expect("random mdp is valid")
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, dims: Dims, sparse: bool) -> TabularPolicy {
    let mut probs = Vec::with_capacity(dims.cells());
    for _ in 0..dims.horizon * dims.num_states {
        probs.extend(random_simplex(rng, dims.num_actions, sparse));
    }
    TabularPolicy::new(dims, probs).expect("random rows are simplex points")
}

pub fn random_values<R: Rng + ?Sized>(rng: &mut R, dims: Dims, lo: f64, hi: f64) -> ValueTable {
    ValueTable::from_fn(dims, |_, _, _| lo + (hi - lo) * rng.random::<f64>())
}

pub fn random_reward<R: Rng + ?Sized>(rng: &mut R, dims: Dims, lo: f64, hi: f64) -> RewardModel {
    RewardModel::from_fn(dims, |_, _, _| lo + (hi - lo) * rng.random::<f64>())
}

/// Random dimensions with `S <= max_s`, `A <= max_a`, `H <= max_h`.
pub fn random_dims<R: Rng + ?Sized>(rng: &mut R, max_s: usize, max_a: usize, max_h: usize) -> Dims {
    Dims::new(
        rng.random_range(1..=max_h),
        rng.random_range(1..=max_s),
        rng.random_range(1..=max_a),
    )
    .expect("positive dims")
}
