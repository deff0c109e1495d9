//! Box-constrained minimization of `c.x + lambda * sum_p w_p |d_p.x - b_p|`
//! by projected subgradient descent with best-iterate tracking. Steps are
//! taken along the unit subgradient direction with length `c / sqrt(k)`.
//!
//! Each `d_p` is the difference of two sparse rows, one per unique
//! trajectory, so a subgradient costs `O(rows * nnz + pairs)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub iterations: usize,
    /// Step length at iteration `k` is `step_scale / sqrt(k)`; `None` uses the box width.
    pub step_scale: Option<f64>,
    /// Early stop once an iterate moves less than this in the infinity norm.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            iterations: 300,
            step_scale: None,
            tol: 1e-12,
        }
    }
}

/// A pair of unique-trajectory indices with its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct WeightedPair {
    pub u0: usize,
    pub u1: usize,
    pub weight: f64,
}

pub(crate) struct L1Problem<'a> {
    pub linear: Vec<f64>,
    /// Sparse coefficient row of each unique trajectory.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub pairs: &'a [WeightedPair],
    /// `b_p`, aligned with `pairs`.
    pub targets: Vec<f64>,
    pub lambda: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(i, c)| c * x[i]).sum()
}

impl L1Problem<'_> {
    fn row_values(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, x)).collect()
    }

    /// Weighted mean absolute deviation `sum_p w_p |d_p.x - b_p|`.
    pub fn deviation(&self, x: &[f64]) -> f64 {
        let vals = self.row_values(x);
        self.pairs
            .iter()
            .zip(&self.targets)
            .map(|(p, b)| p.weight * (vals[p.u0] - vals[p.u1] - b).abs())
            .sum()
    }

    pub fn linear_term(&self, x: &[f64]) -> f64 {
        self.linear.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.linear_term(x) + self.lambda * self.deviation(x)
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let vals = self.row_values(x);
        let mut row_weight = vec![0.0; self.rows.len()];
        for (p, b) in self.pairs.iter().zip(&self.targets) {
            let r = vals[p.u0] - vals[p.u1] - b;
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            row_weight[p.u0] += self.lambda * p.weight * sign;
            row_weight[p.u1] -= self.lambda * p.weight * sign;
        }
        let mut g = self.linear.clone();
        for (row, w) in self.rows.iter().zip(&row_weight) {
            if *w != 0.0 {
                for &(i, c) in row {
                    g[i] += w * c;
                }
            }
        }
        g
    }

    fn project(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.clamp(self.lo, self.hi));
    }

    /// Runs from `start`; `candidates` only compete for the best iterate.
    pub fn minimize(&self, start: &[f64], candidates: &[&[f64]], opts: &SolverOptions, step_scale: f64) -> Solution {
        let mut x = start.to_vec();
        self.project(&mut x);
        let mut best_obj = self.objective(&x);
        let mut best = x.clone();
        for cand in candidates {
            let mut c = cand.to_vec();
            self.project(&mut c);
            let obj = self.objective(&c);
            if obj < best_obj {
                best_obj = obj;
                best = c;
            }
        }
        let scale = opts.step_scale.unwrap_or(step_scale);
        let mut iterations = 0;
        let mut converged = false;
        for k in 1..=opts.iterations {
            iterations = k;
            let g = self.subgradient(&x);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                converged = true;
                break;
            }
            let step = scale / ((k as f64).sqrt() * norm);
            let mut moved: f64 = 0.0;
            for (v, gi) in x.iter_mut().zip(&g) {
                let next = (*v - step * gi).clamp(self.lo, self.hi);
                moved = moved.max((next - *v).abs());
                *v = next;
            }
            let obj = self.objective(&x);
            if obj < best_obj {
                best_obj = obj;
                best.copy_from_slice(&x);
            }
            if moved <= opts.tol {
                converged = true;
                break;
            }
        }
        Solution {
            x: best,
            objective: best_obj,
            iterations,
            converged,
        }
    }
}
