//! One training run from datasets to a result row. `train` and every sweep
//! point go through [`train`], so a one-point sweep reproduces `train`.

use std::path::Path;
use std::time::Instant;

use appo_core::appo::{self, AppoConfig, MixturePolicy, RunLog, SolverOptions};
use appo_core::datagen::{
    self, ConcentrabilityReport, LinkFunction, PreferenceDataset, TrajectoryPairDataset,
};
use appo_core::estimators::{self, MleFitReport, MleOptions, TransitionModel};
use appo_core::mdp::DEFAULT_ENUMERATION_CAP;
use appo_core::{oracle, EpisodicMdp, RewardModel, TabularPolicy};
use serde::{Deserialize, Serialize};

use crate::config::{Algo, Corruption, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Summary of one run. `wall_time` never reaches the CSV body so that
/// repeated runs give byte-identical files; it goes to the metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub seed: u64,
    pub lambda: f64,
    pub m: usize,
    pub n: usize,
    pub t: usize,
    pub suboptimality: Option<f64>,
    pub c_traj: Option<f64>,
    pub c_step: Option<f64>,
    pub wall_time: Option<f64>,
    /// Set when the run failed; the other measurements are then empty.
    pub error: Option<String>,
}

impl ResultRow {
    pub fn run_id(cfg: &ExperimentConfig) -> String {
        format!("lambda={}_m={}_n={}_t={}_seed={}", cfg.lambda, cfg.m, cfg.n, cfg.t, cfg.seed)
    }

    fn failed(cfg: &ExperimentConfig, error: String) -> Self {
        ResultRow {
            run_id: Self::run_id(cfg),
            seed: cfg.seed,
            lambda: cfg.lambda,
            m: cfg.m,
            n: cfg.n,
            t: cfg.t,
            suboptimality: None,
            c_traj: None,
            c_step: None,
            wall_time: None,
            error: Some(error),
        }
    }

    /// Copy without the timing column.
    pub fn timeless(&self) -> ResultRow {
        ResultRow {
            wall_time: None,
            ..self.clone()
        }
    }
}

/// Writes rows as CSV with the timing column left empty.
pub fn write_rows(path: &Path, rows: &[ResultRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row.timeless()).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows(path: &Path) -> CliResult<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

/// MDP, reference policy and the id recorded in dataset provenance.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub mdp: EpisodicMdp,
    pub pi_ref: TabularPolicy,
    pub pi_ref_id: String,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> CliResult<Self> {
        let path = cfg.mdp_path()?;
        if !path.exists() {
            return Err(CliError::Usage(format!("MDP file {} does not exist", path.display())));
        }
        let mdp = EpisodicMdp::load(path)?;
        let (pi_ref, pi_ref_id) = match &cfg.pi_ref {
            None => (TabularPolicy::uniform(mdp.dims()), "uniform".to_string()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let policy: TabularPolicy = serde_json::from_str(&text)
                    .map_err(|e| appo_core::Error::Parse(format!("{}: {e}", p.display())))?;
                mdp.dims().expect_same(&policy.dims(), "reference policy")?;
                (policy, p.display().to_string())
            }
        };
        Ok(Inputs { mdp, pi_ref, pi_ref_id })
    }

    pub fn from_parts(mdp: EpisodicMdp, pi_ref: TabularPolicy, pi_ref_id: &str) -> Self {
        Inputs {
            mdp,
            pi_ref,
            pi_ref_id: pi_ref_id.to_string(),
        }
    }

    pub fn link(&self) -> LinkFunction {
        LinkFunction::sigmoid(self.mdp.return_bound())
    }

    /// Both datasets for `cfg.seed`. Pure in `(inputs, n, m, seed)`.
    pub fn generate(&self, cfg: &ExperimentConfig) -> CliResult<(TrajectoryPairDataset, PreferenceDataset)> {
        let traj = datagen::generate_traj_dataset(&self.mdp, &self.pi_ref, cfg.n, cfg.seed, &self.pi_ref_id)?;
        let pref = datagen::generate_pref_dataset(&self.mdp, &self.pi_ref, cfg.m, &self.link(), cfg.seed, &self.pi_ref_id)?;
        Ok((traj, pref))
    }

    /// Concentrability of the optimal policy against the reference policy;
    /// `None` when trajectory enumeration is too large.
    pub fn concentrability(&self) -> CliResult<Option<ConcentrabilityReport>> {
        let (pi_star, _) = oracle::optimal_policy(&self.mdp);
        match datagen::concentrability(&self.mdp, &self.pi_ref, &pi_star, DEFAULT_ENUMERATION_CAP) {
            Ok(report) => Ok(Some(report)),
            Err(appo_core::Error::EnumerationInfeasible { .. }) => {
                log::warn!("trajectory enumeration too large; concentrability not reported");
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }
}

pub fn fit_reward(inputs: &Inputs, pref: &PreferenceDataset) -> CliResult<(RewardModel, MleFitReport)> {
    let mdp = &inputs.mdp;
    let (r_hat, fit) = estimators::reward_mle(pref, &inputs.link(), mdp.dims(), mdp.step_bound(), &MleOptions::default())?;
    if !fit.converged {
        log::warn!("reward fit stopped after {} iterations without meeting the tolerance", fit.iterations);
    }
    Ok((r_hat, fit))
}

pub fn appo_config(cfg: &ExperimentConfig) -> AppoConfig {
    AppoConfig {
        iterations: cfg.t,
        eta: cfg.eta,
        lambda: cfg.lambda,
        solver: SolverOptions::default(),
        split_data: cfg.split_data,
        seed: cfg.seed,
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub mixture: MixturePolicy,
    pub log: RunLog,
    pub r_hat: RewardModel,
    pub reward_fit: MleFitReport,
    pub transitions: Option<TransitionModel>,
    pub concentrability: Option<ConcentrabilityReport>,
    pub eta: f64,
    pub warnings: Vec<String>,
    pub row: ResultRow,
}

pub fn train(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    traj: &TrajectoryPairDataset,
    pref: &PreferenceDataset,
) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mdp = &inputs.mdp;
    let dims = mdp.dims();
    traj.validate(&dims)?;
    pref.validate(&dims)?;

    let (mut r_hat, reward_fit) = fit_reward(inputs, pref)?;
    if cfg.corrupt_reward == Corruption::Optimistic {
        r_hat = appo::optimistic_corruption(&r_hat, traj, mdp.step_bound())?;
    }

    let appo_cfg = appo_config(cfg);
    let concentrability = inputs.concentrability()?;
    let warnings = appo_cfg.validate(concentrability.as_ref())?;
    let eta = appo_cfg.eta_for(mdp.return_bound(), dims.num_actions);

    let (mixture, log, transitions) = match cfg.algo {
        Algo::Appo => {
            let (p_hat, inner) = appo::prepare_offline_data(traj, dims, cfg.smoothing, cfg.split_data)?;
            let (mixture, log) = appo::run_appo(&appo_cfg, &inner, &r_hat, &p_hat, mdp.return_bound(), Some(mdp))?;
            (mixture, log, Some(p_hat))
        }
        Algo::AppoRollout => {
            let (k1, k2) = (cfg.k1.unwrap_or(0), cfg.k2.unwrap_or(0));
            let (mixture, log) = appo::run_appo_rollout(&appo_cfg, mdp, &inputs.pi_ref, traj, &r_hat, k1, k2)?;
            (mixture, log, None)
        }
    };

    let suboptimality = oracle::mixture_suboptimality(mdp, &mixture)?;
    let row = ResultRow {
        run_id: ResultRow::run_id(cfg),
        seed: cfg.seed,
        lambda: cfg.lambda,
        m: cfg.m,
        n: cfg.n,
        t: cfg.t,
        suboptimality: Some(suboptimality),
        c_traj: concentrability.as_ref().map(|c| c.c_traj),
        c_step: concentrability.as_ref().map(|c| c.c_step),
        wall_time: Some(started.elapsed().as_secs_f64()),
        error: None,
    };
    Ok(TrainOutcome {
        mixture,
        log,
        r_hat,
        reward_fit,
        transitions,
        concentrability,
        eta,
        warnings,
        row,
    })
}

/// Generates data for `cfg.seed` and trains; failures become error rows.
pub fn run_point(cfg: &ExperimentConfig, inputs: &Inputs) -> ResultRow {
    let started = Instant::now();
    let result = inputs
        .generate(cfg)
        .and_then(|(traj, pref)| train(cfg, inputs, &traj, &pref));
    match result {
        Ok(outcome) => ResultRow {
            wall_time: Some(started.elapsed().as_secs_f64()),
            ..outcome.row
        },
        Err(e) => {
            log::warn!("sweep point {} failed: {e}", ResultRow::run_id(cfg));
            ResultRow::failed(cfg, e.to_string())
        }
    }
}

/// Grid points in deterministic order: lambda, then M, N, T, seed.
pub fn grid_points(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
        if values.is_empty() {
            vec![fallback]
        } else {
            values.to_vec()
        }
    }
    let g = &cfg.grid;
    let mut points = Vec::new();
    for lambda in axis(&g.lambda, cfg.lambda) {
        for m in axis(&g.m, cfg.m) {
            for n in axis(&g.n, cfg.n) {
                for t in axis(&g.t, cfg.t) {
                    for seed in axis(&g.seeds, cfg.seed) {
                        points.push(ExperimentConfig {
                            lambda,
                            m,
                            n,
                            t,
                            seed,
                            grid: Default::default(),
                            ..cfg.clone()
                        });
                    }
                }
            }
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use appo_core::mdp::fixtures::chain_mdp;

    fn chain_inputs() -> Inputs {
        let mdp = chain_mdp();
        let pi_ref = TabularPolicy::uniform(mdp.dims());
        Inputs::from_parts(mdp, pi_ref, "uniform")
    }

    #[test]
    fn grid_order_is_lexicographic() {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.lambda = vec![5.0, 0.0];
        cfg.grid.seeds = vec![1, 2];
        let ids: Vec<String> = grid_points(&cfg).iter().map(ResultRow::run_id).collect();
        assert_eq!(ids.len(), 4);
        assert!(ids[0].starts_with("lambda=5_") && ids[0].ends_with("seed=1"));
        assert!(ids[1].starts_with("lambda=5_") && ids[1].ends_with("seed=2"));
        assert!(ids[2].starts_with("lambda=0_"));
    }

    #[test]
    fn empty_grid_is_the_base_point() {
        let cfg = ExperimentConfig::default();
        let points = grid_points(&cfg);
        assert_eq!(points.len(), 1);
        assert_eq!(points[0], cfg);
    }

    #[test]
    fn one_iteration_gives_one_iterate() {
        let cfg = ExperimentConfig {
            t: 1,
            m: 200,
            n: 200,
            ..ExperimentConfig::default()
        };
        let inputs = chain_inputs();
        let (traj, pref) = inputs.generate(&cfg).unwrap();
        let out = train(&cfg, &inputs, &traj, &pref).unwrap();
        assert_eq!(out.mixture.len(), 1);
        assert_eq!(out.log.len(), 1);
        // the first iterate is uniform: value 0.5 against the optimum 1
        assert!((out.row.suboptimality.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(out.row.c_traj, Some(4.0));
    }

    #[test]
    fn auto_eta_and_concentrability_warning() {
        let cfg = ExperimentConfig {
            t: 100,
            m: 200,
            n: 200,
            lambda: 1.0,
            ..ExperimentConfig::default()
        };
        let inputs = chain_inputs();
        let (traj, pref) = inputs.generate(&cfg).unwrap();
        let out = train(&cfg, &inputs, &traj, &pref).unwrap();
        assert!((out.eta - (2.0 * 2f64.ln() / 100.0).sqrt()).abs() < 1e-12);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.row.suboptimality.unwrap() >= -1e-9);
    }

    #[test]
    fn failing_point_becomes_an_error_row() {
        let cfg = ExperimentConfig {
            m: 0,
            ..ExperimentConfig::default()
        };
        let row = run_point(&cfg, &chain_inputs());
        assert!(row.error.is_some());
        assert!(row.suboptimality.is_none());
    }

    #[test]
    fn rows_round_trip_without_timing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let row = ResultRow {
            wall_time: Some(1.5),
            ..ResultRow::failed(&ExperimentConfig::default(), "boom".into())
        };
        write_rows(&path, &[row.clone()]).unwrap();
        assert_eq!(read_rows(&path).unwrap(), vec![row.timeless()]);
    }
}
