//! Experiment configuration: a JSON file plus `--key value` overrides.
//! Flags always win over the file, and the file wins over defaults.

use std::path::{Path, PathBuf};

use appo_core::appo::StepSize;
use appo_core::datagen::LinkKind;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    /// Fully offline solver on the fitted transition model.
    Appo,
    /// Simulator-assisted solver that estimates values from rollouts.
    AppoRollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    None,
    /// Set the fitted reward to its maximum on every cell the data never visits.
    Optimistic,
}

/// Sweep axes. An empty axis falls back to the scalar value in the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// MDP description (JSON).
    pub mdp: Option<PathBuf>,
    /// Reference policy file; the uniform policy when absent.
    pub pi_ref: Option<PathBuf>,
    pub seed: u64,
    /// Number of labeled preference pairs.
    pub m: usize,
    /// Number of unlabeled trajectory pairs.
    pub n: usize,
    /// Policy iterations.
    pub t: usize,
    /// Rollouts per iteration for the reward problem (appo-rollout only).
    pub k1: Option<usize>,
    /// Rollouts per step for value estimation (appo-rollout only).
    pub k2: Option<usize>,
    pub lambda: f64,
    pub eta: StepSize,
    pub link: LinkKind,
    pub algo: Algo,
    pub split_data: bool,
    /// Additive smoothing of the transition estimate.
    pub smoothing: f64,
    pub corrupt_reward: Corruption,
    pub out: PathBuf,
    /// Sweep worker threads; all hardware threads when absent.
    pub workers: Option<usize>,
    pub grid: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mdp: None,
            pi_ref: None,
            seed: 0,
            m: 10_000,
            n: 10_000,
            t: 100,
            k1: None,
            k2: None,
            lambda: 1.0,
            eta: StepSize::Auto,
            link: LinkKind::Sigmoid,
            algo: Algo::Appo,
            split_data: false,
            smoothing: 1.0,
            corrupt_reward: Corruption::None,
            out: PathBuf::from("out"),
            workers: None,
            grid: SweepGrid::default(),
        }
    }
}

fn parse_link(text: &str) -> Result<LinkKind, String> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .map_err(|_| format!("unknown link `{text}` (expected sigmoid or custom-monotone)"))
}

/// Command-line overrides, one per config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub mdp: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub pi_ref: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub t: Option<usize>,
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    #[arg(long, global = true, value_name = "F")]
    pub lambda: Option<f64>,
    /// `auto` or a positive number.
    #[arg(long, global = true, value_name = "auto|F")]
    pub eta: Option<StepSize>,
    #[arg(long, global = true, value_parser = parse_link)]
    pub link: Option<LinkKind>,
    #[arg(long, global = true, value_enum)]
    pub algo: Option<Algo>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub split_data: Option<bool>,
    #[arg(long, global = true, value_name = "F")]
    pub smoothing: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub corrupt_reward: Option<Corruption>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Comma-separated lambda values for `sweep`.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub grid_lambda: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub grid_m: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub grid_n: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub grid_t: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub grid_seeds: Option<Vec<u64>>,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = &$ov.$field { $cfg.$field = v.clone(); })*
    };
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Loads the config file named in `overrides` (if any), then applies every flag.
    pub fn resolve(overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match &overrides.config {
            Some(path) => Self::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        apply!(self, ov; seed, m, n, t, lambda, eta, link, algo, split_data, smoothing, corrupt_reward, out);
        if ov.mdp.is_some() {
            self.mdp = ov.mdp.clone();
        }
        if ov.pi_ref.is_some() {
            self.pi_ref = ov.pi_ref.clone();
        }
        if ov.k1.is_some() {
            self.k1 = ov.k1;
        }
        if ov.k2.is_some() {
            self.k2 = ov.k2;
        }
        if ov.workers.is_some() {
            self.workers = ov.workers;
        }
        let grid = &mut self.grid;
        if let Some(v) = &ov.grid_lambda {
            grid.lambda = v.clone();
        }
        if let Some(v) = &ov.grid_m {
            grid.m = v.clone();
        }
        if let Some(v) = &ov.grid_n {
            grid.n = v.clone();
        }
        if let Some(v) = &ov.grid_t {
            grid.t = v.clone();
        }
        if let Some(v) = &ov.grid_seeds {
            grid.seeds = v.clone();
        }
    }

    pub fn mdp_path(&self) -> CliResult<&Path> {
        self.mdp
            .as_deref()
            .ok_or_else(|| CliError::Usage("no MDP file given (use --mdp or the `mdp` config field)".into()))
    }

    pub fn traj_path(&self) -> PathBuf {
        self.out.join("traj.jsonl")
    }

    pub fn pref_path(&self) -> PathBuf {
        self.out.join("pref.jsonl")
    }

    /// Range and consistency checks shared by every command. Grid values are
    /// checked per point so that one bad point only fails its own row.
    pub fn validate(&self) -> CliResult<()> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        for (name, v) in [("m", self.m), ("n", self.n), ("t", self.t)] {
            if v == 0 {
                return usage(format!("{name} must be positive"));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return usage(format!("lambda must be a finite number >= 0, got {}", self.lambda));
        }
        if let StepSize::Fixed(v) = self.eta {
            if !(v.is_finite() && v > 0.0) {
                return usage(format!("eta must be `auto` or positive, got {v}"));
            }
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return usage(format!("smoothing must be >= 0, got {}", self.smoothing));
        }
        if self.link != LinkKind::Sigmoid {
            return usage("only the sigmoid link can be selected from the command line".into());
        }
        if self.workers == Some(0) {
            return usage("workers must be positive".into());
        }
        match self.algo {
            Algo::AppoRollout => match (self.k1, self.k2) {
                (Some(k1), Some(k2)) if k1 > 0 && k2 > 0 => {}
                _ => return usage("appo-rollout needs positive k1 and k2".into()),
            },
            Algo::Appo => {
                if self.k1.is_some() || self.k2.is_some() {
                    log::warn!("k1/k2 are only used by appo-rollout; ignoring them");
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Probe {
        #[command(flatten)]
        ov: Overrides,
    }

    fn overrides(args: &[&str]) -> Overrides {
        let mut argv = vec!["probe"];
        argv.extend_from_slice(args);
        Probe::parse_from(argv).ov
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"lambda": 2.0, "t": 7, "eta": 0.3, "algo": "appo-rollout", "k1": 5}"#).unwrap();
        let ov = overrides(&["--config", path.to_str().unwrap(), "--lambda", "5", "--eta", "auto", "--k2", "3"]);
        let cfg = ExperimentConfig::resolve(&ov).unwrap();
        assert_eq!(cfg.lambda, 5.0);
        assert_eq!(cfg.t, 7);
        assert_eq!(cfg.eta, StepSize::Auto);
        assert_eq!(cfg.algo, Algo::AppoRollout);
        assert_eq!((cfg.k1, cfg.k2), (Some(5), Some(3)));
        cfg.validate().unwrap();
    }

    #[test]
    fn grid_flags_parse_lists() {
        let ov = overrides(&["--grid-lambda", "0,1,5,25", "--grid-seeds", "0,1"]);
        let cfg = ExperimentConfig::resolve(&ov).unwrap();
        assert_eq!(cfg.grid.lambda, vec![0.0, 1.0, 5.0, 25.0]);
        assert_eq!(cfg.grid.seeds, vec![0, 1]);
        assert!(cfg.grid.m.is_empty());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut cfg = ExperimentConfig::default();
            f(&mut cfg);
            cfg.validate().unwrap_err().exit_code()
        };
        assert_eq!(bad(|c| c.t = 0), 2);
        assert_eq!(bad(|c| c.lambda = -1.0), 2);
        assert_eq!(bad(|c| c.eta = StepSize::Fixed(0.0)), 2);
        assert_eq!(bad(|c| c.algo = Algo::AppoRollout), 2);
        assert_eq!(bad(|c| c.link = LinkKind::CustomMonotone), 2);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"lamda": 2.0}"#).unwrap();
        assert!(matches!(ExperimentConfig::from_json_file(&path), Err(CliError::Usage(_))));
    }
}
