//! Subcommand bodies. Each writes its artifacts under `cfg.out` and returns
//! a JSON-serializable summary for stdout.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use appo_core::datagen::{ConcentrabilityReport, PreferenceDataset, Provenance, TrajectoryPairDataset};
use appo_core::estimators::{self, MleFitReport, TransitionModelFile};
use appo_core::mdp::TableFile;
use appo_core::oracle::{self, OracleReport, VerifyOptions};
use appo_core::EpisodicMdp;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{self, Inputs, ResultRow};

fn create_out(cfg: &ExperimentConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn check_provenance(prov: &Provenance, mdp: &EpisodicMdp, path: &Path) -> CliResult<()> {
    if prov.mdp_hash != mdp.content_hash() {
        return Err(appo_core::Error::InvalidParameter(format!(
            "{} was generated from a different MDP (hash {})",
            path.display(),
            prov.mdp_hash
        ))
        .into());
    }
    Ok(())
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn with_path(path: &Path, e: appo_core::Error) -> CliError {
    match e {
        appo_core::Error::Parse(msg) => appo_core::Error::Parse(format!("{}: {msg}", path.display())).into(),
        other => other.into(),
    }
}

pub fn read_traj(path: &Path, mdp: &EpisodicMdp) -> CliResult<TrajectoryPairDataset> {
    let data = TrajectoryPairDataset::read_jsonl(open(path)?).map_err(|e| with_path(path, e))?;
    check_provenance(&data.provenance, mdp, path)?;
    data.validate(&mdp.dims()).map_err(|e| with_path(path, e))?;
    Ok(data)
}

pub fn read_pref(path: &Path, mdp: &EpisodicMdp) -> CliResult<PreferenceDataset> {
    let data = PreferenceDataset::read_jsonl(open(path)?).map_err(|e| with_path(path, e))?;
    check_provenance(&data.provenance, mdp, path)?;
    data.validate(&mdp.dims()).map_err(|e| with_path(path, e))?;
    Ok(data)
}

#[derive(Debug, Serialize)]
pub struct GenSummary {
    pub traj: PathBuf,
    pub pref: PathBuf,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub mdp_hash: String,
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> CliResult<GenSummary> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let (traj, pref) = inputs.generate(cfg)?;
    create_out(cfg)?;
    let (traj_path, pref_path) = (cfg.traj_path(), cfg.pref_path());
    write_with(&traj_path, |w| traj.write_jsonl(w))?;
    write_with(&pref_path, |w| pref.write_jsonl(w))?;
    log::info!("wrote {} and {}", traj_path.display(), pref_path.display());
    Ok(GenSummary {
        traj: traj_path,
        pref: pref_path,
        n: traj.len(),
        m: pref.len(),
        seed: cfg.seed,
        mdp_hash: traj.provenance.mdp_hash,
    })
}

#[derive(Debug, Serialize)]
pub struct FitRewardSummary {
    pub reward: PathBuf,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub clamped: bool,
}

pub fn cmd_fit_reward(cfg: &ExperimentConfig) -> CliResult<FitRewardSummary> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let pref = read_pref(&cfg.pref_path(), &inputs.mdp)?;
    let (r_hat, fit) = experiment::fit_reward(&inputs, &pref)?;
    create_out(cfg)?;
    let path = cfg.out.join("reward.json");
    write_json(&path, &TableFile::from_flat(r_hat.dims(), r_hat.as_slice()))?;
    write_json(&cfg.out.join("reward_fit.json"), &fit)?;
    Ok(FitRewardSummary {
        reward: path,
        loss: fit.loss,
        initial_loss: fit.initial_loss,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        converged: fit.converged,
        clamped: fit.clamped,
    })
}

#[derive(Debug, Serialize)]
pub struct FitTransitionSummary {
    pub transitions: PathBuf,
    pub smoothing: f64,
    pub pairs: usize,
}

pub fn cmd_fit_transition(cfg: &ExperimentConfig) -> CliResult<FitTransitionSummary> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let traj = read_traj(&cfg.traj_path(), &inputs.mdp)?;
    let model = estimators::transition_mle(&traj, inputs.mdp.dims(), cfg.smoothing)?;
    create_out(cfg)?;
    let path = cfg.out.join("transitions.json");
    write_json(&path, &TransitionModelFile::from(&model))?;
    Ok(FitTransitionSummary {
        transitions: path,
        smoothing: cfg.smoothing,
        pairs: traj.len(),
    })
}

/// Run details that vary between identical runs or are too bulky for the row.
#[derive(Debug, Serialize)]
struct TrainMeta<'a> {
    run_id: &'a str,
    started_unix: f64,
    wall_time: Option<f64>,
    eta: f64,
    warnings: &'a [String],
    reward_fit: FitSummary,
    concentrability: Option<&'a ConcentrabilityReport>,
    iteration_seconds: Vec<f64>,
    config: &'a ExperimentConfig,
}

#[derive(Debug, Serialize)]
struct FitSummary {
    loss: f64,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
    clamped: bool,
}

impl From<&MleFitReport> for FitSummary {
    fn from(fit: &MleFitReport) -> Self {
        FitSummary {
            loss: fit.loss,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
            converged: fit.converged,
            clamped: fit.clamped,
        }
    }
}

/// Fits the estimators, runs the selected solver and writes the mixture
/// (`policy.json`), the run log (`runlog.csv`), the result row
/// (`result.csv`) and run metadata (`train_meta.json`).
pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<ResultRow> {
    cfg.validate()?;
    let started_unix = unix_now();
    let inputs = Inputs::load(cfg)?;
    let traj = read_traj(&cfg.traj_path(), &inputs.mdp)?;
    let pref = read_pref(&cfg.pref_path(), &inputs.mdp)?;
    let outcome = experiment::train(cfg, &inputs, &traj, &pref)?;

    create_out(cfg)?;
    write_json(&cfg.out.join("policy.json"), &outcome.mixture)?;
    write_json(
        &cfg.out.join("reward.json"),
        &TableFile::from_flat(outcome.r_hat.dims(), outcome.r_hat.as_slice()),
    )?;
    if let Some(model) = &outcome.transitions {
        write_json(&cfg.out.join("transitions.json"), &TransitionModelFile::from(model))?;
    }
    write_with(&cfg.out.join("runlog.csv"), |w| outcome.log.write_csv(w, false))?;
    experiment::write_rows(&cfg.out.join("result.csv"), std::slice::from_ref(&outcome.row))?;
    let meta = TrainMeta {
        run_id: &outcome.row.run_id,
        started_unix,
        wall_time: outcome.row.wall_time,
        eta: outcome.eta,
        warnings: &outcome.warnings,
        reward_fit: FitSummary::from(&outcome.reward_fit),
        concentrability: outcome.concentrability.as_ref(),
        iteration_seconds: outcome.log.records().iter().map(|r| r.seconds).collect(),
        config: cfg,
    };
    write_json(&cfg.out.join("train_meta.json"), &meta)?;
    Ok(outcome.row)
}

#[derive(Debug, Serialize)]
struct SweepMeta<'a> {
    started_unix: f64,
    wall_time: f64,
    workers: usize,
    /// `(run_id, wall_time)` in row order.
    timings: Vec<(&'a str, Option<f64>)>,
    config: &'a ExperimentConfig,
}

/// Runs every grid point (concurrently, on `cfg.workers` threads) and
/// writes `sweep.csv` in grid order. Failed points become error rows.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<ResultRow>> {
    cfg.validate()?;
    let started_unix = unix_now();
    let started = std::time::Instant::now();
    let inputs = Inputs::load(cfg)?;
    let points = experiment::grid_points(cfg);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    log::info!("sweeping {} points on {workers} workers", points.len());
    // `collect` on an indexed parallel iterator keeps grid order.
    let rows: Vec<ResultRow> = pool.install(|| points.par_iter().map(|p| experiment::run_point(p, &inputs)).collect());

    create_out(cfg)?;
    experiment::write_rows(&cfg.out.join("sweep.csv"), &rows)?;
    let meta = SweepMeta {
        started_unix,
        wall_time: started.elapsed().as_secs_f64(),
        workers,
        timings: rows.iter().map(|r| (r.run_id.as_str(), r.wall_time)).collect(),
        config: cfg,
    };
    write_json(&cfg.out.join("sweep_meta.json"), &meta)?;
    Ok(rows)
}

/// Runs the invariant suite and writes `verify.json`. An MDP that fails
/// validation yields a report whose `validation` check failed.
pub fn cmd_verify(cfg: &ExperimentConfig) -> CliResult<OracleReport> {
    let path = cfg.mdp_path()?;
    if !path.exists() {
        return Err(CliError::Usage(format!("MDP file {} does not exist", path.display())));
    }
    let report = match EpisodicMdp::load(path) {
        Ok(mdp) => oracle::verify_suite(&mdp, cfg.seed, &VerifyOptions::default())
            .unwrap_or_else(|e| OracleReport::invalid_input(&e)),
        Err(e) => OracleReport::invalid_input(&e),
    };
    create_out(cfg)?;
    write_json(&cfg.out.join("verify.json"), &report)?;
    Ok(report)
}
