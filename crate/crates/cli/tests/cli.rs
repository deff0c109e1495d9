use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use appo_cli::experiment::read_rows;
use appo_cli::ResultRow;
use appo_core::datagen::TrajectoryPairDataset;
use appo_core::mdp::{fixtures::chain_mdp, visitation};
use appo_core::{oracle::OracleReport, TabularPolicy};

fn chain_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/chain.json")
}

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_appo-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("APPO_LAB_LOG", "error")
        .output()
        .expect("binary runs")
}

fn lab_chain(out: &Path, args: &[&str]) -> Output {
    let mdp = chain_file();
    let mut all = args.to_vec();
    all.extend_from_slice(&["--mdp", mdp.to_str().unwrap()]);
    lab(out, &all)
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stderr_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stderr).expect("stderr is one JSON error")
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn gen_single_records_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(&lab_chain(dir.path(), &["gen", "--n", "1", "--m", "1", "--seed", "9"]));
    }
    for name in ["traj.jsonl", "pref.jsonl"] {
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
        // header plus one record
        assert_eq!(String::from_utf8(left).unwrap().lines().count(), 2);
    }
}

#[test]
fn gen_step_marginals_match_visitation() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab_chain(dir.path(), &["gen", "--n", "10000", "--m", "1"]));
    let file = std::fs::File::open(dir.path().join("traj.jsonl")).unwrap();
    let data = TrajectoryPairDataset::read_jsonl(std::io::BufReader::new(file)).unwrap();
    let mdp = chain_mdp();
    let dims = mdp.dims();
    let exact = visitation(&mdp, &TabularPolicy::uniform(dims)).unwrap();
    let mut freq = vec![0.0; dims.cells()];
    let total = 2.0 * data.len() as f64;
    for tau in data.flattened() {
        for c in tau.cells(&dims) {
            freq[c] += 1.0 / total;
        }
    }
    for (i, f) in freq.iter().enumerate() {
        let (h, s, a) = dims.unflatten(i);
        assert!((f - exact.state_action(h, s, a)).abs() <= 0.02, "cell {h},{s},{a}");
    }
}

#[test]
fn train_reaches_the_target_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--n", "10000", "--m", "10000", "--lambda", "5", "--t", "200", "--seed", "3"];
    let gen: Vec<&str> = std::iter::once("gen").chain(args).collect();
    let train: Vec<&str> = std::iter::once("train").chain(args).collect();
    ok(&lab_chain(dir.path(), &gen));
    ok(&lab_chain(dir.path(), &train));
    let first: Vec<Vec<u8>> = ["runlog.csv", "result.csv", "policy.json"]
        .iter()
        .map(|n| std::fs::read(dir.path().join(n)).unwrap())
        .collect();
    let rows = read_rows(&dir.path().join("result.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let sub = rows[0].suboptimality.unwrap();
    assert!((-1e-9..=0.1).contains(&sub), "sub-optimality {sub}");
    assert_eq!(rows[0].c_traj, Some(4.0));

    ok(&lab_chain(dir.path(), &train));
    for (i, n) in ["runlog.csv", "result.csv", "policy.json"].iter().enumerate() {
        assert_eq!(first[i], std::fs::read(dir.path().join(n)).unwrap(), "{n} changed on rerun");
    }
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("train_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["iteration_seconds"].as_array().unwrap().len(), 200);
}

#[test]
fn one_iteration_writes_a_single_iterate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab_chain(dir.path(), &["gen", "--n", "50", "--m", "50"]));
    ok(&lab_chain(dir.path(), &["train", "--n", "50", "--m", "50", "--t", "1"]));
    let policy: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy["iterates"].as_array().unwrap().len(), 1);
    let log = std::fs::read_to_string(dir.path().join("runlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn rollout_training_and_missing_rollout_sizes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab_chain(dir.path(), &["gen", "--n", "500", "--m", "500"]));
    let out = lab_chain(dir.path(), &["train", "--n", "500", "--m", "500", "--algo", "appo-rollout", "--t", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    ok(&lab_chain(
        dir.path(),
        &["train", "--n", "500", "--m", "500", "--algo", "appo-rollout", "--t", "5", "--k1", "50", "--k2", "50"],
    ));
    assert!(!dir.path().join("transitions.json").exists());
}

#[test]
fn fit_commands_write_models() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab_chain(dir.path(), &["gen", "--n", "200", "--m", "200"]));
    ok(&lab_chain(dir.path(), &["fit-reward"]));
    ok(&lab_chain(dir.path(), &["fit-transition", "--smoothing", "0"]));
    let reward: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("reward.json")).unwrap()).unwrap();
    assert_eq!(reward["values"].as_array().unwrap().len(), 2);
    let model: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("transitions.json")).unwrap()).unwrap();
    // deterministic chain: the unsmoothed estimate is exact on visited rows
    assert_eq!(model["transitions"][0][0][1], serde_json::json!([0.0, 1.0]));
}

#[test]
fn errors_are_json_with_usage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = lab_chain(dir.path(), &["train"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(stderr_json(&missing)["error"]["kind"], "io");

    let bad_flag = lab_chain(dir.path(), &["train", "--lambda", "abc"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert_eq!(stderr_json(&bad_flag)["error"]["exit_code"], 2);

    let no_mdp = lab(dir.path(), &["gen"]);
    assert_eq!(no_mdp.status.code(), Some(2));
}

#[test]
fn datasets_from_another_mdp_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lab_chain(dir.path(), &["gen", "--n", "20", "--m", "20"]));
    let mut other = chain_mdp().to_json_string();
    other = other.replacen("0.5", "0.25", 1);
    let other_path = dir.path().join("other.json");
    std::fs::write(&other_path, other).unwrap();
    let out = lab(dir.path(), &["train", "--mdp", other_path.to_str().unwrap(), "--n", "20", "--m", "20"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("different MDP"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({
        "mdp": chain_file(),
        "n": 30,
        "m": 30,
        "t": 4,
        "lambda": 2.0,
        "out": dir.path().join("ignored"),
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    ok(&lab(dir.path(), &["gen", "--config", cfg.to_str().unwrap()]));
    ok(&lab(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--lambda", "3"]));
    let rows = read_rows(&dir.path().join("result.csv")).unwrap();
    assert_eq!((rows[0].lambda, rows[0].t, rows[0].n), (3.0, 4, 30));
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn sweep_of_one_point_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--n", "2000", "--m", "2000", "--t", "50", "--lambda", "5", "--seed", "4"];
    let with = |cmd: &'static str| -> Vec<&str> { std::iter::once(cmd).chain(args).collect() };
    ok(&lab_chain(dir.path(), &with("gen")));
    ok(&lab_chain(dir.path(), &with("train")));
    ok(&lab_chain(dir.path(), &with("sweep")));
    let train = read_rows(&dir.path().join("result.csv")).unwrap();
    let sweep = read_rows(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(train, sweep);
}

#[test]
fn sweep_rows_are_ordered_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--n", "300", "--m", "300", "--t", "10", "--grid-lambda", "1,0", "--grid-seeds", "2,1"];
    let mut with_workers = args.to_vec();
    with_workers.extend_from_slice(&["--workers", "1"]);
    ok(&lab_chain(a.path(), &args));
    ok(&lab_chain(b.path(), &with_workers));
    let left = std::fs::read(a.path().join("sweep.csv")).unwrap();
    assert_eq!(left, std::fs::read(b.path().join("sweep.csv")).unwrap());
    let rows = read_rows(&a.path().join("sweep.csv")).unwrap();
    let keys: Vec<(f64, u64)> = rows.iter().map(|r| (r.lambda, r.seed)).collect();
    assert_eq!(keys, vec![(1.0, 2), (1.0, 1), (0.0, 2), (0.0, 1)]);
}

#[test]
fn sweep_records_failed_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab_chain(dir.path(), &["sweep", "--n", "50", "--m", "50", "--grid-t", "0,3"]);
    ok(&out);
    let rows = read_rows(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].error.as_deref().unwrap().contains("t must be positive"));
    assert!(rows[0].suboptimality.is_none());
    assert!(rows[1].error.is_none());
    assert!(rows[1].suboptimality.unwrap() >= -1e-9);
}

#[test]
fn uncovered_optimum_reports_infinite_concentrability() {
    let dir = tempfile::tempdir().unwrap();
    let pi_ref = dir.path().join("pi_ref.json");
    let narrow = TabularPolicy::deterministic(chain_mdp().dims(), &[0, 0, 0, 0]).unwrap();
    std::fs::write(&pi_ref, serde_json::to_string(&narrow).unwrap()).unwrap();
    let rows = sweep_rows(&["--pi-ref", pi_ref.to_str().unwrap(), "--n", "50", "--m", "50", "--t", "3"]);
    assert_eq!(rows[0].c_traj, Some(f64::INFINITY));
    assert!(rows[0].error.is_none(), "{:?}", rows[0]);
}

fn sweep_rows(args: &[&str]) -> Vec<ResultRow> {
    let dir = tempfile::tempdir().unwrap();
    let mut all = vec!["sweep"];
    all.extend_from_slice(args);
    ok(&lab_chain(dir.path(), &all));
    read_rows(&dir.path().join("sweep.csv")).unwrap()
}

#[test]
fn conservatism_ablation_over_lambda() {
    let rows = sweep_rows(&[
        "--n", "10000", "--m", "10000", "--corrupt-reward", "optimistic",
        "--grid-lambda", "0,1,5,25", "--grid-seeds", "0,1,2,3,4",
    ]);
    assert_eq!(rows.len(), 20);
    let at = |l: f64| mean(rows.iter().filter(|r| r.lambda == l).map(|r| r.suboptimality.unwrap()));
    assert!(at(5.0) < at(0.0), "lambda=5 {} vs lambda=0 {}", at(5.0), at(0.0));
}

/// Seed-average trend in M, allowing two combined standard errors between
/// neighbours: past M = 10^3 the estimation error is below the seed noise.
#[test]
fn more_preferences_do_not_hurt_on_average() {
    let rows = sweep_rows(&[
        "--n", "10000", "--lambda", "5", "--grid-m", "100,1000,10000", "--grid-seeds", "0,1,2,3,4",
    ]);
    let stats = |m: usize| {
        let xs: Vec<f64> = rows.iter().filter(|r| r.m == m).map(|r| r.suboptimality.unwrap()).collect();
        let mu = mean(xs.iter().copied());
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (mu, (var / xs.len() as f64).sqrt())
    };
    let s: Vec<(f64, f64)> = [100, 1000, 10000].into_iter().map(stats).collect();
    for w in s.windows(2) {
        let slack = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 <= w[0].0 + slack, "{s:?}");
    }
    // the small-sample end is clearly worse
    assert!(s[0].0 > s[2].0, "{s:?}");
}

#[test]
fn verify_chain_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab_chain(dir.path(), &["verify", "--seed", "1"]);
    ok(&out);
    let report: OracleReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert!(report.passed());
    assert_eq!(report.self_concentrability.unwrap().c_traj, 1.0);
}

#[test]
fn verify_names_a_corrupted_transition_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&chain_mdp().to_json_string()).unwrap();
    value["transitions"][1][0][1] = serde_json::json!([0.0, 0.9]);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, value.to_string()).unwrap();
    let out = lab(dir.path(), &["verify", "--mdp", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report: OracleReport =
        serde_json::from_slice(&std::fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report.failures(), vec!["validation"]);
    assert!(report.checks[0].detail.contains("0.9"), "{}", report.checks[0].detail);
    assert_eq!(stderr_json(&out)["error"]["kind"], "check_failure");
}

#[test]
fn shipped_chain_file_is_the_chain_fixture() {
    let loaded = appo_core::EpisodicMdp::load(chain_file()).unwrap();
    assert_eq!(loaded.content_hash(), chain_mdp().content_hash());
}
