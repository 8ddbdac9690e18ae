use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ewc::consolidation::{FisherDiagonal, PenaltySet, QuadraticPenalty};
use ewc::{init_params, NetworkSpec};
use ewc_cli::checkpoint::{Checkpoint, CheckpointError};
use ewc_cli::commands;
use ewc_cli::config::ExperimentConfig;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

fn ewc_bin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ewc"))
        .args(args)
        .arg("--data")
        .arg(data_dir())
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn ewc")
}

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.dir = data_dir();
    cfg.out = out.to_path_buf();
    cfg.data.desk_examples = 600;
    cfg.train.hidden = vec![32];
    cfg.train.epochs = 2;
    cfg.train.fisher_batches = 5;
    cfg
}

fn sample_checkpoint() -> Checkpoint {
    let spec = NetworkSpec::mlp(5, &[4], 3).with_task_contexts(2);
    let params = init_params(&spec, 3).unwrap();
    let n = params.len();
    let mut penalties = PenaltySet::new();
    penalties
        .push(QuadraticPenalty::new((0..n).map(|i| i as f64 * 0.1).collect(), vec![0.5; n]).unwrap())
        .unwrap();
    Checkpoint {
        spec,
        segment: 1,
        params,
        penalties,
        fisher: Some(FisherDiagonal::new((0..n).map(|i| (i % 7) as f64 / 3.0).collect(), 64).unwrap()),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = sample_checkpoint();
    let path = dir.path().join("a.ckpt");
    let crc = ckpt.save(&path).unwrap();
    assert_eq!(crc, crc32fast::hash(&fs::read(&path).unwrap()));
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let bits = |c: &Checkpoint| c.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&ckpt));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = sample_checkpoint().to_bytes();
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped, "f"), Err(CheckpointError::Checksum(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2], "t"), Err(CheckpointError::Checksum(_))));
    assert!(matches!(Checkpoint::from_bytes(b"not a checkpoint", "m"), Err(CheckpointError::BadMagic(_))));
    let mut versioned = bytes.clone();
    versioned[8] = 9;
    let body = versioned.len() - 4;
    let crc = crc32fast::hash(&versioned[..body]);
    versioned[body..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&versioned, "v"), Err(CheckpointError::Version { .. })));
}

#[test]
fn config_errors_exit_with_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["recognize", "--set", "train.bogus=1"], "train.bogus"),
        (&["permuted-mnist", "--regime", "adam"], "train.regime"),
        (&["perturb", "--set", "perturb.sigmas="], "perturb.sigmas"),
        (&["search", "--set", "search.trials=0"], "search.trials"),
    ];
    for (args, field) in cases {
        let out = ewc_bin(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(field), "{args:?}: {stderr}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_ewc"))
        .args(["recognize", "--data", "/nonexistent/mnist"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.dir"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"EWCCKPT\0garbage").unwrap();
    let set = format!("perturb.checkpoint={}", bad.display());
    let out = ewc_bin(&["perturb", "--set", &set], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_the_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, "seed = 3\ntasks = 2\nrecognize.segment_len = 120\nrecognize.burn_in = 20\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = ewc_bin(&["recognize", "--config", cfg_path.to_str().unwrap(), "--seed", "5"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["config"]["tasks"], 2);
    assert_eq!(manifest["config"]["recognize"]["segment_len"], 120);
    assert_eq!(manifest["config"]["recognize"]["window"], 4);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "trace.csv"));
}

#[test]
fn single_task_recognition_spawns_one_context() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.tasks = 1;
    let run = commands::recognize(&cfg).unwrap();
    assert_eq!(run.trace.spawned_contexts, 1);
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,true_context,inferred_context,entropy\n"));
    assert_eq!(csv.lines().count(), 501);
}

#[test]
fn permuted_run_writes_reports_checkpoints_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.tasks = 2;
    let run = commands::permuted_mnist(&cfg).unwrap();
    assert_eq!(run.report.segments.len(), 2);
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("segment,task,metric,value\n"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["regime"], "ewc");
    assert_eq!(run.manifest.checkpoints.len(), 2);
    for entry in &run.manifest.checkpoints {
        let bytes = fs::read(dir.path().join(&entry.path)).unwrap();
        assert_eq!(crc32fast::hash(&bytes), entry.crc32);
    }
    let last = Checkpoint::load(&dir.path().join("segment-1.ckpt")).unwrap();
    assert_eq!(last.penalties.len(), 2);
    assert!(last.fisher.is_some());
}

#[test]
fn single_task_penalized_regimes_match_sgd() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = Vec::new();
    for regime in ["sgd", "l2", "ewc"] {
        let mut cfg = small(&dir.path().join(regime));
        cfg.tasks = 1;
        cfg.train.regime = regime.into();
        let run = commands::permuted_mnist(&cfg).unwrap();
        csv.push(run.report.to_csv());
    }
    assert_eq!(csv[0], csv[1]);
    assert_eq!(csv[0], csv[2]);
}

#[test]
fn checkpoint_overlap_with_itself_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("train"));
    cfg.tasks = 1;
    commands::permuted_mnist(&cfg).unwrap();
    let ckpt = dir.path().join("train/segment-0.ckpt");
    let mut cfg = small(&dir.path().join("overlap"));
    cfg.overlap.checkpoint_a = Some(ckpt.clone());
    cfg.overlap.checkpoint_b = Some(ckpt);
    let run = commands::overlap(&cfg).unwrap();
    assert_eq!(run.rows.len(), 1);
    assert_eq!(run.rows[0].layers.len(), 2);
    assert!(run.rows[0].layers.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn perturb_records_the_ridge_and_all_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.tasks = 1;
    cfg.perturb.sigmas = vec![0.0, 0.1];
    cfg.perturb.episodes = 2;
    cfg.perturb.eval_examples = 200;
    cfg.perturb.ridge = 0.25;
    let run = commands::perturb(&cfg).unwrap();
    assert_eq!(run.manifest.notes["ridge"], 0.25);
    assert_eq!(run.curves[0].points[0].mean_accuracy, run.clean_accuracy);
    assert!(run.curves.len() >= 2);
    let csv = fs::read_to_string(dir.path().join("perturb.csv")).unwrap();
    assert!(csv.starts_with("shape,sigma,mean_accuracy\n"));
}

#[test]
fn collapsed_search_returns_its_point_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.tasks = 1;
    cfg.train.epochs = 1;
    cfg.search.trials = 2;
    cfg.search.learning_rate = (0.01, 0.01);
    cfg.search.hidden_width = (16, 16);
    cfg.search.penalty_strength = Some((5.0, 5.0));
    let a = commands::search(&cfg).unwrap();
    let best = &a.result.trials[a.result.best_index].point;
    assert_eq!(best.learning_rate, 0.01);
    assert_eq!(best.hidden_width, 16);
    assert_eq!(best.penalty_strength, Some(5.0));
    let first = fs::read(dir.path().join("trials.csv")).unwrap();
    commands::search(&cfg).unwrap();
    assert_eq!(fs::read(dir.path().join("trials.csv")).unwrap(), first);
}
