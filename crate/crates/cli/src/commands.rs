//! The five experiment commands.

use std::collections::BTreeMap;
use std::time::Instant;

use ewc::consolidation::{
    estimate_fisher_diagonal, layer_overlaps, perturbation_sensitivity, FisherConfig,
    FisherDiagonal, PerturbConfig, PerturbShape, SensitivityCurve,
};
use ewc::recognition::{relabeled_accuracy, synthetic_stream, RecognitionTrace, Recognizer, RecognizerConfig};
use ewc::tasks::{load_idx, make_partial_permutation, make_permutation, mnist_paths, split, PermutedTask, TaskData};
use ewc::trainer::{
    evaluate, random_search, run_sequence, run_sequence_with, Interval, SearchResult, SearchSpace, SequenceReport,
    TrainConfig,
};
use ewc::{NetworkSpec, ParamVector};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, ExperimentConfig, Scale};
use crate::report::{OutputDir, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ewc::Error> for CliError {
    fn from(e: ewc::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::checkpoint::CheckpointError> for CliError {
    fn from(e: crate::checkpoint::CheckpointError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Loads the train and test sets, applies the desk-scale subsample and
/// splits off validation data.
pub fn load_task_data(cfg: &ExperimentConfig) -> CliResult<TaskData> {
    let (images, labels) = mnist_paths(&cfg.data.dir, true);
    let mut train = load_idx(images, labels)?;
    if cfg.data.scale == Scale::Desk {
        train = train.subsample(cfg.data.desk_examples, cfg.seed);
    }
    let (images, labels) = mnist_paths(&cfg.data.dir, false);
    let test = load_idx(images, labels)?;
    let (train, valid) = split(&train, cfg.data.valid_fraction, cfg.seed)?;
    Ok(TaskData::new(train, valid, test))
}

pub fn classifier_spec(data: &TaskData, hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::mlp(data.train.pixels(), hidden, data.train.classes())
}

fn fisher_config(cfg: &ExperimentConfig, salt: u64) -> FisherConfig {
    FisherConfig {
        n_batches: cfg.train.fisher_batches,
        batch_size: cfg.train.batch_size,
        mode: cfg.train.fisher_mode,
        seed: cfg.seed.wrapping_mul(1000).wrapping_add(salt),
    }
}

fn prepare(cfg: &ExperimentConfig) -> CliResult<(TrainConfig, OutputDir)> {
    cfg.validate()?;
    let train = cfg.train_config()?;
    let out = OutputDir::create(&cfg.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out.display())))?;
    Ok((train, out))
}

fn checkpoint_observer<'a>(
    spec: &'a NetworkSpec,
    out: &'a mut OutputDir,
    prefix: &'a str,
) -> impl FnMut(ewc::trainer::SegmentState<'_>) -> ewc::Result<()> + 'a {
    move |s| {
        let name = format!("{prefix}segment-{}.ckpt", s.report.segment);
        let ckpt = Checkpoint {
            spec: spec.clone(),
            segment: s.report.segment,
            params: s.params.clone(),
            penalties: s.penalties.clone(),
            fisher: s.fisher.cloned(),
        };
        let path = out.path(&name);
        let crc = ckpt.save(&path).map_err(|e| ewc::Error::Io {
            path,
            source: std::io::Error::other(e.to_string()),
        })?;
        out.record_checkpoint(&name, crc);
        Ok(())
    }
}

pub struct PermutedRun {
    pub report: SequenceReport,
    pub manifest: RunManifest,
}

/// Trains `tasks` permuted tasks in sequence and writes `report.csv`,
/// `report.json`, one checkpoint per segment and the manifest.
pub fn permuted_mnist(cfg: &ExperimentConfig) -> CliResult<PermutedRun> {
    let (train_cfg, mut out) = prepare(cfg)?;
    let start = Instant::now();
    let data = load_task_data(cfg)?;
    let tasks = data.permuted_tasks(cfg.tasks, cfg.seed)?;
    let spec = classifier_spec(&data, &cfg.train.hidden);
    let report = run_sequence_with(&spec, &tasks, &train_cfg, checkpoint_observer(&spec, &mut out, ""))?;
    out.write("report.csv", report.to_csv().as_bytes())?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write("report.json", &json)?;
    let mut notes = BTreeMap::new();
    notes.insert("final_mean_accuracy".into(), json!(report.final_mean_accuracy()));
    let manifest = out.finish("permuted-mnist", cfg, notes, start.elapsed().as_secs_f64())?;
    Ok(PermutedRun { report, manifest })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    /// `square-8`, `square-26`, or `checkpoints`.
    pub condition: String,
    /// Overlap per layer, input side first.
    pub layers: Vec<f64>,
}

pub struct OverlapRun {
    pub rows: Vec<OverlapRow>,
    pub manifest: RunManifest,
}

fn overlap_csv(rows: &[OverlapRow]) -> String {
    let mut s = String::from("condition,layer,overlap\n");
    for r in rows {
        for (l, v) in r.layers.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", r.condition, l, v));
        }
    }
    s
}

fn fisher_of(
    cfg: &ExperimentConfig,
    spec: &NetworkSpec,
    params: &ParamVector,
    task: &PermutedTask,
    given: Option<&FisherDiagonal>,
    salt: u64,
) -> ewc::Result<FisherDiagonal> {
    match given {
        Some(f) => Ok(f.clone()),
        None => estimate_fisher_diagonal(spec, params, &task.train(), &fisher_config(cfg, salt), None),
    }
}

/// Per-layer Fisher overlap between two tasks, either from two saved
/// checkpoints or by training a pair of partially permuted tasks for every
/// configured square size.
pub fn overlap(cfg: &ExperimentConfig) -> CliResult<OverlapRun> {
    let (train_cfg, mut out) = prepare(cfg)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    if let (Some(a), Some(b)) = (&cfg.overlap.checkpoint_a, &cfg.overlap.checkpoint_b) {
        let (a, b) = (Checkpoint::load(a)?, Checkpoint::load(b)?);
        if a.spec != b.spec {
            return Err(CliError::Runtime("checkpoints have different network specs".into()));
        }
        let (Some(fa), Some(fb)) = (&a.fisher, &b.fisher) else {
            return Err(CliError::Runtime("both checkpoints need a stored Fisher".into()));
        };
        rows.push(OverlapRow {
            condition: "checkpoints".into(),
            layers: layer_overlaps(fa, fb, a.params.blocks())?,
        });
    } else {
        let data = load_task_data(cfg)?;
        let side = (data.train.pixels() as f64).sqrt() as usize;
        if side * side != data.train.pixels() {
            return Err(CliError::Runtime("partial permutations need square images".into()));
        }
        let spec = classifier_spec(&data, &cfg.overlap.hidden);
        let mut seq_cfg = train_cfg.clone();
        seq_cfg.epochs_per_task = cfg.overlap.epochs;
        for &square in &cfg.overlap.squares {
            let tasks = vec![
                data.task(make_partial_permutation(side, square, cfg.seed)?)?,
                data.task(make_partial_permutation(side, square, cfg.seed.wrapping_add(1))?)?,
            ];
            let mut fishers = Vec::new();
            let prefix = format!("square-{square}-");
            let mut save = checkpoint_observer(&spec, &mut out, &prefix);
            run_sequence_with(&spec, &tasks, &seq_cfg, |s| {
                let k = s.report.segment;
                fishers.push(fisher_of(cfg, &spec, s.params, &tasks[k], s.fisher, k as u64)?);
                save(s)
            })?;
            rows.push(OverlapRow {
                condition: format!("square-{square}"),
                layers: layer_overlaps(&fishers[0], &fishers[1], &spec.block_map())?,
            });
        }
    }
    out.write("overlap.csv", overlap_csv(&rows).as_bytes())?;
    let manifest = out.finish("overlap", cfg, BTreeMap::new(), start.elapsed().as_secs_f64())?;
    Ok(OverlapRun { rows, manifest })
}

pub struct PerturbRun {
    pub clean_accuracy: f64,
    pub curves: Vec<SensitivityCurve>,
    pub manifest: RunManifest,
}

fn perturb_csv(curves: &[SensitivityCurve]) -> String {
    let mut s = String::from("shape,sigma,mean_accuracy\n");
    for c in curves {
        for p in &c.points {
            s.push_str(&format!("{},{},{}\n", c.shape.name(), p.sigma, p.mean_accuracy));
        }
    }
    s
}

/// Accuracy under Gaussian weight noise of uniform, inverse-Fisher and
/// nullspace shape. Trains one task unless a checkpoint is given.
pub fn perturb(cfg: &ExperimentConfig) -> CliResult<PerturbRun> {
    let (train_cfg, mut out) = prepare(cfg)?;
    let start = Instant::now();
    let data = load_task_data(cfg)?;
    let (spec, params, fisher, task) = match &cfg.perturb.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let task = data.task(make_permutation(data.train.pixels(), cfg.seed.wrapping_add(ckpt.segment as u64))?)?;
            let fisher = fisher_of(cfg, &ckpt.spec, &ckpt.params, &task, ckpt.fisher.as_ref(), 0)?;
            (ckpt.spec, ckpt.params, fisher, task)
        }
        None => {
            let task = data.task(make_permutation(data.train.pixels(), cfg.seed)?)?;
            let spec = classifier_spec(&data, &cfg.train.hidden);
            let mut trained = None;
            let tasks = std::slice::from_ref(&task);
            run_sequence_with(&spec, tasks, &train_cfg, |s| {
                trained = Some(s.params.clone());
                Ok(())
            })?;
            let params = trained.expect("one segment");
            let fisher = fisher_of(cfg, &spec, &params, &task, None, 0)?;
            let ckpt = Checkpoint {
                spec: spec.clone(),
                segment: 0,
                params: params.clone(),
                penalties: Default::default(),
                fisher: Some(fisher.clone()),
            };
            let crc = ckpt.save(&out.path("trained.ckpt"))?;
            out.record_checkpoint("trained.ckpt", crc);
            (spec, params, fisher, task)
        }
    };
    let (_, _, test) = task.materialize()?;
    let eval = test.subsample(cfg.perturb.eval_examples, cfg.seed);
    let clean_accuracy = evaluate(&spec, &params, &eval, None)?;
    let mut curves = Vec::new();
    let mut notes = BTreeMap::new();
    notes.insert("ridge".into(), json!(cfg.perturb.ridge));
    notes.insert("clean_accuracy".into(), json!(clean_accuracy));
    for shape in PerturbShape::ALL {
        let pc = PerturbConfig {
            ridge: cfg.perturb.ridge,
            episodes: cfg.perturb.episodes,
            seed: cfg.seed,
            ..PerturbConfig::new(shape, cfg.perturb.sigmas.clone())
        };
        match perturbation_sensitivity(&spec, &params, &fisher, &pc, &eval, None) {
            Ok(curve) => {
                notes.insert(format!("{}_perturbed_params", shape.name()), json!(curve.perturbed_params));
                curves.push(curve);
            }
            Err(e) if shape == PerturbShape::Nullspace => {
                notes.insert("nullspace_skipped".into(), json!(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.write("perturb.csv", perturb_csv(&curves).as_bytes())?;
    let manifest = out.finish("perturb", cfg, notes, start.elapsed().as_secs_f64())?;
    Ok(PerturbRun {
        clean_accuracy,
        curves,
        manifest,
    })
}

pub struct RecognizeRun {
    pub trace: RecognitionTrace,
    /// Relabeled accuracy over steps past the burn-in of each segment.
    pub accuracy: f64,
    pub manifest: RunManifest,
}

/// Runs task recognition over a stream of permuted test images.
pub fn recognize(cfg: &ExperimentConfig) -> CliResult<RecognizeRun> {
    let (_, mut out) = prepare(cfg)?;
    let start = Instant::now();
    let (images, labels) = mnist_paths(&cfg.data.dir, false);
    let base = load_idx(images, labels)?;
    let r = &cfg.recognize;
    let perms = (0..cfg.tasks as u64)
        .map(|k| make_permutation(base.pixels(), cfg.seed.wrapping_add(k)))
        .collect::<ewc::Result<Vec<_>>>()?;
    let schedule: Vec<usize> = if r.schedule.is_empty() {
        (0..cfg.tasks).collect()
    } else {
        r.schedule.clone()
    };
    let stream = synthetic_stream(&base, &perms, &schedule, r.segment_len, cfg.seed)?;
    let rc = RecognizerConfig {
        levels: r.levels,
        downscale: r.downscale,
        window: r.window,
        prior_strength: r.prior_strength,
        stride: r.stride,
        ..RecognizerConfig::default()
    };
    let trace = Recognizer::new(rc)?.run(stream.iter())?;
    let kept: Vec<_> = trace
        .points
        .iter()
        .filter(|p| p.t % r.segment_len >= r.burn_in)
        .collect();
    let truth: Vec<usize> = kept.iter().filter_map(|p| p.true_context).collect();
    let inferred: Vec<usize> = kept.iter().map(|p| p.inferred_context).collect();
    let accuracy = relabeled_accuracy(&truth, &inferred);
    out.write("trace.csv", trace.to_csv().as_bytes())?;
    let summary = json!({
        "spawned_contexts": trace.spawned_contexts,
        "relabeled_accuracy": accuracy,
        "schedule": schedule,
    });
    let text = serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write("summary.json", &text)?;
    let mut notes = BTreeMap::new();
    notes.insert("spawned_contexts".into(), json!(trace.spawned_contexts));
    let manifest = out.finish("recognize", cfg, notes, start.elapsed().as_secs_f64())?;
    Ok(RecognizeRun {
        trace,
        accuracy,
        manifest,
    })
}

pub struct SearchRun {
    pub result: SearchResult,
    pub manifest: RunManifest,
}

/// Random search scored by the final mean accuracy over all tasks.
pub fn search(cfg: &ExperimentConfig) -> CliResult<SearchRun> {
    let (train_cfg, mut out) = prepare(cfg)?;
    let start = Instant::now();
    let data = load_task_data(cfg)?;
    let tasks = data.permuted_tasks(cfg.tasks, cfg.seed)?;
    let spec = classifier_spec(&data, &cfg.train.hidden);
    let s = &cfg.search;
    let space = SearchSpace {
        learning_rate: Interval {
            lo: s.learning_rate.0,
            hi: s.learning_rate.1,
        },
        hidden_width: Interval {
            lo: s.hidden_width.0,
            hi: s.hidden_width.1,
        },
        penalty_strength: s.penalty_strength.map(|(lo, hi)| Interval { lo, hi }),
    };
    let result = random_search(&space, &spec, &train_cfg, s.trials, cfg.seed, |spec, c| {
        Ok(run_sequence(spec, &tasks, c)?.final_mean_accuracy())
    })?;
    out.write("trials.csv", result.to_csv().as_bytes())?;
    let best = serde_json::to_vec_pretty(&json!({
        "best_trial": result.best_index,
        "spec": result.best_spec,
        "config": result.best_config,
    }))
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write("best.json", &best)?;
    let manifest = out.finish("search", cfg, BTreeMap::new(), start.elapsed().as_secs_f64())?;
    Ok(SearchRun { result, manifest })
}
