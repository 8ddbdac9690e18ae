//! Minibatch SGD over a sequence of tasks.
//!
//! Four regimes share one loop: plain SGD, an L2 pull towards the previous
//! task's solution, dropout with early stopping, and EWC. Each task is trained
//! for a fixed budget and never revisited; after every segment the network is
//! scored on the test split of every task in the sequence.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::consolidation::{
    build_penalty, estimate_fisher_diagonal, FisherConfig, FisherDiagonal, FisherMode, PenaltySet,
    QuadraticPenalty,
};
use crate::error::{Error, Result};
use crate::network::{
    init_params, logits_unchecked, loss_and_grad, predict, sample_dropout_masks, DropoutConfig,
    NetworkSpec, ParamVector, PassOptions,
};
use crate::parallel::{map_ordered, Exec};
use crate::rng::{seeded, stream};
use crate::tasks::{Examples, PermutedTask};

const STREAM_TRAIN: u32 = 10;
const STREAM_FISHER: u32 = 11;
const STREAM_INIT: u32 = 12;
const STREAM_SEARCH: u32 = 13;
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    /// Consecutive validation worsenings tolerated; one more stops training.
    pub patience: usize,
    /// Epochs between validation checks.
    pub cadence_epochs: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 5,
            cadence_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Regime {
    Sgd,
    /// Same coefficient on every parameter, anchored at each task switch.
    L2 { coefficient: f64 },
    Dropout {
        dropout: DropoutConfig,
        early_stop: EarlyStopConfig,
    },
    Ewc {
        lambda: f64,
        fisher_batches: usize,
        fisher_mode: FisherMode,
    },
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Sgd => "sgd",
            Regime::L2 { .. } => "l2",
            Regime::Dropout { .. } => "dropout",
            Regime::Ewc { .. } => "ewc",
        }
    }

    pub fn ewc(lambda: f64) -> Self {
        Regime::Ewc {
            lambda,
            fisher_batches: 100,
            fisher_mode: FisherMode::ModelSampled,
        }
    }

    pub fn dropout() -> Self {
        Regime::Dropout {
            dropout: DropoutConfig::default(),
            early_stop: EarlyStopConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub regime: Regime,
    pub seed: u64,
    pub exec: Exec,
    /// Keep one merged EWC penalty instead of one per task.
    pub merge_penalties: bool,
}

impl TrainConfig {
    pub fn new(regime: Regime) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs_per_task: 20,
            regime,
            seed: 0,
            exec: Exec::Deterministic,
            merge_penalties: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs_per_task == 0 {
            return Err(Error::invalid("batch size and epochs per task must be >= 1"));
        }
        match self.regime {
            Regime::Sgd => {}
            Regime::L2 { coefficient } if coefficient.is_nan() || coefficient < 0.0 => {
                return Err(Error::invalid(format!("l2 coefficient {coefficient} < 0")));
            }
            Regime::L2 { .. } => {}
            Regime::Dropout {
                dropout,
                early_stop,
            } => {
                dropout.validate()?;
                if early_stop.patience == 0 || early_stop.cadence_epochs == 0 {
                    return Err(Error::invalid("early-stop patience and cadence must be >= 1"));
                }
            }
            Regime::Ewc {
                lambda,
                fisher_batches,
                ..
            } => {
                if lambda.is_nan() || lambda < 0.0 {
                    return Err(Error::invalid(format!("ewc lambda {lambda} < 0")));
                }
                if fisher_batches == 0 {
                    return Err(Error::invalid("fisher batches must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// What happened while training one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskHistory {
    pub epochs_run: usize,
    /// Mean total loss (data + penalty) per epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation error over the validation tasks, per check.
    pub valid_error: Vec<f64>,
    pub stopped_early: bool,
    /// Check index whose weights were restored, if early stopping was active.
    pub restored_check: Option<usize>,
}

/// Tracks validation error and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    worsening: usize,
    last: Option<f64>,
    best: Option<(usize, f64)>,
    checks: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            worsening: 0,
            last: None,
            best: None,
            checks: 0,
        }
    }

    /// Records one validation error. Returns `(is_new_best, should_stop)`.
    pub fn observe(&mut self, error: f64) -> (bool, bool) {
        let check = self.checks;
        self.checks += 1;
        if let Some(prev) = self.last {
            if error > prev {
                self.worsening += 1;
            } else {
                self.worsening = 0;
            }
        }
        self.last = Some(error);
        let improved = self.best.is_none_or(|(_, b)| error < b);
        if improved {
            self.best = Some((check, error));
        }
        (improved, self.worsening > self.patience)
    }

    pub fn best_check(&self) -> Option<usize> {
        self.best.map(|(i, _)| i)
    }
}

fn context_for(spec: &NetworkSpec, task_index: usize) -> Option<usize> {
    spec.task_conditioned.then_some(task_index)
}

/// Fraction of argmax-correct predictions, without dropout.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParamVector,
    data: &dyn Examples,
    context: Option<usize>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    crate::network::forward(
        spec,
        params,
        data.gather(&[0]).inputs.view(),
        &PassOptions::default().context(context),
    )?;
    let chunks: Vec<Vec<usize>> = (0..data.len())
        .step_by(EVAL_CHUNK)
        .map(|s| (s..(s + EVAL_CHUNK).min(data.len())).collect())
        .collect();
    let correct: usize = map_ordered(&chunks, |idx| {
        let batch = data.gather(idx);
        let pred = predict(&logits_unchecked(params, batch.inputs.view(), context));
        pred.iter().zip(&batch.labels).filter(|(p, y)| p == y).count()
    })
    .into_iter()
    .sum();
    Ok(correct as f64 / data.len() as f64)
}

fn mean_validation_error(
    spec: &NetworkSpec,
    params: &ParamVector,
    tasks: &[(usize, &PermutedTask)],
) -> Result<f64> {
    let mut total = 0.0;
    for (index, task) in tasks {
        total += 1.0 - evaluate(spec, params, &task.valid(), context_for(spec, *index))?;
    }
    Ok(total / tasks.len() as f64)
}

/// Trains `params` on one task for `cfg.epochs_per_task` epochs.
///
/// `task_index` selects the context of task-conditioned networks and the
/// random stream. `validation_tasks` (index, task) pairs feed early stopping
/// in the dropout regime; other regimes ignore them.
pub fn train_task(
    spec: &NetworkSpec,
    mut params: ParamVector,
    task: &PermutedTask,
    task_index: usize,
    cfg: &TrainConfig,
    penalties: &PenaltySet,
    validation_tasks: &[(usize, &PermutedTask)],
) -> Result<(ParamVector, TaskHistory)> {
    cfg.validate()?;
    if !penalties.is_empty() && !matches!(cfg.regime, Regime::Ewc { .. } | Regime::L2 { .. }) {
        return Err(Error::invalid(format!(
            "penalties supplied to the {} regime",
            cfg.regime.name()
        )));
    }
    let train = task.train();
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let context = context_for(spec, task_index);
    let mut rng = seeded(cfg.seed, stream(STREAM_TRAIN, task_index as u64));
    let mut history = TaskHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let (dropout, early_stop) = match cfg.regime {
        Regime::Dropout {
            dropout,
            early_stop,
        } => (Some(dropout), Some(early_stop)),
        _ => (None, None),
    };
    if early_stop.is_some() && validation_tasks.is_empty() {
        return Err(Error::invalid("early stopping needs at least one validation task"));
    }
    let mut stopper = early_stop.map(|e| EarlyStopper::new(e.patience));
    let mut best_params: Option<ParamVector> = None;

    for epoch in 0..cfg.epochs_per_task {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.gather(idx);
            let masks = match &dropout {
                Some(d) => Some(sample_dropout_masks(spec, d, idx.len(), rng.next_u64())?),
                None => None,
            };
            let mut opts = PassOptions::default().context(context).exec(cfg.exec);
            if let Some(m) = &masks {
                opts = opts.masks(m);
            }
            if !penalties.is_empty() {
                opts = opts.penalty(penalties);
            }
            let (loss, grad) = loss_and_grad(spec, &params, &batch, &opts).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!(
                    "task {task_index}, epoch {epoch}, batch {b}: {msg}"
                )),
                other => other,
            })?;
            params.add_scaled(-cfg.learning_rate, grad.values());
            loss_sum += loss;
            batches += 1;
        }
        history.train_loss.push(loss_sum / batches as f64);
        history.epochs_run = epoch + 1;

        if let (Some(stopper), Some(es)) = (stopper.as_mut(), early_stop) {
            if (epoch + 1) % es.cadence_epochs == 0 {
                let err = mean_validation_error(spec, &params, validation_tasks)?;
                history.valid_error.push(err);
                let (improved, stop) = stopper.observe(err);
                if improved {
                    best_params = Some(params.clone());
                }
                if stop {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some(best) = best_params {
        params = best;
        history.restored_check = stopper.and_then(|s| s.best_check());
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters after training task {task_index}"
        )));
    }
    Ok((params, history))
}

/// One training segment of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub task: usize,
    /// Test accuracy of every task in the sequence after this segment.
    pub test_accuracy: Vec<f64>,
    pub history: TaskHistory,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub regime: String,
    pub tasks: usize,
    pub segments: Vec<SegmentReport>,
}

impl SequenceReport {
    /// Accuracy of `task` measured after `segment`.
    pub fn accuracy(&self, segment: usize, task: usize) -> f64 {
        self.segments[segment].test_accuracy[task]
    }

    /// Mean accuracy over the tasks trained so far, after each segment.
    pub fn mean_seen_accuracy(&self) -> Vec<f64> {
        self.segments
            .iter()
            .map(|s| s.test_accuracy[..=s.segment].iter().sum::<f64>() / (s.segment + 1) as f64)
            .collect()
    }

    /// Mean accuracy over all tasks after the last segment.
    pub fn final_mean_accuracy(&self) -> f64 {
        let last = self.segments.last().expect("non-empty report");
        last.test_accuracy.iter().sum::<f64>() / last.test_accuracy.len() as f64
    }

    /// Long-format CSV: `segment,task,metric,value`. Wall-clock time is left
    /// out so that reruns produce identical bytes.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("segment,task,metric,value\n");
        for s in &self.segments {
            for (t, acc) in s.test_accuracy.iter().enumerate() {
                writeln!(out, "{},{},test_accuracy,{}", s.segment, t, acc).unwrap();
            }
            let h = &s.history;
            writeln!(out, "{},{},epochs_run,{}", s.segment, s.task, h.epochs_run).unwrap();
            writeln!(out, "{},{},stopped_early,{}", s.segment, s.task, h.stopped_early as u8).unwrap();
            for (e, l) in h.train_loss.iter().enumerate() {
                writeln!(out, "{},{},train_loss@{},{}", s.segment, s.task, e, l).unwrap();
            }
            for (e, v) in h.valid_error.iter().enumerate() {
                writeln!(out, "{},{},valid_error@{},{}", s.segment, s.task, e, v).unwrap();
            }
        }
        out
    }
}

/// State handed to [`run_sequence_with`] observers after each segment.
pub struct SegmentState<'a> {
    pub report: &'a SegmentReport,
    pub params: &'a ParamVector,
    pub penalties: &'a PenaltySet,
    /// Fisher of the task just trained (EWC regime only).
    pub fisher: Option<&'a FisherDiagonal>,
}

pub fn run_sequence(
    spec: &NetworkSpec,
    tasks: &[PermutedTask],
    cfg: &TrainConfig,
) -> Result<SequenceReport> {
    run_sequence_with(spec, tasks, cfg, |_| Ok(()))
}

/// Trains `tasks` in order from freshly initialized parameters.
pub fn run_sequence_with<F>(
    spec: &NetworkSpec,
    tasks: &[PermutedTask],
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<SequenceReport>
where
    F: FnMut(SegmentState<'_>) -> Result<()>,
{
    if tasks.is_empty() {
        return Err(Error::invalid("a sequence needs at least one task"));
    }
    cfg.validate()?;
    spec.validate()?;
    if spec.task_conditioned && spec.contexts < tasks.len() {
        return Err(Error::InvalidSpec(format!(
            "{} contexts for {} tasks",
            spec.contexts,
            tasks.len()
        )));
    }
    let mut params = init_params(spec, seeded(cfg.seed, stream(STREAM_INIT, 0)).next_u64())?;
    let mut penalties = PenaltySet::new();
    let mut segments = Vec::with_capacity(tasks.len());

    for (k, task) in tasks.iter().enumerate() {
        let started = Instant::now();
        let training_penalties = match cfg.regime {
            Regime::L2 { coefficient } if k > 0 => {
                let mut set = PenaltySet::new();
                set.push(QuadraticPenalty::uniform(&params, coefficient)?)?;
                set
            }
            Regime::Ewc { .. } => penalties.clone(),
            _ => PenaltySet::new(),
        };
        let seen: Vec<(usize, &PermutedTask)> = tasks[..=k].iter().enumerate().collect();
        let (trained, history) =
            train_task(spec, params, task, k, cfg, &training_penalties, &seen)?;
        params = trained;

        let fisher = match cfg.regime {
            Regime::Ewc {
                lambda,
                fisher_batches,
                fisher_mode,
            } => {
                let fcfg = FisherConfig {
                    n_batches: fisher_batches,
                    batch_size: cfg.batch_size,
                    mode: fisher_mode,
                    seed: seeded(cfg.seed, stream(STREAM_FISHER, k as u64)).next_u64(),
                };
                let f = estimate_fisher_diagonal(spec, &params, &task.train(), &fcfg, context_for(spec, k))?;
                penalties.push(build_penalty(&params, &f, lambda)?)?;
                if cfg.merge_penalties {
                    penalties = penalties.into_merged()?;
                }
                Some(f)
            }
            _ => None,
        };

        let test_accuracy = tasks
            .iter()
            .enumerate()
            .map(|(j, t)| evaluate(spec, &params, &t.test(), context_for(spec, j)))
            .collect::<Result<Vec<_>>>()?;
        segments.push(SegmentReport {
            segment: k,
            task: k,
            test_accuracy,
            history,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
        observer(SegmentState {
            report: segments.last().expect("pushed"),
            params: &params,
            penalties: &penalties,
            fisher: fisher.as_ref(),
        })?;
    }
    Ok(SequenceReport {
        regime: cfg.regime.name().to_string(),
        tasks: tasks.len(),
        segments,
    })
}

/// Closed interval; log-uniform for rates, uniform for integers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy> Interval<T> {
    pub fn point(v: T) -> Self {
        Interval { lo: v, hi: v }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Interval<f64>,
    /// Width applied to every hidden layer.
    pub hidden_width: Interval<usize>,
    /// EWC lambda or L2 coefficient, depending on the base regime.
    pub penalty_strength: Option<Interval<f64>>,
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let lr = self.learning_rate;
        if !(lr.lo > 0.0 && lr.lo <= lr.hi) {
            return Err(Error::invalid(format!("learning-rate range {lr:?}")));
        }
        let w = self.hidden_width;
        if w.lo == 0 || w.lo > w.hi {
            return Err(Error::invalid(format!("hidden-width range {w:?}")));
        }
        if let Some(p) = self.penalty_strength {
            if !(p.lo > 0.0 && p.lo <= p.hi) {
                return Err(Error::invalid(format!("penalty-strength range {p:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPoint {
    pub learning_rate: f64,
    pub hidden_width: usize,
    pub penalty_strength: Option<f64>,
}

impl TrialPoint {
    /// Copies of the base spec and config with this point's values applied.
    pub fn apply(&self, spec: &NetworkSpec, cfg: &TrainConfig) -> (NetworkSpec, TrainConfig) {
        let mut spec = spec.clone();
        let n = spec.layer_widths.len();
        for w in &mut spec.layer_widths[1..n - 1] {
            *w = self.hidden_width;
        }
        let mut cfg = cfg.clone();
        cfg.learning_rate = self.learning_rate;
        if let Some(s) = self.penalty_strength {
            match &mut cfg.regime {
                Regime::Ewc { lambda, .. } => *lambda = s,
                Regime::L2 { coefficient } => *coefficient = s,
                _ => {}
            }
        }
        (spec, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub point: TrialPoint,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub best_spec: NetworkSpec,
    pub best_config: TrainConfig,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,learning_rate,hidden_width,penalty_strength,score\n");
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.index,
                t.point.learning_rate,
                t.point.hidden_width,
                t.point.penalty_strength.map(|s| s.to_string()).unwrap_or_default(),
                t.score
            ));
        }
        out
    }
}

fn sample_log_uniform(rng: &mut impl Rng, iv: Interval<f64>) -> f64 {
    if iv.lo == iv.hi {
        return iv.lo;
    }
    rng.random_range(iv.lo.ln()..=iv.hi.ln()).exp()
}

/// Samples `n_trials` points, scores each with `objective`, returns the best.
///
/// Points are drawn up front from one seeded stream, so the trial table does
/// not depend on how trials are scheduled across threads. Ties go to the
/// lowest trial index.
pub fn random_search<F>(
    space: &SearchSpace,
    base_spec: &NetworkSpec,
    base_cfg: &TrainConfig,
    n_trials: usize,
    seed: u64,
    objective: F,
) -> Result<SearchResult>
where
    F: Fn(&NetworkSpec, &TrainConfig) -> Result<f64> + Sync + Send,
{
    if n_trials == 0 {
        return Err(Error::invalid("random search needs n_trials >= 1"));
    }
    space.validate()?;
    let mut rng = seeded(seed, stream(STREAM_SEARCH, 0));
    let points: Vec<TrialPoint> = (0..n_trials)
        .map(|_| TrialPoint {
            learning_rate: sample_log_uniform(&mut rng, space.learning_rate),
            hidden_width: rng.random_range(space.hidden_width.lo..=space.hidden_width.hi),
            penalty_strength: space.penalty_strength.map(|iv| sample_log_uniform(&mut rng, iv)),
        })
        .collect();
    let scores = map_ordered(&points, |p| {
        let (spec, cfg) = p.apply(base_spec, base_cfg);
        objective(&spec, &cfg)
    });
    let mut trials = Vec::with_capacity(n_trials);
    for (index, (point, score)) in points.into_iter().zip(scores).enumerate() {
        trials.push(Trial {
            index,
            point,
            score: score?,
        });
    }
    let best_index = trials
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, t)| match best {
            Some((_, s)) if t.score.partial_cmp(&s) != Some(std::cmp::Ordering::Greater) => best,
            _ if t.score.is_nan() => best,
            _ => Some((i, t.score)),
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (best_spec, best_config) = trials[best_index].point.apply(base_spec, base_cfg);
    Ok(SearchResult {
        best_index,
        best_spec,
        best_config,
        trials,
    })
}
