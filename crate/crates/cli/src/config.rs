//! Flat `key = value` experiment configuration.
//!
//! Values are layered: built-in defaults, then a config file, then command
//! line flags. Every failure names the offending key.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ewc::consolidation::FisherMode;
use ewc::trainer::{EarlyStopConfig, Regime, TrainConfig};
use ewc::{DropoutConfig, Exec};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Training set subsampled to `data.desk_examples`.
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub scale: Scale,
    pub desk_examples: usize,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub regime: String,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub l2_coefficient: f64,
    pub fisher_batches: usize,
    pub fisher_mode: FisherMode,
    pub merge_penalties: bool,
    pub input_drop: f64,
    pub hidden_drop: f64,
    pub patience: usize,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSection {
    pub squares: Vec<usize>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub checkpoint_a: Option<PathBuf>,
    pub checkpoint_b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbSection {
    pub sigmas: Vec<f64>,
    pub ridge: f64,
    pub episodes: usize,
    pub eval_examples: usize,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecognizeSection {
    pub segment_len: usize,
    /// Task order; empty means `0..tasks`.
    pub schedule: Vec<usize>,
    pub window: usize,
    pub levels: usize,
    pub downscale: usize,
    pub prior_strength: f64,
    pub stride: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSection {
    pub trials: usize,
    pub learning_rate: (f64, f64),
    pub hidden_width: (usize, usize),
    pub penalty_strength: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub tasks: usize,
    pub data: DataConfig,
    pub train: TrainSection,
    pub overlap: OverlapSection,
    pub perturb: PerturbSection,
    pub recognize: RecognizeSection,
    pub search: SearchSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            tasks: 3,
            data: DataConfig {
                dir: PathBuf::from("data/mnist-subset"),
                scale: Scale::Desk,
                desk_examples: 10_000,
                valid_fraction: 0.1,
            },
            train: TrainSection {
                regime: "ewc".into(),
                hidden: vec![400, 400],
                learning_rate: 1e-3,
                batch_size: 32,
                epochs: 20,
                lambda: 100.0,
                l2_coefficient: 0.1,
                fisher_batches: 100,
                fisher_mode: FisherMode::ModelSampled,
                merge_penalties: false,
                input_drop: 0.2,
                hidden_drop: 0.5,
                patience: 5,
                parallel: false,
            },
            overlap: OverlapSection {
                squares: vec![8, 26],
                hidden: vec![100; 6],
                epochs: 100,
                checkpoint_a: None,
                checkpoint_b: None,
            },
            perturb: PerturbSection {
                sigmas: vec![0.0, 0.02, 0.05, 0.1, 0.2, 0.4],
                ridge: 1e-3,
                episodes: 10,
                eval_examples: 1000,
                checkpoint: None,
            },
            recognize: RecognizeSection {
                segment_len: 500,
                schedule: Vec::new(),
                window: 4,
                levels: 3,
                downscale: 1,
                prior_strength: 1.0,
                stride: 1,
                burn_in: 50,
            },
            search: SearchSection {
                trials: 50,
                learning_rate: (1e-5, 1e-3),
                hidden_width: (400, 2000),
                penalty_strength: None,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError::new(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::new(key, format!("expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_pair<T: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<(T, T), ConfigError>
where
    T::Err: fmt::Display,
{
    match parse_list::<T>(key, value)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(ConfigError::new(key, format!("expected `lo,hi`, got {value:?}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "tasks" => self.tasks = parse(key, v)?,
            "data.dir" => self.data.dir = PathBuf::from(v),
            "data.scale" => {
                self.data.scale = match v {
                    "desk" => Scale::Desk,
                    "full" => Scale::Full,
                    _ => return Err(ConfigError::new(key, format!("expected desk or full, got {v:?}"))),
                }
            }
            "data.desk_examples" => self.data.desk_examples = parse(key, v)?,
            "data.valid_fraction" => self.data.valid_fraction = parse(key, v)?,
            "train.regime" => self.train.regime = v.to_string(),
            "train.hidden" => self.train.hidden = parse_list(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.lambda" => self.train.lambda = parse(key, v)?,
            "train.l2_coefficient" => self.train.l2_coefficient = parse(key, v)?,
            "train.fisher_batches" => self.train.fisher_batches = parse(key, v)?,
            "train.fisher_mode" => {
                self.train.fisher_mode = match v {
                    "model-sampled" => FisherMode::ModelSampled,
                    "empirical" => FisherMode::Empirical,
                    _ => {
                        return Err(ConfigError::new(
                            key,
                            format!("expected model-sampled or empirical, got {v:?}"),
                        ))
                    }
                }
            }
            "train.merge_penalties" => self.train.merge_penalties = parse_bool(key, v)?,
            "train.input_drop" => self.train.input_drop = parse(key, v)?,
            "train.hidden_drop" => self.train.hidden_drop = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.parallel" => self.train.parallel = parse_bool(key, v)?,
            "overlap.squares" => self.overlap.squares = parse_list(key, v)?,
            "overlap.hidden" => self.overlap.hidden = parse_list(key, v)?,
            "overlap.epochs" => self.overlap.epochs = parse(key, v)?,
            "overlap.checkpoint_a" => self.overlap.checkpoint_a = optional_path(v),
            "overlap.checkpoint_b" => self.overlap.checkpoint_b = optional_path(v),
            "perturb.sigmas" => self.perturb.sigmas = parse_list(key, v)?,
            "perturb.ridge" => self.perturb.ridge = parse(key, v)?,
            "perturb.episodes" => self.perturb.episodes = parse(key, v)?,
            "perturb.eval_examples" => self.perturb.eval_examples = parse(key, v)?,
            "perturb.checkpoint" => self.perturb.checkpoint = optional_path(v),
            "recognize.segment_len" => self.recognize.segment_len = parse(key, v)?,
            "recognize.schedule" => self.recognize.schedule = parse_list(key, v)?,
            "recognize.window" => self.recognize.window = parse(key, v)?,
            "recognize.levels" => self.recognize.levels = parse(key, v)?,
            "recognize.downscale" => self.recognize.downscale = parse(key, v)?,
            "recognize.prior_strength" => self.recognize.prior_strength = parse(key, v)?,
            "recognize.stride" => self.recognize.stride = parse(key, v)?,
            "recognize.burn_in" => self.recognize.burn_in = parse(key, v)?,
            "search.trials" => self.search.trials = parse(key, v)?,
            "search.learning_rate" => self.search.learning_rate = parse_pair(key, v)?,
            "search.hidden_width" => self.search.hidden_width = parse_pair(key, v)?,
            "search.penalty_strength" => {
                self.search.penalty_strength = if v.is_empty() {
                    None
                } else {
                    Some(parse_pair(key, v)?)
                }
            }
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::new(format!("{origin}:{}", n + 1), format!("expected `key = value`, got {line:?}"))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn regime(&self) -> Result<Regime, ConfigError> {
        let t = &self.train;
        Ok(match t.regime.as_str() {
            "sgd" => Regime::Sgd,
            "l2" => Regime::L2 {
                coefficient: t.l2_coefficient,
            },
            "dropout" => Regime::Dropout {
                dropout: DropoutConfig {
                    input_drop: t.input_drop,
                    hidden_drop: t.hidden_drop,
                },
                early_stop: EarlyStopConfig {
                    patience: t.patience,
                    cadence_epochs: 1,
                },
            },
            "ewc" => Regime::Ewc {
                lambda: t.lambda,
                fisher_batches: t.fisher_batches,
                fisher_mode: t.fisher_mode,
            },
            other => {
                return Err(ConfigError::new(
                    "train.regime",
                    format!("expected sgd, l2, dropout or ewc, got {other:?}"),
                ))
            }
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let mut cfg = TrainConfig::new(self.regime()?);
        cfg.learning_rate = self.train.learning_rate;
        cfg.batch_size = self.train.batch_size;
        cfg.epochs_per_task = self.train.epochs;
        cfg.seed = self.seed;
        cfg.merge_penalties = self.train.merge_penalties;
        cfg.exec = if self.train.parallel {
            Exec::Parallel
        } else {
            Exec::Deterministic
        };
        Ok(cfg)
    }

    /// Checks every field that does not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |f: &str, m: String| Err(ConfigError::new(f, m));
        if self.tasks == 0 {
            return fail("tasks", "must be >= 1".into());
        }
        if !self.data.dir.is_dir() {
            return fail("data.dir", format!("{} is not a directory", self.data.dir.display()));
        }
        for train in [true, false] {
            let (images, labels) = ewc::tasks::mnist_paths(&self.data.dir, train);
            for p in [images, labels] {
                if !p.is_file() {
                    return fail("data.dir", format!("missing {}", p.display()));
                }
            }
        }
        if self.data.desk_examples == 0 {
            return fail("data.desk_examples", "must be >= 1".into());
        }
        if !(self.data.valid_fraction > 0.0 && self.data.valid_fraction < 1.0) {
            return fail("data.valid_fraction", format!("{} outside (0, 1)", self.data.valid_fraction));
        }
        let t = &self.train;
        if t.hidden.contains(&0) {
            return fail("train.hidden", "widths must be >= 1".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return fail("train.learning_rate", format!("{} is not > 0", t.learning_rate));
        }
        if t.batch_size == 0 {
            return fail("train.batch_size", "must be >= 1".into());
        }
        if t.epochs == 0 {
            return fail("train.epochs", "must be >= 1".into());
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return fail("train.lambda", format!("{} is not >= 0", t.lambda));
        }
        if !(t.l2_coefficient >= 0.0 && t.l2_coefficient.is_finite()) {
            return fail("train.l2_coefficient", format!("{} is not >= 0", t.l2_coefficient));
        }
        if t.fisher_batches == 0 {
            return fail("train.fisher_batches", "must be >= 1".into());
        }
        for (f, p) in [("train.input_drop", t.input_drop), ("train.hidden_drop", t.hidden_drop)] {
            if !(0.0..1.0).contains(&p) {
                return fail(f, format!("{p} outside [0, 1)"));
            }
        }
        if t.patience == 0 {
            return fail("train.patience", "must be >= 1".into());
        }
        self.regime()?;

        let o = &self.overlap;
        if o.squares.is_empty() || o.squares.iter().any(|&s| s == 0 || s > 28) {
            return fail("overlap.squares", "need sides in 1..=28".into());
        }
        if o.hidden.is_empty() || o.hidden.contains(&0) {
            return fail("overlap.hidden", "need at least one hidden width >= 1".into());
        }
        if o.epochs == 0 {
            return fail("overlap.epochs", "must be >= 1".into());
        }
        if o.checkpoint_a.is_some() != o.checkpoint_b.is_some() {
            return fail("overlap.checkpoint_b", "set both checkpoints or neither".into());
        }
        for (f, p) in [
            ("overlap.checkpoint_a", &o.checkpoint_a),
            ("overlap.checkpoint_b", &o.checkpoint_b),
            ("perturb.checkpoint", &self.perturb.checkpoint),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return fail(f, format!("{} does not exist", p.display()));
                }
            }
        }

        let p = &self.perturb;
        if p.sigmas.is_empty() {
            return fail("perturb.sigmas", "sigma grid is empty".into());
        }
        if p.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("perturb.sigmas", "sigmas must be finite and >= 0".into());
        }
        if p.ridge.is_nan() || p.ridge <= 0.0 {
            return fail("perturb.ridge", format!("{} is not > 0", p.ridge));
        }
        if p.episodes == 0 || p.eval_examples == 0 {
            return fail("perturb.episodes", "episodes and eval_examples must be >= 1".into());
        }

        let r = &self.recognize;
        if r.segment_len == 0 {
            return fail("recognize.segment_len", "must be >= 1".into());
        }
        if let Some(&bad) = r.schedule.iter().find(|&&k| k >= self.tasks) {
            return fail("recognize.schedule", format!("task {bad} but only {} tasks", self.tasks));
        }
        if r.window == 0 || r.stride == 0 || r.downscale == 0 {
            return fail("recognize.window", "window, stride and downscale must be >= 1".into());
        }
        if !(2..=256).contains(&r.levels) {
            return fail("recognize.levels", format!("{} outside 2..=256", r.levels));
        }
        if r.prior_strength.is_nan() || r.prior_strength <= 0.0 {
            return fail("recognize.prior_strength", "must be > 0".into());
        }
        if r.burn_in >= r.segment_len {
            return fail("recognize.burn_in", "must be shorter than a segment".into());
        }

        let s = &self.search;
        if s.trials == 0 {
            return fail("search.trials", "must be >= 1".into());
        }
        let (lo, hi) = s.learning_rate;
        if !(lo > 0.0 && lo <= hi) {
            return fail("search.learning_rate", format!("bad range {lo},{hi}"));
        }
        let (lo, hi) = s.hidden_width;
        if !(lo >= 1 && lo <= hi) {
            return fail("search.hidden_width", format!("bad range {lo},{hi}"));
        }
        if let Some((lo, hi)) = s.penalty_strength {
            if !(lo > 0.0 && lo <= hi) {
                return fail("search.penalty_strength", format!("bad range {lo},{hi}"));
            }
        }
        Ok(())
    }

    /// Flat `key = value` rendering that `apply_text` reads back.
    pub fn to_text(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("out = {}", self.out.display()),
            format!("tasks = {}", self.tasks),
            format!("data.dir = {}", self.data.dir.display()),
            format!("data.scale = {}", if self.data.scale == Scale::Desk { "desk" } else { "full" }),
            format!("data.desk_examples = {}", self.data.desk_examples),
            format!("data.valid_fraction = {}", self.data.valid_fraction),
            format!("train.regime = {}", t.regime),
            format!("train.hidden = {}", list(&t.hidden)),
            format!("train.learning_rate = {}", t.learning_rate),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.epochs = {}", t.epochs),
            format!("train.lambda = {}", t.lambda),
            format!("train.l2_coefficient = {}", t.l2_coefficient),
            format!("train.fisher_batches = {}", t.fisher_batches),
            format!(
                "train.fisher_mode = {}",
                if t.fisher_mode == FisherMode::Empirical { "empirical" } else { "model-sampled" }
            ),
            format!("train.merge_penalties = {}", t.merge_penalties),
            format!("train.input_drop = {}", t.input_drop),
            format!("train.hidden_drop = {}", t.hidden_drop),
            format!("train.patience = {}", t.patience),
            format!("train.parallel = {}", t.parallel),
            format!("overlap.squares = {}", list(&self.overlap.squares)),
            format!("overlap.hidden = {}", list(&self.overlap.hidden)),
            format!("overlap.epochs = {}", self.overlap.epochs),
            format!("overlap.checkpoint_a = {}", path(&self.overlap.checkpoint_a)),
            format!("overlap.checkpoint_b = {}", path(&self.overlap.checkpoint_b)),
            format!("perturb.sigmas = {}", list(&self.perturb.sigmas)),
            format!("perturb.ridge = {}", self.perturb.ridge),
            format!("perturb.episodes = {}", self.perturb.episodes),
            format!("perturb.eval_examples = {}", self.perturb.eval_examples),
            format!("perturb.checkpoint = {}", path(&self.perturb.checkpoint)),
        ];
        let r = &self.recognize;
        lines.extend([
            format!("recognize.segment_len = {}", r.segment_len),
            format!("recognize.schedule = {}", list(&r.schedule)),
            format!("recognize.window = {}", r.window),
            format!("recognize.levels = {}", r.levels),
            format!("recognize.downscale = {}", r.downscale),
            format!("recognize.prior_strength = {}", r.prior_strength),
            format!("recognize.stride = {}", r.stride),
            format!("recognize.burn_in = {}", r.burn_in),
            format!("search.trials = {}", self.search.trials),
            format!("search.learning_rate = {},{}", self.search.learning_rate.0, self.search.learning_rate.1),
            format!("search.hidden_width = {},{}", self.search.hidden_width.0, self.search.hidden_width.1),
            format!(
                "search.penalty_strength = {}",
                self.search.penalty_strength.map(|(a, b)| format!("{a},{b}")).unwrap_or_default()
            ),
        ]);
        lines.join("\n") + "\n"
    }
}
