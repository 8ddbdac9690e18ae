//! Online task-context inference.
//!
//! An HMM over task contexts whose emission models are factored
//! Dirichlet-multinomials over quantized pixels. Time is split into windows;
//! every model sees the evidence of a window, then only the model with the
//! highest posterior keeps it. One uniform hold-out model is always present
//! and is promoted to a new context when it wins a window.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, stream};
use crate::tasks::{Examples, Permutation};

const STREAM_RECOGNITION: u32 = 20;

/// Quantized image: one symbol in `0..levels` per pooled pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    symbols: Vec<u8>,
    levels: usize,
}

impl Observation {
    pub fn new(symbols: Vec<u8>, levels: usize) -> Result<Self> {
        if !(2..=256).contains(&levels) {
            return Err(Error::invalid(format!("symbol count {levels} outside 2..=256")));
        }
        if let Some(s) = symbols.iter().find(|&&s| s as usize >= levels) {
            return Err(Error::invalid(format!("symbol {s} >= {levels}")));
        }
        Ok(Observation { symbols, levels })
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Block-average pools a square image by `downscale`, then bins `[0,1]` into
/// `levels` equal bins (top edge closed).
pub fn quantize(image: &[f64], levels: usize, downscale: usize) -> Result<Observation> {
    if levels < 2 {
        return Err(Error::invalid(format!("need at least 2 levels, got {levels}")));
    }
    let side = (image.len() as f64).sqrt().round() as usize;
    if side * side != image.len() {
        return Err(Error::invalid(format!("{} pixels is not a square image", image.len())));
    }
    if downscale == 0 || !side.is_multiple_of(downscale) {
        return Err(Error::invalid(format!(
            "downscale {downscale} does not divide image side {side}"
        )));
    }
    let out_side = side / downscale;
    let area = (downscale * downscale) as f64;
    let mut symbols = Vec::with_capacity(out_side * out_side);
    for by in 0..out_side {
        for bx in 0..out_side {
            let mut sum = 0.0;
            for dy in 0..downscale {
                let row = (by * downscale + dy) * side + bx * downscale;
                sum += image[row..row + downscale].iter().sum::<f64>();
            }
            let v = (sum / area).clamp(0.0, 1.0);
            let bin = ((v * levels as f64) as usize).min(levels - 1);
            symbols.push(bin as u8);
        }
    }
    Observation::new(symbols, levels)
}

/// Factored Dirichlet-multinomial over `pixels` independent symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPixelModel {
    counts: Vec<f64>,
    /// Per-pixel total, identical for every pixel.
    total: f64,
    prior_strength: f64,
    levels: usize,
    snapshot: Vec<f64>,
    snapshot_total: f64,
}

impl DirichletPixelModel {
    pub fn uniform(pixels: usize, levels: usize, prior_strength: f64) -> Result<Self> {
        if prior_strength <= 0.0 || !prior_strength.is_finite() {
            return Err(Error::invalid(format!("prior strength {prior_strength} must be > 0")));
        }
        if levels < 2 || pixels == 0 {
            return Err(Error::invalid("need >= 1 pixel and >= 2 levels"));
        }
        let counts = vec![prior_strength; pixels * levels];
        let total = prior_strength * levels as f64;
        Ok(DirichletPixelModel {
            snapshot: counts.clone(),
            snapshot_total: total,
            counts,
            total,
            prior_strength,
            levels,
        })
    }

    /// Builds a model from explicit per-pixel counts (`pixels × levels`, row-major).
    pub fn from_counts(counts: Vec<f64>, levels: usize, prior_strength: f64) -> Result<Self> {
        let mut m = Self::uniform(counts.len() / levels.max(1), levels, prior_strength)?;
        if counts.len() != m.counts.len() {
            return Err(Error::invalid("count table is not pixels × levels"));
        }
        let total: f64 = counts[..levels].iter().sum();
        for px in counts.chunks(levels) {
            if px.iter().any(|&c| c < prior_strength || !c.is_finite()) {
                return Err(Error::invalid("counts must be finite and >= the prior"));
            }
            if (px.iter().sum::<f64>() - total).abs() > 1e-9 * total {
                return Err(Error::invalid("every pixel must hold the same total count"));
            }
        }
        m.counts = counts;
        m.total = total;
        m.snapshot.clone_from(&m.counts);
        m.snapshot_total = total;
        Ok(m)
    }

    pub fn pixels(&self) -> usize {
        self.counts.len() / self.levels
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn snapshot(&self) -> &[f64] {
        &self.snapshot
    }

    pub fn prior_strength(&self) -> f64 {
        self.prior_strength
    }

    /// Observations absorbed beyond the prior.
    pub fn evidence(&self) -> f64 {
        self.total - self.prior_strength * self.levels as f64
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        if obs.len() != self.pixels() || obs.levels() != self.levels {
            return Err(Error::DimensionMismatch {
                what: "observation pixels × levels",
                expected: self.pixels() * self.levels,
                found: obs.len() * obs.levels(),
            });
        }
        Ok(())
    }

    pub fn predictive_log_prob(&self, obs: &Observation) -> Result<f64> {
        self.check(obs)?;
        Ok(self.log_prob_unchecked(obs))
    }

    fn log_prob_unchecked(&self, obs: &Observation) -> f64 {
        let hits: f64 = obs
            .symbols
            .iter()
            .enumerate()
            .map(|(p, &s)| self.counts[p * self.levels + s as usize].ln())
            .sum();
        hits - obs.len() as f64 * self.total.ln()
    }

    pub fn observe(&mut self, obs: &Observation) -> Result<()> {
        self.check(obs)?;
        self.observe_unchecked(obs);
        Ok(())
    }

    fn observe_unchecked(&mut self, obs: &Observation) {
        for (p, &s) in obs.symbols.iter().enumerate() {
            self.counts[p * self.levels + s as usize] += 1.0;
        }
        self.total += 1.0;
    }

    fn revert(&mut self) {
        self.counts.clone_from(&self.snapshot);
        self.total = self.snapshot_total;
    }

    fn take_snapshot(&mut self) {
        self.snapshot.clone_from(&self.counts);
        self.snapshot_total = self.total;
    }
}

/// Per-step probability of a context switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum SwitchSchedule {
    /// α(t) = 1/t.
    #[default]
    InverseTime,
    Fixed(f64),
}

impl SwitchSchedule {
    pub fn alpha(self, t: u64) -> f64 {
        match self {
            SwitchSchedule::InverseTime => 1.0 / t.max(1) as f64,
            SwitchSchedule::Fixed(a) => a,
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Posterior over contexts plus one emission model per context. The last
/// model is always the hold-out.
#[derive(Debug, Clone)]
pub struct ContextBelief {
    log_weights: Vec<f64>,
    models: Vec<DirichletPixelModel>,
    t: u64,
    switch: SwitchSchedule,
    pixels: usize,
    levels: usize,
    prior_strength: f64,
}

impl ContextBelief {
    pub fn new(pixels: usize, levels: usize, prior_strength: f64, switch: SwitchSchedule) -> Result<Self> {
        if let SwitchSchedule::Fixed(a) = switch {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("switch rate {a} outside [0,1]")));
            }
        }
        Ok(ContextBelief {
            log_weights: vec![0.0],
            models: vec![DirichletPixelModel::uniform(pixels, levels, prior_strength)?],
            t: 1,
            switch,
            pixels,
            levels,
            prior_strength,
        })
    }

    /// Belief over explicit models; a fresh hold-out is appended.
    pub fn with_models(
        models: Vec<DirichletPixelModel>,
        log_weights: Vec<f64>,
        switch: SwitchSchedule,
        t: u64,
    ) -> Result<Self> {
        let first = models.first().ok_or(Error::MissingContext)?;
        let (pixels, levels, prior) = (first.pixels(), first.levels(), first.prior_strength());
        if models.iter().any(|m| m.pixels() != pixels || m.levels() != levels) {
            return Err(Error::invalid("models disagree on pixels or levels"));
        }
        let mut b = ContextBelief::new(pixels, levels, prior, switch)?;
        let holdout = b.models.pop().expect("hold-out");
        if log_weights.len() != models.len() {
            return Err(Error::DimensionMismatch {
                what: "log weights",
                expected: models.len(),
                found: log_weights.len(),
            });
        }
        b.models = models;
        b.models.push(holdout);
        b.log_weights = log_weights;
        b.log_weights.push(f64::NEG_INFINITY);
        b.t = t.max(1);
        b.normalize()?;
        Ok(b)
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn models(&self) -> &[DirichletPixelModel] {
        &self.models
    }

    /// Named contexts, excluding the hold-out.
    pub fn context_count(&self) -> usize {
        self.models.len() - 1
    }

    pub fn holdout_index(&self) -> usize {
        self.models.len() - 1
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn entropy(&self) -> f64 {
        -self
            .log_weights
            .iter()
            .filter(|w| w.is_finite())
            .map(|&w| w.exp() * w)
            .sum::<f64>()
    }

    fn normalize(&mut self) -> Result<()> {
        let z = log_sum_exp(self.log_weights.iter().copied());
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("context posterior at t={} has no mass", self.t)));
        }
        for w in &mut self.log_weights {
            *w -= z;
        }
        Ok(())
    }

    fn transition(&mut self, alpha: f64) {
        let n = self.log_weights.len();
        if self.t <= 1 {
            self.log_weights.fill(-(n as f64).ln());
            return;
        }
        if n == 1 {
            return;
        }
        let stay = (1.0 - alpha).ln();
        let leave = (alpha / (n - 1) as f64).ln();
        let prev = self.log_weights.clone();
        for (c, w) in self.log_weights.iter_mut().enumerate() {
            *w = log_sum_exp(
                prev.iter()
                    .enumerate()
                    .map(|(k, &p)| p + if k == c { stay } else { leave }),
            );
        }
    }

    /// One filtering step with the schedule's α.
    pub fn belief_step(&mut self, obs: &Observation) -> Result<()> {
        let alpha = self.switch.alpha(self.t);
        self.belief_step_with_alpha(obs, alpha)
    }

    /// Filtering step with an explicit switch rate. Counts are not touched.
    pub fn belief_step_with_alpha(&mut self, obs: &Observation, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("switch rate {alpha} outside [0,1]")));
        }
        self.models[0].check(obs)?;
        let likelihoods: Vec<f64> = self.models.iter().map(|m| m.log_prob_unchecked(obs)).collect();
        self.step_with_likelihoods(&likelihoods, alpha)
    }

    /// Transition then Bayes update with the given per-context log-likelihoods.
    pub fn step_with_likelihoods(&mut self, log_likelihoods: &[f64], alpha: f64) -> Result<()> {
        if log_likelihoods.len() != self.log_weights.len() {
            return Err(Error::DimensionMismatch {
                what: "per-context likelihoods",
                expected: self.log_weights.len(),
                found: log_likelihoods.len(),
            });
        }
        self.transition(alpha);
        for (w, l) in self.log_weights.iter_mut().zip(log_likelihoods) {
            *w += l;
        }
        self.normalize()?;
        self.t += 1;
        Ok(())
    }

    /// Filtering step followed by adding `obs` to every model's counts.
    pub fn observe(&mut self, obs: &Observation) -> Result<()> {
        self.belief_step(obs)?;
        for m in &mut self.models {
            m.observe_unchecked(obs);
        }
        Ok(())
    }

    /// Ends a window: the most probable model keeps its window counts, every
    /// other model reverts to its snapshot. Promotes the hold-out if it won.
    /// Returns the selected context.
    pub fn window_commit(&mut self) -> Result<usize> {
        let selected = self.infer_context();
        for (i, m) in self.models.iter_mut().enumerate() {
            if i != selected {
                m.revert();
            }
            m.take_snapshot();
        }
        if selected == self.holdout_index() {
            self.models.push(DirichletPixelModel::uniform(
                self.pixels,
                self.levels,
                self.prior_strength,
            )?);
            self.log_weights.push(f64::NEG_INFINITY);
        }
        self.normalize()?;
        Ok(selected)
    }

    /// Argmax of the posterior; ties go to the lowest id.
    pub fn infer_context(&self) -> usize {
        argmax_low(&self.log_weights)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Defaults: 3 levels, 2× pooling, window 4, unit prior, stride 1.
///
/// Use `downscale: 1` for pixel-permuted streams; pooling a permuted image
/// averages unrelated pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub levels: usize,
    pub downscale: usize,
    pub window: usize,
    pub prior_strength: f64,
    /// Use every `stride`-th observation.
    pub stride: usize,
    pub switch: SwitchSchedule,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            levels: 3,
            downscale: 2,
            window: 4,
            prior_strength: 1.0,
            stride: 1,
            switch: SwitchSchedule::InverseTime,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::invalid("window and stride must be >= 1"));
        }
        if !(2..=256).contains(&self.levels) {
            return Err(Error::invalid(format!("levels {} outside 2..=256", self.levels)));
        }
        if self.downscale == 0 {
            return Err(Error::invalid("downscale must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub true_context: Option<usize>,
    pub inferred_context: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionTrace {
    pub points: Vec<TracePoint>,
    /// Named contexts after each window.
    pub contexts_per_window: Vec<usize>,
    pub spawned_contexts: usize,
}

impl RecognitionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,true_context,inferred_context,entropy\n");
        for p in &self.points {
            let truth = p.true_context.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", p.t, truth, p.inferred_context, p.entropy));
        }
        out
    }
}

/// Runs a belief over a labelled or unlabelled stream of raw images.
pub struct Recognizer {
    cfg: RecognizerConfig,
    belief: Option<ContextBelief>,
    pending: usize,
}

impl Recognizer {
    pub fn new(cfg: RecognizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Recognizer {
            cfg,
            belief: None,
            pending: 0,
        })
    }

    pub fn belief(&self) -> Option<&ContextBelief> {
        self.belief.as_ref()
    }

    /// Feeds one quantized observation; returns the per-step inferred context
    /// and whether a window was committed.
    pub fn push(&mut self, obs: &Observation) -> Result<(usize, Option<usize>)> {
        let belief = match &mut self.belief {
            Some(b) => b,
            None => self.belief.insert(ContextBelief::new(
                obs.len(),
                obs.levels(),
                self.cfg.prior_strength,
                self.cfg.switch,
            )?),
        };
        belief.observe(obs)?;
        let inferred = belief.infer_context();
        self.pending += 1;
        let committed = if self.pending == self.cfg.window {
            self.pending = 0;
            Some(belief.window_commit()?)
        } else {
            None
        };
        Ok((inferred, committed))
    }

    /// Quantizes and processes `(image, true context)` pairs, skipping by stride.
    pub fn run<'a, I>(&mut self, stream: I) -> Result<RecognitionTrace>
    where
        I: IntoIterator<Item = (&'a [f64], Option<usize>)>,
    {
        let mut points = Vec::new();
        let mut contexts_per_window = Vec::new();
        for (t, (image, truth)) in stream.into_iter().enumerate() {
            if t % self.cfg.stride != 0 {
                continue;
            }
            let obs = quantize(image, self.cfg.levels, self.cfg.downscale)?;
            let (inferred, committed) = self.push(&obs)?;
            let belief = self.belief.as_ref().expect("initialized by push");
            if committed.is_some() {
                contexts_per_window.push(belief.context_count());
            }
            points.push(TracePoint {
                t,
                true_context: truth,
                inferred_context: inferred,
                entropy: belief.entropy(),
            });
        }
        Ok(RecognitionTrace {
            points,
            spawned_contexts: self.belief.as_ref().map_or(0, |b| b.context_count()),
            contexts_per_window,
        })
    }
}

/// Raw images of a task-switching stream, one row per step.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub images: Vec<Vec<f64>>,
    pub tasks: Vec<usize>,
}

impl SyntheticStream {
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Option<usize>)> {
        self.images
            .iter()
            .zip(&self.tasks)
            .map(|(img, &t)| (img.as_slice(), Some(t)))
    }
}

/// Draws `segment_len` random examples per entry of `schedule`, permuted by
/// `permutations[task]`.
pub fn synthetic_stream(
    base: &dyn Examples,
    permutations: &[Permutation],
    schedule: &[usize],
    segment_len: usize,
    seed: u64,
) -> Result<SyntheticStream> {
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(p) = permutations.iter().find(|p| p.len() != base.width()) {
        return Err(Error::DimensionMismatch {
            what: "permutation length",
            expected: base.width(),
            found: p.len(),
        });
    }
    if let Some(&bad) = schedule.iter().find(|&&t| t >= permutations.len()) {
        return Err(Error::UnknownContext {
            context: bad,
            available: permutations.len(),
        });
    }
    let mut rng = seeded(seed, stream(STREAM_RECOGNITION, 0));
    let mut images = Vec::with_capacity(schedule.len() * segment_len);
    let mut tasks = Vec::with_capacity(images.capacity());
    let mut raw = vec![0.0; base.width()];
    for &task in schedule {
        for _ in 0..segment_len {
            base.fill_row(rng.random_range(0..base.len()), &mut raw);
            let mut img = vec![0.0; raw.len()];
            permutations[task].apply_row(&raw, &mut img);
            images.push(img);
            tasks.push(task);
        }
    }
    Ok(SyntheticStream { images, tasks })
}

/// Fraction of steps whose inferred label matches the truth under the best
/// one-to-one relabeling of inferred ids onto true ids.
pub fn relabeled_accuracy(truth: &[usize], inferred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let n_true = truth.iter().max().map_or(0, |m| m + 1);
    let n_inf = inferred.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; n_inf]; n_true];
    for (&a, &b) in truth.iter().zip(inferred) {
        table[a][b] += 1;
    }
    fn best(table: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == table.len() {
            return 0;
        }
        let mut top = best(table, row + 1, used);
        for j in 0..used.len() {
            if !used[j] && table[row][j] > 0 {
                used[j] = true;
                top = top.max(table[row][j] + best(table, row + 1, used));
                used[j] = false;
            }
        }
        top
    }
    best(&table, 0, &mut vec![false; n_inf]) as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(symbols: &[u8]) -> Observation {
        Observation::new(symbols.to_vec(), 2).unwrap()
    }

    #[test]
    fn quantize_thresholds_at_half() {
        let o = quantize(&[0.7, 0.3, 0.5, 1.0], 2, 1).unwrap();
        assert_eq!(o.symbols(), &[1, 0, 1, 1]);
    }

    #[test]
    fn quantize_pools_blocks() {
        let img: Vec<f64> = (0..784).map(|i| (i % 2) as f64).collect();
        let o = quantize(&img, 2, 2).unwrap();
        assert_eq!(o.len(), 196);
        assert!(o.symbols().iter().all(|&s| s == 1));
        assert!(quantize(&img, 2, 3).is_err());
        assert!(quantize(&img[..783], 2, 1).is_err());
        assert_eq!(quantize(&img, 5, 1).unwrap().len(), 784);
    }

    #[test]
    fn uniform_model_predicts_half_per_pixel() {
        let m = DirichletPixelModel::uniform(10, 2, 1.0).unwrap();
        let lp = m.predictive_log_prob(&obs(&[0, 1, 0, 1, 1, 0, 0, 0, 1, 1])).unwrap();
        assert!((lp - 10.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_ratio() {
        let m = DirichletPixelModel::from_counts(vec![3.0, 1.0], 2, 1.0).unwrap();
        assert!((m.predictive_log_prob(&obs(&[0])).unwrap() - (0.75f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn repeated_observation_gets_more_likely() {
        let mut m = DirichletPixelModel::uniform(5, 2, 1.0).unwrap();
        let o = obs(&[1, 0, 1, 1, 0]);
        let mut last = m.predictive_log_prob(&o).unwrap();
        for _ in 0..20 {
            m.observe(&o).unwrap();
            let now = m.predictive_log_prob(&o).unwrap();
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn zero_switch_with_equal_evidence_keeps_belief() {
        let models = vec![
            DirichletPixelModel::uniform(3, 2, 1.0).unwrap(),
            DirichletPixelModel::uniform(3, 2, 1.0).unwrap(),
        ];
        let mut b = ContextBelief::with_models(
            models,
            vec![0.3f64.ln(), 0.7f64.ln()],
            SwitchSchedule::Fixed(0.0),
            5,
        )
        .unwrap();
        let before = b.weights();
        b.belief_step(&obs(&[0, 1, 1])).unwrap();
        for (x, y) in before.iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_context_bayes_update() {
        let models = vec![
            DirichletPixelModel::uniform(1, 2, 1.0).unwrap(),
            DirichletPixelModel::uniform(1, 2, 1.0).unwrap(),
        ];
        let mut b = ContextBelief::with_models(
            models,
            vec![0.5f64.ln(), 0.5f64.ln()],
            SwitchSchedule::Fixed(0.0),
            5,
        )
        .unwrap();
        b.step_with_likelihoods(&[0.9f64.ln(), 0.1f64.ln(), f64::NEG_INFINITY], 0.0)
            .unwrap();
        let w = b.weights();
        assert!((w[0] - 0.9).abs() < 1e-12 && (w[1] - 0.1).abs() < 1e-12 && w[2] == 0.0);
    }

    #[test]
    fn inverse_time_switch_rate_vanishes() {
        let s = SwitchSchedule::InverseTime;
        assert_eq!(s.alpha(1), 1.0);
        assert_eq!(s.alpha(4), 0.25);
        assert!(s.alpha(1_000_000) < 1e-5);
    }

    #[test]
    fn first_window_spawns_one_context() {
        let mut b = ContextBelief::new(4, 2, 1.0, SwitchSchedule::InverseTime).unwrap();
        for _ in 0..4 {
            b.observe(&obs(&[1, 1, 0, 0])).unwrap();
        }
        assert_eq!(b.window_commit().unwrap(), 0);
        assert_eq!(b.context_count(), 1);
        assert_eq!(b.models().len(), 2);
        assert_eq!(b.models()[1].evidence(), 0.0);
        assert_eq!(b.models()[0].evidence(), 4.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_low(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax_low(&[0.5, 0.5]), 0);
    }

    #[test]
    fn relabeling_finds_best_matching() {
        assert_eq!(relabeled_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(relabeled_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 0]), 0.5);
        assert_eq!(relabeled_accuracy(&[0, 1, 2], &[2, 0, 1]), 1.0);
    }
}
