//! Fully-connected ReLU classifiers over a flat parameter vector.
//!
//! Every layer computes `y = (W x + b + b_c) * g_c`, where the per-context
//! bias `b_c` and gain `g_c` exist only for task-conditioned networks. Hidden
//! layers apply ReLU to `y`; the last layer emits logits.
//!
//! Parameters for layer `l` are laid out contiguously as
//! `W (out x in, row-major) | b | b_0 g_0 | b_1 g_1 | ...`, so a layer's whole
//! footprint is one range of the flat vector (see [`LayerBlocks::span`]).

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{self, Exec};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    RectifiedLinear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths..., output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Adds a bias and a gain vector per context to every layer.
    pub task_conditioned: bool,
    /// Number of contexts; ignored unless `task_conditioned`.
    pub contexts: usize,
}

impl NetworkSpec {
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut layer_widths = Vec::with_capacity(hidden.len() + 2);
        layer_widths.push(input);
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(output);
        NetworkSpec {
            layer_widths,
            activation: Activation::RectifiedLinear,
            task_conditioned: false,
            contexts: 0,
        }
    }

    pub fn with_task_contexts(mut self, contexts: usize) -> Self {
        self.task_conditioned = true;
        self.contexts = contexts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output widths, got {:?}",
                self.layer_widths
            )));
        }
        if let Some(pos) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("layer {pos} has zero width")));
        }
        if self.task_conditioned && self.contexts == 0 {
            return Err(Error::InvalidSpec(
                "task-conditioned network needs at least one context".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn n_contexts(&self) -> usize {
        if self.task_conditioned {
            self.contexts
        } else {
            0
        }
    }

    pub fn block_map(&self) -> BlockMap {
        let mut layers = Vec::with_capacity(self.depth());
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        for pair in self.layer_widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = take(fan_in * fan_out);
            let bias = take(fan_out);
            let mut task_bias = Vec::new();
            let mut task_gain = Vec::new();
            for _ in 0..self.n_contexts() {
                task_bias.push(take(fan_out));
                task_gain.push(take(fan_out));
            }
            layers.push(LayerBlocks {
                fan_in,
                fan_out,
                weights,
                bias,
                task_bias,
                task_gain,
            });
        }
        BlockMap { layers, len: at }
    }

    pub fn param_count(&self) -> usize {
        self.block_map().len()
    }
}

/// Index ranges of one layer's parameters inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerBlocks {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub task_bias: Vec<Range<usize>>,
    pub task_gain: Vec<Range<usize>>,
}

impl LayerBlocks {
    /// Contiguous range covering every parameter of the layer.
    pub fn span(&self) -> Range<usize> {
        let end = self
            .task_gain
            .last()
            .map(|r| r.end)
            .unwrap_or(self.bias.end);
        self.weights.start..end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMap {
    layers: Vec<LayerBlocks>,
    len: usize,
}

impl BlockMap {
    pub fn layers(&self) -> &[LayerBlocks] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// All trainable parameters of a network, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: BlockMap,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, blocks: BlockMap) -> Result<Self> {
        if values.len() != blocks.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: blocks.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(ParamVector { values, blocks })
    }

    pub fn zeros(blocks: BlockMap) -> Self {
        ParamVector {
            values: vec![0.0; blocks.len()],
            blocks,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn blocks(&self) -> &BlockMap {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Weight matrix of `layer`, shaped `(fan_out, fan_in)`.
    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let b = &self.blocks.layers[layer];
        ArrayView2::from_shape((b.fan_out, b.fan_in), &self.values[b.weights.clone()])
            .expect("block map matches values")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let b = &self.blocks.layers[layer];
        ArrayView1::from(&self.values[b.bias.clone()])
    }

    pub fn task_bias(&self, layer: usize, context: usize) -> ArrayView1<'_, f64> {
        let b = &self.blocks.layers[layer];
        ArrayView1::from(&self.values[b.task_bias[context].clone()])
    }

    pub fn task_gain(&self, layer: usize, context: usize) -> ArrayView1<'_, f64> {
        let b = &self.blocks.layers[layer];
        ArrayView1::from(&self.values[b.task_gain[context].clone()])
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.values.len(), other.len());
        for (v, o) in self.values.iter_mut().zip(other) {
            *v += scale * o;
        }
    }

    /// Euclidean distance to another vector of the same layout.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Inputs in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "batch labels",
                expected: inputs.nrows(),
                found: labels.len(),
            });
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Drop probabilities for the input units and for every hidden unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub input_drop: f64,
    pub hidden_drop: f64,
}

impl DropoutConfig {
    pub const NONE: DropoutConfig = DropoutConfig {
        input_drop: 0.0,
        hidden_drop: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("input", self.input_drop), ("hidden", self.hidden_drop)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name} dropout probability {p} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

impl Default for DropoutConfig {
    /// 0.2 on the input, 0.5 on hidden layers.
    fn default() -> Self {
        DropoutConfig {
            input_drop: 0.2,
            hidden_drop: 0.5,
        }
    }
}

/// Multiplicative masks, one row per example. Entries are `0` for dropped
/// units and `1 / keep` for kept units (inverted dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub input: Array2<f64>,
    pub hidden: Vec<Array2<f64>>,
}

impl DropoutMasks {
    /// Fraction of input units kept.
    pub fn input_keep_fraction(&self) -> f64 {
        let kept = self.input.iter().filter(|&&m| m != 0.0).count();
        kept as f64 / self.input.len().max(1) as f64
    }
}

/// Per-call options shared by [`forward`] and [`loss_and_grad`].
#[derive(Clone, Copy, Default)]
pub struct PassOptions<'a> {
    pub context: Option<usize>,
    pub masks: Option<&'a DropoutMasks>,
    pub penalty: Option<&'a dyn Penalty>,
    pub exec: Exec,
}

impl<'a> PassOptions<'a> {
    pub fn context(mut self, context: Option<usize>) -> Self {
        self.context = context;
        self
    }

    pub fn masks(mut self, masks: &'a DropoutMasks) -> Self {
        self.masks = Some(masks);
        self
    }

    pub fn penalty(mut self, penalty: &'a dyn Penalty) -> Self {
        self.penalty = Some(penalty);
        self
    }

    pub fn exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

/// A differentiable regularizer over the flat parameter vector.
pub trait Penalty: Sync {
    /// Returns the penalty value and adds its gradient into `grad`.
    fn value_and_grad_into(&self, params: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Uniform `[-s, s]` weights with `s = 1/sqrt(fan_in)`; zero biases, unit gains.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let blocks = spec.block_map();
    let mut values = vec![0.0; blocks.len()];
    let mut rng = seeded(seed, 0);
    for layer in blocks.layers() {
        let s = 1.0 / (layer.fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
        for v in &mut values[layer.weights.clone()] {
            *v = dist.sample(&mut rng);
        }
        for gain in &layer.task_gain {
            values[gain.clone()].fill(1.0);
        }
    }
    Ok(ParamVector { values, blocks })
}

/// Samples inverted-dropout masks for `rows` examples.
pub fn sample_dropout_masks(
    spec: &NetworkSpec,
    cfg: &DropoutConfig,
    rows: usize,
    seed: u64,
) -> Result<DropoutMasks> {
    cfg.validate()?;
    let mut rng = seeded(seed, 0);
    let mut draw = |width: usize, drop: f64| -> Array2<f64> {
        if drop == 0.0 {
            return Array2::ones((rows, width));
        }
        let keep = 1.0 - drop;
        let scale = 1.0 / keep;
        Array2::from_shape_fn((rows, width), |_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
    };
    let input = draw(spec.input_width(), cfg.input_drop);
    let hidden = spec.layer_widths[1..spec.layer_widths.len() - 1]
        .iter()
        .map(|&w| draw(w, cfg.hidden_drop))
        .collect();
    Ok(DropoutMasks { input, hidden })
}

fn check_call(
    spec: &NetworkSpec,
    params: &ParamVector,
    inputs: &ArrayView2<'_, f64>,
    opts: &PassOptions<'_>,
) -> Result<Option<usize>> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            what: "parameter vector",
            expected: spec.param_count(),
            found: params.len(),
        });
    }
    if inputs.ncols() != spec.input_width() {
        return Err(Error::DimensionMismatch {
            what: "input width",
            expected: spec.input_width(),
            found: inputs.ncols(),
        });
    }
    if let Some(m) = opts.masks {
        if m.input.dim() != inputs.dim() {
            return Err(Error::DimensionMismatch {
                what: "dropout mask rows",
                expected: inputs.nrows(),
                found: m.input.nrows(),
            });
        }
        if m.hidden.len() != spec.depth() - 1 {
            return Err(Error::DimensionMismatch {
                what: "hidden dropout masks",
                expected: spec.depth() - 1,
                found: m.hidden.len(),
            });
        }
    }
    if spec.task_conditioned {
        let c = opts.context.ok_or(Error::MissingContext)?;
        if c >= spec.contexts {
            return Err(Error::UnknownContext {
                context: c,
                available: spec.contexts,
            });
        }
        Ok(Some(c))
    } else {
        Ok(None)
    }
}

/// Cached activations of one layer during a forward pass.
pub(crate) struct LayerTrace {
    /// Layer input after dropout.
    input: Array2<f64>,
    /// `W x + b + b_c`, kept only when a gain follows.
    pre_gain: Option<Array2<f64>>,
    /// Layer output before the nonlinearity.
    output: Array2<f64>,
}

pub(crate) struct Trace {
    layers: Vec<LayerTrace>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &Array2<f64> {
        &self.layers.last().expect("non-empty").output
    }
}

/// Row slice of a mask set.
fn mask_rows<'a>(m: &'a Array2<f64>, rows: &Range<usize>) -> ArrayView2<'a, f64> {
    m.slice(ndarray::s![rows.start..rows.end, ..])
}

/// One layer step: returns `(pre_gain, output)` where `output` is before ReLU.
fn layer_step(
    params: &ParamVector,
    l: usize,
    act: &Array2<f64>,
    context: Option<usize>,
) -> (Option<Array2<f64>>, Array2<f64>) {
    let mut z = act.dot(&params.weights(l).t());
    z += &params.bias(l);
    match context {
        Some(c) => {
            z += &params.task_bias(l, c);
            let y = &z * &params.task_gain(l, c);
            (Some(z), y)
        }
        None => (None, z),
    }
}

fn hidden_activation(
    y: &Array2<f64>,
    l: usize,
    masks: &Option<(&DropoutMasks, Range<usize>)>,
) -> Array2<f64> {
    let mut h = y.mapv(|v| v.max(0.0));
    if let Some((m, rows)) = masks {
        h *= &mask_rows(&m.hidden[l], rows);
    }
    h
}

fn masked_input(
    inputs: ArrayView2<'_, f64>,
    masks: &Option<(&DropoutMasks, Range<usize>)>,
) -> Array2<f64> {
    match masks {
        Some((m, rows)) => &inputs * &mask_rows(&m.input, rows),
        None => inputs.to_owned(),
    }
}

fn forward_rows(
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    context: Option<usize>,
    masks: Option<(&DropoutMasks, Range<usize>)>,
) -> Array2<f64> {
    let depth = params.blocks.layers.len();
    let mut act = masked_input(inputs, &masks);
    for l in 0..depth {
        let (_, y) = layer_step(params, l, &act, context);
        if l + 1 == depth {
            return y;
        }
        act = hidden_activation(&y, l, &masks);
    }
    unreachable!("network has at least one layer")
}

pub(crate) fn forward_trace(
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    context: Option<usize>,
    masks: Option<(&DropoutMasks, Range<usize>)>,
) -> Trace {
    let depth = params.blocks.layers.len();
    let mut act = masked_input(inputs, &masks);
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let (pre_gain, y) = layer_step(params, l, &act, context);
        let next = (l + 1 < depth).then(|| hidden_activation(&y, l, &masks));
        layers.push(LayerTrace {
            input: act,
            pre_gain,
            output: y,
        });
        match next {
            Some(h) => act = h,
            None => break,
        }
    }
    Trace { layers }
}

/// Pre-softmax logits, one row per example.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    opts: &PassOptions<'_>,
) -> Result<Array2<f64>> {
    let context = check_call(spec, params, &inputs, opts)?;
    let rows = 0..inputs.nrows();
    Ok(forward_rows(params, inputs, context, opts.masks.map(|m| (m, rows))))
}

/// Unchecked forward pass for callers that validated the layout already.
pub(crate) fn logits_unchecked(
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    context: Option<usize>,
) -> Array2<f64> {
    forward_rows(params, inputs, context, None)
}

/// How [`backward`] folds per-example gradients into the output buffer.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Accumulate {
    /// Sum of per-example gradients.
    Sum,
    /// Sum of squared per-example gradients (diagonal Fisher numerator).
    SumOfSquares,
}

/// Back-propagates `dlogits` (one row per example) and adds the result into `out`.
///
/// Every parameter's per-example gradient factors into a product of that
/// example's upstream delta and downstream activation, so the squared mode can
/// be computed with the same matrix products applied to squared factors.
pub(crate) fn backward(
    params: &ParamVector,
    trace: &Trace,
    dlogits: Array2<f64>,
    context: Option<usize>,
    masks: Option<(&DropoutMasks, Range<usize>)>,
    mode: Accumulate,
    out: &mut [f64],
) {
    let blocks = &params.blocks;
    let sq = |a: &Array2<f64>| a.mapv(|v| v * v);
    let mut dy = dlogits;
    for l in (0..blocks.layers.len()).rev() {
        let lb = &blocks.layers[l];
        let lt = &trace.layers[l];
        let dz = match context {
            Some(c) => {
                let z = lt.pre_gain.as_ref().expect("conditioned trace");
                let dg = &dy * z;
                let gain_out = &mut out[lb.task_gain[c].clone()];
                add_column_sums(gain_out, &dg, mode);
                &dy * &params.task_gain(l, c)
            }
            None => dy,
        };
        add_column_sums(&mut out[lb.bias.clone()], &dz, mode);
        if let Some(c) = context {
            add_column_sums(&mut out[lb.task_bias[c].clone()], &dz, mode);
        }
        {
            let mut gw = ArrayViewMut2::from_shape((lb.fan_out, lb.fan_in), &mut out[lb.weights.clone()])
                .expect("block map");
            match mode {
                Accumulate::Sum => general_mat_mul(1.0, &dz.t(), &lt.input, 1.0, &mut gw),
                Accumulate::SumOfSquares => {
                    general_mat_mul(1.0, &sq(&dz).t(), &sq(&lt.input), 1.0, &mut gw)
                }
            }
        }
        if l == 0 {
            break;
        }
        let mut da = dz.dot(&params.weights(l));
        let below = &trace.layers[l - 1].output;
        match &masks {
            Some((m, rows)) => {
                Zip::from(&mut da)
                    .and(below)
                    .and(&mask_rows(&m.hidden[l - 1], rows))
                    .for_each(|d, &y, &mk| *d = if y > 0.0 { *d * mk } else { 0.0 });
            }
            None => {
                Zip::from(&mut da)
                    .and(below)
                    .for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
        }
        dy = da;
    }
}

fn add_column_sums(out: &mut [f64], delta: &Array2<f64>, mode: Accumulate) {
    let mut out = ArrayViewMut1::from(out);
    match mode {
        Accumulate::Sum => out += &delta.sum_axis(Axis(0)),
        Accumulate::SumOfSquares => out += &delta.mapv(|v| v * v).sum_axis(Axis(0)),
    }
}

/// Row-wise log-softmax statistics: returns `(sum of -log p(label), probs)`.
pub(crate) fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> (f64, Array2<f64>) {
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        row.mapv_inplace(|v| (v - lse).exp());
    }
    (loss, probs)
}

fn chunk_ranges(rows: usize, chunk: usize) -> Vec<Range<usize>> {
    (0..rows)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(rows))
        .collect()
}

/// Mean softmax cross-entropy over the batch plus the optional penalty, and
/// its exact gradient with respect to every parameter.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &ParamVector,
    batch: &Batch,
    opts: &PassOptions<'_>,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs = batch.inputs.view();
    let context = check_call(spec, params, &inputs, opts)?;
    if batch.inputs.nrows() != batch.labels.len() {
        return Err(Error::DimensionMismatch {
            what: "batch labels",
            expected: batch.inputs.nrows(),
            found: batch.labels.len(),
        });
    }
    let classes = spec.output_width();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let n = batch.len();
    let chunks = chunk_ranges(n, opts.exec.chunk_rows(n));
    let partial = |rows: &Range<usize>| -> (f64, Vec<f64>) {
        let x = inputs.slice(ndarray::s![rows.start..rows.end, ..]);
        let masks = opts.masks.map(|m| (m, rows.clone()));
        let trace = forward_trace(params, x, context, masks.clone());
        let (loss, mut d) = softmax_cross_entropy(trace.logits(), &batch.labels[rows.clone()]);
        for (mut row, &y) in d.rows_mut().into_iter().zip(&batch.labels[rows.clone()]) {
            row[y] -= 1.0;
        }
        let mut g = vec![0.0; params.len()];
        backward(params, &trace, d, context, masks, Accumulate::Sum, &mut g);
        (loss, g)
    };
    let parts = if chunks.len() == 1 {
        vec![partial(&chunks[0])]
    } else {
        parallel::map_ordered(&chunks, partial)
    };

    let mut parts = parts.into_iter();
    let (mut loss, mut grad) = parts.next().expect("at least one chunk");
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    if let Some(p) = opts.penalty {
        loss += p.value_and_grad_into(params.values(), &mut grad)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss = {loss}")));
    }
    Ok((
        loss,
        ParamVector {
            values: grad,
            blocks: params.blocks.clone(),
        },
    ))
}

/// Argmax class per row, ties toward the lower index.
pub fn predict(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn biases_start_at_zero() {
        let spec = NetworkSpec::mlp(4, &[], 3);
        let p = init_params(&spec, 7).unwrap();
        assert!(p.bias(0).iter().all(|&b| b == 0.0));
        assert_eq!(p.bias(0).len(), 3);
    }

    #[test]
    fn gains_start_at_one() {
        let spec = NetworkSpec::mlp(5, &[4], 3).with_task_contexts(3);
        let p = init_params(&spec, 11).unwrap();
        for l in 0..2 {
            for c in 0..3 {
                assert!(p.task_gain(l, c).iter().all(|&g| g == 1.0));
                assert!(p.task_bias(l, c).iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = NetworkSpec::mlp(9, &[6], 2);
        let a = init_params(&spec, 3).unwrap();
        let b = init_params(&spec, 3).unwrap();
        assert_eq!(a, b);
        let s = 1.0 / 3.0;
        assert!(a.weights(0).iter().all(|w| w.abs() <= s));
        assert_ne!(a, init_params(&spec, 4).unwrap());
    }

    #[test]
    fn block_map_is_a_partition() {
        let spec = NetworkSpec::mlp(3, &[4, 2], 2).with_task_contexts(2);
        let map = spec.block_map();
        let mut covered = vec![0u8; map.len()];
        for layer in map.layers() {
            let mut ranges = vec![layer.weights.clone(), layer.bias.clone()];
            ranges.extend(layer.task_bias.iter().cloned());
            ranges.extend(layer.task_gain.iter().cloned());
            for r in ranges {
                for i in r {
                    covered[i] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(map.layers()[1].span().end, map.layers()[2].span().start);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = NetworkSpec::mlp(3, &[5], 4).with_task_contexts(2);
        let mut p = init_params(&spec, 1).unwrap();
        for layer in spec.block_map().layers() {
            p.values_mut()[layer.weights.clone()].fill(0.0);
        }
        let x = array![[0.3, 0.9, 0.1], [1.0, 0.0, 0.5]];
        let out = forward(&spec, &p, x.view(), &PassOptions::default().context(Some(1))).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gain_and_bias_equation() {
        let spec = NetworkSpec::mlp(1, &[], 1).with_task_contexts(1);
        let blocks = spec.block_map();
        // W, b, b_0, g_0
        let p = ParamVector::new(vec![2.0, 0.0, 1.0, 3.0], blocks).unwrap();
        let out = forward(&spec, &p, array![[1.0]].view(), &PassOptions::default().context(Some(0)))
            .unwrap();
        assert_eq!(out[[0, 0]], 9.0);
    }

    #[test]
    fn context_errors() {
        let spec = NetworkSpec::mlp(1, &[], 1).with_task_contexts(2);
        let p = init_params(&spec, 0).unwrap();
        let x = array![[1.0]];
        assert!(matches!(
            forward(&spec, &p, x.view(), &PassOptions::default()),
            Err(Error::MissingContext)
        ));
        assert!(matches!(
            forward(&spec, &p, x.view(), &PassOptions::default().context(Some(2))),
            Err(Error::UnknownContext { .. })
        ));
        assert!(matches!(
            forward(&spec, &p, array![[1.0, 2.0]].view(), &PassOptions::default().context(Some(0))),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uniform_logits_cost_ln_classes() {
        let spec = NetworkSpec::mlp(2, &[], 2);
        let p = ParamVector::zeros(spec.block_map());
        let batch = Batch::new(array![[0.2, 0.4], [0.9, 0.1]], vec![0, 1]).unwrap();
        let (loss, _) = loss_and_grad(&spec, &p, &batch, &PassOptions::default()).unwrap();
        assert_relative_eq!(loss, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = array![[1000.0, 0.0, -1000.0]];
        let (loss, p) = softmax_cross_entropy(&logits, &[0]);
        assert_eq!(loss, 0.0);
        assert_relative_eq!(p.sum(), 1.0);
    }

    #[test]
    fn zero_drop_keeps_everything() {
        let spec = NetworkSpec::mlp(20, &[10, 10], 3);
        let m = sample_dropout_masks(&spec, &DropoutConfig::NONE, 4, 9).unwrap();
        assert!(m.input.iter().all(|&v| v == 1.0));
        assert!(m.hidden.iter().all(|h| h.iter().all(|&v| v == 1.0)));
        assert_eq!(m.hidden.len(), 2);
    }

    #[test]
    fn dropout_keep_fraction_concentrates() {
        let spec = NetworkSpec::mlp(100_000, &[8], 2);
        let cfg = DropoutConfig::default();
        let m = sample_dropout_masks(&spec, &cfg, 1, 2024).unwrap();
        let kept = m.input_keep_fraction();
        assert!((0.795..=0.805).contains(&kept), "kept {kept}");
        assert_eq!(m, sample_dropout_masks(&spec, &cfg, 1, 2024).unwrap());
        assert!(m.input.iter().all(|&v| v == 0.0 || v == 1.0 / 0.8));
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let spec = NetworkSpec::mlp(2, &[], 2);
        let cfg = DropoutConfig {
            input_drop: 1.0,
            hidden_drop: 0.0,
        };
        assert!(sample_dropout_masks(&spec, &cfg, 1, 0).is_err());
    }

    #[test]
    fn predict_breaks_ties_low() {
        assert_eq!(predict(&array![[1.0, 1.0, 0.0], [0.0, 2.0, 3.0]]), vec![0, 2]);
    }
}
