use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{backward, forward_trace, softmax_cross_entropy, Accumulate, NetworkSpec, ParamVector};
use crate::parallel::map_ordered;
use crate::rng::{seeded, stream};
use crate::tasks::Examples;

const STREAM_ORDER: u32 = 1;
const STREAM_LABELS: u32 = 2;

/// Where the label in `d log p(y | x) / d theta` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherMode {
    /// One label per example drawn from the model's own softmax.
    #[default]
    ModelSampled,
    /// The dataset label.
    Empirical,
}

/// Per-parameter mean squared score; every entry is `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    values: Vec<f64>,
    sample_count: usize,
}

impl FisherDiagonal {
    pub fn new(values: Vec<f64>, sample_count: usize) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "fisher entry {i} is {} (must be finite and >= 0)",
                values[i]
            )));
        }
        Ok(FisherDiagonal {
            values,
            sample_count,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherConfig {
    pub n_batches: usize,
    pub batch_size: usize,
    pub mode: FisherMode,
    pub seed: u64,
}

impl Default for FisherConfig {
    /// One hundred mini-batches of 32, model-sampled labels.
    fn default() -> Self {
        FisherConfig {
            n_batches: 100,
            batch_size: 32,
            mode: FisherMode::ModelSampled,
            seed: 0,
        }
    }
}

/// Example indices for each batch: consecutive slices of seeded shuffles of
/// the dataset, reshuffling whenever it is exhausted.
fn batch_indices(n: usize, cfg: &FisherConfig) -> Vec<Vec<usize>> {
    let mut rng = seeded(cfg.seed, stream(STREAM_ORDER, 0));
    let mut pool: Vec<usize> = Vec::new();
    let mut at = 0;
    (0..cfg.n_batches)
        .map(|_| {
            (0..cfg.batch_size)
                .map(|_| {
                    if at == pool.len() {
                        pool = (0..n).collect();
                        pool.shuffle(&mut rng);
                        at = 0;
                    }
                    at += 1;
                    pool[at - 1]
                })
                .collect()
        })
        .collect()
}

fn sample_categorical(probs: ndarray::ArrayView1<'_, f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Diagonal Fisher information at `params`, averaged over
/// `n_batches * batch_size` examples drawn from `data`.
pub fn estimate_fisher_diagonal(
    spec: &NetworkSpec,
    params: &ParamVector,
    data: &dyn Examples,
    cfg: &FisherConfig,
    context: Option<usize>,
) -> Result<FisherDiagonal> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.n_batches == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("fisher needs n_batches >= 1 and batch_size >= 1"));
    }
    // Validates layout, widths and context once for all batches.
    crate::network::forward(
        spec,
        params,
        data.gather(&[0]).inputs.view(),
        &crate::network::PassOptions::default().context(context),
    )?;

    let batches: Vec<(usize, Vec<usize>)> = batch_indices(data.len(), cfg).into_iter().enumerate().collect();
    let partial = |(b, idx): &(usize, Vec<usize>)| -> Vec<f64> {
        let batch = data.gather(idx);
        let trace = forward_trace(params, batch.inputs.view(), context, None);
        let (_, probs) = softmax_cross_entropy(trace.logits(), &batch.labels);
        let mut rng = seeded(cfg.seed, stream(STREAM_LABELS, *b as u64));
        let mut d: Array2<f64> = probs.clone();
        for (i, mut row) in d.rows_mut().into_iter().enumerate() {
            let y = match cfg.mode {
                FisherMode::Empirical => batch.labels[i],
                FisherMode::ModelSampled => sample_categorical(probs.row(i), rng.random()),
            };
            row[y] -= 1.0;
        }
        let mut out = vec![0.0; params.len()];
        backward(params, &trace, d, context, None, Accumulate::SumOfSquares, &mut out);
        out
    };
    let parts = map_ordered(&batches, partial);

    let mut values = vec![0.0; params.len()];
    for p in parts {
        for (v, x) in values.iter_mut().zip(p) {
            *v += x;
        }
    }
    let count = cfg.n_batches * cfg.batch_size;
    let inv = 1.0 / count as f64;
    for v in &mut values {
        *v *= inv;
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("fisher entry {i}")));
    }
    FisherDiagonal::new(values, count)
}
