use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FisherDiagonal;
use crate::error::{Error, Result};
use crate::network::{logits_unchecked, predict, forward, NetworkSpec, ParamVector, PassOptions};
use crate::parallel::map_ordered;
use crate::rng::{seeded, stream};
use crate::tasks::Examples;

/// Nullspace membership threshold, relative to the largest Fisher entry.
pub const DEFAULT_NULLSPACE_FACTOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbShape {
    /// Same standard deviation on every parameter.
    Uniform,
    /// Standard deviation proportional to `(F_i + ridge)^(-1/2)`.
    InverseFisher,
    /// Noise only on parameters with `F_i <= threshold`.
    Nullspace,
}

impl PerturbShape {
    pub const ALL: [PerturbShape; 3] = [
        PerturbShape::Uniform,
        PerturbShape::InverseFisher,
        PerturbShape::Nullspace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbShape::Uniform => "uniform",
            PerturbShape::InverseFisher => "inverse-fisher",
            PerturbShape::Nullspace => "nullspace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub shape: PerturbShape,
    /// Ridge added to the Fisher before inversion.
    pub ridge: f64,
    pub sigmas: Vec<f64>,
    /// Full passes over the evaluation set per sigma.
    pub episodes: usize,
    /// Rows per evaluation batch; every batch sees fresh noise.
    pub eval_batch: usize,
    pub nullspace_factor: f64,
    pub seed: u64,
}

impl PerturbConfig {
    pub fn new(shape: PerturbShape, sigmas: Vec<f64>) -> Self {
        PerturbConfig {
            shape,
            ridge: 1e-3,
            sigmas,
            episodes: 10,
            eval_batch: 100,
            nullspace_factor: DEFAULT_NULLSPACE_FACTOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub sigma: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub shape: PerturbShape,
    pub points: Vec<SensitivityPoint>,
    /// Parameters receiving nonzero noise (the nullspace size for that shape).
    pub perturbed_params: usize,
}

/// Per-parameter noise scales with `sum s_i^2 = N`, so every shape injects
/// the same total variance as the uniform shape at a given sigma.
pub fn noise_scales(
    fisher: &FisherDiagonal,
    shape: PerturbShape,
    ridge: f64,
    nullspace_factor: f64,
) -> Result<(Vec<f64>, usize)> {
    let n = fisher.len();
    let raw: Vec<f64> = match shape {
        PerturbShape::Uniform => vec![1.0; n],
        PerturbShape::InverseFisher => {
            if ridge.is_nan() || ridge <= 0.0 {
                return Err(Error::invalid(format!(
                    "inverse-fisher shape needs ridge > 0, got {ridge}"
                )));
            }
            fisher.values().iter().map(|f| 1.0 / (f + ridge).sqrt()).collect()
        }
        PerturbShape::Nullspace => {
            let threshold = nullspace_factor * fisher.max();
            fisher
                .values()
                .iter()
                .map(|&f| if f <= threshold { 1.0 } else { 0.0 })
                .collect()
        }
    };
    let members = raw.iter().filter(|&&s| s != 0.0).count();
    if members == 0 {
        return Err(Error::invalid("nullspace of the fisher is empty"));
    }
    let total: f64 = raw.iter().map(|s| s * s).sum();
    let scale = (n as f64 / total).sqrt();
    Ok((raw.into_iter().map(|s| s * scale).collect(), members))
}

/// Mean accuracy on `eval` under zero-mean Gaussian weight noise of each
/// sigma, with a new noise draw for every evaluation batch.
pub fn perturbation_sensitivity(
    spec: &NetworkSpec,
    params: &ParamVector,
    fisher: &FisherDiagonal,
    cfg: &PerturbConfig,
    eval: &dyn Examples,
    context: Option<usize>,
) -> Result<SensitivityCurve> {
    if fisher.len() != params.len() {
        return Err(Error::DimensionMismatch {
            what: "fisher vs parameters",
            expected: params.len(),
            found: fisher.len(),
        });
    }
    if eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(s) = cfg.sigmas.iter().find(|s| s.is_nan() || **s < 0.0) {
        return Err(Error::invalid(format!("sigma {s} must be >= 0")));
    }
    if cfg.episodes == 0 || cfg.eval_batch == 0 {
        return Err(Error::invalid("episodes and eval_batch must be >= 1"));
    }
    forward(spec, params, eval.gather(&[0]).inputs.view(), &PassOptions::default().context(context))?;
    let (scales, perturbed_params) = noise_scales(fisher, cfg.shape, cfg.ridge, cfg.nullspace_factor)?;

    let batches: Vec<Vec<usize>> = (0..eval.len())
        .step_by(cfg.eval_batch)
        .map(|s| (s..(s + cfg.eval_batch).min(eval.len())).collect())
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.sigmas.len())
        .flat_map(|k| (0..cfg.episodes).map(move |e| (k, e)))
        .collect();
    let correct_counts = map_ordered(&jobs, |&(k, e)| {
        let sigma = cfg.sigmas[k];
        let mut rng = seeded(cfg.seed, stream(k as u32 + 1, e as u64));
        let mut noisy = params.clone();
        let mut correct = 0usize;
        for idx in &batches {
            if sigma > 0.0 {
                for ((v, &base), &s) in noisy.values_mut().iter_mut().zip(params.values()).zip(&scales) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = base + sigma * s * z;
                }
            }
            let batch = eval.gather(idx);
            let pred = predict(&logits_unchecked(&noisy, batch.inputs.view(), context));
            correct += pred.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
        }
        correct
    });

    let points = cfg
        .sigmas
        .iter()
        .enumerate()
        .map(|(k, &sigma)| {
            let correct: usize = correct_counts[k * cfg.episodes..(k + 1) * cfg.episodes].iter().sum();
            SensitivityPoint {
                sigma,
                mean_accuracy: correct as f64 / (cfg.episodes * eval.len()) as f64,
            }
        })
        .collect();
    Ok(SensitivityCurve {
        shape: cfg.shape,
        points,
        perturbed_params,
    })
}
