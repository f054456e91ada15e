use rayon::prelude::*;

use super::metrics::ClassificationMetrics;
use super::report::{ExampleRecord, UncertaintyReport};
use crate::autodiff::softmax_row;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::{model_forward, DropoutMode, ModelParams, ModelSpec, Variant};
use crate::rng::PassKey;
use crate::tensor::Tensor;
use crate::uncertainty::{
    argmax, mc_predict, predictive_entropy, uncertainty_score, variational_forward, McConfig, PosteriorSamples,
    UncertaintyMethod,
};

const CHUNK: usize = 256;

/// Which score a variational model reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariationalScore {
    /// Mean predicted `sigma^2`.
    Analytic,
    /// Per-class variance of softmax-mapped samples.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Stochastic passes `T` for Monte Carlo dropout.
    pub passes: usize,
    /// Reparameterized samples `S` per example for a variational head.
    pub samples: usize,
    pub seed: u64,
    pub parallel: bool,
    pub variational_score: VariationalScore,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            passes: 100,
            samples: 100,
            seed: 0,
            parallel: true,
            variational_score: VariationalScore::Analytic,
        }
    }
}

/// Class prediction and uncertainty for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub score: f64,
    /// Entropy of the mean predictive distribution.
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: ClassificationMetrics,
    pub report: UncertaintyReport,
}

pub fn score_method(variant: Variant, config: &EvalConfig) -> UncertaintyMethod {
    match variant {
        Variant::Baseline => UncertaintyMethod::Entropy,
        Variant::Bayesian1 | Variant::Bayesian2 => UncertaintyMethod::McDropout,
        Variant::Variational => match config.variational_score {
            VariationalScore::Analytic => UncertaintyMethod::VariationalAnalytic,
            VariationalScore::Sampled => UncertaintyMethod::VariationalSampled,
        },
    }
}

fn mean_distribution(samples: &[Vec<f64>]) -> Vec<f64> {
    let probs: Vec<Vec<f64>> = samples.iter().map(|s| softmax_row(s)).collect();
    match PosteriorSamples::from_samples(probs) {
        Ok(p) => p.mean().to_vec(),
        Err(_) => softmax_row(&samples[0]),
    }
}

fn deterministic_logits(params: &ModelParams, spec: &ModelSpec, x: &Tensor, parallel: bool) -> Result<Vec<Vec<f64>>> {
    let n = x.shape()[0];
    let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(CHUNK).map(<[usize]>::to_vec).collect();
    let run = |idx: &Vec<usize>| -> Result<Vec<Vec<f64>>> {
        let out = model_forward(params, spec, &x.select_rows(idx), DropoutMode::EvalDeterministic, PassKey::new(0, 0))?;
        Ok(out.rows().map(<[f64]>::to_vec).collect())
    };
    let parts: Vec<Vec<Vec<f64>>> = if parallel {
        chunks.par_iter().map(run).collect::<Result<_>>()?
    } else {
        chunks.iter().map(run).collect::<Result<_>>()?
    };
    Ok(parts.into_iter().flatten().collect())
}

/// Predictions for a batch `x` following the variant's rule: argmax of the
/// logits, of the Monte Carlo mean, or of `mu`.
pub fn predict(params: &ModelParams, spec: &ModelSpec, x: &Tensor, config: &EvalConfig) -> Result<Vec<Prediction>> {
    match spec.variant {
        Variant::Baseline => deterministic_logits(params, spec, x, config.parallel)?
            .iter()
            .map(|l| {
                let p = softmax_row(l);
                let h = predictive_entropy(&p)?;
                Ok(Prediction {
                    label: argmax(&p),
                    score: h,
                    entropy: h,
                })
            })
            .collect(),
        Variant::Bayesian1 | Variant::Bayesian2 => {
            let mc = McConfig {
                passes: config.passes,
                seed: config.seed,
                parallel: config.parallel,
            };
            mc_predict(params, spec, x, mc)?
                .iter()
                .map(|post| {
                    Ok(Prediction {
                        label: post.predicted_label(),
                        score: uncertainty_score(post).value,
                        entropy: predictive_entropy(post.mean())?,
                    })
                })
                .collect()
        }
        Variant::Variational => {
            if config.variational_score == VariationalScore::Sampled && config.samples < 2 {
                return Err(Error::invalid(format!(
                    "sampled variational scores need at least 2 samples, got {}",
                    config.samples
                )));
            }
            variational_forward(params, spec, x, config.samples, config.seed)?
                .iter()
                .map(|out| {
                    let score = match config.variational_score {
                        VariationalScore::Analytic => uncertainty_score(out).value,
                        VariationalScore::Sampled => out.sampled_uncertainty_score()?.value,
                    };
                    let dist = match &out.samples {
                        Some(s) => mean_distribution(s),
                        None => softmax_row(&out.mu),
                    };
                    Ok(Prediction {
                        label: out.predicted_label(),
                        score,
                        entropy: predictive_entropy(&dist)?,
                    })
                })
                .collect()
        }
    }
}

/// Classification metrics and the uncertainty report on `test`.
pub fn evaluate(params: &ModelParams, spec: &ModelSpec, test: &Dataset, config: &EvalConfig) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let preds = predict(params, spec, test.inputs(), config)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let metrics = ClassificationMetrics::from_pairs(test.labels(), &predicted, spec.classes)?;
    let records = preds
        .iter()
        .zip(test.labels())
        .enumerate()
        .map(|(id, (p, &t))| ExampleRecord {
            id,
            true_label: t,
            predicted: p.label,
            correct: p.label == t,
            score: p.score,
            entropy: p.entropy,
        })
        .collect();
    let report = UncertaintyReport::build(score_method(spec.variant, config), records)?;
    Ok(Evaluation { metrics, report })
}
