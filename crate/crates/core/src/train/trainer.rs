use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::loss::{graph_loss, LossBreakdown};
use super::optim::{OptimizerConfig, OptimizerState};
use crate::autodiff::Graph;
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::{bind_params, forward_layers, DropoutMode, ForwardTrace, ModelParams, ModelSpec, Variant};
use crate::rng::{self, Domain, PassKey};
use crate::tensor::Tensor;
use crate::uncertainty::{argmax, NoiseDraw};

/// Rows per chunk when scoring a dataset without gradients.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the KL term for a variational head.
    pub kld_weight: f64,
    /// Reparameterized samples per example per step.
    pub noise_samples: usize,
    /// Drives shuffling, dropout masks and noise. Initialization has its own seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            epochs: 20,
            batch_size: 32,
            kld_weight: 1.0,
            noise_samples: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.noise_samples == 0 {
            return Err(Error::invalid("epochs, batch size and noise samples must be at least 1"));
        }
        if !(self.kld_weight >= 0.0 && self.kld_weight.is_finite()) {
            return Err(Error::invalid(format!("KL weight must be a nonnegative number, got {}", self.kld_weight)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Val,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Val => "val",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    pub loss: LossBreakdown,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<LossBreakdown>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the best validation accuracy (lower
    /// validation loss breaks ties), or after the last epoch without a
    /// validation set.
    pub params: ModelParams,
    pub log: TrainLog,
}

impl TrainOutcome {
    /// Training loss of the last epoch.
    pub fn final_loss(&self) -> f64 {
        self.log
            .records
            .iter()
            .rev()
            .find(|r| r.phase == Phase::Train)
            .map_or(f64::NAN, |r| r.loss.total)
    }
}

struct StepResult {
    loss: LossBreakdown,
    grads: BTreeMap<String, Tensor>,
    correct: usize,
}

fn noise_batch(seed: u64, step: u64, rows: usize, classes: usize, samples: usize) -> Result<Vec<Tensor>> {
    (0..samples)
        .map(|s| {
            let data = (0..rows)
                .flat_map(|r| NoiseDraw::new(seed, (step, (r * samples + s) as u64), classes).epsilon)
                .collect();
            Tensor::new(vec![rows, classes], data)
        })
        .collect()
}

fn train_step(
    params: &ModelParams,
    spec: &ModelSpec,
    x: Tensor,
    y: &[usize],
    config: &TrainConfig,
    step: u64,
) -> Result<StepResult> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, params, true)?;
    let xv = g.constant(x)?;
    let mut trace = ForwardTrace::default();
    let key = PassKey::new(rng::mix(config.seed, Domain::Dropout, 0, 0), step);
    let out = forward_layers(&mut g, &bound, spec, xv, 0..spec.layers.len(), DropoutMode::Train, key, &mut trace)?;
    let noise = if spec.variant == Variant::Variational {
        let seed = rng::mix(config.seed, Domain::Epsilon, 0, 0);
        noise_batch(seed, step, y.len(), spec.classes, config.noise_samples)?
    } else {
        Vec::new()
    };
    let vars = graph_loss(&mut g, out, y, config.kld_weight, &noise)?;
    let loss = vars.breakdown(&g, config.kld_weight);
    let pred = g.value(out.prediction());
    let correct = pred.rows().zip(y).filter(|(r, &t)| argmax(r) == t).count();
    let grads = g.backward(vars.total)?.into_named();
    Ok(StepResult { loss, grads, correct })
}

/// Deterministic loss and accuracy over a dataset. A variational head is
/// scored on `mu` with the KL term added.
pub fn dataset_loss(params: &ModelParams, spec: &ModelSpec, ds: &Dataset, kld_weight: f64) -> Result<(LossBreakdown, f64)> {
    let n = ds.len();
    let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(EVAL_CHUNK).map(<[usize]>::to_vec).collect();
    let parts = chunks
        .par_iter()
        .map(|idx| -> Result<(f64, f64, usize)> {
            let (x, y) = ds.batch(idx);
            let mut g = Graph::new();
            let bound = bind_params(&mut g, params, false)?;
            let xv = g.constant(x)?;
            let mut trace = ForwardTrace::default();
            let out = forward_layers(
                &mut g,
                &bound,
                spec,
                xv,
                0..spec.layers.len(),
                DropoutMode::EvalDeterministic,
                PassKey::new(0, 0),
                &mut trace,
            )?;
            let zero = vec![Tensor::zeros(vec![y.len(), spec.classes])];
            let vars = graph_loss(&mut g, out, &y, kld_weight, &zero)?;
            let b = vars.breakdown(&g, kld_weight);
            let correct = g.value(out.prediction()).rows().zip(&y).filter(|(r, &t)| argmax(r) == t).count();
            let w = y.len() as f64;
            Ok((b.cross_entropy * w, b.kld * w, correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut ce, mut kl, mut correct) = (0.0, 0.0, 0);
    for (c, k, n) in parts {
        ce += c;
        kl += k;
        correct += n;
    }
    let kl = if spec.variant == Variant::Variational { kl / n as f64 } else { 0.0 };
    let beta = if spec.variant == Variant::Variational { kld_weight } else { 0.0 };
    Ok((LossBreakdown::new(ce / n as f64, kl, beta), correct as f64 / n as f64))
}

fn better(acc: f64, loss: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((a, l)) => acc > a || (acc == a && loss < l),
    }
}

/// Minibatch training from `initial` parameters.
///
/// Epoch `e` visits the training set in the order of a shuffle keyed by
/// `(seed, e)`; the dropout masks and noise of global step `s` are keyed by
/// `(seed, s)`, so a run is reproducible from its config alone.
pub fn train(
    initial: ModelParams,
    spec: &ModelSpec,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    initial.check_against(spec)?;
    for ds in std::iter::once(train_set).chain(val_set) {
        if ds.example_shape() != spec.input_shape.as_slice() || ds.num_classes() > spec.classes {
            return Err(Error::shape(
                "train",
                format!(
                    "dataset examples {:?} with {} classes do not fit model input {:?} with {} classes",
                    ds.example_shape(),
                    ds.num_classes(),
                    spec.input_shape,
                    spec.classes
                ),
            ));
        }
    }
    let mut params = initial;
    let mut opt = OptimizerState::new(config.optimizer, &params)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64)> = None;
    let mut best_params = params.clone();
    let n = train_set.len();
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, Domain::Shuffle, epoch as u64, 0));
        let (mut ce, mut kl, mut correct) = (0.0, 0.0, 0);
        for idx in order.chunks(config.batch_size) {
            let (x, y) = train_set.batch(idx);
            let result = match train_step(&params, spec, x, &y, config, step) {
                Err(Error::NonFinite { .. }) => return Err(Error::Divergence { epoch, step }),
                other => other?,
            };
            if !result.loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            opt.step(&mut params, &result.grads)?;
            if params.tensors.values().any(|t| !t.is_finite()) {
                return Err(Error::Divergence { epoch, step });
            }
            let w = idx.len() as f64;
            ce += result.loss.cross_entropy * w;
            kl += result.loss.kld * w;
            correct += result.correct;
            log.step_losses.push(result.loss);
            step += 1;
        }
        let beta = if spec.variant == Variant::Variational { config.kld_weight } else { 0.0 };
        log.records.push(EpochRecord {
            epoch,
            phase: Phase::Train,
            loss: LossBreakdown::new(ce / n as f64, kl / n as f64, beta),
            accuracy: correct as f64 / n as f64,
        });
        match val_set {
            Some(val) => {
                let (loss, accuracy) = dataset_loss(&params, spec, val, config.kld_weight)?;
                log.records.push(EpochRecord {
                    epoch,
                    phase: Phase::Val,
                    loss,
                    accuracy,
                });
                if better(accuracy, loss.total, best) {
                    best = Some((accuracy, loss.total));
                    best_params = params.clone();
                    log.best_epoch = epoch;
                }
            }
            None => log.best_epoch = epoch,
        }
    }
    let params = if val_set.is_some() { best_params } else { params };
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blobs;
    use crate::nn::build_model;

    fn small() -> (ModelSpec, Dataset) {
        let ds = synth_blobs(64, 4, 0.2, 2, 1).unwrap();
        let spec = ModelSpec::mlp(Variant::Bayesian1, 2, 8, 1, 4, 0.3).unwrap();
        (spec, ds)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (spec, ds) = small();
        let p0 = build_model(&spec, 3).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(0.0),
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = train(p0.clone(), &spec, &ds, None, &cfg).unwrap();
        assert!(out.params.bit_identical(&p0));
        assert_eq!(out.log.step_losses.len(), 8);
    }

    #[test]
    fn same_config_same_parameters() {
        let (spec, ds) = small();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 11, ..TrainConfig::default() };
        let a = train(build_model(&spec, 2).unwrap(), &spec, &ds, Some(&ds), &cfg).unwrap();
        let b = train(build_model(&spec, 2).unwrap(), &spec, &ds, Some(&ds), &cfg).unwrap();
        assert!(a.params.bit_identical(&b.params));
        assert_eq!(a.log, b.log);
        let c = train(build_model(&spec, 2).unwrap(), &spec, &ds, Some(&ds), &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert!(!a.params.bit_identical(&c.params));
    }

    #[test]
    fn logged_losses_are_additive() {
        let ds = synth_blobs(48, 4, 0.3, 2, 5).unwrap();
        let spec = ModelSpec::mlp(Variant::Variational, 2, 8, 1, 4, 0.0).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 16, kld_weight: 0.3, ..TrainConfig::default() };
        let out = train(build_model(&spec, 0).unwrap(), &spec, &ds, Some(&ds), &cfg).unwrap();
        for b in out.log.step_losses.iter().chain(out.log.records.iter().map(|r| &r.loss)) {
            assert_eq!(b.total, b.cross_entropy + b.kld_weight * b.kld);
            assert!(b.kld > 0.0);
        }
    }

    #[test]
    fn divergence_names_the_step() {
        let (spec, ds) = small();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::sgd(1e200, 0.0),
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        match train(build_model(&spec, 0).unwrap(), &spec, &ds, None, &cfg) {
            Err(Error::Divergence { epoch, step }) => assert!(epoch >= 1 && step < 12),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_data() {
        let (spec, _) = small();
        let ds = synth_blobs(40, 4, 0.2, 3, 1).unwrap();
        assert!(train(build_model(&spec, 0).unwrap(), &spec, &ds, None, &TrainConfig::default()).is_err());
    }
}
