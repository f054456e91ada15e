use super::evaluate::{evaluate, EvalConfig, Evaluation};
use super::report::UncertaintyReport;
use super::trainer::{train, TrainConfig, TrainOutcome};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::{build_model, ModelSpec, Variant};

/// Network body shared by all variants of a comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Mlp { hidden: usize, blocks: usize },
    MiniResNet,
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::Mlp { .. } => "mlp",
            Backbone::MiniResNet => "mini-resnet",
        }
    }

    pub fn spec(&self, variant: Variant, example_shape: &[usize], classes: usize, dropout: f64) -> Result<ModelSpec> {
        match *self {
            Backbone::Mlp { hidden, blocks } => {
                let dim = example_shape.iter().product();
                ModelSpec::mlp(variant, dim, hidden, blocks, classes, dropout)
            }
            Backbone::MiniResNet => match *example_shape {
                [c, h, w] => ModelSpec::mini_resnet(variant, [c, h, w], classes, dropout),
                _ => Err(Error::shape(
                    "mini-resnet",
                    format!("needs [channels, height, width] examples, got {example_shape:?}"),
                )),
            },
        }
    }
}

/// Everything but the variant and seed of one training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSettings {
    pub backbone: Backbone,
    pub dropout: f64,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub spec: ModelSpec,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Builds, trains and evaluates one variant. `seed` drives initialization,
/// training and prediction noise.
pub fn run_variant(
    variant: Variant,
    seed: u64,
    settings: &RunSettings,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
) -> Result<VariantRun> {
    let spec = settings
        .backbone
        .spec(variant, train_set.example_shape(), train_set.num_classes(), settings.dropout)?;
    let params = build_model(&spec, seed)?;
    let train_cfg = TrainConfig { seed, ..settings.train };
    let outcome = train(params, &spec, train_set, Some(val_set), &train_cfg)?;
    let eval_cfg = EvalConfig { seed, ..settings.eval };
    let evaluation = evaluate(&outcome.params, &spec, test_set, &eval_cfg)?;
    Ok(VariantRun {
        variant,
        seed,
        spec,
        outcome,
        evaluation,
    })
}

/// Mean and range over runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Published full-scale results on the retinal scan corpus with a ResNet-18,
/// kept for side-by-side display. Not expected at this scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FullScaleReference {
    pub f1: f64,
    pub ratio: Option<f64>,
}

pub fn full_scale_reference(variant: Variant) -> FullScaleReference {
    match variant {
        Variant::Baseline => FullScaleReference { f1: 0.95, ratio: None },
        Variant::Bayesian1 => FullScaleReference { f1: 0.96, ratio: Some(8.7) },
        Variant::Bayesian2 => FullScaleReference { f1: 0.93, ratio: Some(6.0) },
        Variant::Variational => FullScaleReference { f1: 0.94, ratio: Some(4.6) },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub runs: usize,
    pub method: &'static str,
    pub accuracy: Spread,
    pub macro_precision: Spread,
    pub macro_recall: Spread,
    pub macro_f1: Spread,
    pub mean_correct: Option<Spread>,
    pub mean_incorrect: Option<Spread>,
    /// Over runs with a defined ratio.
    pub ratio: Option<Spread>,
    pub ratio_defined_runs: usize,
    pub reference: FullScaleReference,
}

/// One row per variant, in `Variant::ALL` order, from evaluations of any
/// number of seeds.
pub fn summarize(runs: &[(Variant, &Evaluation)]) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let evals: Vec<&Evaluation> = runs.iter().filter(|(v, _)| *v == variant).map(|(_, e)| *e).collect();
        if evals.is_empty() {
            continue;
        }
        let collect = |f: &dyn Fn(&Evaluation) -> Option<f64>| evals.iter().filter_map(|e| f(e)).collect::<Vec<_>>();
        let need = |s: Option<Spread>| s.expect("at least one evaluation");
        let reports: Vec<&UncertaintyReport> = evals.iter().map(|e| &e.report).collect();
        let ratios = collect(&|e| e.report.ratio);
        rows.push(ComparisonRow {
            variant,
            runs: evals.len(),
            method: reports[0].method.as_str(),
            accuracy: need(Spread::of(&collect(&|e| Some(e.metrics.accuracy)))),
            macro_precision: need(Spread::of(&collect(&|e| Some(e.metrics.macro_precision)))),
            macro_recall: need(Spread::of(&collect(&|e| Some(e.metrics.macro_recall)))),
            macro_f1: need(Spread::of(&collect(&|e| Some(e.metrics.macro_f1)))),
            mean_correct: Spread::of(&collect(&|e| e.report.mean_correct)),
            mean_incorrect: Spread::of(&collect(&|e| e.report.mean_incorrect)),
            ratio_defined_runs: ratios.len(),
            ratio: Spread::of(&ratios),
            reference: full_scale_reference(variant),
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    Ok(rows)
}

/// Trains and evaluates every variant for every seed on shared data.
pub fn compare_variants(
    settings: &RunSettings,
    seeds: &[u64],
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
) -> Result<(Vec<ComparisonRow>, Vec<VariantRun>)> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is needed"));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        for variant in Variant::ALL {
            runs.push(run_variant(variant, seed, settings, train_set, val_set, test_set)?);
        }
    }
    let pairs: Vec<(Variant, &Evaluation)> = runs.iter().map(|r| (r.variant, &r.evaluation)).collect();
    let rows = summarize(&pairs)?;
    Ok((rows, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{split, synth_blobs, SplitSpec};

    #[test]
    fn spread_statistics() {
        let s = Spread::of(&[1.0, 4.0, 2.5]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (2.5, 1.0, 4.0));
        assert!(Spread::of(&[]).is_none());
    }

    #[test]
    fn four_rows_for_two_seeds() {
        let ds = synth_blobs(120, 4, 0.4, 2, 0).unwrap();
        let (tr, va, te) = split(&ds, &SplitSpec::new(0.6, 0.2, 0.2, 0).unwrap()).unwrap();
        let settings = RunSettings {
            backbone: Backbone::Mlp { hidden: 8, blocks: 1 },
            dropout: 0.3,
            train: TrainConfig { epochs: 2, batch_size: 16, ..TrainConfig::default() },
            eval: EvalConfig { passes: 4, samples: 4, ..EvalConfig::default() },
        };
        let (rows, runs) = compare_variants(&settings, &[1, 2], &tr, &va, &te).unwrap();
        assert_eq!(runs.len(), 8);
        assert_eq!(rows.len(), 4);
        for (row, v) in rows.iter().zip(Variant::ALL) {
            assert_eq!(row.variant, v);
            assert_eq!(row.runs, 2);
            assert!(row.accuracy.min <= row.accuracy.mean && row.accuracy.mean <= row.accuracy.max);
        }
    }

    #[test]
    fn resnet_needs_image_examples() {
        assert!(Backbone::MiniResNet.spec(Variant::Baseline, &[2], 4, 0.0).is_err());
        assert!(Backbone::MiniResNet.spec(Variant::Baseline, &[1, 8, 8], 4, 0.0).is_ok());
    }
}
