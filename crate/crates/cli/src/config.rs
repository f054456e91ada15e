//! Run configuration: a TOML file with `[dataset]`, `[model]`, `[training]`
//! and `[uncertainty]` sections. Every key is optional; command-line flags
//! override file values. The resolved config is written next to the outputs
//! so a run can be repeated exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use uq_core::datasets::{load_csv, load_idx, split, synth_blobs, synth_textures, Dataset, SplitSpec};
use uq_core::nn::Variant;
use uq_core::train::{
    Backbone, EvalConfig, OptimizerConfig, OptimizerKind, RunSettings, TrainConfig, VariationalScore,
};
use uq_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub uncertainty: UncertaintySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `blobs`, `textures`, `csv` or `idx`.
    pub kind: String,
    pub n: usize,
    pub classes: usize,
    pub overlap: f64,
    pub dim: usize,
    pub size: usize,
    pub noise: f64,
    /// Seed of the generator and the split; defaults to the run seed.
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
    pub label_column: String,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    /// `mlp` or `mini-resnet`.
    pub backbone: String,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub noise_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    #[serde(rename = "T")]
    pub passes: usize,
    #[serde(rename = "S")]
    pub samples: usize,
    /// `analytic` or `sampled`.
    pub variational_score: String,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            uncertainty: UncertaintySection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: "blobs".into(),
            n: 5000,
            classes: 4,
            overlap: 0.4,
            dim: 2,
            size: 16,
            noise: 0.5,
            seed: None,
            path: None,
            label_column: "label".into(),
            images: None,
            labels: None,
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: "bayesian1".into(),
            backbone: "mlp".into(),
            hidden: 64,
            blocks: 2,
            dropout: 0.3,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            optimizer: "adam".into(),
            lr: 1e-3,
            momentum: 0.9,
            epochs: 20,
            batch_size: 64,
            beta: 1.0,
            noise_samples: 1,
        }
    }
}

impl Default for UncertaintySection {
    fn default() -> Self {
        UncertaintySection {
            passes: 100,
            samples: 100,
            variational_score: "analytic".into(),
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| format!("line {}", 1 + text[..s.start].matches('\n').count()))
                .unwrap_or_else(|| "file".into());
            Error::parse(name, location, e.message().to_string())
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }

    pub fn variant(&self) -> Result<Variant> {
        self.model.variant.parse()
    }

    pub fn backbone(&self) -> Result<Backbone> {
        match self.model.backbone.as_str() {
            "mlp" => Ok(Backbone::Mlp {
                hidden: self.model.hidden,
                blocks: self.model.blocks,
            }),
            "mini-resnet" | "resnet" => Ok(Backbone::MiniResNet),
            other => Err(Error::invalid(format!("unknown backbone {other:?} (expected mlp or mini-resnet)"))),
        }
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig> {
        let t = &self.training;
        Ok(match t.optimizer.parse::<OptimizerKind>()? {
            OptimizerKind::Adam => OptimizerConfig::adam(t.lr),
            OptimizerKind::SgdMomentum => OptimizerConfig::sgd(t.lr, t.momentum),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let cfg = TrainConfig {
            optimizer: self.optimizer()?,
            epochs: t.epochs,
            batch_size: t.batch_size,
            kld_weight: t.beta,
            noise_samples: t.noise_samples,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let u = &self.uncertainty;
        let variational_score = match u.variational_score.as_str() {
            "analytic" => VariationalScore::Analytic,
            "sampled" => VariationalScore::Sampled,
            other => {
                return Err(Error::invalid(format!(
                    "unknown variational score {other:?} (expected analytic or sampled)"
                )))
            }
        };
        if u.passes < 2 {
            return Err(Error::invalid(format!("T must be at least 2, got {}", u.passes)));
        }
        Ok(EvalConfig {
            passes: u.passes,
            samples: u.samples,
            seed: self.seed,
            parallel: u.parallel,
            variational_score,
        })
    }

    pub fn run_settings(&self) -> Result<RunSettings> {
        Ok(RunSettings {
            backbone: self.backbone()?,
            dropout: self.model.dropout,
            train: self.train_config()?,
            eval: self.eval_config()?,
        })
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let d = &self.dataset;
        SplitSpec::new(d.train, d.val, d.test, self.data_seed())
    }

    /// Builds or loads the dataset described by the `[dataset]` section.
    pub fn dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        let seed = self.data_seed();
        let need = |p: &Option<PathBuf>, key: &str| {
            p.clone()
                .ok_or_else(|| Error::invalid(format!("dataset kind {} needs `{key}`", d.kind)))
        };
        match d.kind.as_str() {
            "blobs" => synth_blobs(d.n, d.classes, d.overlap, d.dim, seed),
            "textures" => synth_textures(d.n, d.size, d.noise, seed),
            "csv" => load_csv(&need(&d.path, "path")?, &d.label_column, Some(d.classes)),
            "idx" => load_idx(&need(&d.images, "images")?, &need(&d.labels, "labels")?, Some(d.classes)),
            other => Err(Error::invalid(format!(
                "unknown dataset kind {other:?} (expected blobs, textures, csv or idx)"
            ))),
        }
    }

    pub fn splits(&self) -> Result<(Dataset, Dataset, Dataset)> {
        split(&self.dataset()?, &self.split_spec()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.model.variant = "variational".into();
        c.dataset.seed = Some(3);
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse("t", &text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::parse("t", "seed = 4\n[uncertainty]\nT = 20\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.uncertainty.passes, 20);
        assert_eq!(c.training, TrainingSection::default());
    }

    #[test]
    fn unknown_keys_are_errors_with_a_line() {
        let e = RunConfig::parse("t", "seed = 1\n[model]\nwidth = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn invalid_values_are_reported() {
        let mut c = RunConfig::default();
        c.uncertainty.passes = 1;
        assert!(c.eval_config().is_err());
        c.model.backbone = "vgg".into();
        assert!(c.backbone().is_err());
        c.dataset.kind = "csv".into();
        assert!(c.dataset().is_err());
    }
}
