//! `uq`: generate data, train a variant, evaluate its uncertainty, compare
//! all four variants.

mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use uq_core::datasets::{write_csv, write_idx, Dataset};
use uq_core::nn::{build_model, checkpoint, Checkpoint, TrainingMeta, Variant};
use uq_core::train::{
    evaluate, export, run_variant, summarize, train, ComparisonRow, Evaluation, UncertaintyReport,
};
use uq_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "uq", version, about = "Uncertainty estimation with Monte Carlo dropout and variational heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset to the output directory and print a summary.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// File format: csv (dataset.csv) or idx (images.idx + labels.idx).
        #[arg(long, value_parser = ["csv", "idx"], default_value = "csv")]
        format: String,
    },
    /// Train one variant; writes checkpoint.bin, train_log.csv and run_config.toml.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        training: TrainingArgs,
    },
    /// Evaluate a checkpoint on the test split; writes metrics, per-example
    /// scores, the histogram table and two SVG figures.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        uncertainty: UncertaintyArgs,
        /// Checkpoint to evaluate [default: <out>/checkpoint.bin].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train (or load) all four variants and write comparison.csv plus figures.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        training: TrainingArgs,
        #[command(flatten)]
        uncertainty: UncertaintyArgs,
        /// Number of seeds, starting at --seed; the table reports mean and range.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        /// Evaluate <dir>/<variant>.bin for every variant instead of training.
        #[arg(long, conflicts_with = "seeds")]
        checkpoints: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML run configuration; flags override its values. `evaluate` falls
    /// back to <out>/run_config.toml when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data, initialization, training and prediction noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; every file is written here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn dropout_rate(s: &str) -> std::result::Result<f64, String> {
    let v = unit_interval(s)?;
    if v < 1.0 {
        Ok(v)
    } else {
        Err("dropout rate must be below 1".into())
    }
}

fn at_least_two(s: &str) -> std::result::Result<u64, String> {
    match s.parse::<u64>() {
        Ok(v) if v >= 2 => Ok(v),
        Ok(v) => Err(format!("T = {v}; Monte Carlo variance needs at least 2 passes")),
        Err(_) => Err(format!("{s:?} is not a count")),
    }
}

fn nonnegative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a nonnegative number"))
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset kind.
    #[arg(long, value_parser = ["blobs", "textures", "csv", "idx"])]
    kind: Option<String>,
    /// Number of synthetic examples.
    #[arg(long)]
    n: Option<usize>,
    /// Number of classes (synthetic blobs, or the label range of loaded files).
    #[arg(long)]
    classes: Option<usize>,
    /// Blob overlap in [0, 1]; 1 makes all centers coincide.
    #[arg(long, value_parser = unit_interval)]
    overlap: Option<f64>,
    /// Blob dimension (at least 2).
    #[arg(long)]
    dim: Option<usize>,
    /// Texture image side length (at least 8).
    #[arg(long)]
    size: Option<usize>,
    /// Texture pixel noise standard deviation.
    #[arg(long, value_parser = nonnegative)]
    noise: Option<f64>,
    /// Seed of the data generator and split [default: --seed].
    #[arg(long)]
    data_seed: Option<u64>,
    /// CSV file for --kind csv.
    #[arg(long)]
    path: Option<PathBuf>,
    /// Label column of the CSV file.
    #[arg(long)]
    label_column: Option<String>,
    /// IDX image file for --kind idx.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file for --kind idx.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Train/validation/test fractions, e.g. 0.7,0.15,0.15.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    split: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model variant.
    #[arg(long, value_parser = ["baseline", "bayesian1", "bayesian2", "variational"])]
    variant: Option<String>,
    /// Network body.
    #[arg(long, value_parser = ["mlp", "mini-resnet"])]
    backbone: Option<String>,
    /// MLP hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// MLP residual blocks.
    #[arg(long)]
    blocks: Option<usize>,
    /// Dropout rate in [0, 1) for the bayesian variants.
    #[arg(long, value_parser = dropout_rate)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainingArgs {
    /// Optimizer.
    #[arg(long, value_parser = ["adam", "sgd-momentum"])]
    optimizer: Option<String>,
    /// Learning rate.
    #[arg(long, value_parser = nonnegative)]
    lr: Option<f64>,
    /// SGD momentum.
    #[arg(long, value_parser = unit_interval)]
    momentum: Option<f64>,
    /// Training epochs.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    /// Minibatch size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: Option<u64>,
    /// Weight of the KL term for the variational head.
    #[arg(long, value_parser = nonnegative)]
    beta: Option<f64>,
    /// Reparameterized samples per example per step.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    noise_samples: Option<u64>,
}

#[derive(Args, Debug)]
struct UncertaintyArgs {
    /// Monte Carlo dropout passes (at least 2).
    #[arg(long = "T", value_parser = at_least_two)]
    passes: Option<u64>,
    /// Samples per example from the variational head.
    #[arg(long = "S")]
    samples: Option<u64>,
    /// Score for the variational head: analytic (mean sigma^2) or sampled.
    #[arg(long, value_parser = ["analytic", "sampled"])]
    variational_score: Option<String>,
    /// Run Monte Carlo passes sequentially (results are identical).
    #[arg(long)]
    sequential: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    fn resolve(&self, fallback_to_out: bool) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let out = self.out.clone().unwrap_or_else(|| RunConfig::default().out);
                let saved = out.join("run_config.toml");
                if fallback_to_out && saved.exists() {
                    RunConfig::load(&saved)?
                } else {
                    RunConfig::default()
                }
            }
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out, self.out.clone());
        Ok(cfg)
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.dataset;
        set(&mut d.kind, self.kind.clone());
        set(&mut d.n, self.n);
        set(&mut d.classes, self.classes);
        set(&mut d.overlap, self.overlap);
        set(&mut d.dim, self.dim);
        set(&mut d.size, self.size);
        set(&mut d.noise, self.noise);
        if self.data_seed.is_some() {
            d.seed = self.data_seed;
        }
        if self.path.is_some() {
            d.path = self.path.clone();
        }
        set(&mut d.label_column, self.label_column.clone());
        if self.images.is_some() {
            d.images = self.images.clone();
        }
        if self.labels.is_some() {
            d.labels = self.labels.clone();
        }
        if let Some(s) = &self.split {
            (d.train, d.val, d.test) = (s[0], s[1], s[2]);
        }
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        set(&mut m.variant, self.variant.clone());
        set(&mut m.backbone, self.backbone.clone());
        set(&mut m.hidden, self.hidden);
        set(&mut m.blocks, self.blocks);
        set(&mut m.dropout, self.dropout);
    }
}

impl TrainingArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.training;
        set(&mut t.optimizer, self.optimizer.clone());
        set(&mut t.lr, self.lr);
        set(&mut t.momentum, self.momentum);
        set(&mut t.epochs, self.epochs.map(|v| v as usize));
        set(&mut t.batch_size, self.batch_size.map(|v| v as usize));
        set(&mut t.beta, self.beta);
        set(&mut t.noise_samples, self.noise_samples.map(|v| v as usize));
    }
}

impl UncertaintyArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let u = &mut cfg.uncertainty;
        set(&mut u.passes, self.passes.map(|v| v as usize));
        set(&mut u.samples, self.samples.map(|v| v as usize));
        set(&mut u.variational_score, self.variational_score.clone());
        if self.sequential {
            u.parallel = false;
        }
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        checkpoint::write_atomic(&self.path(name), bytes)
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn config(&self, cfg: &RunConfig) -> Result<()> {
        self.write("run_config.toml", cfg.to_toml()?.as_bytes())
    }
}

fn class_balance(ds: &Dataset) -> String {
    ds.class_counts()
        .iter()
        .zip(ds.class_names())
        .map(|(c, n)| format!("{n}={c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_generate(cfg: &RunConfig, format: &str) -> Result<()> {
    let ds = cfg.dataset()?;
    let out = Output::new(&cfg.out)?;
    match format {
        "idx" => {
            // write_idx writes two files; stage both, then rename.
            let (img_tmp, lab_tmp) = (out.path("images.idx.tmp"), out.path("labels.idx.tmp"));
            write_idx(&ds, &img_tmp, &lab_tmp)?;
            for (tmp, name) in [(img_tmp, "images.idx"), (lab_tmp, "labels.idx")] {
                let dest = out.path(name);
                std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
            }
        }
        _ => out.write_with("dataset.csv", |buf| write_csv(&ds, buf))?,
    }
    out.config(cfg)?;
    println!(
        "generated {} examples, {} classes, input shape {:?}, balance {} -> {}",
        ds.len(),
        ds.num_classes(),
        ds.example_shape(),
        class_balance(&ds),
        out.dir.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (tr, va, te) = cfg.splits()?;
    let variant = cfg.variant()?;
    let spec = cfg
        .backbone()?
        .spec(variant, tr.example_shape(), cfg.dataset.classes.max(tr.num_classes()), cfg.model.dropout)?;
    let train_cfg = cfg.train_config()?;
    let params = build_model(&spec, cfg.seed)?;
    let outcome = train(params, &spec, &tr, Some(&va), &train_cfg)?;
    let out = Output::new(&cfg.out)?;
    let ck = Checkpoint {
        spec: spec.clone(),
        params: outcome.params.clone(),
        meta: TrainingMeta {
            train_seed: cfg.seed,
            epochs: train_cfg.epochs,
            final_loss: outcome.final_loss(),
        },
    };
    checkpoint::save(&out.path("checkpoint.bin"), &ck)?;
    out.write_with("train_log.csv", |buf| export::write_train_log(&outcome.log, buf))?;
    out.config(cfg)?;
    let best = outcome
        .log
        .records
        .iter()
        .find(|r| r.epoch == outcome.log.best_epoch && r.phase == uq_core::train::Phase::Val);
    println!(
        "trained {variant} ({} parameters, {} dropout layers) on {} examples for {} epochs; \
         best epoch {} val accuracy {:.4}; splits {}/{}/{} -> {}",
        ck.params.count(),
        spec.dropout_positions().len(),
        tr.len(),
        train_cfg.epochs,
        outcome.log.best_epoch,
        best.map_or(f64::NAN, |r| r.accuracy),
        tr.len(),
        va.len(),
        te.len(),
        out.dir.display()
    );
    Ok(())
}

fn write_report(out: &Output, ev: &Evaluation, class_names: &[String], suffix: &str) -> Result<()> {
    out.write_with(&format!("metrics{suffix}.csv"), |b| export::write_metrics(&ev.metrics, &ev.report, class_names, b))?;
    out.write_with(&format!("per_example{suffix}.csv"), |b| export::write_per_example(&ev.report, b))?;
    out.write_with(&format!("histogram{suffix}.csv"), |b| export::write_histogram(&ev.report.histogram, b))
}

fn figures(out: &Output, labelled: &[(String, &UncertaintyReport)]) -> Result<()> {
    let groups: Vec<_> = labelled
        .iter()
        .map(|(l, r)| (l.clone(), r.quartiles_correct, r.quartiles_incorrect))
        .collect();
    out.write("uncertainty_box.svg", svg::box_chart("Uncertainty of correct vs incorrect predictions", &groups).as_bytes())?;
    let panels: Vec<_> = labelled.iter().map(|(l, r)| (l.clone(), &r.histogram)).collect();
    out.write("uncertainty_hist.svg", svg::histogram_chart("Relative frequency of uncertainty", &panels).as_bytes())
}

fn check_fits(ck: &Checkpoint, ds: &Dataset, what: &str) -> Result<()> {
    if ds.example_shape() != ck.spec.input_shape.as_slice() || ds.num_classes() > ck.spec.classes {
        return Err(Error::invalid(format!(
            "{what} expects inputs {:?} with {} classes but the test data has {:?} with {} classes",
            ck.spec.input_shape,
            ck.spec.classes,
            ds.example_shape(),
            ds.num_classes()
        )));
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint_path: Option<&Path>) -> Result<()> {
    let path = checkpoint_path.map_or_else(|| cfg.out.join("checkpoint.bin"), Path::to_path_buf);
    let ck = checkpoint::load(&path)?;
    let (_, _, te) = cfg.splits()?;
    check_fits(&ck, &te, &path.display().to_string())?;
    let ev = evaluate(&ck.params, &ck.spec, &te, &cfg.eval_config()?)?;
    let out = Output::new(&cfg.out)?;
    write_report(&out, &ev, te.class_names(), "")?;
    figures(&out, &[(ck.spec.variant.to_string(), &ev.report)])?;
    let r = &ev.report;
    println!(
        "{} on {} test examples: accuracy {:.4}, macro F1 {:.4}, {} mean correct {} incorrect {}, ratio {} -> {}",
        ck.spec.variant,
        te.len(),
        ev.metrics.accuracy,
        ev.metrics.macro_f1,
        r.method.as_str(),
        r.mean_correct.map_or("n/a".into(), |v| format!("{v:.4e}")),
        r.mean_incorrect.map_or("n/a".into(), |v| format!("{v:.4e}")),
        r.ratio.map_or("undefined".into(), |v| format!("{v:.3}")),
        out.dir.display()
    );
    Ok(())
}

fn print_rows(rows: &[ComparisonRow]) {
    println!("{:<12} {:>5} {:>9} {:>9} {:>9}  uncertainty ratio (method)", "variant", "runs", "accuracy", "macro F1", "F1 range");
    for r in rows {
        println!(
            "{:<12} {:>5} {:>9.4} {:>9.4} {:>9.4}  {} ({})",
            r.variant.as_str(),
            r.runs,
            r.accuracy.mean,
            r.macro_f1.mean,
            r.macro_f1.max - r.macro_f1.min,
            r.ratio.map_or("undefined".into(), |s| format!("{:.3} [{:.3}, {:.3}]", s.mean, s.min, s.max)),
            r.method
        );
    }
}

fn cmd_compare(cfg: &RunConfig, seeds: u64, checkpoints: Option<&Path>) -> Result<()> {
    let (tr, va, te) = cfg.splits()?;
    let mut evaluations: Vec<(Variant, u64, Evaluation)> = Vec::new();
    match checkpoints {
        Some(dir) => {
            let mut loaded = Vec::new();
            for v in Variant::ALL {
                let path = dir.join(format!("{v}.bin"));
                if !path.exists() {
                    return Err(Error::invalid(format!("missing checkpoint for variant {v}: {}", path.display())));
                }
                let ck = checkpoint::load(&path)?;
                if ck.spec.variant != v {
                    return Err(Error::invalid(format!("{} holds a {} model, expected {v}", path.display(), ck.spec.variant)));
                }
                check_fits(&ck, &te, &path.display().to_string())?;
                loaded.push(ck);
            }
            let eval_cfg = cfg.eval_config()?;
            for ck in loaded {
                evaluations.push((ck.spec.variant, cfg.seed, evaluate(&ck.params, &ck.spec, &te, &eval_cfg)?));
            }
        }
        None => {
            let settings = cfg.run_settings()?;
            for seed in cfg.seed..cfg.seed + seeds {
                for v in Variant::ALL {
                    let run = run_variant(v, seed, &settings, &tr, &va, &te)?;
                    evaluations.push((v, seed, run.evaluation));
                }
            }
        }
    }
    let pairs: Vec<(Variant, &Evaluation)> = evaluations.iter().map(|(v, _, e)| (*v, e)).collect();
    let rows = summarize(&pairs)?;
    let out = Output::new(&cfg.out)?;
    out.write_with("comparison.csv", |b| export::write_comparison(&rows, b))?;
    let first: Vec<&(Variant, u64, Evaluation)> = Variant::ALL
        .iter()
        .filter_map(|v| evaluations.iter().find(|(w, _, _)| w == v))
        .collect();
    for (v, _, ev) in &first {
        write_report(&out, ev, te.class_names(), &format!("_{v}"))?;
    }
    let labelled: Vec<(String, &UncertaintyReport)> = first.iter().map(|(v, _, e)| (v.to_string(), &e.report)).collect();
    figures(&out, &labelled)?;
    out.config(cfg)?;
    print_rows(&rows);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, data, format } => {
            let mut cfg = common.resolve(false)?;
            data.apply(&mut cfg);
            cmd_generate(&cfg, &format)
        }
        Command::Train { common, data, model, training } => {
            let mut cfg = common.resolve(false)?;
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            training.apply(&mut cfg);
            cmd_train(&cfg)
        }
        Command::Evaluate { common, data, uncertainty, checkpoint } => {
            let mut cfg = common.resolve(true)?;
            data.apply(&mut cfg);
            uncertainty.apply(&mut cfg);
            cmd_evaluate(&cfg, checkpoint.as_deref())
        }
        Command::Compare { common, data, model, training, uncertainty, seeds, checkpoints } => {
            let mut cfg = common.resolve(false)?;
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            training.apply(&mut cfg);
            uncertainty.apply(&mut cfg);
            cmd_compare(&cfg, seeds, checkpoints.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: usage: {msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
