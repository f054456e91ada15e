//! CSV writers for training logs and evaluation reports. Every file has a
//! header row; floats use the shortest representation that parses back to
//! the same value; an undefined ratio is written as `undefined`.

use std::io::Write;

use super::compare::{ComparisonRow, Spread};
use super::metrics::ClassificationMetrics;
use super::report::{format_ratio, Histogram, Quartiles, UncertaintyReport};
use super::trainer::TrainLog;
use crate::error::{Error, Result};

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::Writer::from_writer(out)
}

fn wrap(e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("csv write failed: {e}"))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(wrap)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `epoch,split,total,cross_entropy,kld,kld_weight,accuracy`
pub fn write_train_log(log: &TrainLog, out: impl Write) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["epoch", "split", "total", "cross_entropy", "kld", "kld_weight", "accuracy"])
        .map_err(wrap)?;
    for r in &log.records {
        w.write_record([
            r.epoch.to_string(),
            r.phase.as_str().to_string(),
            r.loss.total.to_string(),
            r.loss.cross_entropy.to_string(),
            r.loss.kld.to_string(),
            r.loss.kld_weight.to_string(),
            r.accuracy.to_string(),
        ])
        .map_err(wrap)?;
    }
    finish(w)
}

/// `id,true_label,predicted,correct,score,entropy`
pub fn write_per_example(report: &UncertaintyReport, out: impl Write) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["id", "true_label", "predicted", "correct", "score", "entropy"])
        .map_err(wrap)?;
    for r in &report.records {
        w.write_record([
            r.id.to_string(),
            r.true_label.to_string(),
            r.predicted.to_string(),
            u8::from(r.correct).to_string(),
            r.score.to_string(),
            r.entropy.to_string(),
        ])
        .map_err(wrap)?;
    }
    finish(w)
}

/// Long format `metric,group,value`. Per-class rows use the class name as
/// group; uncertainty rows use `correct`/`incorrect`.
pub fn write_metrics(
    metrics: &ClassificationMetrics,
    report: &UncertaintyReport,
    class_names: &[String],
    out: impl Write,
) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["metric", "group", "value"]).map_err(wrap)?;
    let mut row = |m: &str, g: &str, v: String| w.write_record([m, g, v.as_str()]).map_err(wrap);
    row("accuracy", "all", metrics.accuracy.to_string())?;
    row("macro_precision", "all", metrics.macro_precision.to_string())?;
    row("macro_recall", "all", metrics.macro_recall.to_string())?;
    row("macro_f1", "all", metrics.macro_f1.to_string())?;
    for k in 0..metrics.classes() {
        let name = class_names.get(k).cloned().unwrap_or_else(|| format!("class{k}"));
        row("precision", &name, metrics.precision[k].to_string())?;
        row("recall", &name, metrics.recall[k].to_string())?;
        row("f1", &name, metrics.f1[k].to_string())?;
        row("support", &name, metrics.confusion[k].iter().sum::<usize>().to_string())?;
    }
    for (k, counts) in metrics.confusion.iter().enumerate() {
        for (j, c) in counts.iter().enumerate() {
            row("confusion", &format!("{k}->{j}"), c.to_string())?;
        }
    }
    row("uncertainty_method", "all", report.method.as_str().to_string())?;
    row("mean_uncertainty", "correct", opt(report.mean_correct))?;
    row("mean_uncertainty", "incorrect", opt(report.mean_incorrect))?;
    row("ratio", "all", format_ratio(report.ratio))?;
    for (group, q) in [("correct", report.quartiles_correct), ("incorrect", report.quartiles_incorrect)] {
        let q: Option<Quartiles> = q;
        row("min", group, opt(q.map(|q| q.min)))?;
        row("q1", group, opt(q.map(|q| q.q1)))?;
        row("median", group, opt(q.map(|q| q.median)))?;
        row("q3", group, opt(q.map(|q| q.q3)))?;
        row("max", group, opt(q.map(|q| q.max)))?;
    }
    finish(w)
}

/// `bin,lower,upper,correct,incorrect` with relative frequencies.
pub fn write_histogram(h: &Histogram, out: impl Write) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["bin", "lower", "upper", "correct", "incorrect"]).map_err(wrap)?;
    for k in 0..h.correct.len() {
        w.write_record([
            k.to_string(),
            h.edges[k].to_string(),
            h.edges[k + 1].to_string(),
            h.correct[k].to_string(),
            h.incorrect[k].to_string(),
        ])
        .map_err(wrap)?;
    }
    finish(w)
}

fn spread_fields(s: Option<Spread>) -> [String; 3] {
    match s {
        Some(s) => [s.mean.to_string(), s.min.to_string(), s.max.to_string()],
        None => ["undefined".into(), "undefined".into(), "undefined".into()],
    }
}

/// One row per variant with mean/min/max over seeds and the full-scale
/// reference values.
pub fn write_comparison(rows: &[ComparisonRow], out: impl Write) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["variant".to_string(), "runs".into(), "uncertainty_method".into()];
    for m in ["accuracy", "macro_precision", "macro_recall", "macro_f1", "u_correct", "u_incorrect", "ratio"] {
        for s in ["mean", "min", "max"] {
            header.push(format!("{m}_{s}"));
        }
    }
    header.extend(["ratio_defined_runs".into(), "full_scale_f1".into(), "full_scale_ratio".into()]);
    w.write_record(&header).map_err(wrap)?;
    for r in rows {
        let mut rec = vec![r.variant.to_string(), r.runs.to_string(), r.method.to_string()];
        for s in [Some(r.accuracy), Some(r.macro_precision), Some(r.macro_recall), Some(r.macro_f1)] {
            rec.extend(spread_fields(s));
        }
        rec.extend(spread_fields(r.mean_correct));
        rec.extend(spread_fields(r.mean_incorrect));
        rec.extend(spread_fields(r.ratio));
        rec.push(r.ratio_defined_runs.to_string());
        rec.push(r.reference.f1.to_string());
        rec.push(r.reference.ratio.map_or_else(|| "n/a".into(), |x| x.to_string()));
        w.write_record(&rec).map_err(wrap)?;
    }
    finish(w)
}
