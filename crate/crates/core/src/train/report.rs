use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyMethod;

pub const HISTOGRAM_BINS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleRecord {
    pub id: usize,
    pub true_label: usize,
    pub predicted: usize,
    pub correct: bool,
    pub score: f64,
    pub entropy: f64,
}

/// Type 7 quantiles (linear interpolation between order statistics).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Quartiles {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Relative frequencies of both groups over shared equal-width bins.
/// An empty group has all-zero frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

impl Histogram {
    /// `bins` bins over `[0, max]`, the top edge inclusive. With every score
    /// at 0 the range becomes `[0, 1]`.
    pub fn build(correct: &[f64], incorrect: &[f64], bins: usize) -> Self {
        let max = correct.iter().chain(incorrect).copied().fold(0.0, f64::max);
        let top = if max > 0.0 { max } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|i| top * i as f64 / bins as f64).collect();
        let freq = |values: &[f64]| {
            let mut counts = vec![0usize; bins];
            for &v in values {
                let k = ((v / top) * bins as f64).floor();
                counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
            }
            let n = values.len();
            counts
                .into_iter()
                .map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect::<Vec<_>>()
        };
        Histogram {
            correct: freq(correct),
            incorrect: freq(incorrect),
            edges,
        }
    }
}

/// Uncertainty of correct versus incorrect predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyReport {
    pub method: UncertaintyMethod,
    pub records: Vec<ExampleRecord>,
    /// Mean score over correct predictions.
    pub mean_correct: Option<f64>,
    /// Mean score over incorrect predictions.
    pub mean_incorrect: Option<f64>,
    /// `mean_incorrect / mean_correct`; `None` when a group is empty or the
    /// correct-group mean is 0.
    pub ratio: Option<f64>,
    pub quartiles_correct: Option<Quartiles>,
    pub quartiles_incorrect: Option<Quartiles>,
    pub histogram: Histogram,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl UncertaintyReport {
    pub fn build(method: UncertaintyMethod, records: Vec<ExampleRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no examples to report on"));
        }
        if let Some(r) = records.iter().find(|r| !r.score.is_finite() || r.score < 0.0) {
            return Err(Error::invalid(format!("example {} has invalid score {}", r.id, r.score)));
        }
        let (good, bad): (Vec<&ExampleRecord>, Vec<&ExampleRecord>) = records.iter().partition(|r| r.correct);
        let good: Vec<f64> = good.iter().map(|r| r.score).collect();
        let bad: Vec<f64> = bad.iter().map(|r| r.score).collect();
        let mean_correct = mean(&good);
        let mean_incorrect = mean(&bad);
        let ratio = match (mean_correct, mean_incorrect) {
            (Some(t), Some(f)) if t > 0.0 => Some(f / t),
            _ => None,
        };
        Ok(UncertaintyReport {
            method,
            quartiles_correct: Quartiles::of(&good),
            quartiles_incorrect: Quartiles::of(&bad),
            histogram: Histogram::build(&good, &bad, HISTOGRAM_BINS),
            mean_correct,
            mean_incorrect,
            ratio,
            records,
        })
    }

    pub fn ratio_text(&self) -> String {
        format_ratio(self.ratio)
    }
}

/// A ratio for tables: the number, or `undefined`.
pub fn format_ratio(ratio: Option<f64>) -> String {
    ratio.map_or_else(|| "undefined".to_string(), |r| r.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, correct: bool, score: f64) -> ExampleRecord {
        ExampleRecord {
            id,
            true_label: 0,
            predicted: usize::from(!correct),
            correct,
            score,
            entropy: 0.0,
        }
    }

    #[test]
    fn ratio_of_means() {
        let r = UncertaintyReport::build(
            UncertaintyMethod::McDropout,
            vec![rec(0, true, 1.0), rec(1, true, 3.0), rec(2, false, 8.0)],
        )
        .unwrap();
        assert_eq!(r.mean_correct, Some(2.0));
        assert_eq!(r.ratio, Some(4.0));
    }

    #[test]
    fn all_correct_is_undefined() {
        let r = UncertaintyReport::build(UncertaintyMethod::Entropy, vec![rec(0, true, 0.5)]).unwrap();
        assert_eq!(r.ratio, None);
        assert_eq!(r.ratio_text(), "undefined");
        assert!(r.quartiles_incorrect.is_none());
        assert_eq!(r.histogram.incorrect.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn quartiles_type7() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(Quartiles::of(&[7.0]).unwrap().q3, 7.0);
    }

    #[test]
    fn histogram_shares_edges_and_normalizes() {
        let h = Histogram::build(&[0.0, 0.1, 1.0], &[0.5, 2.0], 30);
        assert_eq!(h.edges.len(), 31);
        assert_eq!(h.edges[30], 2.0);
        assert!((h.correct.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.incorrect[29], 0.5);
        let zeros = Histogram::build(&[0.0, 0.0], &[], 30);
        assert_eq!(zeros.correct[0], 1.0);
    }

    #[test]
    fn rejects_empty_or_negative() {
        assert!(UncertaintyReport::build(UncertaintyMethod::Entropy, vec![]).is_err());
        assert!(UncertaintyReport::build(UncertaintyMethod::Entropy, vec![rec(0, true, -1.0)]).is_err());
    }
}
