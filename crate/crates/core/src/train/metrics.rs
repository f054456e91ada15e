use crate::error::{Error, Result};

/// Confusion matrix (rows true class, columns predicted class) and the
/// scores derived from it. A ratio with a zero denominator is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ClassificationMetrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix", "must be square and non-empty"));
        }
        let n: usize = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let mut precision = Vec::with_capacity(c);
        let mut recall = Vec::with_capacity(c);
        let mut f1 = Vec::with_capacity(c);
        for k in 0..c {
            let tp = confusion[k][k];
            let predicted: usize = confusion.iter().map(|r| r[k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision.push(p);
            recall.push(r);
            f1.push(f1_score(p, r));
        }
        let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
        Ok(ClassificationMetrics {
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            accuracy: ratio(correct, n),
            confusion,
            precision,
            recall,
            f1,
        })
    }

    pub fn from_pairs(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("metrics", "truth and prediction lengths differ"));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::invalid(format!("label out of range for {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_fixture() {
        // positive class 1: TP 3, FP 1, FN 1, TN 5
        let m = ClassificationMetrics::from_confusion(vec![vec![5, 1], vec![1, 3]]).unwrap();
        assert_eq!(m.precision[1], 0.75);
        assert_eq!(m.recall[1], 0.75);
        assert_eq!(m.f1[1], 0.75);
        assert_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 1];
        let m = ClassificationMetrics::from_pairs(&labels, &labels, 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.macro_recall, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let m = ClassificationMetrics::from_pairs(&[0, 1], &[0, 0], 2).unwrap();
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.f1[1], 0.0);
        assert_eq!(m.total(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ClassificationMetrics::from_pairs(&[0], &[2], 2).is_err());
        assert!(ClassificationMetrics::from_pairs(&[0], &[], 2).is_err());
        assert!(ClassificationMetrics::from_confusion(vec![vec![0, 0], vec![0, 0]]).is_err());
        assert!(ClassificationMetrics::from_confusion(vec![vec![1, 0]]).is_err());
    }
}
