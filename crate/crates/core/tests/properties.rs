use proptest::prelude::*;

use uq_core::datasets::{read_csv, split_indices, write_csv, write_idx, load_idx, Dataset, Provenance, SplitSpec};
use uq_core::train::{f1_score, ClassificationMetrics, ExampleRecord, Histogram, LossBreakdown, UncertaintyReport};
use uq_core::uncertainty::{kld, UncertaintyMethod};
use uq_core::Tensor;

fn dataset(values: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Dataset {
    let n = labels.len();
    let names = (0..classes).map(|k| format!("class{k}")).collect();
    Dataset::new(Tensor::new(vec![n, dim], values).unwrap(), labels, names, Provenance::Csv).unwrap()
}

fn arb_dataset(byte_valued: bool) -> impl Strategy<Value = Dataset> {
    (1usize..6, 1usize..20, 2usize..5).prop_flat_map(move |(dim, n, classes)| {
        let value = if byte_valued {
            (0u8..=255).prop_map(|b| f64::from(b) / 255.0).boxed()
        } else {
            (-1e6f64..1e6).boxed()
        };
        (
            prop::collection::vec(value, n * dim),
            prop::collection::vec(0..classes, n),
        )
            .prop_map(move |(v, l)| dataset(v, dim, l, classes))
    })
}

/// Precision, recall and F1 of class `k` counted straight from the pairs.
fn counted(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == k, p == k) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    (p, r, f1_score(p, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(ds in arb_dataset(false)) {
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv("mem", buf.as_slice(), "label", Some(ds.num_classes())).unwrap();
        prop_assert_eq!(back.inputs(), ds.inputs());
        prop_assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn idx_round_trip(ds in arb_dataset(true)) {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
        write_idx(&ds, &img, &lab).unwrap();
        let back = load_idx(&img, &lab, Some(ds.num_classes())).unwrap();
        prop_assert_eq!(back.inputs(), ds.inputs());
        prop_assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn splits_partition_and_stratify(
        per_class in prop::collection::vec(3usize..40, 2..5),
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = per_class.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let spec = SplitSpec::new(0.6, 0.2, 0.2, seed).unwrap();
        let parts = split_indices(&labels, per_class.len(), &spec).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (part, frac) in parts.iter().zip([0.6, 0.2, 0.2]) {
            for (c, &n) in per_class.iter().enumerate() {
                let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
                // proportional share, plus the rounding of the split sizes
                prop_assert!((got - n as f64 * frac).abs() <= 2.0, "class {} got {} of {}", c, got, n);
            }
        }
    }

    #[test]
    fn metrics_from_pairs_match_counts(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200),
    ) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = ClassificationMetrics::from_pairs(&truth, &pred, 4).unwrap();
        prop_assert_eq!(m.total(), truth.len());
        for k in 0..4 {
            let (p, r, f) = counted(&truth, &pred, k);
            prop_assert_eq!(m.precision[k], p);
            prop_assert_eq!(m.recall[k], r);
            prop_assert_eq!(m.f1[k], f);
            prop_assert!((0.0..=1.0).contains(&m.f1[k]));
        }
    }

    #[test]
    fn ratio_ignores_score_scale(
        scores in prop::collection::vec((0.001f64..10.0, any::<bool>()), 2..60),
        c in 0.01f64..100.0,
    ) {
        let recs = |scale: f64| -> Vec<ExampleRecord> {
            scores.iter().enumerate().map(|(id, &(s, ok))| ExampleRecord {
                id, true_label: 0, predicted: usize::from(!ok), correct: ok, score: s * scale, entropy: 0.0,
            }).collect()
        };
        let a = UncertaintyReport::build(UncertaintyMethod::McDropout, recs(1.0)).unwrap();
        let b = UncertaintyReport::build(UncertaintyMethod::McDropout, recs(c)).unwrap();
        match (a.ratio, b.ratio) {
            (Some(x), Some(y)) => {
                prop_assert!(x > 0.0);
                prop_assert!((x - y).abs() <= 1e-12 * x);
            }
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn histogram_frequencies_sum_to_one(
        good in prop::collection::vec(0.0f64..5.0, 1..50),
        bad in prop::collection::vec(0.0f64..5.0, 1..50),
    ) {
        let h = Histogram::build(&good, &bad, 30);
        prop_assert_eq!(h.edges.len(), 31);
        prop_assert!((h.correct.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!((h.incorrect.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn loss_breakdown_is_additive(ce in 0.0f64..10.0, k in 0.0f64..10.0, beta in 0.0f64..5.0) {
        let b = LossBreakdown::new(ce, k, beta);
        prop_assert_eq!(b.total, b.cross_entropy + b.kld_weight * b.kld);
    }

    #[test]
    fn kld_is_nonnegative(
        pairs in prop::collection::vec((-5.0f64..5.0, 0.01f64..10.0), 1..10),
    ) {
        let (mu, s2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kld(&mu, &s2).unwrap() >= 0.0);
    }
}
