use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use rand::seq::SliceRandom;

/// Train/validation/test fractions and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let s = SplitSpec { train, val, test, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must be in [0, 1] and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }
}

/// Stratified assignment of example indices to `[train, val, test]`.
///
/// Split sizes are `round(N * train)`, `round(N * val)` and the remainder.
/// Within each class members are shuffled and spread evenly over `[0, 1)`;
/// walking all examples in that order and cutting at the split sizes keeps
/// every class within one example of its proportional share.
pub fn split_indices(labels: &[usize], classes: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let n = labels.len();
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_val = (n as f64 * spec.val).round() as usize;
    let sizes = [n_train, n_val, n.saturating_sub(n_train + n_val)];
    for (name, &size) in ["train", "validation", "test"].iter().zip(&sizes) {
        if size == 0 || n_train + n_val > n {
            return Err(Error::invalid(format!("{name} split would be empty")));
        }
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng::stream(spec.seed, Domain::Split, c as u64, 0));
        let count = members.len() as f64;
        for (rank, i) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / count, c, i));
        }
    }
    if keyed.len() != n {
        return Err(Error::invalid("label outside the class range"));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|k| k.2).collect();
    Ok([
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ])
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_indices(ds.labels(), ds.num_classes(), spec)?;
    Ok((ds.subset(&a)?, ds.subset(&b)?, ds.subset(&c)?))
}
