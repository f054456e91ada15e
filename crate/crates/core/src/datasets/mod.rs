//! Synthetic datasets, CSV/IDX ingestion and stratified splits.

mod csv_io;
mod idx;
mod split;
mod synth;

pub use csv_io::{load_csv, read_csv, write_csv};
pub use idx::{load_idx, parse_idx, write_idx};
pub use split::{split, split_indices, SplitSpec};
pub use synth::{synth_blobs, synth_textures, texture_class_names, BLOB_RADIUS};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    SyntheticBlobs,
    SyntheticTextures,
    Csv,
    Idx,
}

/// Labeled examples; `inputs` has shape `[N, ...example shape]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("a dataset needs at least one example"));
        }
        if inputs.ndim() < 2 || inputs.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("inputs {:?} for {} labels", inputs.shape(), labels.len()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {} classes",
                class_names.len()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::invalid("dataset inputs must be finite"));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_names,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Shape of one example.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {i} out of range")));
        }
        Dataset::new(
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
            self.provenance,
        )
    }

    /// Inputs and labels for a list of example indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

pub(crate) fn default_class_names(c: usize) -> Vec<String> {
    (0..c).map(|k| format!("class{k}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_labels_and_empty() {
        let x = Tensor::zeros(vec![2, 3]);
        assert!(Dataset::new(x.clone(), vec![0, 2], default_class_names(2), Provenance::Csv).is_err());
        assert!(Dataset::new(Tensor::zeros(vec![0, 3]), vec![], default_class_names(2), Provenance::Csv).is_err());
        let ok = Dataset::new(x, vec![0, 1], default_class_names(2), Provenance::Csv).unwrap();
        assert_eq!(ok.example_shape(), &[3]);
        assert_eq!(ok.class_counts(), vec![1, 1]);
    }
}
