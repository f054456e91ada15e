use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::tensor::Tensor;

/// Named trainable tensors of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// True when both hold the same names with bit-identical values.
    pub fn bit_identical(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Checks that every parameter of `spec` is present with the right shape
    /// and that nothing else is.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::shape(
                "params",
                format!("spec has {} parameters, got {}", expected.len(), self.tensors.len()),
            ));
        }
        for (name, shape, _) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(
                        "params",
                        format!("{name}: expected {shape:?}, got {:?}", t.shape()),
                    ))
                }
                None => return Err(Error::shape("params", format!("missing {name}"))),
            }
        }
        Ok(())
    }
}

/// He initialization: weights `N(0, 2 / fan_in)`, biases zero.
///
/// Each tensor draws from its own stream keyed by `(seed, name)`, so models
/// that differ only in dropout placement get identical parameters.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut tensors = BTreeMap::new();
    for (name, shape, fan_in) in spec.param_shapes() {
        let numel: usize = shape.iter().product();
        let data = if name.ends_with("bias") {
            vec![0.0; numel]
        } else {
            let std = (2.0 / fan_in as f64).sqrt();
            let mut r = rng::stream(seed, Domain::Init, rng::hash_str(&name), 0);
            (0..numel)
                .map(|_| std * r.sample::<f64, _>(StandardNormal))
                .collect()
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ModelParams { tensors, seed })
}
