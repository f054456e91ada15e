use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd-momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::invalid(format!("unknown optimizer {s:?} (expected adam or sgd-momentum)"))),
        }
    }
}

/// For SGD `beta1` is the momentum coefficient and `beta2`/`eps` are unused.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            lr,
            beta1: momentum,
            beta2: 0.0,
            eps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && match self.kind {
                OptimizerKind::Adam => (0.0..1.0).contains(&self.beta2) && self.eps > 0.0,
                OptimizerKind::SgdMomentum => true,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers keyed like the parameters they update.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ModelParams) -> Result<Self> {
        config.validate()?;
        let zeros = |_: ()| -> BTreeMap<String, Tensor> {
            params
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect()
        };
        let second = match config.kind {
            OptimizerKind::Adam => zeros(()),
            OptimizerKind::SgdMomentum => BTreeMap::new(),
        };
        Ok(OptimizerState {
            config,
            step: 0,
            first: zeros(()),
            second,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every parameter must have a gradient of its shape.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in &params.tensors {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::invalid(format!("no gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "optimizer step",
                    format!("gradient {:?} for parameter {name} of shape {:?}", g.shape(), p.shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let (bc1, bc2) = (1.0 - c.beta1.powf(t), 1.0 - c.beta2.powf(t));
        for (name, p) in params.tensors.iter_mut() {
            let g = grads[name].data();
            let m = self.first.get_mut(name).expect("buffer per parameter").data_mut();
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    for ((w, m), g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(g) {
                        *m = c.beta1 * *m + g;
                        *w -= c.lr * *m;
                    }
                }
                OptimizerKind::Adam => {
                    let v = self.second.get_mut(name).expect("buffer per parameter").data_mut();
                    for (((w, m), v), g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
