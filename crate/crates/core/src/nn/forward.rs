use std::collections::BTreeMap;

use super::dropout::dropout_var;
use super::params::ModelParams;
use super::spec::{DropoutMode, LayerSpec, ModelSpec};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::PassKey;
use crate::tensor::Tensor;

/// `log sigma^2` produced by a variational head is clamped to this range.
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);

/// Parameters bound as leaves of one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::shape("model", format!("missing parameter {name}")))
    }
}

pub fn bind_params(g: &mut Graph, params: &ModelParams, requires_grad: bool) -> Result<BoundParams> {
    let mut vars = BTreeMap::new();
    for (name, t) in &params.tensors {
        vars.insert(name.clone(), g.input(name, t.clone(), requires_grad)?);
    }
    Ok(BoundParams { vars })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelOutput {
    Logits(Var),
    Variational { mu: Var, logvar: Var },
}

impl ModelOutput {
    /// The tensor the class prediction is taken from: logits, or `mu`.
    pub fn prediction(&self) -> Var {
        match *self {
            ModelOutput::Logits(v) => v,
            ModelOutput::Variational { mu, .. } => mu,
        }
    }
}

/// Counts stochastic dropout applications during a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    pub dropout_applications: usize,
}

fn linear(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}weight"))?;
    let b = p.get(&format!("{prefix}bias"))?;
    let h = g.matmul(x, w)?;
    g.bias_add(h, b)
}

fn conv(g: &mut Graph, p: &BoundParams, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{prefix}weight"))?;
    let b = p.get(&format!("{prefix}bias"))?;
    g.conv2d(x, w, b, stride)
}

/// Runs layers `range` of `spec` on the tape.
///
/// Dropout layer `i` draws its mask from `key.layer_stream(i)`.
#[allow(clippy::too_many_arguments)]
pub fn forward_layers(
    g: &mut Graph,
    params: &BoundParams,
    spec: &ModelSpec,
    x: Var,
    range: std::ops::Range<usize>,
    mode: DropoutMode,
    key: PassKey,
    trace: &mut ForwardTrace,
) -> Result<ModelOutput> {
    let prefixes = spec.param_prefixes();
    let mut h = x;
    for i in range {
        let prefix = prefixes[i].as_deref().unwrap_or("");
        h = match spec.layers[i] {
            LayerSpec::Linear { .. } => linear(g, params, prefix, h)?,
            LayerSpec::Conv3x3 { stride, .. } => conv(g, params, prefix, h, stride)?,
            LayerSpec::Relu => g.relu(h)?,
            LayerSpec::GlobalAvgPool => g.global_avg_pool(h)?,
            LayerSpec::Dropout { p } => {
                if mode.is_stochastic() && p > 0.0 {
                    trace.dropout_applications += 1;
                }
                dropout_var(g, h, p, mode, &mut key.layer_stream(i))?
            }
            LayerSpec::ResidualDense { .. } => {
                let a = linear(g, params, &format!("{prefix}fc1."), h)?;
                let a = g.relu(a)?;
                let a = linear(g, params, &format!("{prefix}fc2."), a)?;
                let s = g.add(h, a)?;
                g.relu(s)?
            }
            LayerSpec::ResidualConv {
                in_channels,
                out_channels,
                stride,
            } => {
                let a = conv(g, params, &format!("{prefix}conv1."), h, stride)?;
                let a = g.relu(a)?;
                let a = conv(g, params, &format!("{prefix}conv2."), a, 1)?;
                let shortcut = if in_channels != out_channels || stride != 1 {
                    conv(g, params, &format!("{prefix}proj."), h, stride)?
                } else {
                    h
                };
                let s = g.add(shortcut, a)?;
                g.relu(s)?
            }
            LayerSpec::VariationalHead { .. } => {
                let mu = linear(g, params, &format!("{prefix}mu."), h)?;
                let lv = linear(g, params, &format!("{prefix}logvar."), h)?;
                let logvar = g.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1)?;
                return Ok(ModelOutput::Variational { mu, logvar });
            }
        };
    }
    Ok(ModelOutput::Logits(h))
}

/// Adds a leading batch axis to a single example; checks the per-example shape.
pub fn batched(spec: &ModelSpec, x: &Tensor) -> Result<Tensor> {
    if x.shape() == spec.input_shape.as_slice() {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        return x.clone().reshape(shape);
    }
    if x.ndim() == spec.input_shape.len() + 1 && x.shape()[1..] == spec.input_shape[..] {
        return Ok(x.clone());
    }
    Err(Error::shape(
        "model input",
        format!("expected [batch, {:?}], got {:?}", spec.input_shape, x.shape()),
    ))
}

/// Forward output as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardValues {
    /// Logits, or `mu` for a variational head.
    pub logits: Tensor,
    /// Clamped `log sigma^2` of a variational head.
    pub logvar: Option<Tensor>,
    pub trace: ForwardTrace,
}

/// Runs layers `start..` on an activation that is the input of layer `start`.
pub fn forward_from(
    params: &ModelParams,
    spec: &ModelSpec,
    activation: &Tensor,
    start: usize,
    mode: DropoutMode,
    key: PassKey,
) -> Result<ForwardValues> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, params, false)?;
    let x = g.constant(activation.clone())?;
    let mut trace = ForwardTrace::default();
    let out = forward_layers(&mut g, &bound, spec, x, start..spec.layers.len(), mode, key, &mut trace)?;
    Ok(match out {
        ModelOutput::Logits(v) => ForwardValues {
            logits: g.value(v).clone(),
            logvar: None,
            trace,
        },
        ModelOutput::Variational { mu, logvar } => ForwardValues {
            logits: g.value(mu).clone(),
            logvar: Some(g.value(logvar).clone()),
            trace,
        },
    })
}

pub fn model_forward_values(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
    mode: DropoutMode,
    key: PassKey,
) -> Result<ForwardValues> {
    let x = batched(spec, x)?;
    forward_from(params, spec, &x, 0, mode, key)
}

/// Logits `[batch, classes]` (`mu` for a variational model).
pub fn model_forward(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
    mode: DropoutMode,
    key: PassKey,
) -> Result<Tensor> {
    Ok(model_forward_values(params, spec, x, mode, key)?.logits)
}

/// Runs the deterministic layers ahead of the first dropout layer.
///
/// Returns the activation entering that layer and its index, so repeated
/// stochastic passes can start there instead of recomputing the prefix.
pub fn deterministic_prefix(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
) -> Result<(Tensor, usize)> {
    let x = batched(spec, x)?;
    let start = spec.dropout_positions().first().copied().unwrap_or(spec.layers.len());
    if start == 0 {
        return Ok((x, 0));
    }
    let mut g = Graph::new();
    let bound = bind_params(&mut g, params, false)?;
    let xv = g.constant(x)?;
    let mut trace = ForwardTrace::default();
    let out = forward_layers(
        &mut g,
        &bound,
        spec,
        xv,
        0..start,
        DropoutMode::EvalDeterministic,
        PassKey::new(0, 0),
        &mut trace,
    )?;
    Ok((g.value(out.prediction()).clone(), start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::build_model;
    use crate::nn::spec::Variant;

    fn bits(t: &Tensor) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn zero_input_gives_finite_logits() {
        let spec = ModelSpec::mlp(Variant::Baseline, 6, 16, 2, 4, 0.0).unwrap();
        let p = build_model(&spec, 1).unwrap();
        let y = model_forward(&p, &spec, &Tensor::zeros(vec![6]), DropoutMode::EvalDeterministic, PassKey::new(0, 0))
            .unwrap();
        assert_eq!(y.shape(), &[1, 4]);
        assert!(y.is_finite());

        let spec = ModelSpec::mini_resnet(Variant::Baseline, [1, 16, 16], 4, 0.0).unwrap();
        let p = build_model(&spec, 1).unwrap();
        let y = model_forward(
            &p,
            &spec,
            &Tensor::zeros(vec![1, 16, 16]),
            DropoutMode::EvalDeterministic,
            PassKey::new(0, 0),
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 4]);
        assert!(y.is_finite());
    }

    #[test]
    fn frozen_rng_sampling_is_reproducible() {
        let spec = ModelSpec::mlp(Variant::Bayesian2, 3, 16, 2, 4, 0.5).unwrap();
        let p = build_model(&spec, 2).unwrap();
        let x = Tensor::new(vec![5, 3], (0..15).map(|i| f64::from(i) * 0.1 - 0.7).collect()).unwrap();
        let a = model_forward(&p, &spec, &x, DropoutMode::EvalSampling, PassKey::new(9, 4)).unwrap();
        let b = model_forward(&p, &spec, &x, DropoutMode::EvalSampling, PassKey::new(9, 4)).unwrap();
        let c = model_forward(&p, &spec, &x, DropoutMode::EvalSampling, PassKey::new(9, 5)).unwrap();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        let d1 = model_forward(&p, &spec, &x, DropoutMode::EvalDeterministic, PassKey::new(1, 0)).unwrap();
        let d2 = model_forward(&p, &spec, &x, DropoutMode::EvalDeterministic, PassKey::new(2, 7)).unwrap();
        assert_eq!(bits(&d1), bits(&d2));
    }

    #[test]
    fn bayesian2_counts_blocks_plus_one_dropouts() {
        let spec = ModelSpec::mini_resnet(Variant::Bayesian2, [1, 8, 8], 4, 0.5).unwrap();
        let p = build_model(&spec, 0).unwrap();
        let x = Tensor::filled(vec![2, 1, 8, 8], 0.3);
        let v = model_forward_values(&p, &spec, &x, DropoutMode::EvalSampling, PassKey::new(0, 0)).unwrap();
        assert_eq!(v.trace.dropout_applications, spec.residual_blocks() + 1);
        assert_eq!(spec.residual_blocks(), 3);
        let det = model_forward_values(&p, &spec, &x, DropoutMode::EvalDeterministic, PassKey::new(0, 0)).unwrap();
        assert_eq!(det.trace.dropout_applications, 0);
    }

    #[test]
    fn prefix_then_suffix_equals_full_pass() {
        let spec = ModelSpec::mlp(Variant::Bayesian1, 3, 8, 2, 4, 0.5).unwrap();
        let p = build_model(&spec, 3).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, -0.3, 1.0, -1.0, 0.5]).unwrap();
        let key = PassKey::new(4, 2);
        let full = model_forward(&p, &spec, &x, DropoutMode::EvalSampling, key).unwrap();
        let (act, start) = deterministic_prefix(&p, &spec, &x).unwrap();
        assert_eq!(start, spec.layers.len() - 2);
        let tail = forward_from(&p, &spec, &act, start, DropoutMode::EvalSampling, key).unwrap();
        assert_eq!(bits(&full), bits(&tail.logits));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let spec = ModelSpec::mlp(Variant::Baseline, 3, 8, 1, 4, 0.0).unwrap();
        let p = build_model(&spec, 0).unwrap();
        let r = model_forward(&p, &spec, &Tensor::zeros(vec![2, 4]), DropoutMode::EvalDeterministic, PassKey::new(0, 0));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn variational_logvar_is_clamped() {
        let spec = ModelSpec::mlp(Variant::Variational, 2, 4, 1, 3, 0.0).unwrap();
        let mut p = build_model(&spec, 0).unwrap();
        p.tensors.insert("layer2.logvar.bias".into(), Tensor::filled(vec![3], 50.0));
        let v = model_forward_values(&p, &spec, &Tensor::zeros(vec![2]), DropoutMode::EvalDeterministic, PassKey::new(0, 0))
            .unwrap();
        assert!(v.logvar.unwrap().data().iter().all(|&x| x == LOGVAR_RANGE.1));
    }
}
