use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which uncertainty configuration a model implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// No dropout.
    Baseline,
    /// One dropout layer immediately before the final fully connected layer.
    Bayesian1,
    /// Dropout before every residual block plus the `Bayesian1` placement.
    Bayesian2,
    /// Baseline body with a `(mu, log sigma^2)` output head.
    Variational,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Bayesian1,
        Variant::Bayesian2,
        Variant::Variational,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Bayesian1 => "bayesian1",
            Variant::Bayesian2 => "bayesian2",
            Variant::Variational => "variational",
        }
    }

    pub fn uses_mc_dropout(self) -> bool {
        matches!(self, Variant::Bayesian1 | Variant::Bayesian2)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    /// Dropout is the identity.
    EvalDeterministic,
    /// Masks are drawn exactly as in `Train`.
    EvalSampling,
}

impl DropoutMode {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, DropoutMode::EvalDeterministic)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Linear {
        fan_in: usize,
        fan_out: usize,
    },
    /// 3x3 convolution, padding 1.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    GlobalAvgPool,
    Dropout {
        p: f64,
    },
    /// `relu(x + fc2(relu(fc1(x))))`.
    ResidualDense {
        width: usize,
    },
    /// `relu(shortcut(x) + conv2(relu(conv1(x))))`, with a 1x1 projection
    /// shortcut when channels or stride change.
    ResidualConv {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// Two parallel fully connected layers producing `mu` and `log sigma^2`.
    VariationalHead {
        fan_in: usize,
        classes: usize,
    },
}

impl LayerSpec {
    pub fn is_residual(&self) -> bool {
        matches!(self, LayerSpec::ResidualDense { .. } | LayerSpec::ResidualConv { .. })
    }

    pub fn has_params(&self) -> bool {
        !matches!(
            self,
            LayerSpec::Relu | LayerSpec::GlobalAvgPool | LayerSpec::Dropout { .. }
        )
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::shape("layer", format!("{self} cannot take input {input:?}"));
        match *self {
            LayerSpec::Linear { fan_in, fan_out } => {
                (input == [fan_in]).then(|| vec![fan_out]).ok_or_else(bad)
            }
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                stride,
            }
            | LayerSpec::ResidualConv {
                in_channels,
                out_channels,
                stride,
            } => match input {
                &[c, h, w] if c == in_channels && stride > 0 && h > 0 && w > 0 => {
                    Ok(vec![out_channels, (h - 1) / stride + 1, (w - 1) / stride + 1])
                }
                _ => Err(bad()),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { p } => {
                if (0.0..1.0).contains(&p) {
                    Ok(input.to_vec())
                } else {
                    Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")))
                }
            }
            LayerSpec::GlobalAvgPool => match input {
                &[c, _, _] => Ok(vec![c]),
                _ => Err(bad()),
            },
            LayerSpec::ResidualDense { width } => {
                (input == [width]).then(|| vec![width]).ok_or_else(bad)
            }
            LayerSpec::VariationalHead { fan_in, classes } => {
                (input == [fan_in]).then(|| vec![classes]).ok_or_else(bad)
            }
        }
    }

    /// `(suffix, shape, fan_in)` for each parameter of this layer.
    pub(crate) fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        fn dense(prefix: &str, i: usize, o: usize) -> [(String, Vec<usize>, usize); 2] {
            [
                (format!("{prefix}weight"), vec![i, o], i),
                (format!("{prefix}bias"), vec![o], i),
            ]
        }
        fn conv(prefix: &str, i: usize, o: usize, k: usize) -> [(String, Vec<usize>, usize); 2] {
            [
                (format!("{prefix}weight"), vec![o, i, k, k], i * k * k),
                (format!("{prefix}bias"), vec![o], i * k * k),
            ]
        }
        match *self {
            LayerSpec::Linear { fan_in, fan_out } => dense("", fan_in, fan_out).to_vec(),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => conv("", in_channels, out_channels, 3).to_vec(),
            LayerSpec::ResidualDense { width } => {
                let mut v = dense("fc1.", width, width).to_vec();
                v.extend(dense("fc2.", width, width));
                v
            }
            LayerSpec::ResidualConv {
                in_channels,
                out_channels,
                stride,
            } => {
                let mut v = conv("conv1.", in_channels, out_channels, 3).to_vec();
                v.extend(conv("conv2.", out_channels, out_channels, 3));
                if in_channels != out_channels || stride != 1 {
                    v.extend(conv("proj.", in_channels, out_channels, 1));
                }
                v
            }
            LayerSpec::VariationalHead { fan_in, classes } => {
                let mut v = dense("mu.", fan_in, classes).to_vec();
                v.extend(dense("logvar.", fan_in, classes));
                v
            }
            LayerSpec::Relu | LayerSpec::GlobalAvgPool | LayerSpec::Dropout { .. } => Vec::new(),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Linear { fan_in, fan_out } => write!(f, "linear {fan_in} {fan_out}"),
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                stride,
            } => write!(f, "conv3x3 {in_channels} {out_channels} {stride}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::GlobalAvgPool => f.write_str("global-avg-pool"),
            LayerSpec::Dropout { p } => write!(f, "dropout {p}"),
            LayerSpec::ResidualDense { width } => write!(f, "residual-dense {width}"),
            LayerSpec::ResidualConv {
                in_channels,
                out_channels,
                stride,
            } => write!(f, "residual-conv {in_channels} {out_channels} {stride}"),
            LayerSpec::VariationalHead { fan_in, classes } => {
                write!(f, "variational-head {fan_in} {classes}")
            }
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        let bad = || Error::invalid(format!("malformed layer {s:?}"));
        let ints = |n: usize| -> Result<Vec<usize>> {
            if args.len() != n {
                return Err(bad());
            }
            args.iter().map(|a| a.parse().map_err(|_| bad())).collect()
        };
        Ok(match kind {
            "linear" => {
                let v = ints(2)?;
                LayerSpec::Linear {
                    fan_in: v[0],
                    fan_out: v[1],
                }
            }
            "conv3x3" => {
                let v = ints(3)?;
                LayerSpec::Conv3x3 {
                    in_channels: v[0],
                    out_channels: v[1],
                    stride: v[2],
                }
            }
            "relu" => {
                ints(0)?;
                LayerSpec::Relu
            }
            "global-avg-pool" => {
                ints(0)?;
                LayerSpec::GlobalAvgPool
            }
            "dropout" => {
                if args.len() != 1 {
                    return Err(bad());
                }
                LayerSpec::Dropout {
                    p: args[0].parse().map_err(|_| bad())?,
                }
            }
            "residual-dense" => LayerSpec::ResidualDense { width: ints(1)?[0] },
            "residual-conv" => {
                let v = ints(3)?;
                LayerSpec::ResidualConv {
                    in_channels: v[0],
                    out_channels: v[1],
                    stride: v[2],
                }
            }
            "variational-head" => {
                let v = ints(2)?;
                LayerSpec::VariationalHead {
                    fan_in: v[0],
                    classes: v[1],
                }
            }
            _ => return Err(bad()),
        })
    }
}

/// Architecture description.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub variant: Variant,
    pub classes: usize,
    /// Per-example input shape: `[dim]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
}

pub const DEFAULT_CLASSES: usize = 4;

impl ModelSpec {
    /// Fully connected backbone: `linear -> relu -> residual-dense x blocks -> head`.
    pub fn mlp(
        variant: Variant,
        input_dim: usize,
        hidden: usize,
        blocks: usize,
        classes: usize,
        dropout: f64,
    ) -> Result<Self> {
        let mut body = vec![
            LayerSpec::Linear {
                fan_in: input_dim,
                fan_out: hidden,
            },
            LayerSpec::Relu,
        ];
        body.extend((0..blocks).map(|_| LayerSpec::ResidualDense { width: hidden }));
        Self::assemble(variant, body, hidden, classes, dropout, vec![input_dim])
    }

    /// Small residual CNN: 3x3 stem with 8 channels, residual blocks with
    /// 8/16/16 channels (the second one downsamples by 2), global average
    /// pooling and a fully connected head.
    pub fn mini_resnet(
        variant: Variant,
        input_shape: [usize; 3],
        classes: usize,
        dropout: f64,
    ) -> Result<Self> {
        let [c, _, _] = input_shape;
        let body = vec![
            LayerSpec::Conv3x3 {
                in_channels: c,
                out_channels: 8,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::ResidualConv {
                in_channels: 8,
                out_channels: 8,
                stride: 1,
            },
            LayerSpec::ResidualConv {
                in_channels: 8,
                out_channels: 16,
                stride: 2,
            },
            LayerSpec::ResidualConv {
                in_channels: 16,
                out_channels: 16,
                stride: 1,
            },
            LayerSpec::GlobalAvgPool,
        ];
        Self::assemble(variant, body, 16, classes, dropout, input_shape.to_vec())
    }

    /// Inserts the variant's dropout layers into `body` and appends the head.
    fn assemble(
        variant: Variant,
        body: Vec<LayerSpec>,
        features: usize,
        classes: usize,
        p: f64,
        input_shape: Vec<usize>,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(body.len() + 8);
        for layer in body {
            if variant == Variant::Bayesian2 && layer.is_residual() {
                layers.push(LayerSpec::Dropout { p });
            }
            layers.push(layer);
        }
        match variant {
            Variant::Baseline => layers.push(LayerSpec::Linear {
                fan_in: features,
                fan_out: classes,
            }),
            Variant::Bayesian1 | Variant::Bayesian2 => {
                layers.push(LayerSpec::Dropout { p });
                layers.push(LayerSpec::Linear {
                    fan_in: features,
                    fan_out: classes,
                });
            }
            Variant::Variational => layers.push(LayerSpec::VariationalHead {
                fan_in: features,
                classes,
            }),
        }
        let spec = ModelSpec {
            layers,
            variant,
            classes,
            input_shape,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-example activation shapes; entry `i` is the input of layer `i`,
    /// the last entry the model output.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn dropout_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Dropout { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn residual_blocks(&self) -> usize {
        self.layers.iter().filter(|l| l.is_residual()).count()
    }

    /// Checks shapes and the dropout placement rules of the variant.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        let shapes = self.infer_shapes()?;
        if shapes.last().unwrap() != &[self.classes] {
            return Err(Error::shape(
                "model",
                format!("output {:?}, expected [{}]", shapes.last().unwrap(), self.classes),
            ));
        }
        let n = self.layers.len();
        let last = &self.layers[n - 1];
        let drops = self.dropout_positions();
        let head_is_linear = matches!(last, LayerSpec::Linear { .. });
        let violation = |msg: &str| Err(Error::invalid(format!("{} spec: {msg}", self.variant)));
        if self
            .layers
            .iter()
            .take(n - 1)
            .any(|l| matches!(l, LayerSpec::VariationalHead { .. }))
        {
            return violation("variational head must be the last layer");
        }
        match self.variant {
            Variant::Baseline | Variant::Variational => {
                if !drops.is_empty() {
                    return violation("must not contain dropout");
                }
                let want_var = self.variant == Variant::Variational;
                if want_var != matches!(last, LayerSpec::VariationalHead { .. })
                    || (!want_var && !head_is_linear)
                {
                    return violation("wrong output head");
                }
            }
            Variant::Bayesian1 => {
                if !head_is_linear || n < 2 || drops != [n - 2] {
                    return violation("needs exactly one dropout, immediately before the final linear layer");
                }
            }
            Variant::Bayesian2 => {
                if !head_is_linear || n < 2 {
                    return violation("wrong output head");
                }
                let mut want: Vec<usize> = self
                    .layers
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| l.is_residual())
                    .map(|(i, _)| i - 1)
                    .collect();
                want.push(n - 2);
                if drops != want {
                    return violation("needs dropout before every residual block and before the final linear layer");
                }
            }
        }
        Ok(())
    }

    /// Parameter name prefix per layer; `None` for parameter-free layers.
    /// Names count only parameterized layers so dropout placement does not
    /// shift them.
    pub fn param_prefixes(&self) -> Vec<Option<String>> {
        let mut k = 0;
        self.layers
            .iter()
            .map(|l| {
                l.has_params().then(|| {
                    k += 1;
                    format!("layer{}.", k - 1)
                })
            })
            .collect()
    }

    /// `(name, shape, fan_in)` of every parameter, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.layers
            .iter()
            .zip(self.param_prefixes())
            .filter_map(|(l, p)| p.map(|p| (l, p)))
            .flat_map(|(l, prefix)| {
                l.param_shapes()
                    .into_iter()
                    .map(move |(s, shape, fan_in)| (format!("{prefix}{s}"), shape, fan_in))
            })
            .collect()
    }
}
