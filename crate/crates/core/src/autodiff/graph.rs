use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    BiasAdd(usize, usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Softmax(usize),
    LogSoftmax(usize),
    CrossEntropy { logits: usize, targets: Vec<usize> },
    Sum(usize),
    Mean(usize),
    GlobalAvgPool(usize),
    Reshape(usize),
    Clamp(usize, f64, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::BiasAdd(..) => "bias_add",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Reshape(_) => "reshape",
            Op::Clamp(..) => "clamp",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager reverse-mode tape.
///
/// Every operation computes its value immediately and appends a node, so node
/// order is a topological order. [`Graph::backward`] replays the tape in
/// reverse, visiting each node once.
///
/// Broadcasting is limited to a one-element operand against a tensor in
/// `add`/`sub`/`mul`, and to [`Graph::bias_add`] along the last axis.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    names: BTreeMap<String, Var>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            names: BTreeMap::new(),
            check_finite: true,
        }
    }

    /// Toggles NaN/Inf detection (on by default).
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds a named input.
    pub fn input(&mut self, name: &str, value: Tensor, requires_grad: bool) -> Result<Var> {
        let v = self.push(value, Op::Leaf, requires_grad)?;
        self.names.insert(name.to_string(), v);
        Ok(v)
    }

    /// Unnamed leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn named(&self, name: &str) -> Option<Var> {
        self.names.get(name).copied()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        let id = self.nodes.len();
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(id))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        if sa == sb {
            Ok(sa.to_vec())
        } else if na == 1 && (nb != 1 || sb.len() >= sa.len()) {
            Ok(sb.to_vec())
        } else if nb == 1 {
            Ok(sa.to_vec())
        } else {
            Err(Error::shape(op, format!("{sa:?} vs {sb:?}")))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.broadcast_shape(name, a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let x = if da.len() == 1 { da[0] } else { da[i] };
                let y = if db.len() == 1 { db[0] } else { db[i] };
                f(x, y)
            })
            .collect();
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::new(shape, data)?, op, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a.0, b.0]);
        self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a.0, b.0), rg)
    }

    /// Adds a `[n]` bias along the last axis of `x`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::shape("bias_add", format!("{sx:?} + {sb:?}")));
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let out = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(&[x.0, bias.0]);
        self.push(out, Op::BiasAdd(x.0, bias.0), rg)
    }

    /// 2-D convolution, `input: [B, Cin, H, W]`, `weight: [Cout, Cin, K, K]`,
    /// `bias: [Cout]`, zero padding `K / 2`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if si.len() != 4
            || sw.len() != 4
            || sw[1] != si[1]
            || sw[2] != sw[3]
            || sb != [sw[0]]
            || stride == 0
        {
            return Err(Error::shape(
                "conv2d",
                format!("input {si:?}, weight {sw:?}, bias {sb:?}, stride {stride}"),
            ));
        }
        let geom = ConvGeom {
            batch: si[0],
            in_ch: si[1],
            height: si[2],
            width: si[3],
            out_ch: sw[0],
            kernel: sw[2],
            stride,
            pad: sw[2] / 2,
        };
        if geom.height + 2 * geom.pad < geom.kernel || geom.width + 2 * geom.pad < geom.kernel {
            return Err(Error::shape("conv2d", "kernel larger than padded input"));
        }
        let data = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let shape = vec![geom.batch, geom.out_ch, geom.out_height(), geom.out_width()];
        let rg = self.rg(&[input.0, weight.0, bias.0]);
        let op = Op::Conv2d {
            input: input.0,
            weight: weight.0,
            bias: bias.0,
            geom,
        };
        self.push(Tensor::new(shape, data)?, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    fn last_axis(&self, op: &'static str, a: Var) -> Result<usize> {
        match self.shape(a).last() {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(Error::shape(op, format!("{:?}", self.shape(a)))),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("softmax", a)?;
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(n) {
            data.extend(softmax_row(row));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Softmax(a.0), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("log_softmax", a)?;
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(n) {
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|x| x - lse));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::LogSoftmax(a.0), rg)
    }

    /// Mean over the batch of `-log softmax(logits)[target]`; `logits: [B, C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {s:?}, {} targets", targets.len()),
            ));
        }
        let c = s[1];
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid(format!("target {t} out of range for {c} classes")));
        }
        let t = self.value(logits);
        let loss: f64 = t
            .rows()
            .zip(targets)
            .map(|(row, &y)| log_sum_exp(row) - row[y])
            .sum::<f64>()
            / targets.len() as f64;
        let rg = self.rg(&[logits.0]);
        let op = Op::CrossEntropy {
            logits: logits.0,
            targets: targets.to_vec(),
        };
        self.push(Tensor::scalar(loss), op, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(m), Op::Mean(a.0), rg)
    }

    /// `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::shape("global_avg_pool", format!("{s:?}")));
        }
        let hw = s[2] * s[3];
        let data = self
            .value(a)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::new(vec![s[0], s[1]], data)?, Op::GlobalAvgPool(a.0), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Reshape(a.0), rg)
    }

    /// Reverse pass from a scalar node.
    ///
    /// Gradients from every path into a node are summed. Every leaf that
    /// requires a gradient gets one, zero if it does not influence `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let Some(out_node) = self.nodes.get(output.0) else {
            return Err(Error::BackwardBeforeForward(output.0));
        };
        if out_node.value.numel() != 1 {
            return Err(Error::NonScalarOutput {
                node: output.0,
                shape: out_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if out_node.requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaves[id].is_none() {
                leaves[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients {
            leaves,
            names: self.names.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let n = self.nodes[id].value.numel();
        let contrib = if contrib.len() != n && n == 1 {
            vec![contrib.iter().sum()]
        } else {
            contrib
        };
        match &mut grads[id] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn data(&self, id: usize) -> &[f64] {
        self.nodes[id].value.data()
    }

    fn broadcast_get(d: &[f64], i: usize) -> f64 {
        if d.len() == 1 {
            d[0]
        } else {
            d[i]
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * Self::broadcast_get(db, i))
                    .collect();
                let gb = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * Self::broadcast_get(da, i))
                    .collect();
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, g.iter().map(|v| v * c).collect()),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.to_vec()),
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a].requires_grad {
                    let ga = kernels::matmul_a_bt(g, self.data(b), m, n, k);
                    self.accumulate(grads, a, ga);
                }
                if self.nodes[b].requires_grad {
                    let gb = kernels::matmul_at_b(self.data(a), g, m, k, n);
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::BiasAdd(x, bias) => {
                self.accumulate(grads, x, g.to_vec());
                if self.nodes[bias].requires_grad {
                    let n = self.nodes[bias].value.numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, bias, gb);
                }
            }
            &Op::Conv2d {
                input,
                weight,
                bias,
                ref geom,
            } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(geom, self.data(input), self.data(weight), g);
                self.accumulate(grads, input, dx);
                self.accumulate(grads, weight, dw);
                self.accumulate(grads, bias, db);
            }
            &Op::Relu(a) => {
                let x = self.data(a);
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, a, ga);
            }
            &Op::Exp(a) => self.accumulate(grads, a, g.iter().zip(y).map(|(gi, yi)| gi * yi).collect()),
            &Op::Log(a) => {
                let x = self.data(a);
                self.accumulate(grads, a, g.iter().zip(x).map(|(gi, xi)| gi / xi).collect());
            }
            &Op::Square(a) => {
                let x = self.data(a);
                self.accumulate(grads, a, g.iter().zip(x).map(|(gi, xi)| 2.0 * xi * gi).collect());
            }
            &Op::Clamp(a, lo, hi) => {
                let x = self.data(a);
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(gi, &xi)| if xi >= lo && xi <= hi { *gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, a, ga);
            }
            &Op::Softmax(a) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    ga.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - dot)));
                }
                self.accumulate(grads, a, ga);
            }
            &Op::LogSoftmax(a) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(y.chunks(n)) {
                    let total: f64 = gr.iter().sum();
                    ga.extend(gr.iter().zip(yr).map(|(gi, yi)| gi - yi.exp() * total));
                }
                self.accumulate(grads, a, ga);
            }
            &Op::CrossEntropy {
                logits,
                ref targets,
            } => {
                let t = &self.nodes[logits].value;
                let scale = g[0] / targets.len() as f64;
                let mut ga = Vec::with_capacity(t.numel());
                for (row, &target) in t.rows().zip(targets) {
                    let p = softmax_row(row);
                    ga.extend(p.iter().enumerate().map(|(j, pj)| {
                        let onehot = if j == target { 1.0 } else { 0.0 };
                        (pj - onehot) * scale
                    }));
                }
                self.accumulate(grads, logits, ga);
            }
            &Op::Sum(a) => {
                let n = self.nodes[a].value.numel();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            &Op::Mean(a) => {
                let n = self.nodes[a].value.numel();
                self.accumulate(grads, a, vec![g[0] / n as f64; n]);
            }
            &Op::GlobalAvgPool(a) => {
                let s = self.nodes[a].value.shape();
                let hw = s[2] * s[3];
                let mut ga = Vec::with_capacity(self.nodes[a].value.numel());
                for gi in g {
                    ga.extend(std::iter::repeat_n(gi / hw as f64, hw));
                }
                self.accumulate(grads, a, ga);
            }
            &Op::Reshape(a) => self.accumulate(grads, a, g.to_vec()),
        }
    }
}

/// Gradients of the leaves of a graph after [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    names: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.get(name).and_then(|&v| self.get(v))
    }

    /// Gradients of every named input that requires one.
    pub fn into_named(mut self) -> BTreeMap<String, Tensor> {
        let names = std::mem::take(&mut self.names);
        names
            .into_iter()
            .filter_map(|(name, v)| self.leaves.get_mut(v.0)?.take().map(|t| (name, t)))
            .collect()
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
