use crate::autodiff::{log_sum_exp, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ModelOutput;
use crate::tensor::Tensor;
use crate::uncertainty::{kld, kld_from_logvar, reparameterize, VariationalOutput};

/// Loss terms of one step or epoch. `total` is always `cross_entropy +
/// kld_weight * kld`, computed in that order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub kld: f64,
    pub kld_weight: f64,
}

impl LossBreakdown {
    pub fn new(cross_entropy: f64, kld: f64, kld_weight: f64) -> Self {
        LossBreakdown {
            total: cross_entropy + kld_weight * kld,
            cross_entropy,
            kld,
            kld_weight,
        }
    }

    pub fn cross_entropy_only(cross_entropy: f64) -> Self {
        LossBreakdown::new(cross_entropy, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.cross_entropy.is_finite() && self.kld.is_finite()
    }
}

/// Mean over rows of `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    if logits.ndim() != 2 || logits.shape()[0] != targets.len() || targets.is_empty() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {:?} for {} targets", logits.shape(), targets.len()),
        ));
    }
    let classes = logits.shape()[1];
    let mut total = 0.0;
    for (row, &t) in logits.rows().zip(targets) {
        if t >= classes {
            return Err(Error::invalid(format!("target {t} out of range for {classes} classes")));
        }
        total += log_sum_exp(row) - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Cross-entropy of the reparameterized sample `mu + sigma * eps` for one
/// example plus `beta` times the closed-form KL divergence.
pub fn variational_loss(out: &VariationalOutput, target: usize, beta: f64, eps: &[f64]) -> Result<LossBreakdown> {
    let sample = reparameterize(&out.mu, &out.sigma2, eps)?;
    let ce = cross_entropy(&Tensor::from_rows(&[sample])?, &[target])?;
    Ok(LossBreakdown::new(ce, kld(&out.mu, &out.sigma2)?, beta))
}

/// Graph nodes of a training loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub cross_entropy: Var,
    pub kld: Option<Var>,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph, beta: f64) -> LossBreakdown {
        let scalar = |v: Var| g.value(v).item().expect("loss nodes are scalars");
        let ce = scalar(self.cross_entropy);
        match self.kld {
            Some(k) => LossBreakdown::new(ce, scalar(k), beta),
            None => LossBreakdown::cross_entropy_only(ce),
        }
    }
}

/// Builds the training loss on the tape.
///
/// Logit models use batch-mean cross-entropy. A variational head averages the
/// cross-entropy over one reparameterized sample per entry of `noise`
/// (`[batch, classes]` each) and adds `beta` times the batch-mean KL term.
pub fn graph_loss(
    g: &mut Graph,
    output: ModelOutput,
    targets: &[usize],
    beta: f64,
    noise: &[Tensor],
) -> Result<LossVars> {
    match output {
        ModelOutput::Logits(logits) => {
            let ce = g.cross_entropy(logits, targets)?;
            Ok(LossVars {
                total: ce,
                cross_entropy: ce,
                kld: None,
            })
        }
        ModelOutput::Variational { mu, logvar } => {
            if noise.is_empty() {
                return Err(Error::invalid("a variational loss needs at least one noise sample"));
            }
            let half = g.scale(logvar, 0.5)?;
            let sigma = g.exp(half)?;
            let mut ce_sum: Option<Var> = None;
            for eps in noise {
                let e = g.constant(eps.clone())?;
                let spread = g.mul(sigma, e)?;
                let sample = g.add(mu, spread)?;
                let ce = g.cross_entropy(sample, targets)?;
                ce_sum = Some(match ce_sum {
                    Some(acc) => g.add(acc, ce)?,
                    None => ce,
                });
            }
            let ce_sum = ce_sum.expect("noise is not empty");
            let ce = if noise.len() == 1 {
                ce_sum
            } else {
                g.scale(ce_sum, 1.0 / noise.len() as f64)?
            };
            let k = kld_from_logvar(g, mu, logvar)?;
            let weighted = g.scale(k, beta)?;
            let total = g.add(ce, weighted)?;
            Ok(LossVars {
                total,
                cross_entropy: ce,
                kld: Some(k),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let l = Tensor::zeros(vec![3, 4]);
        assert!((cross_entropy(&l, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let l = Tensor::from_rows(&[vec![10.0, -10.0, -10.0, -10.0]]).unwrap();
        assert!(cross_entropy(&l, &[0]).unwrap() < 1e-8);
        assert!(cross_entropy(&l, &[4]).is_err());
    }

    #[test]
    fn variational_reference_values() {
        let out = VariationalOutput::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = variational_loss(&out, 0, 1.0, &[0.0, 0.0]).unwrap();
        // -log(e / (e + 1)) = log(1 + e^-1)
        let ce = (1.0 + (-1f64).exp()).ln();
        assert!((b.cross_entropy - ce).abs() < 1e-12);
        assert!((b.cross_entropy - 0.3133).abs() < 1e-4);
        assert!((b.total - 0.8133).abs() < 1e-4);
        let zero_beta = variational_loss(&out, 0, 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(zero_beta.total, zero_beta.cross_entropy);
        let centred = VariationalOutput::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = variational_loss(&centred, 1, 1.0, &[0.3, -0.2]).unwrap();
        assert_eq!(b.total, b.cross_entropy);
    }

    #[test]
    fn graph_loss_matches_value_loss() {
        let mu = Tensor::from_rows(&[vec![1.0, 0.0], vec![-0.5, 0.25]]).unwrap();
        let logvar = Tensor::from_rows(&[vec![0.0, 0.2], vec![-0.3, 0.1]]).unwrap();
        let eps = Tensor::from_rows(&[vec![0.1, -0.4], vec![0.7, 0.0]]).unwrap();
        let mut g = Graph::new();
        let m = g.input("mu", mu.clone(), true).unwrap();
        let lv = g.input("logvar", logvar.clone(), true).unwrap();
        let vars = graph_loss(&mut g, ModelOutput::Variational { mu: m, logvar: lv }, &[0, 1], 0.5, &[eps.clone()]).unwrap();
        let got = vars.breakdown(&g, 0.5);
        assert_eq!(Some(got.total), g.value(vars.total).item());
        let mut ce = 0.0;
        let mut kl = 0.0;
        for i in 0..2 {
            let out = VariationalOutput::new(mu.row(i).to_vec(), logvar.row(i).iter().map(|v| v.exp()).collect()).unwrap();
            let b = variational_loss(&out, i, 0.5, eps.row(i)).unwrap();
            ce += b.cross_entropy / 2.0;
            kl += b.kld / 2.0;
        }
        assert!((got.cross_entropy - ce).abs() < 1e-12);
        assert!((got.kld - kl).abs() < 1e-12);
    }
}
