//! Monte Carlo dropout sampling and the variational output head.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::{softmax_row, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{
    deterministic_prefix, forward_from, model_forward_values, DropoutMode, ModelParams, ModelSpec,
    Variant,
};
use crate::rng::{self, Domain, PassKey};
use crate::tensor::Tensor;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Which quantity a scalar uncertainty was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UncertaintyMethod {
    /// Mean per-class variance of softmax outputs across dropout passes.
    McDropout,
    /// Mean predicted `sigma^2` of the variational head (logit space).
    VariationalAnalytic,
    /// Mean per-class variance of softmax-mapped reparameterized samples.
    VariationalSampled,
    /// Predictive entropy of a single deterministic softmax.
    Entropy,
}

impl UncertaintyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyMethod::McDropout => "mc-dropout",
            UncertaintyMethod::VariationalAnalytic => "variational-analytic",
            UncertaintyMethod::VariationalSampled => "variational-sampled",
            UncertaintyMethod::Entropy => "entropy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyScore {
    pub value: f64,
    pub method: UncertaintyMethod,
}

/// Anything that reduces to a scalar uncertainty.
pub trait Posterior {
    fn uncertainty_score(&self) -> UncertaintyScore;
}

pub fn uncertainty_score(post: &impl Posterior) -> UncertaintyScore {
    post.uncertainty_score()
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Order-independent sum: sorting first makes the result bit-identical for
/// any permutation of `values`.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// `T` softmax vectors from stochastic passes, with their column mean and
/// unbiased column variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    samples: Vec<Vec<f64>>,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl PosteriorSamples {
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Result<Self> {
        let t = samples.len();
        if t < 2 {
            return Err(Error::invalid(format!(
                "at least 2 samples are needed for a variance, got {t}"
            )));
        }
        let c = samples[0].len();
        if c == 0 || samples.iter().any(|r| r.len() != c) {
            return Err(Error::shape("posterior samples", "rows must share a nonzero width"));
        }
        for (i, row) in samples.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("sample {i} is not a probability vector")));
            }
        }
        let mut column = vec![0.0; t];
        let mut mean = Vec::with_capacity(c);
        let mut variance = Vec::with_capacity(c);
        for j in 0..c {
            for (slot, row) in column.iter_mut().zip(&samples) {
                *slot = row[j];
            }
            // Shift by the column minimum so identical passes give exactly
            // zero variance and the mean is exactly the shared value.
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let mut shifted: Vec<f64> = column.iter().map(|x| x - lo).collect();
            let md = sorted_sum(&mut shifted) / t as f64;
            let mut sq: Vec<f64> = shifted.iter().map(|d| (d - md) * (d - md)).collect();
            mean.push(lo + md);
            variance.push(sorted_sum(&mut sq) / (t - 1) as f64);
        }
        Ok(PosteriorSamples {
            samples,
            mean,
            variance,
        })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn predicted_label(&self) -> usize {
        argmax(&self.mean)
    }
}

impl Posterior for PosteriorSamples {
    fn uncertainty_score(&self) -> UncertaintyScore {
        UncertaintyScore {
            value: self.variance.iter().sum::<f64>() / self.variance.len() as f64,
            method: UncertaintyMethod::McDropout,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McConfig {
    /// Number of stochastic passes `T`.
    pub passes: usize,
    pub seed: u64,
    /// Run passes on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

/// Monte Carlo dropout prediction for every row of `x`.
///
/// Pass `t` uses dropout masks keyed by `(seed, t, layer)`, applies softmax,
/// and the resulting probability vectors are aggregated per example.
pub fn mc_predict(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
    config: McConfig,
) -> Result<Vec<PosteriorSamples>> {
    if !spec.variant.uses_mc_dropout() {
        return Err(Error::invalid(format!(
            "Monte Carlo dropout needs a bayesian1 or bayesian2 model, got {}",
            spec.variant
        )));
    }
    if config.passes < 2 {
        return Err(Error::invalid(format!(
            "at least 2 passes are needed, got {}",
            config.passes
        )));
    }
    let (activation, start) = deterministic_prefix(params, spec, x)?;
    let pass = |t: usize| -> Result<Vec<Vec<f64>>> {
        let out = forward_from(
            params,
            spec,
            &activation,
            start,
            DropoutMode::EvalSampling,
            PassKey::new(config.seed, t as u64),
        )?;
        Ok(out.logits.rows().map(softmax_row).collect())
    };
    let passes: Vec<Vec<Vec<f64>>> = if config.parallel {
        (0..config.passes).into_par_iter().map(pass).collect::<Result<_>>()?
    } else {
        (0..config.passes).map(pass).collect::<Result<_>>()?
    };
    let n = activation.shape()[0];
    (0..n)
        .map(|i| PosteriorSamples::from_samples(passes.iter().map(|p| p[i].clone()).collect()))
        .collect()
}

/// A standard-normal draw reproducible from `(seed, counter)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub epsilon: Vec<f64>,
    pub seed: u64,
    pub counter: (u64, u64),
}

impl NoiseDraw {
    pub fn new(seed: u64, counter: (u64, u64), dim: usize) -> Self {
        let mut r = rng::stream(seed, Domain::Epsilon, counter.0, counter.1);
        let epsilon = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        NoiseDraw {
            epsilon,
            seed,
            counter,
        }
    }
}

/// `mu + sigma * eps`.
pub fn reparameterize(mu: &[f64], sigma2: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != sigma2.len() || mu.len() != eps.len() {
        return Err(Error::shape("reparameterize", "mu, sigma2 and eps lengths differ"));
    }
    Ok(mu
        .iter()
        .zip(sigma2)
        .zip(eps)
        .map(|((m, s2), e)| m + s2.sqrt() * e)
        .collect())
}

/// `(mu, sigma^2)` from the variational head, plus optional samples.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalOutput {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub samples: Option<Vec<Vec<f64>>>,
}

impl VariationalOutput {
    pub fn new(mu: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma2.len() || mu.is_empty() {
            return Err(Error::shape("variational output", "mu and sigma2 lengths differ"));
        }
        if sigma2.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigma2 must be positive and finite"));
        }
        Ok(VariationalOutput {
            mu,
            sigma2,
            samples: None,
        })
    }

    pub fn predicted_label(&self) -> usize {
        argmax(&self.mu)
    }

    /// Draws `count` reparameterized samples; draw `j` uses `NoiseDraw` counter
    /// `(stream, j)`.
    pub fn sample(&mut self, count: usize, seed: u64, stream: u64) -> Result<()> {
        let draws = (0..count)
            .map(|j| {
                let eps = NoiseDraw::new(seed, (stream, j as u64), self.mu.len());
                reparameterize(&self.mu, &self.sigma2, &eps.epsilon)
            })
            .collect::<Result<Vec<_>>>()?;
        self.samples = (count > 0).then_some(draws);
        Ok(())
    }

    /// Probability-space score: samples mapped through softmax, then scored
    /// like Monte Carlo dropout. Needs at least two samples.
    pub fn sampled_uncertainty_score(&self) -> Result<UncertaintyScore> {
        let samples = self
            .samples
            .as_ref()
            .ok_or_else(|| Error::invalid("no samples drawn"))?;
        let probs = samples.iter().map(|s| softmax_row(s)).collect();
        let value = PosteriorSamples::from_samples(probs)?.uncertainty_score().value;
        Ok(UncertaintyScore {
            value,
            method: UncertaintyMethod::VariationalSampled,
        })
    }
}

impl Posterior for VariationalOutput {
    fn uncertainty_score(&self) -> UncertaintyScore {
        UncertaintyScore {
            value: self.sigma2.iter().sum::<f64>() / self.sigma2.len() as f64,
            method: UncertaintyMethod::VariationalAnalytic,
        }
    }
}

/// Variational head outputs for every row of `x`, each with `draws` samples.
/// Example `i` uses noise counters `(i, 0..draws)` under `seed`.
pub fn variational_forward(
    params: &ModelParams,
    spec: &ModelSpec,
    x: &Tensor,
    draws: usize,
    seed: u64,
) -> Result<Vec<VariationalOutput>> {
    if spec.variant != Variant::Variational {
        return Err(Error::invalid(format!(
            "variational prediction needs a variational model, got {}",
            spec.variant
        )));
    }
    let out = model_forward_values(params, spec, x, DropoutMode::EvalDeterministic, PassKey::new(seed, 0))?;
    let logvar = out
        .logvar
        .ok_or_else(|| Error::invalid("model produced no variance head"))?;
    out.logits
        .rows()
        .zip(logvar.rows())
        .enumerate()
        .map(|(i, (mu, lv))| {
            let mut v = VariationalOutput::new(mu.to_vec(), lv.iter().map(|l| l.exp()).collect())?;
            v.sample(draws, seed, i as u64)?;
            Ok(v)
        })
        .collect()
}

/// Closed-form `KL(N(mu, diag sigma2) || N(0, I))`
/// `= -1/2 sum_j (1 + log sigma2_j - mu_j^2 - sigma2_j)`.
pub fn kld(mu: &[f64], sigma2: &[f64]) -> Result<f64> {
    if mu.len() != sigma2.len() {
        return Err(Error::shape("kld", "mu and sigma2 lengths differ"));
    }
    if let Some(s) = sigma2.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {s}")));
    }
    // Each summand is nonnegative in exact arithmetic; max(0) removes rounding dust.
    Ok(mu
        .iter()
        .zip(sigma2)
        .map(|(m, s2)| 0.5 * ((s2 - 1.0 - s2.ln()).max(0.0) + m * m))
        .sum())
}

fn batch_rows(g: &Graph, v: Var) -> f64 {
    match g.shape(v) {
        [rows, _] => *rows as f64,
        _ => 1.0,
    }
}

/// KL divergence on the tape from `mu` and `sigma2`; for `[B, C]` inputs the
/// per-row divergences are averaged over the batch.
pub fn kld_var(g: &mut Graph, mu: Var, sigma2: Var) -> Result<Var> {
    let log_s2 = g.log(sigma2)?;
    kld_terms(g, mu, sigma2, log_s2)
}

/// Same as [`kld_var`] with the head's `log sigma^2` as input.
pub fn kld_from_logvar(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let sigma2 = g.exp(logvar)?;
    kld_terms(g, mu, sigma2, logvar)
}

fn kld_terms(g: &mut Graph, mu: Var, sigma2: Var, log_s2: Var) -> Result<Var> {
    let rows = batch_rows(g, mu);
    let mu2 = g.square(mu)?;
    let a = g.add(mu2, sigma2)?;
    let b = g.sub(a, log_s2)?;
    let c = g.add_scalar(b, -1.0)?;
    let total = g.sum(c)?;
    g.scale(total, 0.5 / rows)
}

/// `-sum p log p` with `0 log 0 = 0`.
pub fn predictive_entropy(probs: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|&&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::invalid(format!("probabilities must be nonnegative, got {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradient;
    use crate::nn::build_model;

    #[test]
    fn kld_reference_values() {
        assert_eq!(kld(&[0.0; 4], &[1.0; 4]).unwrap(), 0.0);
        assert!((kld(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        let want = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((kld(&[0.0], &[4.0]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kld_rejects_nonpositive_variance() {
        assert!(kld(&[0.0], &[0.0]).is_err());
        assert!(kld(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kld_graph_matches_closed_form_and_gradient() {
        let mu = [0.3, -1.2, 0.7];
        let s2 = [0.5, 2.0, 1.3];
        let mut g = Graph::new();
        let m = g.input("mu", Tensor::vector(mu.to_vec()), true).unwrap();
        let s = g.input("s2", Tensor::vector(s2.to_vec()), true).unwrap();
        let k = kld_var(&mut g, m, s).unwrap();
        assert!((g.value(k).item().unwrap() - kld(&mu, &s2).unwrap()).abs() < 1e-14);
        let sig = Tensor::vector(s2.to_vec());
        let err = check_gradient(
            |g, m| {
                let s = g.constant(sig.clone())?;
                kld_var(g, m, s)
            },
            &Tensor::vector(mu.to_vec()),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let muv = Tensor::vector(mu.to_vec());
        let err = check_gradient(
            |g, s| {
                let m = g.constant(muv.clone())?;
                kld_var(g, m, s)
            },
            &sig,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn entropy_reference_values() {
        assert_eq!(predictive_entropy(&[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((predictive_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((predictive_entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(predictive_entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn alternating_samples_variance() {
        // Hand computation: each of the first two columns is 1 half the time,
        // so sum of squared deviations is T * 0.25 and the unbiased variance
        // is 0.25 T / (T - 1).
        let t = 10;
        let rows = (0..t)
            .map(|i| if i % 2 == 0 { vec![1., 0., 0., 0.] } else { vec![0., 1., 0., 0.] })
            .collect();
        let post = PosteriorSamples::from_samples(rows).unwrap();
        let v = 0.25 * t as f64 / (t - 1) as f64;
        let want = [v, v, 0.0, 0.0];
        for (a, b) in post.variance().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let score = post.uncertainty_score();
        assert!((score.value - v / 2.0).abs() < 1e-15);
        assert_eq!(score.method, UncertaintyMethod::McDropout);
    }

    #[test]
    fn degenerate_posterior_scores_zero() {
        let post = PosteriorSamples::from_samples(vec![vec![0.2, 0.8]; 5]).unwrap();
        assert_eq!(post.uncertainty_score().value, 0.0);
        assert!(PosteriorSamples::from_samples(vec![vec![0.5, 0.6]; 3]).is_err());
        assert!(PosteriorSamples::from_samples(vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn variational_analytic_score_is_mean_sigma2() {
        let v = VariationalOutput::new(vec![0.0; 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((v.uncertainty_score().value - 0.25).abs() < 1e-15);
        assert!(VariationalOutput::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn zero_noise_sample_equals_mu() {
        let mu = [1.0, -2.0, 0.5];
        assert_eq!(reparameterize(&mu, &[0.3, 2.0, 9.0], &[0.0; 3]).unwrap(), mu.to_vec());
    }

    #[test]
    fn noise_draws_are_reproducible() {
        assert_eq!(NoiseDraw::new(4, (1, 2), 5), NoiseDraw::new(4, (1, 2), 5));
        assert_ne!(NoiseDraw::new(4, (1, 2), 5).epsilon, NoiseDraw::new(4, (2, 1), 5).epsilon);
    }

    #[test]
    fn mc_predict_rejects_wrong_inputs() {
        let base = ModelSpec::mlp(Variant::Baseline, 2, 8, 1, 4, 0.5).unwrap();
        let p = build_model(&base, 0).unwrap();
        let x = Tensor::zeros(vec![1, 2]);
        let cfg = McConfig { passes: 10, seed: 0, parallel: false };
        assert!(mc_predict(&p, &base, &x, cfg).is_err());
        let b1 = ModelSpec::mlp(Variant::Bayesian1, 2, 8, 1, 4, 0.5).unwrap();
        assert!(mc_predict(&p, &b1, &x, McConfig { passes: 1, ..cfg }).is_err());
        assert!(variational_forward(&p, &b1, &x, 0, 0).is_err());
    }

    #[test]
    fn zero_rate_dropout_gives_zero_variance() {
        let spec = ModelSpec::mlp(Variant::Bayesian2, 3, 8, 2, 4, 0.0).unwrap();
        let p = build_model(&spec, 1).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.5, -0.1, 0.2, 1.0, 2.0, -3.0]).unwrap();
        let posts = mc_predict(&p, &spec, &x, McConfig { passes: 7, seed: 3, parallel: true }).unwrap();
        for post in posts {
            assert!(post.variance().iter().all(|&v| v == 0.0));
            assert!(post.samples().iter().all(|r| r == &post.samples()[0]));
        }
    }

    #[test]
    fn mc_predict_parallel_equals_sequential() {
        let spec = ModelSpec::mlp(Variant::Bayesian2, 3, 8, 2, 4, 0.5).unwrap();
        let p = build_model(&spec, 1).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.5, -0.1, 0.2, 1.0, 2.0, -3.0]).unwrap();
        let a = mc_predict(&p, &spec, &x, McConfig { passes: 20, seed: 3, parallel: true }).unwrap();
        let b = mc_predict(&p, &spec, &x, McConfig { passes: 20, seed: 3, parallel: false }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variational_forward_without_draws() {
        let spec = ModelSpec::mlp(Variant::Variational, 2, 8, 1, 4, 0.0).unwrap();
        let p = build_model(&spec, 1).unwrap();
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let outs = variational_forward(&p, &spec, &x, 0, 5).unwrap();
        assert_eq!(outs.len(), 3);
        assert!(outs.iter().all(|o| o.samples.is_none() && o.sigma2.iter().all(|&s| s > 0.0)));
        let a = variational_forward(&p, &spec, &x, 4, 5).unwrap();
        let b = variational_forward(&p, &spec, &x, 4, 5).unwrap();
        assert_eq!(a, b);
    }
}
