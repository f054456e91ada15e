use rand::Rng;

use super::spec::DropoutMode;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted-dropout multipliers: `0` for dropped elements, `1 / (1 - p)` for
/// survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    factors: Vec<f64>,
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")))
    }
}

impl DropoutMask {
    pub fn sample(len: usize, p: f64, rng: &mut impl Rng) -> Result<Self> {
        check_rate(p)?;
        let keep = 1.0 / (1.0 - p);
        let factors = (0..len)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(DropoutMask { factors })
    }

    pub fn all_keep(len: usize, p: f64) -> Result<Self> {
        check_rate(p)?;
        Ok(DropoutMask {
            factors: vec![1.0 / (1.0 - p); len],
        })
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.numel() != self.factors.len() {
            return Err(Error::shape(
                "dropout",
                format!("mask of {} for {} elements", self.factors.len(), x.numel()),
            ));
        }
        let data = x.data().iter().zip(&self.factors).map(|(a, m)| a * m).collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Inverted dropout on a plain tensor.
///
/// `Train` and `EvalSampling` zero each element with probability `p` and scale
/// survivors by `1 / (1 - p)`; `EvalDeterministic` is the identity.
pub fn dropout(x: &Tensor, p: f64, mode: DropoutMode, rng: &mut impl Rng) -> Result<Tensor> {
    check_rate(p)?;
    if !mode.is_stochastic() || p == 0.0 {
        return Ok(x.clone());
    }
    DropoutMask::sample(x.numel(), p, rng)?.apply(x)
}

/// Dropout on the tape: multiplies by a constant mask so gradients flow only
/// through kept elements.
pub fn dropout_var(
    g: &mut Graph,
    x: Var,
    p: f64,
    mode: DropoutMode,
    rng: &mut impl Rng,
) -> Result<Var> {
    check_rate(p)?;
    if !mode.is_stochastic() || p == 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let mask = DropoutMask::sample(g.value(x).numel(), p, rng)?;
    let m = g.constant(Tensor::new(shape, mask.factors)?)?;
    g.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};

    #[test]
    fn zero_rate_is_identity_in_every_mode() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let mut r = rng::stream(0, Domain::Dropout, 0, 0);
        for mode in [DropoutMode::Train, DropoutMode::EvalDeterministic, DropoutMode::EvalSampling] {
            assert_eq!(dropout(&x, 0.0, mode, &mut r).unwrap(), x);
        }
    }

    #[test]
    fn all_keep_mask_doubles_at_half_rate() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let y = DropoutMask::all_keep(3, 0.5).unwrap().apply(&x).unwrap();
        assert_eq!(y.data(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn eval_deterministic_is_identity() {
        let x = Tensor::vector(vec![1.0; 10]);
        let mut r = rng::stream(0, Domain::Dropout, 0, 0);
        assert_eq!(dropout(&x, 0.5, DropoutMode::EvalDeterministic, &mut r).unwrap(), x);
    }

    #[test]
    fn rate_outside_range_is_rejected() {
        let x = Tensor::vector(vec![1.0]);
        let mut r = rng::stream(0, Domain::Dropout, 0, 0);
        assert!(dropout(&x, 1.0, DropoutMode::Train, &mut r).is_err());
        assert!(dropout(&x, -0.5, DropoutMode::EvalDeterministic, &mut r).is_err());
    }

    #[test]
    fn sampled_masks_drop_roughly_p() {
        let mut r = rng::stream(3, Domain::Dropout, 0, 0);
        let m = DropoutMask::sample(100_000, 0.3, &mut r).unwrap();
        let dropped = m.factors().iter().filter(|&&f| f == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.3).abs() < 0.01, "{dropped}");
        assert!(m.factors().iter().all(|&f| f == 0.0 || f == 1.0 / 0.7));
    }

    #[test]
    fn sampling_and_train_share_masks() {
        let x = Tensor::vector((0..64).map(f64::from).collect());
        let a = dropout(&x, 0.5, DropoutMode::Train, &mut rng::stream(1, Domain::Dropout, 2, 3)).unwrap();
        let b = dropout(&x, 0.5, DropoutMode::EvalSampling, &mut rng::stream(1, Domain::Dropout, 2, 3))
            .unwrap();
        assert_eq!(a, b);
    }
}
