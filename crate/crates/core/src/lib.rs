//! Uncertainty estimation for small neural image classifiers.
//!
//! Two mechanisms are implemented on top of a from-scratch training stack:
//!
//! - Monte Carlo dropout: dropout stays active at prediction time and `T`
//!   stochastic forward passes are averaged. The mean of the softmax outputs is
//!   the prediction, their per-class variance the uncertainty.
//! - A variational output head predicting `mu` and `sigma^2` of a Gaussian over
//!   class scores, sampled with the reparameterization trick and regularized
//!   toward `N(0, I)` with the closed-form KL divergence.
//!
//! The [`train`] module measures whether misclassified inputs receive higher
//! uncertainty than correctly classified ones.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::Tensor;
