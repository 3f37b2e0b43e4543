//! Toy-scale generative mathematics: total-correlation VAE objective and
//! its KL decomposition, EDM preconditioning, denoiser loss, deterministic
//! Heun sampling and autoregressive latent rollout.
//!
//! All networks are small dense stacks with parameters held in one flat
//! `Vec<f64>`; gradients are accumulated by hand in reverse mode and checked
//! against central finite differences in the tests.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod edm;
mod nn;
mod train;
mod vae;

pub use edm::{
    edm_loss, edm_loss_with_grad, edm_precondition, forward_noise, heun_sample, lambda_weight, noise_schedule, rollout,
    rollout_observed, ConstantDenoiser, Denoiser, DenoiserParams, EdmConfig, Preconditioning,
};
pub use train::{
    gradient_check, linear_gaussian_mean, mixture_moments, one_step_error, population_moments, rotation_angle,
    sample_population, train_toy, Adam, DatasetSpec, ToyExample, TrainConfig, TrainedModel,
};
pub use vae::{
    kl_decomposition_estimate, tcvae_loss, tcvae_loss_with_grad, KlDecomposition, TcLoss, TcWeights, VaeParams,
};

/// Latent dimensionality used throughout.
pub const LATENT_DIM: usize = 2;
/// Autoregressive context length.
pub const CONTEXT_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatentError {
    #[error("posterior scale must be positive")]
    NonPositiveSigma,
    #[error("batch needs at least 2 elements, got {0}")]
    BatchTooSmall(usize),
    #[error("noise level must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("schedule needs at least one step")]
    NoSteps,
    #[error("context must hold exactly {CONTEXT_LEN} states, got {0}")]
    ContextLength(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// A point in the latent space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub z: [f64; LATENT_DIM],
}

impl LatentState {
    pub const fn new(z: [f64; LATENT_DIM]) -> Self {
        Self { z }
    }

    pub const fn zero() -> Self {
        Self { z: [0.0; LATENT_DIM] }
    }

    pub fn distance_sq(&self, other: &Self) -> f64 {
        self.z.iter().zip(&other.z).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Diagonal Gaussian `q(z|x) = N(mu, diag(sigma²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self, LatentError> {
        if mu.len() != sigma.len() {
            return Err(LatentError::Shape("mu and sigma lengths differ"));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(LatentError::NonPositiveSigma);
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// KL(q ‖ N(0, I)) = Σ ½(μ² + σ² − 1 − ln σ²).
pub fn gaussian_kl_to_prior(post: &GaussianPosterior) -> Result<f64, LatentError> {
    if post.mu.len() != post.sigma.len() {
        return Err(LatentError::Shape("mu and sigma lengths differ"));
    }
    let mut kl = 0.0;
    for (m, s) in post.mu.iter().zip(&post.sigma) {
        if !(*s > 0.0) {
            return Err(LatentError::NonPositiveSigma);
        }
        let s2 = s * s;
        kl += 0.5 * (m * m + s2 - 1.0 - libm::log(s2));
    }
    Ok(kl)
}
