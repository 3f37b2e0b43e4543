//! Toy datasets, Adam and the denoiser training loop.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::edm::{heun_sample, DenoiserParams, EdmConfig, LossInput};
use super::{Denoiser, LatentError, LatentState, CONTEXT_LEN, LATENT_DIM};
use crate::rng::{self, mix_seed, normal, uniform};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

/// One supervised denoising example: predict `target` given `context`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyExample {
    pub target: LatentState,
    pub context: [LatentState; CONTEXT_LEN],
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Unconditional draws from a diagonal Gaussian mixture; the context is
    /// all zeros and the spacing fixed.
    GaussianMixture { weights: Vec<f64>, means: Vec<[f64; 2]>, stds: Vec<[f64; 2]>, n_samples: usize, spacing: f64 },
    /// Trajectories of `z_t = 0.9·R(S)·z_{t−1} + 0.1·η`, `z_0 ~ N(0, I)`,
    /// where `R(S)` rotates by [`rotation_angle`] radians.
    LinearGaussian { spacings: Vec<f64>, n_trajectories: usize, length: usize },
}

/// Rotation of the linear-Gaussian system at spacing `S`.
pub fn rotation_angle(spacing: f64) -> f64 {
    0.1 * spacing
}

/// Deterministic part of one linear-Gaussian step.
pub fn linear_gaussian_mean(spacing: f64, z: &LatentState) -> LatentState {
    let a = rotation_angle(spacing);
    let (s, c) = (libm::sin(a), libm::cos(a));
    LatentState::new([0.9 * (c * z.z[0] - s * z.z[1]), 0.9 * (s * z.z[0] + c * z.z[1])])
}

impl DatasetSpec {
    /// Two well separated components with equal weight.
    pub fn two_component_mixture(n_samples: usize) -> Self {
        DatasetSpec::GaussianMixture {
            weights: vec![0.5, 0.5],
            means: vec![[-1.0, 0.5], [1.0, -0.5]],
            stds: vec![[0.3, 0.3], [0.3, 0.3]],
            n_samples,
            spacing: 6.0,
        }
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        match self {
            DatasetSpec::GaussianMixture { weights, means, stds, n_samples, .. } => {
                if *n_samples == 0 || weights.is_empty() {
                    return Err(LatentError::EmptyDataset);
                }
                if means.len() != weights.len() || stds.len() != weights.len() {
                    return Err(LatentError::Shape("mixture weights, means and stds differ in length"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
                    return Err(LatentError::Config("mixture weights must be non-negative with positive sum"));
                }
                if stds.iter().flatten().any(|s| !(*s > 0.0)) {
                    return Err(LatentError::NonPositiveSigma);
                }
            }
            DatasetSpec::LinearGaussian { spacings, n_trajectories, length } => {
                if spacings.is_empty() || *n_trajectories == 0 || *length <= CONTEXT_LEN {
                    return Err(LatentError::EmptyDataset);
                }
            }
        }
        Ok(())
    }

    /// Materialized examples, deterministic in `seed`.
    pub fn examples(&self, seed: u64) -> Result<Vec<ToyExample>, LatentError> {
        self.validate()?;
        let mut r = rng::rng(seed);
        let zero = [LatentState::zero(); CONTEXT_LEN];
        match self {
            DatasetSpec::GaussianMixture { weights, means, stds, n_samples, spacing } => {
                let total: f64 = weights.iter().sum();
                Ok((0..*n_samples)
                    .map(|_| {
                        let mut u = uniform(&mut r) * total;
                        let mut k = weights.len() - 1;
                        for (i, w) in weights.iter().enumerate() {
                            if u < *w {
                                k = i;
                                break;
                            }
                            u -= w;
                        }
                        let z = [means[k][0] + stds[k][0] * normal(&mut r), means[k][1] + stds[k][1] * normal(&mut r)];
                        ToyExample { target: LatentState::new(z), context: zero, spacing: *spacing }
                    })
                    .collect())
            }
            DatasetSpec::LinearGaussian { spacings, n_trajectories, length } => {
                let mut out = Vec::new();
                for &s in spacings {
                    for _ in 0..*n_trajectories {
                        let mut traj = vec![LatentState::new([normal(&mut r), normal(&mut r)])];
                        for _ in 1..*length {
                            let m = linear_gaussian_mean(s, traj.last().unwrap());
                            traj.push(LatentState::new([m.z[0] + 0.1 * normal(&mut r), m.z[1] + 0.1 * normal(&mut r)]));
                        }
                        for t in CONTEXT_LEN..traj.len() {
                            out.push(ToyExample { target: traj[t], context: [traj[t - 2], traj[t - 1]], spacing: s });
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Per-dimension mean and variance of a diagonal Gaussian mixture.
pub fn mixture_moments(weights: &[f64], means: &[[f64; 2]], stds: &[[f64; 2]]) -> ([f64; LATENT_DIM], [f64; LATENT_DIM]) {
    let total: f64 = weights.iter().sum();
    let mut mean = [0.0; LATENT_DIM];
    let mut second = [0.0; LATENT_DIM];
    for ((w, m), s) in weights.iter().zip(means).zip(stds) {
        let w = w / total;
        for d in 0..LATENT_DIM {
            mean[d] += w * m[d];
            second[d] += w * (s[d] * s[d] + m[d] * m[d]);
        }
    }
    let mut var = [0.0; LATENT_DIM];
    for d in 0..LATENT_DIM {
        var[d] = second[d] - mean[d] * mean[d];
    }
    (mean, var)
}

/// Sample mean and (unbiased) variance per dimension.
pub fn population_moments(samples: &[LatentState]) -> ([f64; LATENT_DIM], [f64; LATENT_DIM]) {
    let n = samples.len() as f64;
    let mut mean = [0.0; LATENT_DIM];
    for s in samples {
        for d in 0..LATENT_DIM {
            mean[d] += s.z[d] / n;
        }
    }
    let mut var = [0.0; LATENT_DIM];
    for s in samples {
        for d in 0..LATENT_DIM {
            var[d] += (s.z[d] - mean[d]) * (s.z[d] - mean[d]) / (n - 1.0);
        }
    }
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub hidden: usize,
    pub n_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Mean of ln σ during training.
    pub p_mean: f64,
    /// Standard deviation of ln σ during training.
    pub p_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, hidden: 32, n_layers: 2, epochs: 60, batch_size: 64, p_mean: -1.2, p_std: 1.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: DenoiserParams,
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains a fresh denoiser on `dataset` with Adam.
///
/// Every example gets a fresh `ln σ ~ N(p_mean, p_std²)` and noise draw per
/// epoch; all randomness derives from `seed`.
pub fn train_toy(dataset: &DatasetSpec, train: &TrainConfig, edm: &EdmConfig, seed: u64) -> Result<TrainedModel, LatentError> {
    edm.validate()?;
    if train.epochs == 0 || train.batch_size == 0 || train.hidden == 0 {
        return Err(LatentError::Config("epochs, batch_size and hidden must be positive"));
    }
    if !(train.lr > 0.0) || !(train.p_std >= 0.0) {
        return Err(LatentError::Config("lr must be positive and p_std non-negative"));
    }
    let examples = dataset.examples(mix_seed(seed, 1))?;
    if examples.is_empty() {
        return Err(LatentError::EmptyDataset);
    }
    let mut params = DenoiserParams::new(train.hidden, train.n_layers, mix_seed(seed, 2));
    let mut opt = Adam::new(params.len(), train.lr);
    let mut r = rng::rng(mix_seed(seed, 3));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut curve = Vec::with_capacity(train.epochs);
    for _ in 0..train.epochs {
        // Fisher-Yates
        for i in (1..order.len()).rev() {
            let j = (uniform(&mut r) * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &k in chunk {
                let ex = &examples[k];
                let sigma = libm::exp(train.p_mean + train.p_std * normal(&mut r));
                let noise = LatentState::new([normal(&mut r), normal(&mut r)]);
                let input = LossInput { z0: &ex.target, context: &ex.context, spacing: ex.spacing, sigma, noise: &noise };
                epoch_loss += params.loss_accumulate(&input, edm.sigma_data, scale, &mut grad)?;
            }
            opt.step(params.params_mut(), &grad);
        }
        curve.push(epoch_loss / examples.len() as f64);
    }
    Ok(TrainedModel { params, loss_curve: curve })
}

/// `n` independent samples at one spacing and context (draw `i` uses seed
/// `mix_seed(seed, i)`).
pub fn sample_population<D: Denoiser + ?Sized>(
    denoiser: &D,
    spacing: f64,
    context: &[LatentState],
    n: usize,
    cfg: &EdmConfig,
    seed: u64,
) -> Result<Vec<LatentState>, LatentError> {
    (0..n).map(|i| heun_sample(denoiser, spacing, context, cfg, mix_seed(seed, i as u64))).collect()
}

/// Mean squared distance between one sampled step and the recorded target.
pub fn one_step_error<D: Denoiser + ?Sized>(
    denoiser: &D,
    examples: &[ToyExample],
    cfg: &EdmConfig,
    seed: u64,
) -> Result<f64, LatentError> {
    if examples.is_empty() {
        return Err(LatentError::EmptyDataset);
    }
    let mut total = 0.0;
    for (i, ex) in examples.iter().enumerate() {
        let z = heun_sample(denoiser, ex.spacing, &ex.context, cfg, mix_seed(seed, i as u64))?;
        total += z.distance_sq(&ex.target);
    }
    Ok(total / examples.len() as f64)
}

/// Largest relative error between `analytic` and central differences of `f`
/// at step `eps`, per parameter `|a − n| / max(|a|, |n|, 1e−6)`.
///
/// The floor keeps parameters with vanishing gradients from turning
/// round-off into large ratios.
pub fn gradient_check<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        let num = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = libm::fabs(a).max(libm::fabs(num)).max(1e-6);
        worst = worst.max(libm::fabs(a - num) / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
    }

    #[test]
    fn mixture_moments_closed_form() {
        let (m, v) = mixture_moments(&[0.5, 0.5], &[[-1.0, 0.5], [1.0, -0.5]], &[[0.3, 0.3], [0.3, 0.3]]);
        assert!(m[0].abs() < 1e-15 && m[1].abs() < 1e-15);
        assert!((v[0] - 1.09).abs() < 1e-12);
        assert!((v[1] - 0.34).abs() < 1e-12);
    }

    #[test]
    fn linear_gaussian_examples_use_trailing_context() {
        let spec = DatasetSpec::LinearGaussian { spacings: vec![4.0], n_trajectories: 1, length: 5 };
        let ex = spec.examples(3).unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[1].context[1], ex[0].target);
        assert_eq!(ex[2].context[0], ex[0].target);
    }

    #[test]
    fn empty_dataset_rejected() {
        let spec = DatasetSpec::two_component_mixture(0);
        let err = train_toy(&spec, &TrainConfig::default(), &EdmConfig::default(), 0).unwrap_err();
        assert_eq!(err, LatentError::EmptyDataset);
    }

    #[test]
    fn gradient_check_detects_error() {
        let f = |p: &[f64]| p[0] * p[0] + 3.0 * p[1];
        assert!(gradient_check(f, &[1.5, 2.0], &[3.0, 3.0], 1e-5) < 1e-8);
        assert!(gradient_check(f, &[1.5, 2.0], &[3.3, 3.0], 1e-5) > 0.05);
    }
}
