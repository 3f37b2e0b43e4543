//! EDM-style denoising: preconditioning, forward noising, weighted denoiser
//! loss, Heun sampling and autoregressive rollout.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::nn::{tanh_backward, Affine, LayoutBuilder};
use super::{LatentError, LatentState, CONTEXT_LEN, LATENT_DIM};
use crate::rng::{self, mix_seed, normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_data: f64,
    pub rho: f64,
    pub n_steps: usize,
}

impl Default for EdmConfig {
    fn default() -> Self {
        Self { sigma_min: 0.002, sigma_max: 80.0, sigma_data: 0.5, rho: 7.0, n_steps: 64 }
    }
}

impl EdmConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(LatentError::Config("need 0 < sigma_min < sigma_max"));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(LatentError::Config("sigma_data must be positive"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(LatentError::Config("rho must be positive"));
        }
        if self.n_steps == 0 {
            return Err(LatentError::NoSteps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

pub fn edm_precondition(sigma: f64, sigma_data: f64) -> Result<Preconditioning, LatentError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(LatentError::NonPositiveNoise(sigma));
    }
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    let root = libm::sqrt(s2 + d2);
    Ok(Preconditioning {
        c_skip: d2 / (s2 + d2),
        c_out: sigma * sigma_data / root,
        c_in: 1.0 / root,
        c_noise: 0.25 * libm::log(sigma),
    })
}

/// λ(σ) = (σ² + σ_d²) / (σ σ_d)², which makes `λ · c_out² = 1`.
pub fn lambda_weight(sigma: f64, sigma_data: f64) -> Result<f64, LatentError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(LatentError::NonPositiveNoise(sigma));
    }
    let sd = sigma * sigma_data;
    Ok((sigma * sigma + sigma_data * sigma_data) / (sd * sd))
}

/// ρ-spaced levels from `sigma_max` down to `sigma_min` (`n_steps` entries).
pub fn noise_schedule(cfg: &EdmConfig) -> Result<Vec<f64>, LatentError> {
    cfg.validate()?;
    let n = cfg.n_steps;
    if n == 1 {
        return Ok(vec![cfg.sigma_max]);
    }
    let inv = 1.0 / cfg.rho;
    let hi = libm::pow(cfg.sigma_max, inv);
    let lo = libm::pow(cfg.sigma_min, inv);
    let mut out: Vec<f64> = (0..n)
        .map(|i| libm::pow(hi + i as f64 / (n - 1) as f64 * (lo - hi), cfg.rho))
        .collect();
    // pin the endpoints against pow round-off
    out[0] = cfg.sigma_max;
    out[n - 1] = cfg.sigma_min;
    Ok(out)
}

/// `z_σ = z_0 + σ·n`; σ = 0 returns `z_0` unchanged.
pub fn forward_noise(z0: &LatentState, sigma: f64, noise: &LatentState) -> Result<LatentState, LatentError> {
    if !(sigma >= 0.0) {
        return Err(LatentError::NonPositiveNoise(sigma));
    }
    if sigma == 0.0 {
        return Ok(*z0);
    }
    let mut z = z0.z;
    for (zi, ni) in z.iter_mut().zip(&noise.z) {
        *zi += sigma * ni;
    }
    Ok(LatentState { z })
}

/// `D(z; σ, S, context)`, an estimate of the clean latent.
pub trait Denoiser {
    fn denoise(&self, z: &LatentState, sigma: f64, spacing: f64, context: &[LatentState], cfg: &EdmConfig) -> LatentState;
}

/// Always returns the same point, regardless of input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDenoiser {
    pub target: LatentState,
}

impl Denoiser for ConstantDenoiser {
    fn denoise(&self, _: &LatentState, _: f64, _: f64, _: &[LatentState], _: &EdmConfig) -> LatentState {
        self.target
    }
}

const EMBED_DIM: usize = 2;
const INPUT_DIM: usize = LATENT_DIM * (1 + CONTEXT_LEN);

/// Spacing embedding: centres [3.5, 10] on zero with unit half-width.
fn spacing_embedding(spacing: f64) -> f64 {
    (spacing - 6.75) / 3.25
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FilmLayer {
    lin: Affine,
    scale: Affine,
    shift: Affine,
}

/// Dense tanh network whose hidden layers are modulated by a scale and shift
/// computed from the `(c_noise, spacing)` embedding:
/// `h = tanh((1 + γ(e)) ⊙ (W x + b) + β(e))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub hidden: usize,
    layers: Vec<FilmLayer>,
    out: Affine,
    params: Vec<f64>,
}

struct Cache {
    xs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    embed: [f64; EMBED_DIM],
}

impl DenoiserParams {
    pub fn new(hidden: usize, n_layers: usize, seed: u64) -> Self {
        let mut lb = LayoutBuilder::default();
        let mut layers = Vec::with_capacity(n_layers);
        let mut inp = INPUT_DIM;
        for _ in 0..n_layers.max(1) {
            layers.push(FilmLayer {
                lin: lb.affine(inp, hidden),
                scale: lb.affine(EMBED_DIM, hidden),
                shift: lb.affine(EMBED_DIM, hidden),
            });
            inp = hidden;
        }
        let out = lb.affine(hidden, LATENT_DIM);
        let mut params = vec![0.0; lb.total()];
        let mut r = rng::rng(seed);
        for l in &layers {
            l.lin.init(&mut params, &mut r, 1.0);
            l.scale.init(&mut params, &mut r, 0.1);
            l.shift.init(&mut params, &mut r, 0.1);
        }
        out.init(&mut params, &mut r, 0.5);
        // small nonzero biases keep every parameter reachable by gradients
        for l in &layers {
            for blk in [l.lin.b, l.scale.b, l.shift.b] {
                for b in blk.of_mut(&mut params) {
                    *b = 0.01 * normal(&mut r);
                }
            }
        }
        for b in out.b.of_mut(&mut params) {
            *b = 0.01 * normal(&mut r);
        }
        Self { hidden, layers, out, params }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn network(&self, x: Vec<f64>, embed: [f64; EMBED_DIM]) -> ([f64; LATENT_DIM], Cache) {
        let p = &self.params;
        let mut cache = Cache { xs: Vec::new(), pre: Vec::new(), gamma: Vec::new(), h: Vec::new(), embed };
        let mut cur = x;
        for l in &self.layers {
            let a = l.lin.apply(p, &cur);
            let g = l.scale.apply(p, &embed);
            let b = l.shift.apply(p, &embed);
            let h: Vec<f64> = a
                .iter()
                .zip(&g)
                .zip(&b)
                .map(|((a, g), b)| libm::tanh((1.0 + g) * a + b))
                .collect();
            cache.xs.push(cur);
            cache.pre.push(a);
            cache.gamma.push(g);
            cur = h.clone();
            cache.h.push(h);
        }
        let o = self.out.apply(p, &cur);
        ([o[0], o[1]], cache)
    }

    fn backprop(&self, cache: &Cache, g_f: &[f64; LATENT_DIM], grad: &mut [f64]) {
        let p = &self.params;
        let last = cache.h.last().expect("at least one layer");
        let mut g_h = vec![0.0; self.hidden];
        self.out.backward(p, last, g_f, grad, Some(&mut g_h));
        let mut g_x = vec![0.0; self.hidden];
        for (k, l) in self.layers.iter().enumerate().rev() {
            tanh_backward(&cache.h[k], &mut g_h);
            let g_a: Vec<f64> = g_h.iter().zip(&cache.gamma[k]).map(|(g, gm)| g * (1.0 + gm)).collect();
            let g_gamma: Vec<f64> = g_h.iter().zip(&cache.pre[k]).map(|(g, a)| g * a).collect();
            l.scale.backward(p, &cache.embed, &g_gamma, grad, None);
            l.shift.backward(p, &cache.embed, &g_h, grad, None);
            if k == 0 {
                l.lin.backward(p, &cache.xs[k], &g_a, grad, None);
            } else {
                l.lin.backward(p, &cache.xs[k], &g_a, grad, Some(&mut g_x));
                core::mem::swap(&mut g_h, &mut g_x);
            }
        }
    }

    fn evaluate(
        &self,
        z: &LatentState,
        sigma: f64,
        spacing: f64,
        context: &[LatentState],
        sigma_data: f64,
    ) -> Result<(LatentState, Preconditioning, Cache), LatentError> {
        if context.len() != CONTEXT_LEN {
            return Err(LatentError::ContextLength(context.len()));
        }
        let pc = edm_precondition(sigma, sigma_data)?;
        let mut x = Vec::with_capacity(INPUT_DIM);
        x.extend(z.z.iter().map(|v| pc.c_in * v));
        for c in context {
            x.extend_from_slice(&c.z);
        }
        let (f, cache) = self.network(x, [pc.c_noise, spacing_embedding(spacing)]);
        let mut d = [0.0; LATENT_DIM];
        for k in 0..LATENT_DIM {
            d[k] = pc.c_skip * z.z[k] + pc.c_out * f[k];
        }
        Ok((LatentState { z: d }, pc, cache))
    }

    /// Loss of one example, with `scale · ∂loss/∂params` added into `grad`.
    pub(crate) fn loss_accumulate(
        &self,
        ex: &LossInput<'_>,
        sigma_data: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, LatentError> {
        let lam = lambda_weight(ex.sigma, sigma_data)?;
        let zs = forward_noise(ex.z0, ex.sigma, ex.noise)?;
        let (d, pc, cache) = self.evaluate(&zs, ex.sigma, ex.spacing, ex.context, sigma_data)?;
        let mut loss = 0.0;
        let mut g_f = [0.0; LATENT_DIM];
        for k in 0..LATENT_DIM {
            let r = d.z[k] - ex.z0.z[k];
            loss += r * r;
            g_f[k] = scale * 2.0 * lam * r * pc.c_out;
        }
        self.backprop(&cache, &g_f, grad);
        Ok(lam * loss)
    }
}

impl Denoiser for DenoiserParams {
    fn denoise(&self, z: &LatentState, sigma: f64, spacing: f64, context: &[LatentState], cfg: &EdmConfig) -> LatentState {
        match self.evaluate(z, sigma, spacing, context, cfg.sigma_data) {
            Ok((d, _, _)) => d,
            Err(_) => LatentState { z: [f64::NAN; LATENT_DIM] },
        }
    }
}

/// One training example for the denoiser loss.
pub(crate) struct LossInput<'a> {
    pub z0: &'a LatentState,
    pub context: &'a [LatentState],
    pub spacing: f64,
    pub sigma: f64,
    pub noise: &'a LatentState,
}

/// `λ(σ) · ‖D(z0 + σ·noise; σ, S, context) − z0‖²`.
pub fn edm_loss<D: Denoiser + ?Sized>(
    denoiser: &D,
    z0: &LatentState,
    context: &[LatentState],
    spacing: f64,
    sigma: f64,
    noise: &LatentState,
    cfg: &EdmConfig,
) -> Result<f64, LatentError> {
    if context.len() != CONTEXT_LEN {
        return Err(LatentError::ContextLength(context.len()));
    }
    if !(sigma > 0.0) {
        return Err(LatentError::NonPositiveNoise(sigma));
    }
    let lam = lambda_weight(sigma, cfg.sigma_data)?;
    let zs = forward_noise(z0, sigma, noise)?;
    let d = denoiser.denoise(&zs, sigma, spacing, context, cfg);
    Ok(lam * d.distance_sq(z0))
}

/// [`edm_loss`] for the trainable denoiser, with its gradient.
pub fn edm_loss_with_grad(
    params: &DenoiserParams,
    z0: &LatentState,
    context: &[LatentState],
    spacing: f64,
    sigma: f64,
    noise: &LatentState,
    cfg: &EdmConfig,
) -> Result<(f64, Vec<f64>), LatentError> {
    let mut grad = vec![0.0; params.len()];
    let ex = LossInput { z0, context, spacing, sigma, noise };
    let loss = params.loss_accumulate(&ex, cfg.sigma_data, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Deterministic Heun integration of `dz/dσ = (z − D(z; σ))/σ`.
///
/// Starts from `z ~ N(0, σ_max² I)` drawn from `seed` and walks the
/// [`noise_schedule`] levels with second-order corrections, then takes a
/// final Euler step from `σ_min` to 0. For a constant denoiser that last step
/// lands exactly on the fixed point.
pub fn heun_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    spacing: f64,
    context: &[LatentState],
    cfg: &EdmConfig,
    seed: u64,
) -> Result<LatentState, LatentError> {
    if context.len() != CONTEXT_LEN {
        return Err(LatentError::ContextLength(context.len()));
    }
    let mut sigmas = noise_schedule(cfg)?;
    sigmas.push(0.0);
    let mut r = rng::rng(seed);
    let mut z = [0.0; LATENT_DIM];
    for v in &mut z {
        *v = cfg.sigma_max * normal(&mut r);
    }
    let slope = |z: &[f64; LATENT_DIM], sigma: f64| {
        let d = denoiser.denoise(&LatentState { z: *z }, sigma, spacing, context, cfg);
        let mut s = [0.0; LATENT_DIM];
        for k in 0..LATENT_DIM {
            s[k] = (z[k] - d.z[k]) / sigma;
        }
        s
    };
    for w in sigmas.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let h = s1 - s0;
        let d0 = slope(&z, s0);
        let mut next = [0.0; LATENT_DIM];
        for k in 0..LATENT_DIM {
            next[k] = z[k] + h * d0[k];
        }
        if s1 > 0.0 {
            let d1 = slope(&next, s1);
            for k in 0..LATENT_DIM {
                next[k] = z[k] + 0.5 * h * (d0[k] + d1[k]);
            }
        }
        z = next;
    }
    Ok(LatentState { z })
}

/// `T` autoregressive samples, each conditioned on the trailing
/// `CONTEXT_LEN` states (initial context first, then generated ones).
pub fn rollout<D: Denoiser + ?Sized>(
    denoiser: &D,
    init_context: &[LatentState],
    spacing: f64,
    steps: usize,
    cfg: &EdmConfig,
    seed: u64,
) -> Result<Vec<LatentState>, LatentError> {
    rollout_observed(denoiser, init_context, spacing, steps, cfg, seed, |_, _, _| {})
}

/// [`rollout`] that reports `(step, conditioning window, new state)` after
/// every step.
pub fn rollout_observed<D, F>(
    denoiser: &D,
    init_context: &[LatentState],
    spacing: f64,
    steps: usize,
    cfg: &EdmConfig,
    seed: u64,
    mut observer: F,
) -> Result<Vec<LatentState>, LatentError>
where
    D: Denoiser + ?Sized,
    F: FnMut(usize, &[LatentState], &LatentState),
{
    if init_context.len() != CONTEXT_LEN {
        return Err(LatentError::ContextLength(init_context.len()));
    }
    cfg.validate()?;
    let mut history: Vec<LatentState> = init_context.to_vec();
    for step in 0..steps {
        let window = &history[history.len() - CONTEXT_LEN..];
        let next = heun_sample(denoiser, spacing, window, cfg, mix_seed(seed, step as u64))?;
        observer(step, window, &next);
        history.push(next);
    }
    Ok(history.split_off(CONTEXT_LEN))
}
