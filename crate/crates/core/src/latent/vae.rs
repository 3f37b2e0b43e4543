//! Total-correlation VAE objective and the three-way KL decomposition.
//!
//! The aggregate posterior over a batch is estimated as the equally weighted
//! mixture of the batch's posteriors,
//!
//! ```text
//! log q(z)     ≈ logsumexp_j log q(z | x_j)     − log M
//! log q(z_d)   ≈ logsumexp_j log q(z_d | x_j)   − log M
//! ```
//!
//! and the decomposition terms are averages over samples `z ~ q(z | x_i)`:
//!
//! ```text
//! MI       = E[log q(z|x) − log q(z)]
//! TC       = E[log q(z) − Σ_d log q(z_d)]
//! dimwise  = E[Σ_d log q(z_d) − log p(z)]
//! ```
//!
//! The three terms telescope to the Monte-Carlo estimate of the mean
//! KL(q(z|x) ‖ p(z)).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::nn::{log_sum_exp, softmax_into, tanh_backward, tanh_in_place, Affine, LayoutBuilder, LN_2PI};
use super::{GaussianPosterior, LatentError, LATENT_DIM};
use crate::rng::{self, normal};

/// Weights on mutual information, total correlation and dimension-wise KL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for TcWeights {
    fn default() -> Self {
        Self { alpha: 0.0, beta: 15.0, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlDecomposition {
    pub mutual_information: f64,
    pub total_correlation: f64,
    pub dimwise_kl: f64,
    /// Standard error of the total-correlation estimate.
    pub tc_std_error: f64,
}

impl KlDecomposition {
    pub fn total(&self) -> f64 {
        self.mutual_information + self.total_correlation + self.dimwise_kl
    }
}

/// Loss value with its components (all batch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcLoss {
    pub loss: f64,
    /// Mean Gaussian negative log-likelihood of the reconstruction.
    pub reconstruction_nll: f64,
    pub decomposition: KlDecomposition,
}

/// Encoder `input → hidden (tanh) → [μ, log σ]` and decoder
/// `z → hidden (tanh) → input`, both dense.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub input_dim: usize,
    pub hidden: usize,
    enc1: Affine,
    enc2: Affine,
    dec1: Affine,
    dec2: Affine,
    params: Vec<f64>,
}

impl VaeParams {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut lb = LayoutBuilder::default();
        let enc1 = lb.affine(input_dim, hidden);
        let enc2 = lb.affine(hidden, 2 * LATENT_DIM);
        let dec1 = lb.affine(LATENT_DIM, hidden);
        let dec2 = lb.affine(hidden, input_dim);
        let mut params = vec![0.0; lb.total()];
        let mut r = rng::rng(seed);
        for layer in [&enc1, &enc2, &dec1, &dec2] {
            layer.init(&mut params, &mut r, 1.0);
            // Nonzero biases so every parameter carries gradient signal.
            for b in layer.b.of_mut(&mut params) {
                *b = 0.1 * normal(&mut r);
            }
        }
        Self { input_dim, hidden, enc1, enc2, dec1, dec2, params }
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

    pub fn encode(&self, x: &[f64]) -> GaussianPosterior {
        let mut h = self.enc1.apply(&self.params, x);
        tanh_in_place(&mut h);
        let o = self.enc2.apply(&self.params, &h);
        GaussianPosterior {
            mu: o[..LATENT_DIM].to_vec(),
            sigma: o[LATENT_DIM..].iter().map(|s| libm::exp(*s)).collect(),
        }
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let mut g = self.dec1.apply(&self.params, z);
        tanh_in_place(&mut g);
        self.dec2.apply(&self.params, &g)
    }
}

struct Forward {
    x: Vec<f64>,
    h: Vec<f64>,
    mu: [f64; LATENT_DIM],
    sigma: [f64; LATENT_DIM],
    eps: [f64; LATENT_DIM],
    z: [f64; LATENT_DIM],
    g: Vec<f64>,
    x_hat: Vec<f64>,
}

#[inline]
fn log_normal_1d(z: f64, mu: f64, sigma: f64) -> f64 {
    let r = (z - mu) / sigma;
    -0.5 * r * r - libm::log(sigma) - 0.5 * LN_2PI
}

/// Loss only; see [`tcvae_loss_with_grad`].
pub fn tcvae_loss(batch: &[Vec<f64>], params: &VaeParams, weights: &TcWeights, mc_seed: u64) -> Result<TcLoss, LatentError> {
    Ok(tcvae_eval(batch, params, weights, mc_seed, false)?.0)
}

/// `mean(−log p(x|z)) + α·MI + β·TC + γ·dimwise` with the reparameterized
/// sample `z = μ + σ·ε` (ε fixed by `mc_seed`) and its exact gradient with
/// respect to every VAE parameter.
pub fn tcvae_loss_with_grad(
    batch: &[Vec<f64>],
    params: &VaeParams,
    weights: &TcWeights,
    mc_seed: u64,
) -> Result<(TcLoss, Vec<f64>), LatentError> {
    tcvae_eval(batch, params, weights, mc_seed, true)
}

fn tcvae_eval(
    batch: &[Vec<f64>],
    vae: &VaeParams,
    weights: &TcWeights,
    mc_seed: u64,
    want_grad: bool,
) -> Result<(TcLoss, Vec<f64>), LatentError> {
    let m = batch.len();
    if m < 2 {
        return Err(LatentError::BatchTooSmall(m));
    }
    if batch.iter().any(|x| x.len() != vae.input_dim) {
        return Err(LatentError::Shape("batch element length differs from input_dim"));
    }
    let p = &vae.params;
    let mut r = rng::rng(mc_seed);
    let fw: Vec<Forward> = batch
        .iter()
        .map(|x| {
            let mut h = vae.enc1.apply(p, x);
            tanh_in_place(&mut h);
            let o = vae.enc2.apply(p, &h);
            let mut mu = [0.0; LATENT_DIM];
            let mut sigma = [0.0; LATENT_DIM];
            let mut eps = [0.0; LATENT_DIM];
            let mut z = [0.0; LATENT_DIM];
            for d in 0..LATENT_DIM {
                mu[d] = o[d];
                sigma[d] = libm::exp(o[LATENT_DIM + d]);
                eps[d] = normal(&mut r);
                z[d] = mu[d] + sigma[d] * eps[d];
            }
            let mut g = vae.dec1.apply(p, &z);
            tanh_in_place(&mut g);
            let x_hat = vae.dec2.apply(p, &g);
            Forward { x: x.clone(), h, mu, sigma, eps, z, g, x_hat }
        })
        .collect();

    let mf = m as f64;
    let ln_m = libm::log(mf);
    // ℓ[i][j][d] = log N(z_id; μ_jd, σ_jd)
    let mut ell = vec![0.0; m * m * LATENT_DIM];
    for i in 0..m {
        for j in 0..m {
            for d in 0..LATENT_DIM {
                ell[(i * m + j) * LATENT_DIM + d] = log_normal_1d(fw[i].z[d], fw[j].mu[d], fw[j].sigma[d]);
            }
        }
    }
    let mut joint = vec![0.0; m];
    let mut marg = vec![0.0; m];
    let mut w_joint = vec![0.0; m * m];
    let mut w_marg = vec![0.0; m * m * LATENT_DIM];
    let (mut mi, mut tc, mut dw, mut recon) = (0.0, 0.0, 0.0, 0.0);
    let mut scratch = vec![0.0; m];
    let mut tc_terms = Vec::with_capacity(m);
    for i in 0..m {
        let a: f64 = (0..LATENT_DIM).map(|d| ell[(i * m + i) * LATENT_DIM + d]).sum();
        for j in 0..m {
            scratch[j] = (0..LATENT_DIM).map(|d| ell[(i * m + j) * LATENT_DIM + d]).sum();
        }
        let b = log_sum_exp(&scratch) - ln_m;
        softmax_into(&scratch, &mut w_joint[i * m..(i + 1) * m]);
        let mut c = 0.0;
        let mut wd = vec![0.0; m];
        for d in 0..LATENT_DIM {
            for j in 0..m {
                scratch[j] = ell[(i * m + j) * LATENT_DIM + d];
            }
            c += log_sum_exp(&scratch) - ln_m;
            softmax_into(&scratch, &mut wd);
            for j in 0..m {
                w_marg[(i * m + j) * LATENT_DIM + d] = wd[j];
            }
        }
        let prior: f64 = fw[i].z.iter().map(|z| -0.5 * z * z - 0.5 * LN_2PI).sum();
        joint[i] = b;
        marg[i] = c;
        mi += a - b;
        tc += b - c;
        tc_terms.push(b - c);
        dw += c - prior;
        let sq: f64 = fw[i].x.iter().zip(&fw[i].x_hat).map(|(x, xh)| (x - xh) * (x - xh)).sum();
        recon += 0.5 * sq + 0.5 * vae.input_dim as f64 * LN_2PI;
    }
    let (mi, tc, dw, recon) = (mi / mf, tc / mf, dw / mf, recon / mf);
    let tc_std_error = std_error(&tc_terms, tc);
    let loss = recon + weights.alpha * mi + weights.beta * tc + weights.gamma * dw;
    let out = TcLoss {
        loss,
        reconstruction_nll: recon,
        decomposition: KlDecomposition { mutual_information: mi, total_correlation: tc, dimwise_kl: dw, tc_std_error },
    };
    if !want_grad {
        return Ok((out, Vec::new()));
    }

    // Per-sample coefficients of A (= log q(z_i|x_i)), B, C and log p(z_i).
    let c_a = weights.alpha / mf;
    let c_b = (weights.beta - weights.alpha) / mf;
    let c_c = (weights.gamma - weights.beta) / mf;
    let c_p = -weights.gamma / mf;

    let mut grad = vec![0.0; p.len()];
    let mut g_mu = vec![[0.0; LATENT_DIM]; m];
    let mut g_s = vec![[0.0; LATENT_DIM]; m];
    let mut g_z = vec![[0.0; LATENT_DIM]; m];

    for i in 0..m {
        for j in 0..m {
            for d in 0..LATENT_DIM {
                let k = (i * m + j) * LATENT_DIM + d;
                let mut coef = c_b * w_joint[i * m + j] + c_c * w_marg[k];
                if i == j {
                    coef += c_a;
                }
                let sigma = fw[j].sigma[d];
                let r = (fw[i].z[d] - fw[j].mu[d]) / sigma;
                g_z[i][d] -= coef * r / sigma;
                g_mu[j][d] += coef * r / sigma;
                g_s[j][d] += coef * (r * r - 1.0);
            }
        }
        for d in 0..LATENT_DIM {
            g_z[i][d] += c_p * (-fw[i].z[d]);
        }
    }

    let mut g_hidden_dec = vec![0.0; vae.hidden];
    let mut g_z_dec = vec![0.0; LATENT_DIM];
    let mut g_hidden_enc = vec![0.0; vae.hidden];
    for (i, f) in fw.iter().enumerate() {
        // Reconstruction: ∂/∂x̂ of ½‖x − x̂‖² / M
        let g_xhat: Vec<f64> = f.x_hat.iter().zip(&f.x).map(|(xh, x)| (xh - x) / mf).collect();
        vae.dec2.backward(p, &f.g, &g_xhat, &mut grad, Some(&mut g_hidden_dec));
        tanh_backward(&f.g, &mut g_hidden_dec);
        vae.dec1.backward(p, &f.z, &g_hidden_dec, &mut grad, Some(&mut g_z_dec));
        let mut g_out = [0.0; 2 * LATENT_DIM];
        for d in 0..LATENT_DIM {
            let gz = g_z[i][d] + g_z_dec[d];
            g_out[d] = g_mu[i][d] + gz;
            g_out[LATENT_DIM + d] = (g_s[i][d] + gz * f.eps[d] * f.sigma[d]) * 1.0;
        }
        vae.enc2.backward(p, &f.h, &g_out, &mut grad, Some(&mut g_hidden_enc));
        tanh_backward(&f.h, &mut g_hidden_enc);
        vae.enc1.backward(p, &f.x, &g_hidden_enc, &mut grad, None);
    }
    let _ = (&joint, &marg);
    Ok((out, grad))
}

fn std_error(terms: &[f64], mean: f64) -> f64 {
    let n = terms.len() as f64;
    if terms.len() < 2 {
        return f64::INFINITY;
    }
    let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    libm::sqrt(var / n)
}

/// Monte-Carlo decomposition of the mean KL for a population of posteriors.
///
/// Sample `k` draws from posterior `k mod M`, so every component is visited
/// equally often.
pub fn kl_decomposition_estimate(posteriors: &[GaussianPosterior], n_mc: usize, seed: u64) -> Result<KlDecomposition, LatentError> {
    let m = posteriors.len();
    if m < 2 {
        return Err(LatentError::BatchTooSmall(m));
    }
    let dim = posteriors[0].dim();
    for p in posteriors {
        if p.dim() != dim || p.sigma.len() != dim {
            return Err(LatentError::Shape("posteriors differ in dimension"));
        }
        if p.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(LatentError::NonPositiveSigma);
        }
    }
    if n_mc == 0 {
        return Err(LatentError::Config("n_mc must be positive"));
    }
    let ln_m = libm::log(m as f64);
    // log σ and 1/σ cached per component and dimension.
    let log_sigma: Vec<f64> = posteriors.iter().flat_map(|p| p.sigma.iter().map(|s| libm::log(*s))).collect();
    let inv_sigma: Vec<f64> = posteriors.iter().flat_map(|p| p.sigma.iter().map(|s| 1.0 / s)).collect();
    let mu: Vec<f64> = posteriors.iter().flat_map(|p| p.mu.iter().copied()).collect();

    let mut r = rng::rng(seed);
    let (mut mi, mut tc, mut dw) = (0.0, 0.0, 0.0);
    let mut tc_terms = Vec::with_capacity(n_mc);
    let mut z = vec![0.0; dim];
    let mut per_dim = vec![0.0; m * dim];
    let mut joint = vec![0.0; m];
    let mut col = vec![0.0; m];
    for k in 0..n_mc {
        let src = k % m;
        for d in 0..dim {
            z[d] = posteriors[src].mu[d] + posteriors[src].sigma[d] * normal(&mut r);
        }
        for j in 0..m {
            let mut s = 0.0;
            for d in 0..dim {
                let t = (z[d] - mu[j * dim + d]) * inv_sigma[j * dim + d];
                let l = -0.5 * t * t - log_sigma[j * dim + d] - 0.5 * LN_2PI;
                per_dim[j * dim + d] = l;
                s += l;
            }
            joint[j] = s;
        }
        let log_cond = joint[src];
        let log_q = log_sum_exp(&joint) - ln_m;
        let mut log_marg = 0.0;
        for d in 0..dim {
            for j in 0..m {
                col[j] = per_dim[j * dim + d];
            }
            log_marg += log_sum_exp(&col) - ln_m;
        }
        let log_p: f64 = z.iter().map(|z| -0.5 * z * z - 0.5 * LN_2PI).sum();
        mi += log_cond - log_q;
        tc += log_q - log_marg;
        tc_terms.push(log_q - log_marg);
        dw += log_marg - log_p;
    }
    let n = n_mc as f64;
    let tc = tc / n;
    Ok(KlDecomposition {
        mutual_information: mi / n,
        total_correlation: tc,
        dimwise_kl: dw / n,
        tc_std_error: std_error(&tc_terms, tc),
    })
}
