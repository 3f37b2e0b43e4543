//! Latent-model diagnostics behind `wakeprobe lab`. Each check returns a
//! JSON-serializable record with the measured quantity, its reference and
//! a pass flag.

use serde::Serialize;
use wakeprobe_core::latent::{
    edm_loss, edm_loss_with_grad, gradient_check, kl_decomposition_estimate, mixture_moments, one_step_error,
    population_moments, rollout, sample_population, tcvae_loss, tcvae_loss_with_grad, train_toy, DatasetSpec,
    DenoiserParams, EdmConfig, GaussianPosterior, KlDecomposition, LatentError, LatentState, TcWeights, TrainConfig,
    VaeParams,
};
use wakeprobe_core::rng::mix_seed;

pub const TC_SAMPLES: usize = 100_000;
const GRAD_TOLERANCE: f64 = 1e-4;

/// Uniform on (0, 1) from a hashed counter.
fn uniform(seed: u64, i: u64) -> f64 {
    ((mix_seed(seed, i) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn std_normal_pair(seed: u64, i: u64) -> (f64, f64) {
    let (u1, u2) = (uniform(seed, 2 * i), uniform(seed, 2 * i + 1));
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

#[derive(Debug, Clone, Serialize)]
pub struct TcCase {
    pub name: &'static str,
    pub estimate: KlDecomposition,
    pub reference_tc: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TcReport {
    pub n_mc: usize,
    pub cases: Vec<TcCase>,
    pub pass: bool,
}

/// Total-correlation estimates on a factorized aggregate (TC = 0) and on
/// one with correlation 0.9 and unit variances (TC = −½ ln(1 − 0.81)).
pub fn tc_check(seed: u64, n_mc: usize) -> Result<TcReport, LatentError> {
    let mut factorized = Vec::new();
    for a in [-1.0, 1.0] {
        for b in [-0.5, 0.8] {
            factorized.push(GaussianPosterior::new(vec![a, b], vec![0.6, 0.4])?);
        }
    }
    let f = kl_decomposition_estimate(&factorized, n_mc, mix_seed(seed, 1))?;
    let f_pass = f.total_correlation.abs() <= 3.0 * f.tc_std_error + 1e-12;

    let sigma: f64 = 0.3;
    let c = 1.0 - sigma * sigma;
    let r = 0.9 / c;
    let mut correlated = Vec::new();
    for i in 0..1500 {
        let (n1, n2) = std_normal_pair(mix_seed(seed, 2), i);
        let x = c.sqrt() * n1;
        let y = c.sqrt() * (r * n1 + (1.0 - r * r).sqrt() * n2);
        correlated.push(GaussianPosterior::new(vec![x, y], vec![sigma, sigma])?);
    }
    let g = kl_decomposition_estimate(&correlated, n_mc, mix_seed(seed, 3))?;
    let want = -0.5 * (1.0f64 - 0.81).ln();
    let g_pass = (g.total_correlation - want).abs() < 0.1 * want;
    Ok(TcReport {
        n_mc,
        pass: f_pass && g_pass,
        cases: vec![
            TcCase { name: "factorized", estimate: f, reference_tc: 0.0, pass: f_pass },
            TcCase { name: "correlated_0.9", estimate: g, reference_tc: want, pass: g_pass },
        ],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: String,
    pub n_params: usize,
    pub max_relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub eps: f64,
    pub tolerance: f64,
    pub cases: Vec<GradCase>,
    pub pass: bool,
}

/// Analytic gradients of both objectives against central differences.
pub fn grad_check(seed: u64) -> Result<GradReport, LatentError> {
    let eps = 1e-5;
    let mut cases = Vec::new();
    let mut push = |name: String, n_params: usize, err: f64| {
        cases.push(GradCase { name, n_params, max_relative_error: err, pass: err < GRAD_TOLERANCE });
    };

    let mut vae = VaeParams::new(2, 2, mix_seed(seed, 1));
    let batch: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            let (a, b) = std_normal_pair(mix_seed(seed, 2), i);
            vec![a, b]
        })
        .collect();
    let w = TcWeights { alpha: 0.7, beta: 15.0, gamma: 1.0 };
    let mc = mix_seed(seed, 3);
    let (_, grad) = tcvae_loss_with_grad(&batch, &vae, &w, mc)?;
    let base = vae.params().to_vec();
    let mut failure = None;
    let err = gradient_check(
        |p| {
            vae.params_mut().copy_from_slice(p);
            match tcvae_loss(&batch, &vae, &w, mc) {
                Ok(l) => l.loss,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        &base,
        &grad,
        eps,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    push("tcvae".into(), base.len(), err);

    let mut net = DenoiserParams::new(8, 2, mix_seed(seed, 4));
    let cfg = EdmConfig::default();
    let z0 = LatentState::new([0.4, -0.3]);
    let ctx = [LatentState::new([0.2, 0.1]), LatentState::new([-0.5, 0.6])];
    let noise = LatentState::new([0.8, -1.1]);
    let base = net.params().to_vec();
    for sigma in [0.05, 0.7, 4.0] {
        let (_, grad) = edm_loss_with_grad(&net, &z0, &ctx, 5.5, sigma, &noise, &cfg)?;
        let mut failure = None;
        let err = gradient_check(
            |p| {
                net.params_mut().copy_from_slice(p);
                edm_loss(&net, &z0, &ctx, 5.5, sigma, &noise, &cfg).unwrap_or_else(|e| {
                    failure = Some(e);
                    f64::NAN
                })
            },
            &base,
            &grad,
            eps,
        );
        net.params_mut().copy_from_slice(&base);
        if let Some(e) = failure {
            return Err(e);
        }
        push(format!("edm_sigma_{sigma}"), base.len(), err);
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(GradReport { eps, tolerance: GRAD_TOLERANCE, cases, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub loss_first: f64,
    pub loss_last: f64,
    pub n_samples: usize,
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    pub reference_mean: [f64; 2],
    pub reference_variance: [f64; 2],
    pub pass: bool,
}

/// Trains on a two-component mixture and compares sample moments with the
/// mixture's exact moments.
pub fn edm_train(seed: u64) -> Result<TrainReport, LatentError> {
    let spec = DatasetSpec::two_component_mixture(4096);
    let cfg = EdmConfig { n_steps: 32, ..EdmConfig::default() };
    let model = train_toy(&spec, &TrainConfig::default(), &cfg, seed)?;
    let DatasetSpec::GaussianMixture { weights, means, stds, spacing, .. } = &spec else {
        unreachable!("mixture spec")
    };
    let (want_mean, want_var) = mixture_moments(weights, means, stds);
    let n = 10_000;
    let pop = sample_population(&model.params, *spacing, &[LatentState::zero(); 2], n, &cfg, mix_seed(seed, 7))?;
    let (mean, var) = population_moments(&pop);
    let pass = (0..2).all(|d| (mean[d] - want_mean[d]).abs() < 0.1 && (var[d] / want_var[d] - 1.0).abs() < 0.2);
    Ok(TrainReport {
        loss_first: model.loss_curve[0],
        loss_last: *model.loss_curve.last().expect("at least one epoch"),
        n_samples: n,
        mean,
        variance: var,
        reference_mean: want_mean,
        reference_variance: want_var,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RolloutReport {
    pub trained_one_step_mse: f64,
    pub untrained_one_step_mse: f64,
    pub held_out_spacings: Vec<f64>,
    pub trajectory_spacing: f64,
    pub trajectory: Vec<[f64; 2]>,
    pub pass: bool,
}

/// Trains on linear-Gaussian trajectories, scores one-step error at unseen
/// spacings against an untrained network and rolls out a trajectory.
pub fn rollout_check(seed: u64, steps: usize) -> Result<RolloutReport, LatentError> {
    let spec = DatasetSpec::LinearGaussian { spacings: vec![4.0, 6.0, 8.0, 10.0], n_trajectories: 64, length: 16 };
    let tc = TrainConfig::default();
    let cfg = EdmConfig { n_steps: 32, ..EdmConfig::default() };
    let model = train_toy(&spec, &tc, &cfg, seed)?;
    let untrained = DenoiserParams::new(tc.hidden, tc.n_layers, mix_seed(seed, 77));
    let held_out = vec![5.0, 9.0];
    let held = DatasetSpec::LinearGaussian { spacings: held_out.clone(), n_trajectories: 16, length: 16 }
        .examples(mix_seed(seed, 99))?;
    let trained = one_step_error(&model.params, &held, &cfg, mix_seed(seed, 5))?;
    let baseline = one_step_error(&untrained, &held, &cfg, mix_seed(seed, 5))?;
    let ctx = [LatentState::new([1.0, 0.0]), LatentState::new([0.9, 0.3])];
    let traj = rollout(&model.params, &ctx, 7.0, steps, &cfg, mix_seed(seed, 11))?;
    Ok(RolloutReport {
        trained_one_step_mse: trained,
        untrained_one_step_mse: baseline,
        held_out_spacings: held_out,
        trajectory_spacing: 7.0,
        trajectory: traj.iter().map(|s| s.z).collect(),
        pass: 3.0 * trained < baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniforms_are_open_interval_and_seeded() {
        for i in 0..1000 {
            let u = uniform(4, i);
            assert!(u > 0.0 && u < 1.0);
        }
        assert_eq!(std_normal_pair(1, 3), std_normal_pair(1, 3));
        assert_ne!(std_normal_pair(1, 3), std_normal_pair(2, 3));
    }

    #[test]
    fn gradients_agree() {
        let r = grad_check(0).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.cases.len(), 4);
    }

    #[test]
    fn tc_check_passes_at_reduced_samples() {
        let r = tc_check(0, 20_000).unwrap();
        assert!(r.cases[0].pass, "{r:?}");
    }
}
