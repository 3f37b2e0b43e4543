use wakeprobe_core::latent::*;

fn posterior(mu: [f64; 2], sigma: [f64; 2]) -> GaussianPosterior {
    GaussianPosterior::new(mu.to_vec(), sigma.to_vec()).unwrap()
}

fn vae_batch() -> Vec<Vec<f64>> {
    vec![
        vec![0.3, -1.2],
        vec![1.1, 0.4],
        vec![-0.7, 0.9],
        vec![0.05, 0.2],
        vec![-1.4, -0.6],
    ]
}

#[test]
fn tcvae_gradient_matches_central_differences() {
    let mut vae = VaeParams::new(2, 2, 5);
    let batch = vae_batch();
    let w = TcWeights { alpha: 0.7, beta: 15.0, gamma: 1.0 };
    let (_, grad) = tcvae_loss_with_grad(&batch, &vae, &w, 21).unwrap();
    let base = vae.params().to_vec();
    let err = gradient_check(
        |p| {
            vae.params_mut().copy_from_slice(p);
            tcvae_loss(&batch, &vae, &w, 21).unwrap().loss
        },
        &base,
        &grad,
        1e-5,
    );
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn edm_gradient_matches_central_differences() {
    let mut net = DenoiserParams::new(8, 2, 9);
    let cfg = EdmConfig::default();
    let z0 = LatentState::new([0.4, -0.3]);
    let ctx = [LatentState::new([0.2, 0.1]), LatentState::new([-0.5, 0.6])];
    let noise = LatentState::new([0.8, -1.1]);
    for sigma in [0.05, 0.7, 4.0] {
        let (_, grad) = edm_loss_with_grad(&net, &z0, &ctx, 5.5, sigma, &noise, &cfg).unwrap();
        let base = net.params().to_vec();
        let err = gradient_check(
            |p| {
                net.params_mut().copy_from_slice(p);
                edm_loss(&net, &z0, &ctx, 5.5, sigma, &noise, &cfg).unwrap()
            },
            &base,
            &grad,
            1e-5,
        );
        net.params_mut().copy_from_slice(&base);
        assert!(err < 1e-4, "sigma {sigma}: max relative error {err}");
    }
}

#[test]
fn factorized_aggregate_has_zero_tc() {
    let mut posts = Vec::new();
    for a in [-1.0, 1.0] {
        for b in [-0.5, 0.8] {
            posts.push(posterior([a, b], [0.6, 0.4]));
        }
    }
    let d = kl_decomposition_estimate(&posts, 100_000, 3).unwrap();
    // the mixture factorizes exactly, so every sample's TC term is zero up to round-off
    assert!(d.total_correlation.abs() <= 3.0 * d.tc_std_error + 1e-12, "{d:?}");
}

#[test]
fn correlated_aggregate_tc_matches_gaussian() {
    // means ~ N(0, C) with C scaled so that the aggregate has unit variances
    // and correlation 0.9 once the posterior width 0.3 is added
    let sigma: f64 = 0.3;
    let c = 1.0 - sigma * sigma;
    let r = 0.9 / c;
    let mut posts = Vec::new();
    let mut state = 0x1234_5678_u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    for _ in 0..1500 {
        let (u1, u2) = (next(), next());
        let rad = (-2.0 * u1.ln()).sqrt();
        let (n1, n2) = (rad * (std::f64::consts::TAU * u2).cos(), rad * (std::f64::consts::TAU * u2).sin());
        let x = c.sqrt() * n1;
        let y = c.sqrt() * (r * n1 + (1.0 - r * r).sqrt() * n2);
        posts.push(posterior([x, y], [sigma, sigma]));
    }
    let d = kl_decomposition_estimate(&posts, 100_000, 4).unwrap();
    let want = -0.5 * (1.0f64 - 0.81).ln();
    assert!((d.total_correlation - want).abs() < 0.1 * want, "{d:?}");
}

#[test]
fn decomposition_sums_to_mean_kl() {
    let posts = vec![
        posterior([0.5, -1.0], [0.7, 0.9]),
        posterior([-0.2, 0.4], [0.5, 1.1]),
        posterior([1.3, 0.1], [0.8, 0.6]),
        posterior([-0.9, -0.3], [1.2, 0.4]),
    ];
    let mean_kl: f64 = posts.iter().map(|p| gaussian_kl_to_prior(p).unwrap()).sum::<f64>() / posts.len() as f64;
    let d = kl_decomposition_estimate(&posts, 100_000, 8).unwrap();
    assert!((d.total() - mean_kl).abs() < 0.02 * mean_kl, "{} vs {mean_kl}", d.total());
}

#[test]
fn mixture_training_recovers_moments() {
    let spec = DatasetSpec::two_component_mixture(4096);
    let cfg = EdmConfig { n_steps: 32, ..EdmConfig::default() };
    let model = train_toy(&spec, &TrainConfig::default(), &cfg, 1).unwrap();
    assert!(model.loss_curve.last().unwrap() < &model.loss_curve[0]);

    let DatasetSpec::GaussianMixture { weights, means, stds, .. } = &spec else { unreachable!() };
    let (want_mean, want_var) = mixture_moments(weights, means, stds);
    let pop = sample_population(&model.params, 6.0, &[LatentState::zero(); 2], 10_000, &cfg, 2).unwrap();
    let (mean, var) = population_moments(&pop);
    for d in 0..2 {
        assert!((mean[d] - want_mean[d]).abs() < 0.1, "mean {mean:?}");
        assert!((var[d] / want_var[d] - 1.0).abs() < 0.2, "var {var:?} want {want_var:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let spec = DatasetSpec::two_component_mixture(256);
    let tc = TrainConfig { epochs: 3, hidden: 8, ..TrainConfig::default() };
    let cfg = EdmConfig::default();
    let a = train_toy(&spec, &tc, &cfg, 42).unwrap();
    let b = train_toy(&spec, &tc, &cfg, 42).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.params, b.params);
}

#[test]
fn trained_rollout_beats_untrained_baseline() {
    let spec = DatasetSpec::LinearGaussian { spacings: vec![4.0, 6.0, 8.0, 10.0], n_trajectories: 64, length: 16 };
    let tc = TrainConfig::default();
    let cfg = EdmConfig { n_steps: 32, ..EdmConfig::default() };
    let model = train_toy(&spec, &tc, &cfg, 1).unwrap();
    let untrained = DenoiserParams::new(tc.hidden, tc.n_layers, 77);
    let held = DatasetSpec::LinearGaussian { spacings: vec![5.0, 9.0], n_trajectories: 16, length: 16 }
        .examples(99)
        .unwrap();
    let trained_err = one_step_error(&model.params, &held, &cfg, 5).unwrap();
    let baseline_err = one_step_error(&untrained, &held, &cfg, 5).unwrap();
    assert!(3.0 * trained_err < baseline_err, "trained {trained_err}, untrained {baseline_err}");
}

#[test]
fn sampler_and_rollout_are_bit_deterministic() {
    let net = DenoiserParams::new(8, 2, 1);
    let cfg = EdmConfig { n_steps: 16, ..EdmConfig::default() };
    let ctx = [LatentState::new([0.1, 0.2]), LatentState::new([0.3, -0.1])];
    let a = rollout(&net, &ctx, 7.0, 5, &cfg, 9).unwrap();
    let b = rollout(&net, &ctx, 7.0, 5, &cfg, 9).unwrap();
    let bits = |t: &[LatentState]| t.iter().flat_map(|s| s.z.map(f64::to_bits)).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&rollout(&net, &ctx, 7.0, 5, &cfg, 10).unwrap()));
    let one = rollout(&net, &ctx, 7.0, 1, &cfg, 9).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(bits(&one), bits(&a[..1]));
    let zero = EdmConfig { n_steps: 0, ..cfg };
    assert_eq!(heun_sample(&net, 7.0, &ctx, &zero, 0), Err(LatentError::NoSteps));
}
