use mamba::model::{build_gaussian_conjugate_model, laplace_scale};
use mamba::samplers::{run_chain, Budget, SamplerConfig};
use mamba::stein::{ksd_reward, GradMode, KernelSpec, SteinSettings};

#[test]
fn stochastic_ksd_tracks_fullbatch_at_ten_percent_batches() {
    let model = build_gaussian_conjugate_model::<f64>(1000, 2, 1.0, 10.0, 3).unwrap();
    let mean = model.posterior_mean();
    let c = laplace_scale(&model, &mean).unwrap();
    let full = SteinSettings { kernel: KernelSpec::Imq { c, beta: -0.5 }, ..SteinSettings::default() };
    let stochastic = SteinSettings { grad_mode: GradMode::Stochastic, ..full };
    for seed in 0..10 {
        let cfg = SamplerConfig::sgld(0.2 * model.posterior_variance(), 0.1).with_seed(seed);
        let chain = run_chain(&model, &cfg, &mean, Budget::Iterations(20_000), 1, None).unwrap();
        let a = ksd_reward(&chain, &model, &full).unwrap();
        let b = ksd_reward(&chain, &model, &stochastic).unwrap();
        assert!((b - a).abs() / a < 0.5, "seed {seed}: fullbatch {a}, stochastic {b}");
    }
}

#[test]
fn laplace_scaled_kernel_penalizes_frozen_chains() {
    let model = build_gaussian_conjugate_model::<f64>(1000, 2, 1.0, 10.0, 8).unwrap();
    let mean = model.posterior_mean();
    let c = laplace_scale(&model, &mean).unwrap();
    let settings = SteinSettings { kernel: KernelSpec::Imq { c, beta: -0.5 }, ..SteinSettings::default() };
    let var = model.posterior_variance();
    let score = |h: f64| {
        let cfg = SamplerConfig::sgld(h, 0.1).with_seed(8);
        let chain = run_chain(&model, &cfg, &mean, Budget::Iterations(5000), 1, None).unwrap();
        ksd_reward(&chain, &model, &settings).unwrap()
    };
    let (mixing, frozen) = (score(0.1 * var), score(1e-6 * var));
    assert!(mixing < frozen, "mixing {mixing}, frozen {frozen}");
}
