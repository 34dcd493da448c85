//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! Run with `cargo test --test acceptance`.

use std::time::{Duration, Instant};

use mamba::bandit::{
    arm_grid, complexity_h2, derive_seed, failure_probability_bound, heuristic_tune, mamba_run, mamba_schedule,
    tune_mamba, MambaSetup, SyntheticArm,
};
use mamba::cli::cmd_tune;
use mamba::config::RunConfig;
use mamba::io::{read_chain, write_chain};
use mamba::model::{
    build_gaussian_conjugate_model, find_map, grad_cv, grad_minibatch, laplace_scale, AdamConfig, LogisticRegression,
    DEFAULT_MAP_MAX_ITERS, DEFAULT_MAP_TOL,
};
use mamba::samplers::{run_chain, Budget, ChainRunner, SamplerConfig, SamplerKind};
use mamba::stein::{
    chain_discrepancy, fssd, kernel_eval, ksd, ksd_reward, stein_kernel, FssdConfig, GradMode, KernelSpec, Metric,
    SteinSampleSet, SteinSettings,
};
use mamba::ChainRng;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn normal(rng: &mut ChainRng) -> f64 {
    rng.sample(StandardNormal)
}

fn normals(rng: &mut ChainRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Samples whose target is Normal(0, I), so `∇U(x) = x`.
fn standard_normal_target(points: Vec<f64>, dim: usize) -> SteinSampleSet<f64> {
    let grads = points.clone();
    SteinSampleSet::new(dim, points, grads, GradMode::Fullbatch).unwrap()
}

fn kernel_derivatives() -> Outcome {
    let mut rng = ChainRng::seed_from_u64(1);
    let specs = [KernelSpec::Imq { c: 1.0, beta: -0.5 }, KernelSpec::Gaussian { bandwidth: 1.3 }];
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for spec in &specs {
        for d in [1usize, 5] {
            for _ in 0..20 {
                let x = normals(&mut rng, d);
                let y = normals(&mut rng, d);
                let e = kernel_eval(spec, &x, &y).unwrap();
                let k = |x: &[f64], y: &[f64]| kernel_eval(spec, x, y).unwrap();
                let mut fd_x = vec![0.0; d];
                let mut fd_y = vec![0.0; d];
                let mut fd_trace = 0.0;
                for i in 0..d {
                    let (mut xp, mut xm, mut yp, mut ym) = (x.clone(), x.clone(), y.clone(), y.clone());
                    xp[i] += eps;
                    xm[i] -= eps;
                    yp[i] += eps;
                    ym[i] -= eps;
                    fd_x[i] = (k(&xp, &y).k - k(&xm, &y).k) / (2.0 * eps);
                    fd_y[i] = (k(&x, &yp).k - k(&x, &ym).k) / (2.0 * eps);
                    fd_trace += (k(&xp, &y).grad_y[i] - k(&xm, &y).grad_y[i]) / (2.0 * eps);
                }
                worst = worst
                    .max(rel_err(&e.grad_x, &fd_x))
                    .max(rel_err(&e.grad_y, &fd_y))
                    .max(rel_err(&[e.trace_grad_xy], &[fd_trace]));
            }
        }
    }
    ensure(worst <= 1e-5, format!("max rel err {worst:.2e}"))
}

fn stein_identity() -> Outcome {
    let spec = KernelSpec::default();
    let mut rng = ChainRng::seed_from_u64(2);
    let n = 100_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let x = normals(&mut rng, 2);
        let y = normals(&mut rng, 2);
        let v = stein_kernel(&spec, &x, &y, &x, &y).unwrap();
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / (n as f64 - 1.0)).sqrt();
    ensure(mean.abs() <= 3.0 * se, format!("mean {mean:.3e}, 3 se {:.3e}", 3.0 * se))
}

fn single_point_ksd() -> Outcome {
    let set = standard_normal_target(vec![0.0], 1);
    let v = ksd(&set, &KernelSpec::Imq { c: 1.0, beta: -0.5 }).unwrap();
    ensure((v - 1.0).abs() <= 1e-12, format!("KSD {v:.15}"))
}

fn ksd_consistency() -> Outcome {
    let model = build_gaussian_conjugate_model(100, 2, 1.0, 10.0, 4).unwrap();
    let spec = KernelSpec::default();
    let medians: Vec<f64> = [10usize, 100, 1000]
        .iter()
        .map(|&p| {
            let vals = (0..10u64)
                .map(|seed| {
                    let mut rng = ChainRng::seed_from_u64(derive_seed(40, seed * 10_000 + p as u64));
                    let set = SteinSampleSet::with_model_grads(&model, model.sample_posterior(p, &mut rng)).unwrap();
                    ksd(&set, &spec).unwrap()
                })
                .collect();
            median(vals)
        })
        .collect();
    ensure(medians.windows(2).all(|w| w[1] < w[0]), format!("medians {medians:.4?}"))
}

fn ksd_discrimination() -> Outcome {
    let spec = KernelSpec::default();
    let p = 500;
    let mut wins = 0;
    for pair in 0..100u64 {
        let mut rng = ChainRng::seed_from_u64(derive_seed(50, pair));
        let matched = normals(&mut rng, 2 * p);
        let shifted: Vec<f64> = normals(&mut rng, 2 * p).into_iter().map(|z| z + 1.0).collect();
        let a = ksd(&standard_normal_target(shifted, 2), &spec).unwrap();
        let b = ksd(&standard_normal_target(matched, 2), &spec).unwrap();
        wins += (a > b) as usize;
    }
    ensure(wins >= 95, format!("{wins}/100"))
}

fn fssd_witness_value() -> Outcome {
    let set = standard_normal_target(vec![0.0], 1);
    let v = fssd(&set, &FssdConfig::new(vec![vec![1.0]]), &KernelSpec::Gaussian { bandwidth: 1.0 }).unwrap();
    let expected = (-0.5f64).exp();
    ensure((v - expected).abs() <= 1e-10, format!("FSSD {v:.15}, expected {expected:.15}"))
}

fn schedule_arithmetic() -> Outcome {
    let int = Ratio::<u64>::from_integer;
    let s = mamba_schedule(27, 3, int(81)).map_err(|e| e.to_string())?;
    let got: Vec<(usize, Ratio<u64>)> = s.iter().map(|r| (r.arms, r.per_arm)).collect();
    let ok = got == vec![(27, int(1)), (9, int(3)), (3, int(9))]
        && s.iter().all(|r| int(r.arms as u64) * r.per_arm == int(27))
        && s.windows(2).all(|w| w[1].per_arm == int(3) * w[0].per_arm);
    let shown: Vec<String> = got.iter().map(|(n, r)| format!("({n},{r})")).collect();
    ensure(ok, shown.join(" "))
}

fn best_arm_identification() -> Outcome {
    let (eta, m, sigma) = (3usize, 9usize, 0.05f64);
    let means: Vec<f64> = (0..m).map(|i| -(i as f64)).collect();
    let h2 = complexity_h2(&means).unwrap().unwrap();
    let trials = |budget: Budget, count: u64, salt: u64| -> usize {
        (0..count)
            .filter(|&t| {
                let mut arms: Vec<SyntheticArm> = means
                    .iter()
                    .enumerate()
                    .map(|(i, &mu)| SyntheticArm::new(mu, sigma, derive_seed(salt + t, i as u64)))
                    .collect();
                mamba_run(&mut arms, eta, budget, 1).unwrap().best != 0
            })
            .count()
    };
    let t_iter = 90.0;
    let fails_first = trials(Budget::Iterations(90), 100, 0);
    let fails_all = trials(Budget::Iterations(90), 500, 0);
    let bound = failure_probability_bound(sigma * sigma, h2, eta, m, t_iter);
    // A budget small enough that the bound is informative.
    let t_small = 0.06;
    let fails_small = trials(Budget::Seconds(t_small), 500, 1_000_000);
    let bound_small = failure_probability_bound(sigma * sigma, h2, eta, m, t_small);
    let rate_small = fails_small as f64 / 500.0;
    ensure(
        fails_first <= 5 && fails_all as f64 / 500.0 <= bound && rate_small <= bound_small,
        format!(
            "{}/100 correct; T=90: failure rate {:.3} vs bound {bound:.2e}; T={t_small}: {rate_small:.3} vs bound {bound_small:.3}",
            100 - fails_first,
            fails_all as f64 / 500.0
        ),
    )
}

fn control_variates() -> Outcome {
    let (model, _) = LogisticRegression::<f64>::synthetic(1000, 5, 10.0, 9).unwrap();
    let map = find_map(&model, &[0.0; 5], AdamConfig::default(), DEFAULT_MAP_MAX_ITERS, DEFAULT_MAP_TOL).unwrap();
    for n in [1usize, 7, 10, 100, 500, 999, 1000] {
        for seed in 0..10u64 {
            let mut rng = ChainRng::seed_from_u64(seed);
            let est = grad_cv(&model, &map.theta_map, &map, n, &mut rng).unwrap();
            if est.value != map.full_grad_at_map {
                return Err(format!("CV gradient differs at MAP for n = {n}, seed {seed}"));
            }
        }
    }
    let theta: Vec<f64> = map.theta_map.iter().map(|t| t + 0.01).collect();
    let trace_var = |draw: &mut dyn FnMut(&mut ChainRng) -> Vec<f64>| {
        let mut rng = ChainRng::seed_from_u64(99);
        let draws: Vec<Vec<f64>> = (0..1000).map(|_| draw(&mut rng)).collect();
        (0..5)
            .map(|j| {
                let m = draws.iter().map(|g| g[j]).sum::<f64>() / 1000.0;
                draws.iter().map(|g| (g[j] - m).powi(2)).sum::<f64>() / 999.0
            })
            .sum::<f64>()
    };
    let plain = trace_var(&mut |rng| grad_minibatch(&model, &theta, 10, rng).unwrap().value);
    let cv = trace_var(&mut |rng| grad_cv(&model, &theta, &map, 10, rng).unwrap().value);
    ensure(cv < plain, format!("exact at MAP; variance near MAP: CV {cv:.3e} < plain {plain:.3e}"))
}

fn sgld_bias_ordering() -> Outcome {
    let model = build_gaussian_conjugate_model(100, 2, 1.0, 10.0, 10).unwrap();
    let var = model.posterior_variance();
    let mean = model.posterior_mean();
    let iters = 50_000u64;
    let error_at = |h: f64| -> f64 {
        (0..10u64)
            .map(|seed| {
                let cfg = SamplerConfig::sgld(h, 0.1).with_seed(derive_seed(100, seed));
                let chain = run_chain(&model, &cfg, &mean, Budget::Iterations(iters), 1, None).unwrap();
                let kept = &chain.samples[chain.len() / 10..];
                (0..2)
                    .map(|j| {
                        let m = kept.iter().map(|s| s.theta[j]).sum::<f64>() / kept.len() as f64;
                        let v = kept.iter().map(|s| (s.theta[j] - m).powi(2)).sum::<f64>() / (kept.len() - 1) as f64;
                        (v - var).abs() / var
                    })
                    .sum::<f64>()
                    / 2.0
            })
            .sum::<f64>()
            / 10.0
    };
    let h = 0.2 * var;
    let (full, half) = (error_at(h), error_at(h / 2.0));
    ensure(half < full, format!("relative variance error {half:.4} at h/2 vs {full:.4} at h"))
}

fn sgnht_thermostat() -> Outcome {
    let model = build_gaussian_conjugate_model(100, 2, 1.0, 10.0, 11).unwrap();
    let h = 0.05 * model.posterior_variance();
    let cfg = SamplerConfig::new(SamplerKind::Sgnht, h, 0.1).with_seed(11);
    let mut runner = ChainRunner::new(&model, cfg, &model.posterior_mean(), None).unwrap();
    let steps = 50_000;
    let mut acc = 0.0;
    for it in 0..steps {
        if !runner.step() {
            return Err(format!("diverged at step {it}"));
        }
        if it >= steps / 2 {
            let v = &runner.state().momentum;
            acc += v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        }
    }
    let avg = acc / (steps - steps / 2) as f64;
    let rel = (avg - h).abs() / h;
    ensure(rel <= 0.25, format!("mean v'v/D = {avg:.4e}, h = {h:.4e}, rel dev {rel:.4}"))
}

fn end_to_end_tuning() -> Outcome {
    let (model, _) = LogisticRegression::<f64>::synthetic(10_000, 5, 10.0, 12).unwrap();
    let map = find_map(&model, &[0.0; 5], AdamConfig::default(), DEFAULT_MAP_MAX_ITERS, DEFAULT_MAP_TOL).unwrap();
    let log10s = vec![-2.0, -3.0, -4.0, -5.0, -6.0, -7.0];
    let taus = vec![1.0, 0.1, 0.01];
    let total = 3600u64;
    // IMQ scale matched to the posterior spread, as with `imq_c_laplace`.
    let c = laplace_scale(&model, &map.theta_map).map_err(|e| e.to_string())?;
    let settings = SteinSettings { kernel: KernelSpec::Imq { c, beta: -0.5 }, ..SteinSettings::default() };
    let template = SamplerConfig::sgld(1.0, 1.0);
    let mut passes = 0;
    let mut details = Vec::new();
    for rep in 0..10u64 {
        let setup = MambaSetup {
            seed: derive_seed(1200, rep),
            settings,
            ..MambaSetup::new(log10s.clone(), taus.clone(), Budget::Iterations(total))
        };
        let selection = tune_mamba(&model, &template, &setup, &map.theta_map, None).map_err(|e| e.to_string())?;
        // Oracle: every arm, same seed, full budget from the same start.
        let oracle: Vec<f64> = arm_grid(&template, &log10s, &taus, &setup.leapfrogs, setup.seed)
            .iter()
            .map(|cfg| {
                run_chain(&model, cfg, &map.theta_map, Budget::Iterations(total), 1, None)
                    .and_then(|c| ksd_reward(&c, &model, &settings))
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        let best = oracle.iter().copied().fold(f64::INFINITY, f64::min);
        let chosen = oracle[selection.outcome.best];
        let ok = chosen <= 1.5 * best;
        passes += ok as usize;
        details.push(format!("{:.3}", chosen / best));
    }
    ensure(passes >= 8, format!("c = {c:.3e}; {passes}/10 within 1.5x of oracle; ratios [{}]", details.join(", ")))
}

fn heuristic_exactness() -> Outcome {
    let c = heuristic_tune(1_000_000).map_err(|e| e.to_string())?;
    ensure(c.step_size == 1e-6 && c.batch_fraction == 0.1, format!("h = {:e}, tau = {}", c.step_size, c.batch_fraction))
}

fn determinism_and_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = r#"
model = "gaussian"
num_data = 200
dim = 2
method = "mamba"
log10_step_sizes = [-2.0, -3.0, -4.0]
batch_fractions = [1.0, 0.1, 0.01]
budget = 1800
"#;
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = RunConfig::from_toml_str(text, dir.path()).map_err(|e| e.to_string())?;
        cfg.output_dir = dir.path().join(run);
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| e.to_string())?;
        cmd_tune(&cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(cfg.output_dir.join("rounds.csv")).map_err(|e| e.to_string())?);
    }
    let identical = bytes[0] == bytes[1];

    let model = build_gaussian_conjugate_model(200, 2, 1.0, 10.0, 14).unwrap();
    let cfg = SamplerConfig::sgld(1e-3, 0.1).with_seed(14);
    let chain = run_chain(&model, &cfg, &model.posterior_mean(), Budget::Iterations(2000), 1, None).unwrap();
    let settings = SteinSettings::default();
    let mut buf = Vec::new();
    write_chain(&chain, &mut buf).unwrap();
    let reloaded = read_chain::<f64, _>(buf.as_slice()).unwrap();
    let a = chain_discrepancy(&chain, &model, Metric::Ksd, &settings).unwrap();
    let b = chain_discrepancy(&reloaded, &model, Metric::Ksd, &settings).unwrap();
    ensure(
        identical && a.to_bits() == b.to_bits() && reloaded == chain,
        format!("rounds.csv identical: {identical}; KSD {a:e} vs reloaded {b:e}"),
    )
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("kernel derivatives match finite differences", kernel_derivatives),
        ("Stein identity under exact samples", stein_identity),
        ("single-point KSD equals 1", single_point_ksd),
        ("KSD decreases with exact sample count", ksd_consistency),
        ("KSD separates shifted samples", ksd_discrimination),
        ("FSSD witness closed form", fssd_witness_value),
        ("schedule arithmetic (27, 3, 81)", schedule_arithmetic),
        ("best-arm identification on synthetic rewards", best_arm_identification),
        ("control-variate gradients", control_variates),
        ("SGLD bias shrinks with step size", sgld_bias_ordering),
        ("SGNHT thermostat tracks h", sgnht_thermostat),
        ("end-to-end logistic tuning vs oracle", end_to_end_tuning),
        ("heuristic rule at N = 1e6", heuristic_exactness),
        ("determinism and chain round-trip", determinism_and_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2}. {name}: {detail} [{}]", i + 1, fmt_duration(took));
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}
