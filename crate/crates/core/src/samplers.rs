//! SGLD, SGHMC and SGNHT dynamics plus a resumable, budgeted chain runner.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{EstimatorKind, GradientEstimator, MapResult, TargetModel};
use crate::scalar::{all_finite, norm_sq, Real};
use crate::ChainRng;

/// Chains whose parameter norm exceeds this are declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Sgld,
    Sghmc,
    Sgnht,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Sgld => "SGLD",
            SamplerKind::Sghmc => "SGHMC",
            SamplerKind::Sgnht => "SGNHT",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgld" => Ok(SamplerKind::Sgld),
            "sghmc" => Ok(SamplerKind::Sghmc),
            "sgnht" => Ok(SamplerKind::Sgnht),
            other => Err(invalid(format!("unknown sampler kind '{other}'"))),
        }
    }
}

/// One hyperparameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub step_size: f64,
    pub batch_fraction: f64,
    /// Steps per trajectory; SGHMC only.
    pub leapfrog: usize,
    /// SGHMC friction `α`.
    pub friction: f64,
    /// SGHMC gradient-noise estimate `β̂`.
    pub noise_estimate: f64,
    /// SGNHT diffusion `a`, also the initial thermostat value.
    pub thermostat: f64,
    pub use_cv: bool,
    /// Redraw SGHMC momentum from `Normal(0, h I)` before each trajectory.
    pub resample_momentum: bool,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, step_size: f64, batch_fraction: f64) -> Self {
        Self {
            kind,
            step_size,
            batch_fraction,
            leapfrog: 5,
            friction: 0.01,
            noise_estimate: 0.0,
            thermostat: 0.01,
            use_cv: false,
            resample_momentum: true,
            seed: 0,
        }
    }

    pub fn sgld(step_size: f64, batch_fraction: f64) -> Self {
        Self::new(SamplerKind::Sgld, step_size, batch_fraction)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cv(mut self, use_cv: bool) -> Self {
        self.use_cv = use_cv;
        self
    }

    pub fn with_leapfrog(mut self, leapfrog: usize) -> Self {
        self.leapfrog = leapfrog;
        self
    }

    pub fn log10_step_size(&self) -> f64 {
        self.step_size.log10()
    }

    /// `max(1, ⌊τ N⌋)`, capped at `N`.
    pub fn batch_size(&self, num_data: usize) -> usize {
        let n = (self.batch_fraction * num_data as f64 + 1e-9).floor() as usize;
        n.clamp(1, num_data.max(1))
    }

    /// Display label, e.g. `SGLD-CV`.
    pub fn label(&self) -> String {
        if self.use_cv {
            format!("{}-CV", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(invalid(format!("batch fraction must lie in (0, 1], got {}", self.batch_fraction)));
        }
        match self.kind {
            SamplerKind::Sgld => {}
            SamplerKind::Sghmc => {
                if self.leapfrog == 0 {
                    return Err(invalid("SGHMC needs at least one leapfrog step"));
                }
                if !(self.noise_estimate >= 0.0) || !(self.friction > self.noise_estimate) {
                    return Err(invalid(format!(
                        "SGHMC requires friction > noise estimate >= 0, got {} and {}",
                        self.friction, self.noise_estimate
                    )));
                }
            }
            SamplerKind::Sgnht => {
                if !(self.thermostat > 0.0) {
                    return Err(invalid("SGNHT thermostat diffusion a must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Live state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<F> {
    pub theta: Vec<F>,
    pub momentum: Vec<F>,
    pub thermostat: F,
    pub iteration: u64,
    pub diverged: bool,
}

impl<F: Real> ChainState<F> {
    pub fn new(theta: Vec<F>) -> Self {
        let d = theta.len();
        Self { theta, momentum: vec![F::zero(); d], thermostat: F::zero(), iteration: 0, diverged: false }
    }

    fn check(&mut self) -> bool {
        let ok = all_finite(&self.theta)
            && all_finite(&self.momentum)
            && self.thermostat.is_finite()
            && norm_sq(&self.theta).sqrt() <= F::lit(DIVERGENCE_NORM);
        if !ok {
            self.diverged = true;
        }
        ok
    }
}

/// Source of standard normal draws for the injected noise terms.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
}

impl NoiseSource for ChainRng {
    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

/// Replays a fixed list of draws, then zeros.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNoise {
    values: Vec<f64>,
    pos: usize,
}

impl ScriptedNoise {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }

    pub fn zeros() -> Self {
        Self::default()
    }
}

impl NoiseSource for ScriptedNoise {
    fn standard_normal(&mut self) -> f64 {
        let v = self.values.get(self.pos).copied().unwrap_or(0.0);
        self.pos += 1;
        v
    }
}

/// `θ ← θ − (h/2) ∇Ũ(θ) + √h ξ`. Returns `false` and flags the state if it
/// left the finite region.
pub fn sgld_step<F: Real, N: NoiseSource + ?Sized>(
    state: &mut ChainState<F>,
    grad: &[F],
    step_size: F,
    noise: &mut N,
) -> bool {
    let half = step_size / F::lit(2.0);
    let sd = step_size.sqrt();
    for (t, &g) in state.theta.iter_mut().zip(grad) {
        *t = *t - half * g + sd * F::lit(noise.standard_normal());
    }
    state.iteration += 1;
    state.check()
}

/// Parameters of one SGHMC trajectory.
#[derive(Debug, Clone, Copy)]
pub struct SghmcParams<F> {
    pub step_size: F,
    pub leapfrog: usize,
    pub friction: F,
    pub noise_estimate: F,
    pub resample_momentum: bool,
}

/// One SGHMC trajectory of `L` steps of
/// `θ ← θ + v; v ← v − h ∇Ũ(θ) − α v + Normal(0, 2(α − β̂) h)`.
///
/// `grad_fn(θ, out)` writes the gradient estimate. On return `last_grad`
/// holds the estimate at the final position.
pub fn sghmc_trajectory<F, G, N>(
    state: &mut ChainState<F>,
    grad_fn: &mut G,
    params: SghmcParams<F>,
    noise: &mut N,
    last_grad: &mut [F],
) -> bool
where
    F: Real,
    G: FnMut(&[F], &mut [F]),
    N: NoiseSource + ?Sized,
{
    let h = params.step_size;
    if params.resample_momentum {
        let sd = h.sqrt();
        for v in state.momentum.iter_mut() {
            *v = sd * F::lit(noise.standard_normal());
        }
    }
    let noise_var = F::lit(2.0) * (params.friction - params.noise_estimate) * h;
    let noise_sd = noise_var.max(F::zero()).sqrt();
    for _ in 0..params.leapfrog {
        for (t, &v) in state.theta.iter_mut().zip(&state.momentum) {
            *t += v;
        }
        grad_fn(&state.theta, last_grad);
        for (v, &g) in state.momentum.iter_mut().zip(last_grad.iter()) {
            let xi = noise.standard_normal();
            let injected = if noise_sd > F::zero() { noise_sd * F::lit(xi) } else { F::zero() };
            *v = *v - h * g - params.friction * *v + injected;
        }
        if !state.check() {
            state.iteration += 1;
            return false;
        }
    }
    state.iteration += 1;
    state.check()
}

/// One SGNHT step:
/// `v' = v − h ∇Ũ(θ) − α v + √(2ah) ξ`, `θ' = θ + v'`, `α' = α + v'ᵀv'/D − h`.
pub fn sgnht_step<F: Real, N: NoiseSource + ?Sized>(
    state: &mut ChainState<F>,
    grad: &[F],
    step_size: F,
    diffusion: F,
    noise: &mut N,
) -> bool {
    let h = step_size;
    let sd = (F::lit(2.0) * diffusion * h).sqrt();
    let alpha = state.thermostat;
    for ((v, t), &g) in state.momentum.iter_mut().zip(state.theta.iter_mut()).zip(grad) {
        *v = *v - h * g - alpha * *v + sd * F::lit(noise.standard_normal());
        *t += *v;
    }
    let dim = F::from_usize_lossy(state.theta.len());
    state.thermostat = alpha + norm_sq(&state.momentum) / dim - h;
    state.iteration += 1;
    state.check()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "amount")]
pub enum Budget {
    /// Trajectories for SGHMC, single updates otherwise.
    Iterations(u64),
    Seconds(f64),
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Budget::Iterations(0) => Err(invalid("iteration budget must be positive")),
            Budget::Seconds(s) if !(s > 0.0) => Err(invalid("time budget must be positive")),
            _ => Ok(()),
        }
    }
}

/// Unit in which budgets and checkpoints are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    Iterations,
    Seconds,
}

impl BudgetMode {
    /// Iteration amounts are rounded to the nearest whole step.
    pub fn budget(self, amount: f64) -> Budget {
        match self {
            BudgetMode::Iterations => Budget::Iterations(amount.round().max(0.0) as u64),
            BudgetMode::Seconds => Budget::Seconds(amount),
        }
    }
}

impl std::str::FromStr for BudgetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iterations" => Ok(BudgetMode::Iterations),
            "seconds" => Ok(BudgetMode::Seconds),
            other => Err(invalid(format!("unknown budget mode '{other}' (expected iterations or seconds)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSample<F> {
    pub iteration: u64,
    pub wall_time_sec: f64,
    pub theta: Vec<F>,
    /// The sampler's stochastic estimate of `∇U` at `theta`.
    pub grad: Vec<F>,
}

/// Recorded output of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain<F> {
    pub dim: usize,
    pub samples: Vec<ChainSample<F>>,
    pub diverged: bool,
    pub total_iterations: u64,
}

impl<F: Real> Chain<F> {
    pub fn new(dim: usize) -> Self {
        Self { dim, samples: Vec::new(), diverged: false, total_iterations: 0 }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn thetas(&self) -> Vec<Vec<F>> {
        self.samples.iter().map(|s| s.theta.clone()).collect()
    }
}

/// Drops the first `⌊burn_in_fraction · len⌋` samples, then keeps every
/// `thin`-th of the rest. The final sample is always kept.
pub fn thin_chain<F: Real>(chain: &Chain<F>, thin: usize, burn_in_fraction: f64) -> Result<Chain<F>> {
    if chain.is_empty() {
        return Err(invalid("cannot thin an empty chain"));
    }
    if thin == 0 {
        return Err(invalid("thinning stride must be positive"));
    }
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(invalid(format!("burn-in fraction must lie in [0, 1), got {burn_in_fraction}")));
    }
    let len = chain.len();
    let start = (burn_in_fraction * len as f64).floor() as usize;
    let rest = &chain.samples[start..];
    let mut samples: Vec<_> = rest.iter().step_by(thin).cloned().collect();
    if !(rest.len() - 1).is_multiple_of(thin) {
        samples.push(rest[rest.len() - 1].clone());
    }
    Ok(Chain { dim: chain.dim, samples, diverged: chain.diverged, total_iterations: chain.total_iterations })
}

/// Resumable chain: owns the dynamics state, both random streams and the
/// cached gradient at the current position.
#[derive(Debug, Clone)]
pub struct ChainRunner<'m, F, M: ?Sized> {
    model: &'m M,
    config: SamplerConfig,
    state: ChainState<F>,
    estimator: GradientEstimator<F>,
    batch_rng: ChainRng,
    noise_rng: ChainRng,
    grad: Vec<F>,
    grad_valid: bool,
    elapsed: f64,
}

impl<'m, F: Real, M: TargetModel<F> + ?Sized> ChainRunner<'m, F, M> {
    /// `map` is required when `config.use_cv` is set.
    pub fn new(model: &'m M, config: SamplerConfig, init: &[F], map: Option<&MapResult<F>>) -> Result<Self> {
        config.validate()?;
        if init.len() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: init.len() });
        }
        if !all_finite(init) {
            return Err(invalid("initial state must be finite"));
        }
        let kind = match (config.use_cv, map) {
            (false, _) => EstimatorKind::Minibatch,
            (true, Some(m)) => EstimatorKind::ControlVariate(m.clone()),
            (true, None) => return Err(invalid("control-variate sampler needs a MAP anchor")),
        };
        let estimator = GradientEstimator::new(model, kind, config.batch_size(model.num_data()))?;
        let mut batch_rng = ChainRng::seed_from_u64(config.seed);
        batch_rng.set_stream(0);
        let mut noise_rng = ChainRng::seed_from_u64(config.seed);
        noise_rng.set_stream(1);
        let mut state = ChainState::new(init.to_vec());
        if config.kind == SamplerKind::Sgnht {
            state.thermostat = F::lit(config.thermostat);
            let sd = F::lit(config.step_size).sqrt();
            for v in state.momentum.iter_mut() {
                *v = sd * F::lit(noise_rng.standard_normal());
            }
        }
        Ok(Self {
            model,
            config,
            state,
            estimator,
            batch_rng,
            noise_rng,
            grad: vec![F::zero(); model.dim()],
            grad_valid: false,
            elapsed: 0.0,
        })
    }

    pub fn state(&self) -> &ChainState<F> {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn model(&self) -> &'m M {
        self.model
    }

    fn refresh_grad(&mut self) {
        self.estimator.estimate_into(self.model, &self.state.theta, &mut self.batch_rng, &mut self.grad);
        self.grad_valid = true;
    }

    /// Advances one iteration (one trajectory for SGHMC).
    pub fn step(&mut self) -> bool {
        if self.state.diverged {
            return false;
        }
        let h = F::lit(self.config.step_size);
        match self.config.kind {
            SamplerKind::Sgld | SamplerKind::Sgnht => {
                if !self.grad_valid {
                    self.refresh_grad();
                }
                let ok = if self.config.kind == SamplerKind::Sgld {
                    sgld_step(&mut self.state, &self.grad, h, &mut self.noise_rng)
                } else {
                    let a = F::lit(self.config.thermostat);
                    sgnht_step(&mut self.state, &self.grad, h, a, &mut self.noise_rng)
                };
                if ok {
                    self.refresh_grad();
                    if !all_finite(&self.grad) {
                        self.state.diverged = true;
                        return false;
                    }
                }
                ok
            }
            SamplerKind::Sghmc => {
                let params = SghmcParams {
                    step_size: h,
                    leapfrog: self.config.leapfrog,
                    friction: F::lit(self.config.friction),
                    noise_estimate: F::lit(self.config.noise_estimate),
                    resample_momentum: self.config.resample_momentum,
                };
                let model = self.model;
                let estimator = &mut self.estimator;
                let batch_rng = &mut self.batch_rng;
                let mut grad_fn = |theta: &[F], out: &mut [F]| estimator.estimate_into(model, theta, batch_rng, out);
                let ok = sghmc_trajectory(&mut self.state, &mut grad_fn, params, &mut self.noise_rng, &mut self.grad);
                self.grad_valid = ok;
                ok
            }
        }
    }

    /// Continues the chain for `budget`, appending every `record_every`-th
    /// state (by global iteration count) to `chain`.
    pub fn run(&mut self, budget: Budget, record_every: usize, chain: &mut Chain<F>) -> Result<()> {
        budget.validate()?;
        if record_every == 0 {
            return Err(invalid("record_every must be positive"));
        }
        if chain.dim != self.model.dim() {
            return Err(Error::DimensionMismatch { expected: self.model.dim(), found: chain.dim });
        }
        let start = Instant::now();
        let base = self.elapsed;
        let mut done: u64 = 0;
        loop {
            match budget {
                Budget::Iterations(n) if done >= n => break,
                Budget::Seconds(s) if done > 0 && start.elapsed().as_secs_f64() >= s => break,
                _ => {}
            }
            if self.state.diverged {
                break;
            }
            let ok = self.step();
            done += 1;
            let now = base + start.elapsed().as_secs_f64();
            if !ok {
                break;
            }
            if self.state.iteration.is_multiple_of(record_every as u64) {
                chain.samples.push(ChainSample {
                    iteration: self.state.iteration,
                    wall_time_sec: now,
                    theta: self.state.theta.clone(),
                    grad: self.grad.clone(),
                });
            }
        }
        self.elapsed = base + start.elapsed().as_secs_f64();
        chain.total_iterations = self.state.iteration;
        chain.diverged = self.state.diverged;
        if chain.diverged {
            log::debug!("{} chain diverged at iteration {}", self.config.label(), self.state.iteration);
        }
        Ok(())
    }
}

/// Runs a fresh chain from `init` for `budget`.
pub fn run_chain<F, M>(
    model: &M,
    config: &SamplerConfig,
    init: &[F],
    budget: Budget,
    record_every: usize,
    map: Option<&MapResult<F>>,
) -> Result<Chain<F>>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let mut runner = ChainRunner::new(model, config.clone(), init, map)?;
    let mut chain = Chain::new(model.dim());
    runner.run(budget, record_every, &mut chain)?;
    Ok(chain)
}
