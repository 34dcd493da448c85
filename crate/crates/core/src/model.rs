//! Target posteriors with per-datum potential decomposition, minibatch and
//! control-variate gradient estimators, and the full-batch Adam MAP search.
//!
//! A potential is written `U(θ) = Σ_i U_i(θ)` with
//! `U_i(θ) = −log f(y_i | θ) − (1/N) log p(θ)`, so the prior is spread evenly
//! over the data terms and every estimator sums the same per-datum pieces.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::scalar::{all_finite, norm_sq, Real};
use crate::ChainRng;

/// Analytic posterior mean and marginal standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments<F> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

/// A differentiable unnormalized log-posterior `π(θ) ∝ exp(−U(θ))`.
///
/// Implementations are immutable after construction and shared freely
/// between chains.
pub trait TargetModel<F: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn num_data(&self) -> usize;

    /// `U_i(θ)`.
    fn potential_datum(&self, theta: &[F], i: usize) -> F;

    /// `acc += scale · ∇U_i(θ)`.
    fn add_grad_datum(&self, theta: &[F], i: usize, scale: F, acc: &mut [F]);

    fn exact_posterior_moments(&self) -> Option<PosteriorMoments<F>> {
        None
    }

    fn grad_datum(&self, theta: &[F], i: usize) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim()];
        self.add_grad_datum(theta, i, F::one(), &mut out);
        out
    }

    fn potential(&self, theta: &[F]) -> F {
        (0..self.num_data()).map(|i| self.potential_datum(theta, i)).sum()
    }

    fn full_grad_into(&self, theta: &[F], out: &mut [F]) {
        out.iter_mut().for_each(|x| *x = F::zero());
        for i in 0..self.num_data() {
            self.add_grad_datum(theta, i, F::one(), out);
        }
    }

    fn full_grad(&self, theta: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim()];
        self.full_grad_into(theta, &mut out);
        out
    }
}

impl<F: Real, M: TargetModel<F> + ?Sized> TargetModel<F> for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_data(&self) -> usize {
        (**self).num_data()
    }
    fn potential_datum(&self, theta: &[F], i: usize) -> F {
        (**self).potential_datum(theta, i)
    }
    fn add_grad_datum(&self, theta: &[F], i: usize, scale: F, acc: &mut [F]) {
        (**self).add_grad_datum(theta, i, scale, acc)
    }
    fn exact_posterior_moments(&self) -> Option<PosteriorMoments<F>> {
        (**self).exact_posterior_moments()
    }
    fn full_grad_into(&self, theta: &[F], out: &mut [F]) {
        (**self).full_grad_into(theta, out)
    }
}

/// Isotropic Gaussian likelihood with a conjugate isotropic Gaussian prior.
///
/// `y_i ~ Normal(θ, obs_noise² I)`, `θ ~ Normal(0, prior_var I)`.
#[derive(Debug, Clone)]
pub struct GaussianConjugate<F> {
    dim: usize,
    /// Row-major `N × d`.
    y: Vec<F>,
    obs_noise: F,
    prior_var: F,
    theta_true: Vec<F>,
}

impl<F: Real> GaussianConjugate<F> {
    /// Builds the model from explicit observations (row-major `N × d`).
    pub fn from_observations(dim: usize, y: Vec<F>, obs_noise: F, prior_var: F) -> Result<Self> {
        if dim == 0 || y.is_empty() || !y.len().is_multiple_of(dim) {
            return Err(invalid("observations must form a non-empty N x d matrix"));
        }
        if !(obs_noise > F::zero()) || !(prior_var > F::zero()) {
            return Err(invalid("obs_noise and prior_var must be positive"));
        }
        if !all_finite(&y) {
            return Err(invalid("observations must be finite"));
        }
        Ok(Self { dim, y, obs_noise, prior_var, theta_true: vec![F::zero(); dim] })
    }

    pub fn theta_true(&self) -> &[F] {
        &self.theta_true
    }

    pub fn observation(&self, i: usize) -> &[F] {
        &self.y[i * self.dim..(i + 1) * self.dim]
    }

    /// Posterior precision per coordinate: `N/obs_noise² + 1/prior_var`.
    pub fn posterior_precision(&self) -> F {
        let n = F::from_usize_lossy(self.num_data());
        n / (self.obs_noise * self.obs_noise) + F::one() / self.prior_var
    }

    pub fn posterior_variance(&self) -> F {
        F::one() / self.posterior_precision()
    }

    pub fn posterior_mean(&self) -> Vec<F> {
        let s2 = self.obs_noise * self.obs_noise;
        let var = self.posterior_variance();
        let mut sum = vec![F::zero(); self.dim];
        for i in 0..self.num_data() {
            for (acc, &yi) in sum.iter_mut().zip(self.observation(i)) {
                *acc += yi;
            }
        }
        sum.into_iter().map(|s| var * s / s2).collect()
    }

    /// Draws `count` exact posterior samples, row-major `count × d`.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<F> {
        let mean = self.posterior_mean();
        let sd = self.posterior_variance().sqrt();
        let mut out = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            for &m in &mean {
                let z: f64 = StandardNormal.sample(rng);
                out.push(m + sd * F::lit(z));
            }
        }
        out
    }
}

/// Synthetic conjugate Gaussian model: draws `θ_true ~ Normal(0, I)` and then
/// `N` observations around it, all from `data_seed`.
pub fn build_gaussian_conjugate_model<F: Real>(
    num_data: usize,
    dim: usize,
    obs_noise: F,
    prior_var: F,
    data_seed: u64,
) -> Result<GaussianConjugate<F>> {
    if num_data == 0 || dim == 0 {
        return Err(invalid("N and d must be at least 1"));
    }
    if !(obs_noise > F::zero()) || !(prior_var > F::zero()) {
        return Err(invalid("obs_noise and prior_var must be positive"));
    }
    let mut rng = ChainRng::seed_from_u64(data_seed);
    let theta_true: Vec<F> = (0..dim).map(|_| F::lit(StandardNormal.sample(&mut rng))).collect();
    let mut y = Vec::with_capacity(num_data * dim);
    for _ in 0..num_data {
        for &t in &theta_true {
            let z: f64 = StandardNormal.sample(&mut rng);
            y.push(t + obs_noise * F::lit(z));
        }
    }
    let mut model = GaussianConjugate::from_observations(dim, y, obs_noise, prior_var)?;
    model.theta_true = theta_true;
    Ok(model)
}

impl<F: Real> TargetModel<F> for GaussianConjugate<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_data(&self) -> usize {
        self.y.len() / self.dim
    }

    fn potential_datum(&self, theta: &[F], i: usize) -> F {
        let two = F::lit(2.0);
        let n = F::from_usize_lossy(self.num_data());
        let s2 = self.obs_noise * self.obs_noise;
        let lik: F = theta.iter().zip(self.observation(i)).map(|(&t, &y)| (t - y) * (t - y)).sum::<F>() / (two * s2);
        lik + norm_sq(theta) / (two * self.prior_var * n)
    }

    fn add_grad_datum(&self, theta: &[F], i: usize, scale: F, acc: &mut [F]) {
        let n = F::from_usize_lossy(self.num_data());
        let inv_s2 = F::one() / (self.obs_noise * self.obs_noise);
        let prior_w = F::one() / (self.prior_var * n);
        for ((a, &t), &y) in acc.iter_mut().zip(theta).zip(self.observation(i)) {
            *a += scale * ((t - y) * inv_s2 + t * prior_w);
        }
    }

    fn exact_posterior_moments(&self) -> Option<PosteriorMoments<F>> {
        let sd = self.posterior_variance().sqrt();
        Some(PosteriorMoments { mean: self.posterior_mean(), std: vec![sd; self.dim] })
    }
}

#[inline]
pub(crate) fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus<F: Real>(z: F) -> F {
    if z > F::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Bayesian logistic regression with a `Normal(0, prior_var I)` prior.
#[derive(Debug, Clone)]
pub struct LogisticRegression<F> {
    dim: usize,
    /// Row-major `N × d` covariates.
    x: Vec<F>,
    y: Vec<F>,
    prior_var: F,
}

pub const DEFAULT_LOGISTIC_PRIOR_VAR: f64 = 10.0;

/// Builds a logistic regression target from covariates (row-major `N × d`)
/// and binary labels.
pub fn build_logistic_model<F: Real>(dim: usize, x: Vec<F>, y: &[F], prior_var: F) -> Result<LogisticRegression<F>> {
    if dim == 0 || y.is_empty() {
        return Err(invalid("logistic model needs d >= 1 and N >= 1"));
    }
    if x.len() != y.len() * dim {
        return Err(Error::DimensionMismatch { expected: y.len() * dim, found: x.len() });
    }
    if !(prior_var > F::zero()) {
        return Err(invalid("prior_var must be positive"));
    }
    if let Some(pos) = y.iter().position(|&v| v != F::zero() && v != F::one()) {
        return Err(invalid(format!("label {} at row {pos} is not in {{0, 1}}", y[pos])));
    }
    if !all_finite(&x) {
        return Err(invalid("covariates must be finite"));
    }
    Ok(LogisticRegression { dim, x, y: y.to_vec(), prior_var })
}

impl<F: Real> LogisticRegression<F> {
    /// Simulated dataset: `x_ij ~ Normal(0, 1)`, `θ_true ~ Normal(0, I)`,
    /// `y_i ~ Bernoulli(sigmoid(θ_trueᵀ x_i))`. Returns the model and `θ_true`.
    pub fn synthetic(num_data: usize, dim: usize, prior_var: F, seed: u64) -> Result<(Self, Vec<F>)> {
        if num_data == 0 || dim == 0 {
            return Err(invalid("N and d must be at least 1"));
        }
        let mut rng = ChainRng::seed_from_u64(seed);
        let theta: Vec<F> = (0..dim).map(|_| F::lit(StandardNormal.sample(&mut rng))).collect();
        let mut x = Vec::with_capacity(num_data * dim);
        let mut y = Vec::with_capacity(num_data);
        for _ in 0..num_data {
            let row: Vec<F> = (0..dim).map(|_| F::lit(StandardNormal.sample(&mut rng))).collect();
            let p = sigmoid(row.iter().zip(&theta).map(|(&a, &b)| a * b).sum::<F>());
            let u: f64 = rng.random();
            y.push(if F::lit(u) < p { F::one() } else { F::zero() });
            x.extend(row);
        }
        Ok((build_logistic_model(dim, x, &y, prior_var)?, theta))
    }

    pub fn covariates(&self, i: usize) -> &[F] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> F {
        self.y[i]
    }

    fn logit(&self, theta: &[F], i: usize) -> F {
        self.covariates(i).iter().zip(theta).map(|(&a, &b)| a * b).sum()
    }

    /// Mean predictive log-loss of a sample-averaged predictor on `(x, y)`.
    pub fn log_loss(samples: &[Vec<F>], x: &[F], y: &[F], dim: usize) -> F {
        let eps = F::lit(1e-12);
        let count = F::from_usize_lossy(samples.len().max(1));
        let mut total = F::zero();
        for (i, &label) in y.iter().enumerate() {
            let row = &x[i * dim..(i + 1) * dim];
            let p =
                samples.iter().map(|s| sigmoid(row.iter().zip(s).map(|(&a, &b)| a * b).sum::<F>())).sum::<F>() / count;
            let p = p.max(eps).min(F::one() - eps);
            total -= label * p.ln() + (F::one() - label) * (F::one() - p).ln();
        }
        total / F::from_usize_lossy(y.len().max(1))
    }
}

impl<F: Real> TargetModel<F> for LogisticRegression<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_data(&self) -> usize {
        self.y.len()
    }

    fn potential_datum(&self, theta: &[F], i: usize) -> F {
        let z = self.logit(theta, i);
        let n = F::from_usize_lossy(self.num_data());
        softplus(z) - self.y[i] * z + norm_sq(theta) / (F::lit(2.0) * self.prior_var * n)
    }

    fn add_grad_datum(&self, theta: &[F], i: usize, scale: F, acc: &mut [F]) {
        let resid = sigmoid(self.logit(theta, i)) - self.y[i];
        let prior_w = F::one() / (self.prior_var * F::from_usize_lossy(self.num_data()));
        for ((a, &xi), &t) in acc.iter_mut().zip(self.covariates(i)).zip(theta) {
            *a += scale * (resid * xi + t * prior_w);
        }
    }
}

/// A gradient estimate together with the data indices it used.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<F> {
    pub value: Vec<F>,
    pub indices: Vec<usize>,
    pub is_full: bool,
}

/// Without-replacement index draws via a partial Fisher–Yates shuffle over a
/// persistent permutation. Any starting permutation gives a uniform subset.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    perm: Vec<usize>,
}

impl IndexSampler {
    pub fn new(num_data: usize) -> Self {
        Self { perm: (0..num_data).collect() }
    }

    /// Returns `n` distinct indices drawn uniformly from `0..N`.
    pub fn draw<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> &[usize] {
        let len = self.perm.len();
        for j in 0..n {
            let k = rng.random_range(j..len);
            self.perm.swap(j, k);
        }
        &self.perm[..n]
    }
}

/// Result of a MAP search.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult<F> {
    pub theta_map: Vec<F>,
    pub full_grad_at_map: Vec<F>,
    pub grad_norm: F,
    pub iterations: usize,
    pub converged: bool,
}

impl<F: Real> MapResult<F> {
    /// Wraps an externally supplied anchor point.
    pub fn at<M: TargetModel<F> + ?Sized>(model: &M, theta: Vec<F>, tol: F) -> Self {
        let g = model.full_grad(&theta);
        let grad_norm = norm_sq(&g).sqrt();
        Self { theta_map: theta, full_grad_at_map: g, grad_norm, iterations: 0, converged: grad_norm <= tol }
    }
}

/// How the sampler estimates `∇U`.
#[derive(Debug, Clone)]
pub enum EstimatorKind<F> {
    Minibatch,
    ControlVariate(MapResult<F>),
}

/// Reusable minibatch / control-variate gradient estimator. Holds its index
/// permutation so repeated draws cost `O(n)` rather than `O(N)`.
#[derive(Debug, Clone)]
pub struct GradientEstimator<F> {
    kind: EstimatorKind<F>,
    batch_size: usize,
    indices: IndexSampler,
}

impl<F: Real> GradientEstimator<F> {
    pub fn new<M: TargetModel<F> + ?Sized>(model: &M, kind: EstimatorKind<F>, batch_size: usize) -> Result<Self> {
        let n_data = model.num_data();
        if batch_size == 0 || batch_size > n_data {
            return Err(invalid(format!("batch size {batch_size} outside [1, {n_data}]")));
        }
        if let EstimatorKind::ControlVariate(map) = &kind {
            if map.theta_map.len() != model.dim() || map.full_grad_at_map.len() != model.dim() {
                return Err(Error::DimensionMismatch { expected: model.dim(), found: map.theta_map.len() });
            }
        }
        Ok(Self { kind, batch_size, indices: IndexSampler::new(n_data) })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn is_full(&self) -> bool {
        self.batch_size == self.indices.perm.len()
    }

    /// Writes the estimate at `theta` into `out`. Consumes no randomness at
    /// full batch, where both estimators reduce to the exact gradient.
    pub fn estimate_into<M, R>(&mut self, model: &M, theta: &[F], rng: &mut R, out: &mut [F])
    where
        M: TargetModel<F> + ?Sized,
        R: Rng + ?Sized,
    {
        if self.is_full() {
            model.full_grad_into(theta, out);
            return;
        }
        let n_data = F::from_usize_lossy(model.num_data());
        let scale = n_data / F::from_usize_lossy(self.batch_size);
        let batch = self.indices.draw(self.batch_size, rng);
        match &self.kind {
            EstimatorKind::Minibatch => {
                out.iter_mut().for_each(|x| *x = F::zero());
                for &i in batch {
                    model.add_grad_datum(theta, i, scale, out);
                }
            }
            EstimatorKind::ControlVariate(map) => {
                out.iter_mut().for_each(|x| *x = F::zero());
                for &i in batch {
                    model.add_grad_datum(theta, i, scale, out);
                    model.add_grad_datum(&map.theta_map, i, -scale, out);
                }
                for (o, &g) in out.iter_mut().zip(&map.full_grad_at_map) {
                    *o += g;
                }
            }
        }
    }

    pub fn estimate<M, R>(&mut self, model: &M, theta: &[F], rng: &mut R) -> GradientEstimate<F>
    where
        M: TargetModel<F> + ?Sized,
        R: Rng + ?Sized,
    {
        let mut value = vec![F::zero(); model.dim()];
        self.estimate_into(model, theta, rng, &mut value);
        let is_full = self.is_full();
        let indices =
            if is_full { (0..model.num_data()).collect() } else { self.indices.perm[..self.batch_size].to_vec() };
        GradientEstimate { value, indices, is_full }
    }
}

/// `(N/n) Σ_{i∈S} ∇U_i(θ)` with `S` drawn uniformly without replacement.
pub fn grad_minibatch<F, M, R>(model: &M, theta: &[F], n: usize, rng: &mut R) -> Result<GradientEstimate<F>>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
    R: Rng + ?Sized,
{
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: theta.len() });
    }
    let mut est = GradientEstimator::new(model, EstimatorKind::Minibatch, n)?;
    Ok(est.estimate(model, theta, rng))
}

/// Control-variate estimate anchored at the MAP point:
/// `∇U(θ_MAP) + (N/n) Σ_{i∈S} [∇U_i(θ) − ∇U_i(θ_MAP)]`, one index set for both terms.
pub fn grad_cv<F, M, R>(
    model: &M,
    theta: &[F],
    map: &MapResult<F>,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate<F>>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
    R: Rng + ?Sized,
{
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: theta.len() });
    }
    let mut est = GradientEstimator::new(model, EstimatorKind::ControlVariate(map.clone()), n)?;
    Ok(est.estimate(model, theta, rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-2, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step_count: u64,
    pub first_moment: Vec<F>,
    pub second_moment: Vec<F>,
    pub config: AdamConfig,
}

impl<F: Real> AdamState<F> {
    pub fn new(dim: usize, config: AdamConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(config.learning_rate > 0.0) || !(config.epsilon > 0.0) {
            return Err(invalid("Adam learning rate and epsilon must be positive"));
        }
        Ok(Self { step_count: 0, first_moment: vec![F::zero(); dim], second_moment: vec![F::zero(); dim], config })
    }
}

/// One bias-corrected Adam step for minimizing along `grad`. Returns the
/// displacement to add to the parameters.
pub fn adam_update<F: Real>(state: &mut AdamState<F>, grad: &[F]) -> Result<Vec<F>> {
    if grad.len() != state.first_moment.len() {
        return Err(Error::DimensionMismatch { expected: state.first_moment.len(), found: grad.len() });
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (F::lit(beta1), F::lit(beta2));
    let c1 = F::one() - F::lit(beta1.powi(t));
    let c2 = F::one() - F::lit(beta2.powi(t));
    let (lr, eps) = (F::lit(learning_rate), F::lit(epsilon));
    let mut step = Vec::with_capacity(grad.len());
    for ((m, v), &g) in state.first_moment.iter_mut().zip(state.second_moment.iter_mut()).zip(grad) {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        step.push(-lr * m_hat / (v_hat.sqrt() + eps));
    }
    Ok(step)
}

pub const DEFAULT_MAP_TOL: f64 = 1e-6;
pub const DEFAULT_MAP_MAX_ITERS: usize = 10_000;

/// Full-batch Adam descent on `U`. Returns the iterate with the smallest
/// gradient norm seen; `grad_norm` is reported as computed, converged or not.
pub fn find_map<F, M>(model: &M, init: &[F], adam: AdamConfig, max_iters: usize, tol: F) -> Result<MapResult<F>>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    if max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    if init.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: init.len() });
    }
    let mut state = AdamState::new(model.dim(), adam)?;
    let mut theta = init.to_vec();
    let mut grad = vec![F::zero(); model.dim()];
    let mut best: Option<(Vec<F>, Vec<F>, F)> = None;
    let mut iterations = 0;
    for it in 0..=max_iters {
        model.full_grad_into(&theta, &mut grad);
        if !all_finite(&grad) {
            return Err(Error::NumericalFailure {
                iteration: it as u64,
                reason: "non-finite gradient during MAP search".into(),
            });
        }
        let norm = norm_sq(&grad).sqrt();
        if best.as_ref().is_none_or(|b| norm < b.2) {
            best = Some((theta.clone(), grad.clone(), norm));
        }
        iterations = it;
        if norm <= tol || it == max_iters {
            break;
        }
        let step = adam_update(&mut state, &grad)?;
        for (t, s) in theta.iter_mut().zip(step) {
            *t += s;
        }
    }
    let (theta_map, full_grad_at_map, grad_norm) = best.expect("at least one iterate");
    Ok(MapResult { theta_map, full_grad_at_map, converged: grad_norm <= tol, grad_norm, iterations })
}

/// Posterior standard deviations under a diagonal Laplace approximation at
/// `theta`: `1/√H_jj`, with `H_jj` from central differences of `∇U`.
pub fn laplace_std<F, M>(model: &M, theta: &[F]) -> Result<Vec<F>>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: theta.len() });
    }
    let mut p = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            let eps = F::lit(1e-4) * (F::one() + theta[j].abs());
            p[j] = theta[j] + eps;
            let up = model.full_grad(&p)[j];
            p[j] = theta[j] - eps;
            let down = model.full_grad(&p)[j];
            p[j] = theta[j];
            let curvature = (up - down) / (F::lit(2.0) * eps);
            if !(curvature > F::zero()) || !curvature.is_finite() {
                return Err(Error::NumericalFailure {
                    iteration: 0,
                    reason: format!("non-positive curvature in coordinate {j}"),
                });
            }
            Ok(curvature.sqrt().recip())
        })
        .collect()
}

/// Root-mean-square of [`laplace_std`]; a length scale for kernels.
pub fn laplace_scale<F, M>(model: &M, theta: &[F]) -> Result<f64>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let sd = laplace_std(model, theta)?;
    Ok((sd.iter().map(|s| s.as_f64().powi(2)).sum::<f64>() / sd.len() as f64).sqrt())
}
