//! Stein discrepancies: base kernels with analytic derivatives, the Stein
//! kernel, the quadratic-time KSD and the linear-time FSSD.
//!
//! Gradients are stored in the potential convention: a sample set carries
//! `∇U(θ) = −∇ log π(θ)` at each point.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{adam_update, AdamConfig, AdamState, TargetModel};
use crate::samplers::{thin_chain, Chain};
use crate::scalar::{all_finite, Real};

/// Rows below this are summed on the calling thread.
const PARALLEL_MIN_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `(c² + ‖x − y‖²)^β`.
    Imq { c: f64, beta: f64 },
    /// `exp(−‖x − y‖² / (2σ²))`.
    Gaussian { bandwidth: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Imq { c: 1.0, beta: -0.5 }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Imq { c, beta } => {
                if !(c > 0.0) {
                    return Err(invalid(format!("IMQ kernel needs c > 0, got {c}")));
                }
                if !(beta > -1.0 && beta < 0.0) {
                    return Err(invalid(format!(
                        "IMQ kernel needs beta in (-1, 0), the range in which it detects non-convergence; got {beta}"
                    )));
                }
            }
            KernelSpec::Gaussian { bandwidth } => {
                if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                    return Err(invalid(format!("Gaussian kernel bandwidth must be positive, got {bandwidth}")));
                }
            }
        }
        Ok(())
    }

    /// Radial profile `φ(r²)` and its first two derivatives in `r²`.
    #[inline]
    fn profile<F: Real>(&self, r2: F) -> (F, F, F) {
        match *self {
            KernelSpec::Imq { c, beta } => {
                let base = F::lit(c * c) + r2;
                let b = F::lit(beta);
                let phi = base.powf(b);
                let d1 = b * phi / base;
                let d2 = b * (b - F::one()) * phi / (base * base);
                (phi, d1, d2)
            }
            KernelSpec::Gaussian { bandwidth } => {
                let s2 = F::lit(bandwidth * bandwidth);
                let phi = (-r2 / (F::lit(2.0) * s2)).exp();
                let d1 = -phi / (F::lit(2.0) * s2);
                let d2 = phi / (F::lit(4.0) * s2 * s2);
                (phi, d1, d2)
            }
        }
    }
}

/// `k(x, y)` with its first and mixed derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval<F> {
    pub k: F,
    /// `∇_x k`.
    pub grad_x: Vec<F>,
    /// `∇_y k`.
    pub grad_y: Vec<F>,
    /// `∇_xᵀ ∇_y k`.
    pub trace_grad_xy: F,
}

pub fn kernel_eval<F: Real>(spec: &KernelSpec, x: &[F], y: &[F]) -> Result<KernelEval<F>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let r2: F = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let (phi, d1, d2) = spec.profile(r2);
    let two = F::lit(2.0);
    let grad_x: Vec<F> = x.iter().zip(y).map(|(&a, &b)| two * d1 * (a - b)).collect();
    let grad_y = grad_x.iter().map(|&g| -g).collect();
    let dim = F::from_usize_lossy(x.len());
    let trace_grad_xy = -two * dim * d1 - F::lit(4.0) * d2 * r2;
    Ok(KernelEval { k: phi, grad_x, grad_y, trace_grad_xy })
}

/// Stein kernel for one pair without allocation. For a radial kernel the four
/// terms collapse to `φ gxᵀgy + 2φ' (gx − gy)ᵀ(x − y) − 2dφ' − 4φ'' r²`.
#[inline]
fn stein_pair<F: Real>(spec: &KernelSpec, x: &[F], y: &[F], gx: &[F], gy: &[F]) -> F {
    let mut r2 = F::zero();
    let mut gg = F::zero();
    let mut cross = F::zero();
    for k in 0..x.len() {
        let diff = x[k] - y[k];
        r2 += diff * diff;
        gg += gx[k] * gy[k];
        cross += (gx[k] - gy[k]) * diff;
    }
    let (phi, d1, d2) = spec.profile(r2);
    let two = F::lit(2.0);
    let dim = F::from_usize_lossy(x.len());
    phi * gg + two * d1 * cross - two * dim * d1 - F::lit(4.0) * d2 * r2
}

/// `k_π(x, y)` where `gx = ∇U(x)` and `gy = ∇U(y)`.
pub fn stein_kernel<F: Real>(spec: &KernelSpec, x: &[F], y: &[F], gx: &[F], gy: &[F]) -> Result<F> {
    let d = x.len();
    for v in [y, gx, gy] {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: v.len() });
        }
    }
    Ok(stein_pair(spec, x, y, gx, gy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Exact `∇U` recomputed at every retained sample.
    Fullbatch,
    /// The sampler's own stochastic gradients.
    Stochastic,
}

/// Points and their potential gradients, both row-major `P × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinSampleSet<F> {
    dim: usize,
    points: Vec<F>,
    grads: Vec<F>,
    pub grad_mode: GradMode,
}

impl<F: Real> SteinSampleSet<F> {
    pub fn new(dim: usize, points: Vec<F>, grads: Vec<F>, grad_mode: GradMode) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("sample dimension must be positive"));
        }
        if !points.len().is_multiple_of(dim) || points.len() != grads.len() {
            return Err(invalid(format!(
                "points ({}) and grads ({}) must both be P x {dim}",
                points.len(),
                grads.len()
            )));
        }
        if !all_finite(&points) || !all_finite(&grads) {
            return Err(invalid("sample set contains non-finite values"));
        }
        Ok(Self { dim, points, grads, grad_mode })
    }

    /// Exact-gradient sample set from row-major points.
    pub fn with_model_grads<M: TargetModel<F> + ?Sized>(model: &M, points: Vec<F>) -> Result<Self> {
        let d = model.dim();
        if !points.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch { expected: d, found: points.len() % d });
        }
        let grads: Vec<F> = points.par_chunks(d).flat_map_iter(|p| model.full_grad(p)).collect();
        Self::new(d, points, grads, GradMode::Fullbatch)
    }

    /// Builds the set from a (typically thinned) chain, either recomputing
    /// exact gradients or reusing the stored stochastic ones.
    pub fn from_chain<M: TargetModel<F> + ?Sized>(chain: &Chain<F>, model: &M, mode: GradMode) -> Result<Self> {
        if chain.dim != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: chain.dim });
        }
        let points: Vec<F> = chain.samples.iter().flat_map(|s| s.theta.iter().copied()).collect();
        match mode {
            GradMode::Fullbatch => Self::with_model_grads(model, points),
            GradMode::Stochastic => {
                let grads = chain.samples.iter().flat_map(|s| s.grad.iter().copied()).collect();
                Self::new(chain.dim, points, grads, GradMode::Stochastic)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[F] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn grad(&self, i: usize) -> &[F] {
        &self.grads[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// Diagonal included, `1/P²` weights. Always nonnegative.
    V,
    /// Diagonal excluded, `1/(P(P−1))` weights. Unbiased, may be negative.
    U,
}

/// Row `i` contribution over `j > i`, plus the diagonal term.
fn upper_row<F: Real>(set: &SteinSampleSet<F>, spec: &KernelSpec, i: usize) -> Result<(F, F)> {
    let (x, gx) = (set.point(i), set.grad(i));
    let diag = stein_pair(spec, x, x, gx, gx);
    if !diag.is_finite() {
        return Err(Error::NonFiniteStein { row: i, col: i });
    }
    let mut off = F::zero();
    for j in i + 1..set.len() {
        let v = stein_pair(spec, x, set.point(j), gx, set.grad(j));
        if !v.is_finite() {
            return Err(Error::NonFiniteStein { row: i, col: j });
        }
        off += v;
    }
    Ok((diag, off))
}

/// Estimate of `KSD²`. Per-row partial sums may run in parallel; they are
/// always combined in row order, so the result does not depend on threading.
pub fn ksd_squared<F: Real>(set: &SteinSampleSet<F>, spec: &KernelSpec, stat: Statistic) -> Result<F> {
    spec.validate()?;
    let p = set.len();
    if p == 0 {
        return Err(invalid("KSD needs at least one sample"));
    }
    if stat == Statistic::U && p < 2 {
        return Err(invalid("U-statistic KSD needs at least two samples"));
    }
    let rows: Vec<Result<(F, F)>> = if p >= PARALLEL_MIN_POINTS {
        (0..p).into_par_iter().map(|i| upper_row(set, spec, i)).collect()
    } else {
        (0..p).map(|i| upper_row(set, spec, i)).collect()
    };
    let mut diag = F::zero();
    let mut off = F::zero();
    for row in rows {
        let (d, o) = row?;
        diag += d;
        off += o;
    }
    let pf = F::from_usize_lossy(p);
    let two = F::lit(2.0);
    Ok(match stat {
        Statistic::V => (diag + two * off) / (pf * pf),
        Statistic::U => two * off / (pf * (pf - F::one())),
    })
}

/// V-statistic KSD, `sqrt((1/P²) Σ_{i,j} k_π(θ_i, θ_j))`. Sums that are
/// negative only through rounding (above −1e-10) are clamped to zero.
pub fn ksd<F: Real>(set: &SteinSampleSet<F>, spec: &KernelSpec) -> Result<F> {
    let sq = ksd_squared(set, spec, Statistic::V)?;
    if sq < F::zero() {
        if sq > F::lit(-1e-10) {
            return Ok(F::zero());
        }
        return Err(Error::NumericalFailure {
            iteration: 0,
            reason: format!("V-statistic KSD² is negative ({sq}); kernel not positive definite?"),
        });
    }
    Ok(sq.sqrt())
}

/// `(1/P) Σ_j k_π(θ_i, θ_j)` for every `i`.
pub fn stein_row_means<F: Real>(set: &SteinSampleSet<F>, spec: &KernelSpec) -> Result<Vec<F>> {
    let p = set.len();
    let pf = F::from_usize_lossy(p);
    (0..p)
        .into_par_iter()
        .map(|i| {
            let mut acc = F::zero();
            for j in 0..p {
                let v = stein_pair(spec, set.point(i), set.point(j), set.grad(i), set.grad(j));
                if !v.is_finite() {
                    return Err(Error::NonFiniteStein { row: i, col: j });
                }
                acc += v;
            }
            Ok(acc / pf)
        })
        .collect()
}

/// Plug-in estimate of `Var_θ(E_θ'[k_π(θ, θ')])` over the sample set, the
/// asymptotic variance of the KSD² estimator.
pub fn ksd_estimator_variance<F: Real>(set: &SteinSampleSet<F>, spec: &KernelSpec) -> Result<F> {
    if set.len() < 2 {
        return Err(invalid("variance estimate needs at least two samples"));
    }
    let means = stein_row_means(set, spec)?;
    let n = F::from_usize_lossy(means.len());
    let mu = means.iter().copied().sum::<F>() / n;
    Ok(means.iter().map(|&m| (m - mu) * (m - mu)).sum::<F>() / (n - F::one()))
}

/// How the FSSD Gaussian-kernel bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    Fixed(f64),
    /// Median pairwise distance of the samples.
    Median,
}

/// Median pairwise Euclidean distance; at most 1000 evenly strided points
/// are used. Falls back to 1 when all points coincide.
pub fn median_pairwise_distance<F: Real>(set: &SteinSampleSet<F>) -> F {
    let p = set.len();
    let stride = p.div_ceil(1000).max(1);
    let idx: Vec<usize> = (0..p).step_by(stride).collect();
    let mut dists = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let r2: F = set.point(i).iter().zip(set.point(j)).map(|(&x, &y)| (x - y) * (x - y)).sum();
            dists.push(r2.sqrt());
        }
    }
    if dists.is_empty() {
        return F::one();
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite distances"));
    if *m > F::zero() {
        *m
    } else {
        F::one()
    }
}

impl BandwidthRule {
    pub fn resolve<F: Real>(&self, set: &SteinSampleSet<F>) -> f64 {
        match *self {
            BandwidthRule::Fixed(b) => b,
            BandwidthRule::Median => median_pairwise_distance(set).as_f64(),
        }
    }
}

fn gaussian_bandwidth(spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    match *spec {
        KernelSpec::Gaussian { bandwidth } => Ok(bandwidth),
        KernelSpec::Imq { .. } => Err(invalid("FSSD requires a real analytic (Gaussian) kernel")),
    }
}

fn witness_into<F: Real>(set: &SteinSampleSet<F>, bandwidth: f64, v: &[F], out: &mut [F]) {
    let inv_s2 = F::one() / F::lit(bandwidth * bandwidth);
    let half_inv = inv_s2 / F::lit(2.0);
    out.iter_mut().for_each(|o| *o = F::zero());
    for p in 0..set.len() {
        let x = set.point(p);
        let g = set.grad(p);
        let r2: F = x.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let k = (-r2 * half_inv).exp();
        for i in 0..v.len() {
            // −∇U_i k + ∂k/∂θ_i with ∂k/∂θ_i = −(θ_i − v_i) k / σ².
            out[i] += k * (-g[i] - (x[i] - v[i]) * inv_s2);
        }
    }
    let pf = F::from_usize_lossy(set.len());
    out.iter_mut().for_each(|o| *o /= pf);
}

/// Empirical Stein witness `g(v) = E_θ[−∇U(θ) k(θ, v) + ∇_θ k(θ, v)]`.
pub fn fssd_witness<F: Real>(set: &SteinSampleSet<F>, spec: &KernelSpec, v: &[F]) -> Result<Vec<F>> {
    let bandwidth = gaussian_bandwidth(spec)?;
    if v.len() != set.dim() {
        return Err(Error::DimensionMismatch { expected: set.dim(), found: v.len() });
    }
    if set.is_empty() {
        return Err(invalid("witness needs at least one sample"));
    }
    let mut out = vec![F::zero(); v.len()];
    witness_into(set, bandwidth, v, &mut out);
    Ok(out)
}

/// Test locations and their optimization schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct FssdConfig<F> {
    /// `J` rows of length `d`.
    pub locations: Vec<Vec<F>>,
    pub opt_steps: usize,
    /// Adam learning rate in units of the kernel bandwidth.
    pub opt_lr: f64,
}

impl<F: Real> FssdConfig<F> {
    pub fn new(locations: Vec<Vec<F>>) -> Self {
        Self { locations, opt_steps: 0, opt_lr: 0.1 }
    }
}

fn fssd_sq_terms<F: Real>(set: &SteinSampleSet<F>, bandwidth: f64, locations: &[Vec<F>]) -> F {
    let mut buf = vec![F::zero(); set.dim()];
    let mut total = F::zero();
    for v in locations {
        witness_into(set, bandwidth, v, &mut buf);
        total += buf.iter().map(|&g| g * g).sum::<F>();
    }
    total / F::from_usize_lossy(set.dim() * locations.len())
}

fn check_locations<F: Real>(set: &SteinSampleSet<F>, locations: &[Vec<F>]) -> Result<()> {
    if locations.is_empty() {
        return Err(invalid("FSSD needs at least one test location"));
    }
    for v in locations {
        if v.len() != set.dim() {
            return Err(Error::DimensionMismatch { expected: set.dim(), found: v.len() });
        }
        if !all_finite(v) {
            return Err(invalid("test locations must be finite"));
        }
    }
    if set.is_empty() {
        return Err(invalid("FSSD needs at least one sample"));
    }
    Ok(())
}

/// `sqrt((1/(dJ)) Σ_i Σ_j g_i(v_j)²)`.
pub fn fssd<F: Real>(set: &SteinSampleSet<F>, config: &FssdConfig<F>, spec: &KernelSpec) -> Result<F> {
    let bandwidth = gaussian_bandwidth(spec)?;
    check_locations(set, &config.locations)?;
    Ok(fssd_sq_terms(set, bandwidth, &config.locations).sqrt())
}

/// Optimized locations plus bookkeeping from the search.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationFit<F> {
    pub config: FssdConfig<F>,
    pub initial_fssd_sq: F,
    pub final_fssd_sq: F,
    /// Coordinates whose sample variance was zero and got jitter instead.
    pub jittered_coords: Vec<usize>,
}

const ZERO_VARIANCE_JITTER: f64 = 1e-3;

/// Draws `J = config.locations.len()` locations from a diagonal Gaussian fit
/// to the samples, then runs `opt_steps` of Adam ascent on FSSD² using
/// central finite differences. The best iterate is returned.
pub fn optimize_test_locations<F: Real, R: Rng + ?Sized>(
    set: &SteinSampleSet<F>,
    config: &FssdConfig<F>,
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<LocationFit<F>> {
    let bandwidth = gaussian_bandwidth(spec)?;
    let p = set.len();
    if p < 2 {
        return Err(invalid("location fit needs at least two samples"));
    }
    let j = config.locations.len();
    if j == 0 {
        return Err(invalid("FSSD needs at least one test location"));
    }
    let d = set.dim();
    let pf = F::from_usize_lossy(p);
    let mut mean = vec![F::zero(); d];
    for i in 0..p {
        for (m, &x) in mean.iter_mut().zip(set.point(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= pf);
    let mut var = vec![F::zero(); d];
    for i in 0..p {
        for ((v, &x), &m) in var.iter_mut().zip(set.point(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let mut jittered = Vec::new();
    for (k, v) in var.iter_mut().enumerate() {
        *v /= pf - F::one();
        if *v <= F::zero() {
            *v = F::lit(ZERO_VARIANCE_JITTER);
            jittered.push(k);
        }
    }
    if !jittered.is_empty() {
        log::warn!("zero sample variance in coordinates {jittered:?}; using jitter {ZERO_VARIANCE_JITTER}");
    }
    let mut locations: Vec<Vec<F>> = (0..j)
        .map(|_| {
            mean.iter()
                .zip(&var)
                .map(|(&m, &v)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + (v + F::lit(1e-6)).sqrt() * F::lit(z)
                })
                .collect()
        })
        .collect();

    let initial = fssd_sq_terms(set, bandwidth, &locations);
    let mut best = (locations.clone(), initial);
    if config.opt_steps > 0 {
        let adam_cfg = AdamConfig { learning_rate: config.opt_lr * bandwidth, ..AdamConfig::default() };
        let mut adam = AdamState::<F>::new(j * d, adam_cfg)?;
        let scale = F::one() / F::from_usize_lossy(d * j);
        let mut buf = vec![F::zero(); d];
        let term = |v: &[F], buf: &mut [F]| -> F {
            witness_into(set, bandwidth, v, buf);
            buf.iter().map(|&g| g * g).sum::<F>() * scale
        };
        for _ in 0..config.opt_steps {
            // Only row `l` of the objective depends on v_l.
            let mut neg_grad = Vec::with_capacity(j * d);
            for loc in locations.iter_mut() {
                for k in 0..d {
                    let orig = loc[k];
                    let h = F::lit(1e-5) * (F::one() + orig.abs());
                    loc[k] = orig + h;
                    let up = term(loc, &mut buf);
                    loc[k] = orig - h;
                    let down = term(loc, &mut buf);
                    loc[k] = orig;
                    neg_grad.push(-(up - down) / (F::lit(2.0) * h));
                }
            }
            let step = adam_update(&mut adam, &neg_grad)?;
            for (loc, chunk) in locations.iter_mut().zip(step.chunks(d)) {
                for (x, &s) in loc.iter_mut().zip(chunk) {
                    *x += s;
                }
            }
            let value = fssd_sq_terms(set, bandwidth, &locations);
            if value.is_finite() && value > best.1 {
                best = (locations.clone(), value);
            }
        }
    }
    Ok(LocationFit {
        config: FssdConfig { locations: best.0, opt_steps: config.opt_steps, opt_lr: config.opt_lr },
        initial_fssd_sq: initial,
        final_fssd_sq: best.1,
        jittered_coords: jittered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ksd,
    Fssd,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ksd" => Ok(Metric::Ksd),
            "fssd" => Ok(Metric::Fssd),
            other => Err(invalid(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssdSettings {
    pub locations: usize,
    pub opt_steps: usize,
    pub opt_lr: f64,
    pub bandwidth: BandwidthRule,
    /// Seed for drawing the initial locations.
    pub seed: u64,
}

impl Default for FssdSettings {
    fn default() -> Self {
        Self { locations: 10, opt_steps: 20, opt_lr: 0.1, bandwidth: BandwidthRule::Median, seed: 0 }
    }
}

/// Everything needed to turn a chain into a discrepancy value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinSettings {
    pub kernel: KernelSpec,
    pub thin: usize,
    pub burn_in: f64,
    pub grad_mode: GradMode,
    pub fssd: FssdSettings,
}

impl Default for SteinSettings {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::default(),
            thin: 10,
            burn_in: 0.1,
            grad_mode: GradMode::Fullbatch,
            fssd: FssdSettings::default(),
        }
    }
}

/// Thins the chain and builds the sample set used for scoring.
pub fn chain_sample_set<F, M>(chain: &Chain<F>, model: &M, settings: &SteinSettings) -> Result<SteinSampleSet<F>>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    if chain.diverged {
        return Err(Error::Diverged);
    }
    let thinned = thin_chain(chain, settings.thin, settings.burn_in)?;
    SteinSampleSet::from_chain(&thinned, model, settings.grad_mode)
}

/// KSD of a chain after thinning. Diverged chains yield [`Error::Diverged`],
/// which the bandit maps to a reward of `−∞`.
pub fn ksd_reward<F, M>(chain: &Chain<F>, model: &M, settings: &SteinSettings) -> Result<F>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let set = chain_sample_set(chain, model, settings)?;
    ksd(&set, &settings.kernel)
}

/// FSSD of a chain after thinning, with locations fitted to the same samples.
pub fn fssd_reward<F, M>(chain: &Chain<F>, model: &M, settings: &SteinSettings) -> Result<F>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    use rand_chacha::rand_core::SeedableRng;
    let set = chain_sample_set(chain, model, settings)?;
    let spec = KernelSpec::Gaussian { bandwidth: settings.fssd.bandwidth.resolve(&set) };
    let init = FssdConfig {
        locations: vec![vec![F::zero(); set.dim()]; settings.fssd.locations.max(1)],
        opt_steps: settings.fssd.opt_steps,
        opt_lr: settings.fssd.opt_lr,
    };
    let config = if set.len() >= 2 {
        let mut rng = crate::ChainRng::seed_from_u64(settings.fssd.seed);
        optimize_test_locations(&set, &init, &spec, &mut rng)?.config
    } else {
        FssdConfig { locations: vec![set.point(0).to_vec(); init.locations.len()], ..init }
    };
    fssd(&set, &config, &spec)
}

pub fn chain_discrepancy<F, M>(chain: &Chain<F>, model: &M, metric: Metric, settings: &SteinSettings) -> Result<F>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    match metric {
        Metric::Ksd => ksd_reward(chain, model, settings),
        Metric::Fssd => fssd_reward(chain, model, settings),
    }
}
