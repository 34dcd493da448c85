//! Successive-halving tuner over sampler configurations, the grid-search and
//! `h = 1/N` baselines, and the best-arm identification diagnostics.

use num_rational::Ratio;
use num_traits::Zero;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{MapResult, TargetModel};
use crate::samplers::{Budget, Chain, ChainRunner, SamplerConfig};
use crate::scalar::{BudgetScalar, Real};
use crate::stein::{
    chain_discrepancy, chain_sample_set, ksd_estimator_variance, KernelSpec, Metric, SteinSampleSet, SteinSettings,
};
use crate::ChainRng;

/// Position of an arm in the initial grid.
pub type ArmId = usize;

/// `⌊log_η M⌋` in integer arithmetic.
pub fn num_rounds(arms: usize, eta: usize) -> Result<usize> {
    if arms < 2 {
        return Err(invalid(format!("need at least 2 arms, got {arms}")));
    }
    if eta < 2 {
        return Err(invalid(format!("eta must be at least 2, got {eta}")));
    }
    let mut rounds = 0;
    let mut power = eta;
    while power <= arms {
        rounds += 1;
        power = match power.checked_mul(eta) {
            Some(p) => p,
            None => break,
        };
    }
    if rounds == 0 {
        return Err(invalid(format!(
            "{arms} arms with eta = {eta} gives floor(log_eta M) = 0 rounds; need M >= eta for a prune"
        )));
    }
    Ok(rounds)
}

/// `max(1, ⌊n/η⌋)`.
pub fn survivor_count(n: usize, eta: usize) -> usize {
    (n / eta).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRound<S> {
    pub round: usize,
    pub arms: usize,
    /// Budget granted to each arm in this round.
    pub per_arm: S,
}

/// Per-round arm counts and budgets: `r_i = T / (|S_i| ⌊log_η M⌋)`.
pub fn mamba_schedule<S: BudgetScalar>(arms: usize, eta: usize, total: S) -> Result<Vec<ScheduleRound<S>>> {
    let rounds = num_rounds(arms, eta)?;
    if !(total > S::zero()) {
        return Err(invalid("total budget must be positive"));
    }
    let mut alive = arms;
    let mut out = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let per_arm = total.clone() / (S::from_count(alive as u64) * S::from_count(rounds as u64));
        out.push(ScheduleRound { round, arms: alive, per_arm });
        alive = survivor_count(alive, eta);
    }
    Ok(out)
}

fn rank_key(reward: f64) -> f64 {
    if reward.is_nan() {
        f64::NEG_INFINITY
    } else {
        reward
    }
}

/// Arms ordered best first; equal rewards go to the lower id. NaN ranks as −∞.
pub fn rank(rewards: &[(ArmId, f64)]) -> Vec<(ArmId, f64)> {
    let mut ranked = rewards.to_vec();
    ranked.sort_by(|a, b| rank_key(b.1).total_cmp(&rank_key(a.1)).then(a.0.cmp(&b.0)));
    ranked
}

/// The `max(1, ⌊len/η⌋)` highest-reward arms, best first.
pub fn prune(rewards: &[(ArmId, f64)], eta: usize) -> Vec<ArmId> {
    let keep = survivor_count(rewards.len(), eta);
    rank(rewards).into_iter().take(keep).map(|(id, _)| id).collect()
}

/// One competitor in the bandit.
pub trait Arm: Send {
    /// Continues the arm for `grant` and returns its reward: higher is better,
    /// `−∞` once the arm has diverged.
    fn play(&mut self, grant: Budget) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRound {
    pub arm_id: ArmId,
    /// Iterations or seconds granted this round.
    pub budget: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub arms: Vec<ArmRound>,
    pub pruned: Vec<ArmId>,
    /// Best first.
    pub survivors: Vec<ArmId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MambaOutcome {
    pub best: ArmId,
    pub history: Vec<RoundRecord>,
}

impl MambaOutcome {
    /// Final-round rewards, best first.
    pub fn final_ranking(&self) -> Vec<(ArmId, f64)> {
        let last = self.history.last().expect("at least one round");
        rank(&last.arms.iter().map(|a| (a.arm_id, a.reward)).collect::<Vec<_>>())
    }
}

/// Per-round grants. Iteration budgets are split exactly over the rationals;
/// each arm runs `⌊cumulative allotment⌋` iterations in total.
fn round_grants(arms: usize, eta: usize, budget: Budget) -> Result<Vec<Budget>> {
    budget.validate()?;
    match budget {
        Budget::Iterations(total) => {
            let schedule = mamba_schedule(arms, eta, Ratio::<u64>::from_integer(total))?;
            let mut cumulative = Ratio::zero();
            let mut granted = 0u64;
            let mut grants = Vec::with_capacity(schedule.len());
            for round in &schedule {
                cumulative += round.per_arm;
                let target = cumulative.floor().to_integer();
                let grant = target - granted;
                if grant == 0 {
                    return Err(invalid(format!(
                        "iteration budget {total} leaves round {} arms with no iterations",
                        round.round
                    )));
                }
                granted = target;
                grants.push(Budget::Iterations(grant));
            }
            Ok(grants)
        }
        Budget::Seconds(total) => {
            Ok(mamba_schedule(arms, eta, total)?.into_iter().map(|r| Budget::Seconds(r.per_arm)).collect())
        }
    }
}

fn grant_amount(grant: Budget) -> f64 {
    match grant {
        Budget::Iterations(n) => n as f64,
        Budget::Seconds(s) => s,
    }
}

/// Successive halving: every live arm is resumed for the round's grant,
/// scored, and all but the top `max(1, ⌊|S_i|/η⌋)` are dropped. With
/// `workers > 1` the arms of a round run on a dedicated thread pool.
pub fn mamba_run<A: Arm>(arms: &mut [A], eta: usize, budget: Budget, workers: usize) -> Result<MambaOutcome> {
    let grants = round_grants(arms.len(), eta, budget)?;
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| invalid(format!("cannot start {workers} workers: {e}")))?,
        )
    } else {
        None
    };
    let mut alive: Vec<ArmId> = (0..arms.len()).collect();
    let mut history = Vec::with_capacity(grants.len());
    for (round, &grant) in grants.iter().enumerate() {
        let mut live = vec![false; arms.len()];
        alive.iter().for_each(|&i| live[i] = true);
        let play = |(i, arm): (usize, &mut A)| (i, arm.play(grant));
        let results: Vec<(ArmId, Result<f64>)> = match &pool {
            Some(pool) => {
                pool.install(|| arms.par_iter_mut().enumerate().filter(|(i, _)| live[*i]).map(play).collect())
            }
            None => arms.iter_mut().enumerate().filter(|(i, _)| live[*i]).map(play).collect(),
        };
        let mut rewards = Vec::with_capacity(results.len());
        for (id, r) in results {
            rewards.push((id, r?));
        }
        if rewards.iter().all(|&(_, r)| !r.is_finite()) {
            return Err(Error::AllDiverged);
        }
        let survivors = prune(&rewards, eta);
        let pruned: Vec<ArmId> = alive.iter().copied().filter(|id| !survivors.contains(id)).collect();
        log::info!("round {round}: survivors {survivors:?}, pruned {pruned:?}");
        history.push(RoundRecord {
            round,
            arms: rewards
                .iter()
                .map(|&(arm_id, reward)| ArmRound { arm_id, budget: grant_amount(grant), reward })
                .collect(),
            pruned,
            survivors: survivors.clone(),
        });
        alive = survivors;
    }
    Ok(MambaOutcome { best: alive[0], history })
}

/// A sampler configuration with its live chain, scored by a Stein discrepancy
/// on the cumulative thinned chain.
pub struct ChainArm<'m, F, M: ?Sized> {
    runner: ChainRunner<'m, F, M>,
    chain: Chain<F>,
    metric: Metric,
    settings: SteinSettings,
    record_every: usize,
}

impl<'m, F: Real, M: TargetModel<F> + ?Sized> ChainArm<'m, F, M> {
    pub fn new(
        model: &'m M,
        config: SamplerConfig,
        init: &[F],
        map: Option<&MapResult<F>>,
        metric: Metric,
        settings: SteinSettings,
    ) -> Result<Self> {
        let runner = ChainRunner::new(model, config, init, map)?;
        Ok(Self { runner, chain: Chain::new(model.dim()), metric, settings, record_every: 1 })
    }

    pub fn with_record_every(mut self, record_every: usize) -> Self {
        self.record_every = record_every;
        self
    }

    pub fn config(&self) -> &SamplerConfig {
        self.runner.config()
    }

    pub fn chain(&self) -> &Chain<F> {
        &self.chain
    }

    pub fn into_chain(self) -> Chain<F> {
        self.chain
    }

    /// The thinned sample set the reward is computed on.
    pub fn sample_set(&self) -> Result<SteinSampleSet<F>> {
        chain_sample_set(&self.chain, self.runner.model(), &self.settings)
    }

    /// `−discrepancy` of the chain so far.
    pub fn reward(&self) -> Result<f64> {
        if self.chain.diverged {
            return Ok(f64::NEG_INFINITY);
        }
        match chain_discrepancy(&self.chain, self.runner.model(), self.metric, &self.settings) {
            Ok(v) => Ok(-v.as_f64()),
            Err(Error::Diverged) => Ok(f64::NEG_INFINITY),
            Err(e @ (Error::NonFiniteStein { .. } | Error::NumericalFailure { .. })) => {
                log::warn!("{}: {e}; scoring as diverged", self.config().label());
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        }
    }
}

impl<F: Real, M: TargetModel<F> + ?Sized> Arm for ChainArm<'_, F, M> {
    fn play(&mut self, grant: Budget) -> Result<f64> {
        if !self.chain.diverged {
            self.runner.run(grant, self.record_every, &mut self.chain)?;
        }
        self.reward()
    }
}

/// Arm whose reward after cumulative budget `B` is `mean + σ/√B · ξ`,
/// mimicking an estimator whose variance shrinks with sample count.
#[derive(Debug, Clone)]
pub struct SyntheticArm {
    pub mean: f64,
    pub sigma: f64,
    cumulative: f64,
    rng: ChainRng,
}

impl SyntheticArm {
    pub fn new(mean: f64, sigma: f64, seed: u64) -> Self {
        Self { mean, sigma, cumulative: 0.0, rng: ChainRng::seed_from_u64(seed) }
    }
}

impl Arm for SyntheticArm {
    fn play(&mut self, grant: Budget) -> Result<f64> {
        self.cumulative += grant_amount(grant);
        let z: f64 = StandardNormal.sample(&mut self.rng);
        Ok(self.mean + self.sigma / self.cumulative.sqrt() * z)
    }
}

/// Independent per-arm seed derived from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Arms in id order: step sizes outermost, then batch fractions, then
/// leapfrog counts. Other fields come from `template`.
pub fn arm_grid(
    template: &SamplerConfig,
    log10_step_sizes: &[f64],
    batch_fractions: &[f64],
    leapfrogs: &[usize],
    base_seed: u64,
) -> Vec<SamplerConfig> {
    let mut arms = Vec::new();
    for &lh in log10_step_sizes {
        for &tau in batch_fractions {
            for &l in leapfrogs {
                let mut c = template.clone();
                c.step_size = 10f64.powf(lh);
                c.batch_fraction = tau;
                c.leapfrog = l;
                c.seed = derive_seed(base_seed, arms.len() as u64);
                arms.push(c);
            }
        }
    }
    arms
}

/// The 14 step sizes `10^-1, 10^-1.5, …, 10^-7.5` as log₁₀ values.
pub fn logistic_step_grid() -> Vec<f64> {
    (0..14).map(|i| -1.0 - 0.5 * i as f64).collect()
}

pub const DEFAULT_BATCH_FRACTION: f64 = 0.1;

/// `h = 1/N` with a 10% batch.
pub fn heuristic_tune(num_data: usize) -> Result<SamplerConfig> {
    if num_data == 0 {
        return Err(invalid("dataset size must be positive"));
    }
    Ok(SamplerConfig::sgld(1.0 / num_data as f64, DEFAULT_BATCH_FRACTION))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub log10_step_sizes: Vec<f64>,
    pub batch_fraction: f64,
    /// Sampler kind, leapfrog count and CV flag shared by all points.
    pub template: SamplerConfig,
    pub iterations: u64,
    /// Standard deviation of the Gaussian perturbation of the MAP start.
    pub init_noise: f64,
    pub seed: u64,
    pub record_every: usize,
}

impl GridSearch {
    pub fn new(log10_step_sizes: Vec<f64>, template: SamplerConfig, iterations: u64) -> Self {
        Self {
            log10_step_sizes,
            batch_fraction: DEFAULT_BATCH_FRACTION,
            template,
            iterations,
            init_noise: 0.0,
            seed: 0,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: SamplerConfig,
    /// Lower is better; `+∞` for diverged runs.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: SamplerConfig,
    pub points: Vec<GridPoint>,
}

/// Runs every step size for a fixed iteration count from a perturbed MAP and
/// keeps the one with the lowest `objective`.
pub fn grid_search_tune<F, M, O>(
    model: &M,
    search: &GridSearch,
    map: &MapResult<F>,
    objective: O,
) -> Result<GridOutcome>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
    O: Fn(&Chain<F>) -> Result<f64>,
{
    if search.log10_step_sizes.is_empty() {
        return Err(invalid("step-size grid is empty"));
    }
    let configs = arm_grid(
        &search.template,
        &search.log10_step_sizes,
        &[search.batch_fraction],
        &[search.template.leapfrog],
        search.seed,
    );
    let mut init_rng = ChainRng::seed_from_u64(search.seed);
    let mut points = Vec::with_capacity(configs.len());
    for config in configs {
        let init: Vec<F> = map
            .theta_map
            .iter()
            .map(|&t| {
                let z: f64 = StandardNormal.sample(&mut init_rng);
                t + F::lit(search.init_noise * z)
            })
            .collect();
        let mut runner = ChainRunner::new(model, config.clone(), &init, Some(map))?;
        let mut chain = Chain::new(model.dim());
        runner.run(Budget::Iterations(search.iterations), search.record_every, &mut chain)?;
        let score = if chain.diverged {
            f64::INFINITY
        } else {
            match objective(&chain) {
                Ok(s) if s.is_finite() => s,
                Ok(_) | Err(Error::Diverged | Error::NonFiniteStein { .. } | Error::NumericalFailure { .. }) => {
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            }
        };
        log::info!("grid point {}: score {score}", config.label());
        points.push(GridPoint { config, score });
    }
    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.score.is_finite())
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0)))
        .map(|(_, p)| p.config.clone())
        .ok_or(Error::AllDiverged)?;
    Ok(GridOutcome { best, points })
}

/// Grid-search objective: the chain's Stein discrepancy.
pub fn discrepancy_objective<'a, F, M>(
    model: &'a M,
    metric: Metric,
    settings: SteinSettings,
) -> impl Fn(&Chain<F>) -> Result<f64> + 'a
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    move |chain| chain_discrepancy(chain, model, metric, &settings).map(|v| v.as_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditDiagnostics {
    /// `α_s = ν_1 − ν_s` in rank order.
    pub gaps: Vec<f64>,
    /// `max_{s≥2} s/α_s²`; `None` when the top two rewards tie.
    pub h2: Option<f64>,
    pub sigma2_ksd: f64,
    /// Budget at which the failure bound equals `δ`; `None` when `h2` is.
    pub budget_bound: Option<f64>,
}

fn log_eta(arms: usize, eta: usize) -> f64 {
    (arms as f64).ln() / (eta as f64).ln()
}

/// `max_{s≥2} s/α_s²` over rewards sorted best first.
pub fn complexity_h2(ranked_rewards: &[f64]) -> Result<Option<f64>> {
    if ranked_rewards.len() < 2 {
        return Err(invalid("H2 needs at least two arms"));
    }
    if ranked_rewards.windows(2).any(|w| !(w[0] >= w[1])) {
        return Err(invalid("rewards must be sorted best first"));
    }
    let top = ranked_rewards[0];
    let mut h2 = 0.0f64;
    for (idx, &r) in ranked_rewards.iter().enumerate().skip(1) {
        let gap = top - r;
        if gap == 0.0 {
            return Ok(None);
        }
        h2 = h2.max((idx + 1) as f64 / (gap * gap));
    }
    Ok(Some(h2))
}

/// Probability bound `(2η−1) log_η M · exp(−ηT / (4σ²H2(log_η M + 1)))`
/// on returning a suboptimal arm.
pub fn failure_probability_bound(sigma2: f64, h2: f64, eta: usize, arms: usize, total_budget: f64) -> f64 {
    let l = log_eta(arms, eta);
    let e = eta as f64;
    (2.0 * e - 1.0) * l * (-e * total_budget / (4.0 * sigma2 * h2 * (l + 1.0))).exp()
}

/// Inverts [`failure_probability_bound`] for the budget reaching `delta`.
pub fn budget_bound(sigma2: f64, h2: f64, eta: usize, arms: usize, delta: f64) -> f64 {
    let l = log_eta(arms, eta);
    let e = eta as f64;
    4.0 * sigma2 * h2 * (l + 1.0) / e * ((2.0 * e - 1.0) * l / delta).ln()
}

/// Largest plug-in KSD² estimator variance across the given arms.
pub fn sigma2_ksd<F: Real>(sets: &[SteinSampleSet<F>], spec: &KernelSpec) -> Result<f64> {
    let mut best = 0.0f64;
    for set in sets {
        best = best.max(ksd_estimator_variance(set, spec)?.as_f64());
    }
    Ok(best)
}

pub fn diagnostics(
    ranked_rewards: &[f64],
    sigma2: f64,
    eta: usize,
    arms: usize,
    delta: f64,
) -> Result<BanditDiagnostics> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(sigma2 >= 0.0) {
        return Err(invalid("sigma² must be nonnegative"));
    }
    num_rounds(arms, eta)?;
    let h2 = complexity_h2(ranked_rewards)?;
    let top = ranked_rewards[0];
    Ok(BanditDiagnostics {
        gaps: ranked_rewards.iter().map(|&r| top - r).collect(),
        h2,
        sigma2_ksd: sigma2,
        budget_bound: h2.map(|h| budget_bound(sigma2, h, eta, arms, delta)),
    })
}

/// Arm grid and bandit settings for one tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MambaSetup {
    pub log10_step_sizes: Vec<f64>,
    pub batch_fractions: Vec<f64>,
    pub leapfrogs: Vec<usize>,
    pub eta: usize,
    pub budget: Budget,
    pub metric: Metric,
    pub settings: SteinSettings,
    pub workers: usize,
    pub record_every: usize,
    pub seed: u64,
    /// Target failure probability for the reported budget bound.
    pub delta: f64,
}

impl MambaSetup {
    pub fn new(log10_step_sizes: Vec<f64>, batch_fractions: Vec<f64>, budget: Budget) -> Self {
        Self {
            log10_step_sizes,
            batch_fractions,
            leapfrogs: vec![5],
            eta: 3,
            budget,
            metric: Metric::Ksd,
            settings: SteinSettings::default(),
            workers: 1,
            record_every: 1,
            seed: 0,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MambaSelection {
    /// Configuration of every arm, indexed by [`ArmId`].
    pub arms: Vec<SamplerConfig>,
    pub outcome: MambaOutcome,
    pub best: SamplerConfig,
    /// Computed from the final round's arms; `None` if unavailable.
    pub diagnostics: Option<BanditDiagnostics>,
}

/// Builds the arm grid from `template`, starts every arm at `init` and runs
/// successive halving.
pub fn tune_mamba<F, M>(
    model: &M,
    template: &SamplerConfig,
    setup: &MambaSetup,
    init: &[F],
    map: Option<&MapResult<F>>,
) -> Result<MambaSelection>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let configs = arm_grid(template, &setup.log10_step_sizes, &setup.batch_fractions, &setup.leapfrogs, setup.seed);
    let mut arms = configs
        .iter()
        .map(|c| {
            ChainArm::new(model, c.clone(), init, map, setup.metric, setup.settings)
                .map(|a| a.with_record_every(setup.record_every))
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = mamba_run(&mut arms, setup.eta, setup.budget, setup.workers)?;
    let last = outcome.history.last().expect("at least one round");
    let sets: Vec<SteinSampleSet<F>> =
        last.arms.iter().filter_map(|a| arms[a.arm_id].sample_set().ok().filter(|s| s.len() >= 2)).collect();
    let ranked: Vec<f64> = outcome.final_ranking().into_iter().map(|(_, r)| r).collect();
    let diagnostics = match sigma2_ksd(&sets, &setup.settings.kernel) {
        Ok(sigma2) if !sets.is_empty() => diagnostics(&ranked, sigma2, setup.eta, configs.len(), setup.delta).ok(),
        _ => None,
    };
    Ok(MambaSelection { best: configs[outcome.best].clone(), arms: configs, outcome, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_gaussian_conjugate_model;
    use crate::samplers::SamplerKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rounds_of<S: BudgetScalar>(s: &[ScheduleRound<S>]) -> Vec<(usize, S)> {
        s.iter().map(|r| (r.arms, r.per_arm.clone())).collect()
    }

    #[test]
    fn worked_schedules() {
        let s = mamba_schedule(27, 3, Ratio::<i64>::from_integer(81)).unwrap();
        let int = |n| Ratio::from_integer(n);
        assert_eq!(rounds_of(&s), vec![(27, int(1)), (9, int(3)), (3, int(9))]);
        for r in &s {
            assert_eq!(Ratio::from_integer(r.arms as i64) * r.per_arm, int(27));
        }
        assert_eq!(rounds_of(&mamba_schedule(10, 3, 60.0).unwrap()), vec![(10, 3.0), (3, 10.0)]);
        assert_eq!(rounds_of(&mamba_schedule(3, 3, 30.0).unwrap()), vec![(3, 10.0)]);
        assert!(mamba_schedule(2, 3, 10.0).is_err());
        assert!(mamba_schedule(1, 3, 10.0).is_err());
        assert!(mamba_schedule(9, 1, 10.0).is_err());
    }

    #[test]
    fn round_counts_are_integer_floors() {
        assert_eq!(num_rounds(27, 3).unwrap(), 3);
        assert_eq!(num_rounds(26, 3).unwrap(), 2);
        assert_eq!(num_rounds(8, 2).unwrap(), 3);
        assert_eq!(num_rounds(1000, 10).unwrap(), 3);
        assert_eq!(num_rounds(usize::MAX, 2).unwrap(), 63);
    }

    #[test]
    fn prune_examples() {
        assert_eq!(prune(&[(0, -1.0), (1, -2.0), (2, -3.0)], 3), vec![0]);
        assert_eq!(prune(&[(3, 0.0), (1, 0.0), (0, 0.0), (2, 0.0)], 2), vec![0, 1]);
        assert_eq!(prune(&[(0, -5.0), (1, -1.0)], 3), vec![1]);
        assert_eq!(prune(&[(0, f64::NEG_INFINITY), (1, -1e9)], 3), vec![1]);
        assert_eq!(prune(&[(0, f64::NAN), (1, -1e9)], 3), vec![1]);
    }

    #[test]
    fn iteration_grants_follow_cumulative_floors() {
        assert_eq!(
            round_grants(27, 3, Budget::Iterations(81)).unwrap(),
            vec![Budget::Iterations(1), Budget::Iterations(3), Budget::Iterations(9)]
        );
        // r = 10/9·(1, 3): cumulative 1.11, 4.44 → grants 1, 3.
        assert_eq!(
            round_grants(9, 3, Budget::Iterations(20)).unwrap(),
            vec![Budget::Iterations(1), Budget::Iterations(3)]
        );
        assert!(round_grants(9, 3, Budget::Iterations(10)).is_err());
    }

    struct Forced {
        reward: f64,
        plays: usize,
    }

    impl Arm for Forced {
        fn play(&mut self, _: Budget) -> Result<f64> {
            self.plays += 1;
            Ok(self.reward)
        }
    }

    #[test]
    fn finite_arm_beats_diverged_arm() {
        let mut arms = vec![Forced { reward: f64::NEG_INFINITY, plays: 0 }, Forced { reward: -100.0, plays: 0 }];
        let out = mamba_run(&mut arms, 2, Budget::Iterations(10), 1).unwrap();
        assert_eq!(out.best, 1);
        let mut dead =
            vec![Forced { reward: f64::NEG_INFINITY, plays: 0 }, Forced { reward: f64::NEG_INFINITY, plays: 0 }];
        assert!(matches!(mamba_run(&mut dead, 2, Budget::Iterations(10), 1), Err(Error::AllDiverged)));
    }

    #[test]
    fn pruned_arms_stop_playing_and_history_is_consistent() {
        let mut arms: Vec<Forced> = (0..9).map(|i| Forced { reward: -(i as f64), plays: 0 }).collect();
        let out = mamba_run(&mut arms, 3, Budget::Iterations(90), 1).unwrap();
        assert_eq!(out.best, 0);
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[0].survivors, vec![0, 1, 2]);
        assert_eq!(out.history[0].pruned, vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(out.history[1].survivors, vec![0]);
        assert_eq!(arms.iter().map(|a| a.plays).collect::<Vec<_>>(), vec![2, 2, 2, 1, 1, 1, 1, 1, 1]);
        for w in out.history.windows(2) {
            let next: Vec<ArmId> = w[1].arms.iter().map(|a| a.arm_id).collect();
            assert_eq!(next, {
                let mut s = w[0].survivors.clone();
                s.sort();
                s
            });
        }
    }

    #[test]
    fn leftover_survivors_resolve_to_top_ranked() {
        let mut arms: Vec<Forced> = (0..18).map(|i| Forced { reward: (i % 5) as f64, plays: 0 }).collect();
        let out = mamba_run(&mut arms, 3, Budget::Seconds(1.0), 1).unwrap();
        assert_eq!(out.history.last().unwrap().survivors.len(), 2);
        assert_eq!(out.best, 4);
    }

    #[test]
    fn synthetic_best_arm_is_found() {
        let mut wins = 0;
        for trial in 0..100u64 {
            let mut arms: Vec<SyntheticArm> =
                (0..9).map(|i| SyntheticArm::new(-(i as f64), 0.05, derive_seed(trial, i))).collect();
            wins += (mamba_run(&mut arms, 3, Budget::Iterations(90), 1).unwrap().best == 0) as usize;
        }
        assert!(wins >= 95, "{wins}");
    }

    #[test]
    fn diagnostics_examples() {
        assert_eq!(complexity_h2(&[0.0, -1.0, -2.0]).unwrap(), Some(2.0));
        assert_eq!(complexity_h2(&[0.0, -1.0]).unwrap(), Some(2.0));
        assert_eq!(complexity_h2(&[0.0, 0.0, -1.0]).unwrap(), None);
        assert!(complexity_h2(&[-1.0, 0.0]).is_err());
        let d = diagnostics(&[0.0, -1.0, -2.0], 0.5, 3, 9, 0.05).unwrap();
        assert_eq!(d.gaps, vec![0.0, 1.0, 2.0]);
        let d2 = diagnostics(&[0.0, -1.0, -2.0], 1.0, 3, 9, 0.05).unwrap();
        assert_eq!(d2.budget_bound.unwrap(), 2.0 * d.budget_bound.unwrap());
        let t = d.budget_bound.unwrap();
        assert_relative_eq!(failure_probability_bound(0.5, 2.0, 3, 9, t), 0.05, max_relative = 1e-12);
        assert!(diagnostics(&[0.0, 0.0], 1.0, 3, 9, 0.05).unwrap().budget_bound.is_none());
    }

    #[test]
    fn heuristic_rule() {
        let c = heuristic_tune(1_000_000).unwrap();
        assert_eq!(c.step_size, 1e-6);
        assert_eq!(c.batch_fraction, 0.1);
        assert_eq!(heuristic_tune(1).unwrap().step_size, 1.0);
        assert!(heuristic_tune(0).is_err());
    }

    #[test]
    fn grid_layout_and_logistic_steps() {
        let g = logistic_step_grid();
        assert_eq!(g.len(), 14);
        assert_eq!((g[0], g[13]), (-1.0, -7.5));
        let arms = arm_grid(&SamplerConfig::new(SamplerKind::Sghmc, 1.0, 1.0), &[-2.0, -3.0], &[0.1, 0.5], &[3, 5], 9);
        assert_eq!(arms.len(), 8);
        assert_eq!((arms[1].batch_fraction, arms[1].leapfrog), (0.1, 5));
        assert_eq!((arms[2].batch_fraction, arms[2].leapfrog), (0.5, 3));
        assert!(arms[4].step_size < arms[3].step_size);
        let seeds: std::collections::HashSet<u64> = arms.iter().map(|a| a.seed).collect();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn grid_search_on_conjugate_model() {
        let model = build_gaussian_conjugate_model(200, 2, 1.0, 10.0, 1).unwrap();
        let map = MapResult::at(&model, model.posterior_mean(), 1e-6);
        let settings = SteinSettings { thin: 5, ..SteinSettings::default() };
        let objective = discrepancy_objective(&model, Metric::Ksd, settings);
        let single = GridSearch { init_noise: 0.3, ..GridSearch::new(vec![-3.0], SamplerConfig::sgld(1.0, 0.1), 500) };
        let out = grid_search_tune(&model, &single, &map, &objective).unwrap();
        assert_eq!(out.best.step_size, 1e-3);
        let search = GridSearch { log10_step_sizes: vec![-1.0, -3.0, -5.0, -8.0], ..single };
        let a = grid_search_tune(&model, &search, &map, &objective).unwrap();
        let b = grid_search_tune(&model, &search, &map, &objective).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 4);
        // From a start far out in the tail only a mixing step size recovers.
        assert_eq!(a.best.step_size, 1e-3);
        assert_eq!(a.points[0].score, f64::INFINITY);
    }

    #[test]
    fn chain_arms_resume_across_rounds() {
        let model = build_gaussian_conjugate_model(100, 1, 1.0, 10.0, 2).unwrap();
        let settings = SteinSettings { thin: 1, ..SteinSettings::default() };
        let make = |h: f64| {
            ChainArm::new(&model, SamplerConfig::sgld(h, 0.1), &model.posterior_mean(), None, Metric::Ksd, settings)
                .unwrap()
        };
        let mut arms: Vec<_> = [1e-3, 1e-4, 1e-5].into_iter().map(make).collect();
        let out = mamba_run(&mut arms, 3, Budget::Iterations(300), 1).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(arms.iter().all(|a| a.chain().total_iterations == 100));
        let mut arms: Vec<_> = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10].into_iter().map(make).collect();
        let out = mamba_run(&mut arms, 3, Budget::Iterations(900), 2).unwrap();
        for &id in &out.history[0].survivors {
            assert_eq!(arms[id].chain().total_iterations, 50 + 150);
            assert_eq!(arms[id].chain().len(), 200);
        }
        for &id in &out.history[0].pruned {
            assert_eq!(arms[id].chain().total_iterations, 50);
        }
        let ranking = out.final_ranking();
        assert_eq!(ranking[0].0, out.best);
    }

    #[test]
    fn tune_mamba_reports_selection_and_diagnostics() {
        let model = build_gaussian_conjugate_model(100, 2, 1.0, 10.0, 2).unwrap();
        let setup = MambaSetup::new(vec![-2.0, -3.0, -4.0], vec![0.1, 0.5, 1.0], Budget::Iterations(1800));
        let sel = tune_mamba(&model, &SamplerConfig::sgld(1.0, 1.0), &setup, &model.posterior_mean(), None).unwrap();
        assert_eq!(sel.arms.len(), 9);
        assert_eq!(sel.best, sel.arms[sel.outcome.best]);
        let diag = sel.diagnostics.unwrap();
        assert_eq!(diag.gaps.len(), 3);
        assert_eq!(diag.gaps[0], 0.0);
        assert!(diag.sigma2_ksd >= 0.0);
    }

    #[test]
    fn threaded_rounds_match_sequential() {
        let model = build_gaussian_conjugate_model(100, 2, 1.0, 10.0, 2).unwrap();
        let settings = SteinSettings::default();
        let run = |workers| {
            let mut arms: Vec<_> =
                arm_grid(&SamplerConfig::sgld(1.0, 1.0), &[-2.0, -3.0, -4.0], &[0.1, 0.5, 1.0], &[1], 4)
                    .into_iter()
                    .map(|c| ChainArm::new(&model, c, &model.posterior_mean(), None, Metric::Ksd, settings).unwrap())
                    .collect();
            mamba_run(&mut arms, 3, Budget::Iterations(1800), workers).unwrap()
        };
        assert_eq!(run(1), run(3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prune_ignores_monotone_transforms(
            rewards in prop::collection::vec(-50.0f64..50.0, 2..30),
            eta in 2usize..5,
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            let base: Vec<(ArmId, f64)> = rewards.iter().copied().enumerate().collect();
            let affine: Vec<(ArmId, f64)> = base.iter().map(|&(i, r)| (i, a * r + b)).collect();
            let cubic: Vec<(ArmId, f64)> = base.iter().map(|&(i, r)| (i, r * r * r + r)).collect();
            let expect = prune(&base, eta);
            prop_assert_eq!(&prune(&affine, eta), &expect);
            prop_assert_eq!(&prune(&cubic, eta), &expect);
        }

        #[test]
        fn survivors_are_top_k_and_subset(rewards in prop::collection::vec(-5i32..5, 1..40), eta in 2usize..6) {
            let base: Vec<(ArmId, f64)> = rewards.iter().map(|&r| r as f64).enumerate().collect();
            let kept = prune(&base, eta);
            prop_assert_eq!(kept.len(), (base.len() / eta).max(1));
            let worst_kept = kept.iter().map(|&i| base[i].1).fold(f64::INFINITY, f64::min);
            for &(i, r) in &base {
                if !kept.contains(&i) {
                    prop_assert!(r <= worst_kept);
                }
            }
        }

        #[test]
        fn schedule_conserves_budget_exactly(eta in 2usize..5, extra in 0usize..200, total in 1i64..100_000) {
            let arms = eta + extra;
            let t = Ratio::from_integer(total);
            let s = mamba_schedule(arms, eta, t).unwrap();
            let rounds = s.len() as i64;
            for r in &s {
                prop_assert_eq!(Ratio::from_integer(r.arms as i64) * r.per_arm, t / Ratio::from_integer(rounds));
            }
            let sum: Ratio<i64> = s.iter().map(|r| Ratio::from_integer(r.arms as i64) * r.per_arm).sum();
            prop_assert_eq!(sum, t);
            if eta.pow(rounds as u32) == arms {
                for w in s.windows(2) {
                    prop_assert_eq!(w[1].per_arm, w[0].per_arm * Ratio::from_integer(eta as i64));
                }
            }
        }
    }
}
