//! Sample-quality metrics, discrepancy curves over a run, and head-to-head
//! comparison of tuning methods.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bandit::{
    derive_seed, discrepancy_objective, grid_search_tune, heuristic_tune, tune_mamba, GridSearch, MambaSetup,
};
use crate::error::{invalid, Error, Result};
use crate::model::{MapResult, TargetModel};
use crate::samplers::{BudgetMode, Chain, ChainRunner, SamplerConfig};
use crate::scalar::Real;
use crate::stein::{chain_discrepancy, ksd_reward, Metric, SteinSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    Analytic,
    File,
}

/// Trusted posterior mean and marginal standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source: ReferenceSource,
}

impl ReferenceMoments {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, source: ReferenceSource) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: std.len() });
        }
        if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(invalid("reference standard deviations must be positive and finite"));
        }
        Ok(Self { mean, std, source })
    }

    /// Closed-form moments, when the model has them.
    pub fn from_model<F: Real, M: TargetModel<F> + ?Sized>(model: &M) -> Option<Self> {
        let m = model.exact_posterior_moments()?;
        Self::new(
            m.mean.iter().map(|v| v.as_f64()).collect(),
            m.std.iter().map(|v| v.as_f64()).collect(),
            ReferenceSource::Analytic,
        )
        .ok()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Elementwise sample standard deviation with the `P − 1` denominator.
pub fn sample_std<F: Real>(samples: &[&[F]]) -> Result<Vec<f64>> {
    let p = samples.len();
    if p < 2 {
        return Err(invalid(format!("need at least 2 samples for a standard deviation, got {p}")));
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= p as f64);
    let mut var = vec![0.0; d];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
            let e = v.as_f64() - m;
            *acc += e * e;
        }
    }
    Ok(var.into_iter().map(|v| (v / (p - 1) as f64).sqrt()).collect())
}

/// `‖σ̂ − σ_ref‖₂ / ‖σ_ref‖₂`.
pub fn std_error_ratio(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), found: estimate.len() });
    }
    let num: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    Ok((num / den).sqrt())
}

/// Relative error of the chain's marginal standard deviations after burn-in.
pub fn relative_std_error<F: Real>(chain: &Chain<F>, reference: &ReferenceMoments, burn_in: f64) -> Result<f64> {
    if chain.dim != reference.dim() {
        return Err(Error::DimensionMismatch { expected: reference.dim(), found: chain.dim });
    }
    if !(0.0..1.0).contains(&burn_in) {
        return Err(invalid(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    let start = (burn_in * chain.len() as f64).floor() as usize;
    let rows: Vec<&[F]> = chain.samples[start.min(chain.len())..].iter().map(|s| s.theta.as_slice()).collect();
    std_error_ratio(&sample_std(&rows)?, &reference.std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub checkpoint: f64,
    /// Mean over non-diverged repeats; `None` if every repeat diverged.
    pub mean: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCurve {
    pub metric: Metric,
    pub mode: BudgetMode,
    pub points: Vec<CurvePoint>,
}

/// Checkpoints, repeats and seeding for [`reward_curve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    /// Cumulative budgets, strictly increasing.
    pub checkpoints: Vec<f64>,
    pub mode: BudgetMode,
    pub metric: Metric,
    pub settings: SteinSettings,
    pub repeats: usize,
    pub seed: u64,
    pub record_every: usize,
}

/// Runs `repeats` fresh chains of `config`, scoring the cumulative chain at
/// each checkpoint. Reports the mean and a ±2 sd band over repeats.
pub fn reward_curve<F, M>(
    model: &M,
    config: &SamplerConfig,
    init: &[F],
    map: Option<&MapResult<F>>,
    spec: &CurveSpec,
) -> Result<RewardCurve>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    if spec.repeats == 0 {
        return Err(invalid("repeats must be at least 1"));
    }
    if spec.checkpoints.is_empty()
        || spec.checkpoints.windows(2).any(|w| !(w[0] < w[1]))
        || !(spec.checkpoints[0] > 0.0)
    {
        return Err(invalid("checkpoints must be positive and strictly increasing"));
    }
    let mut values = vec![Vec::with_capacity(spec.repeats); spec.checkpoints.len()];
    for repeat in 0..spec.repeats {
        let cfg = config.clone().with_seed(derive_seed(spec.seed, repeat as u64));
        let mut runner = ChainRunner::new(model, cfg, init, map)?;
        let mut chain = Chain::new(model.dim());
        let mut done = 0.0f64;
        for (k, &cp) in spec.checkpoints.iter().enumerate() {
            let step = match spec.mode {
                BudgetMode::Iterations => cp.round() - done.round(),
                BudgetMode::Seconds => cp - done,
            };
            if step > 0.0 {
                runner.run(spec.mode.budget(step), spec.record_every, &mut chain)?;
            }
            done = cp;
            match chain_discrepancy(&chain, model, spec.metric, &spec.settings) {
                Ok(v) => values[k].push(v.as_f64()),
                Err(Error::Diverged | Error::NonFiniteStein { .. } | Error::NumericalFailure { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let points = spec
        .checkpoints
        .iter()
        .zip(values)
        .map(|(&checkpoint, vals)| {
            if vals.is_empty() {
                return CurvePoint { checkpoint, mean: None, lower: None, upper: None, repeats: 0 };
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                checkpoint,
                mean: Some(mean),
                lower: Some(mean - 2.0 * sd),
                upper: Some(mean + 2.0 * sd),
                repeats: vals.len(),
            }
        })
        .collect();
    Ok(RewardCurve { metric: spec.metric, mode: spec.mode, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tuner {
    MambaKsd,
    MambaFssd,
    Grid,
    Heuristic,
}

impl Tuner {
    pub fn name(self) -> &'static str {
        match self {
            Tuner::MambaKsd => "MAMBA-KSD",
            Tuner::MambaFssd => "MAMBA-FSSD",
            Tuner::Grid => "grid",
            Tuner::Heuristic => "heuristic",
        }
    }
}

impl std::str::FromStr for Tuner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mamba-ksd" | "mamba" => Ok(Tuner::MambaKsd),
            "mamba-fssd" => Ok(Tuner::MambaFssd),
            "grid" => Ok(Tuner::Grid),
            "heuristic" => Ok(Tuner::Heuristic),
            other => Err(invalid(format!("unknown tuner '{other}'"))),
        }
    }
}

/// Settings shared by every tuner in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSetup {
    pub mamba: MambaSetup,
    /// Step-size grid, iteration count and MAP noise for grid search.
    pub grid: GridSearch,
    /// Budget of the final run of each selected configuration.
    pub final_budget: f64,
    pub final_mode: BudgetMode,
    /// Scoring of the final runs.
    pub settings: SteinSettings,
    pub record_every: usize,
}

/// One (tuner, sampler) entry. Failed tuners leave the metrics empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub tuner: Tuner,
    pub sampler: String,
    pub config: Option<SamplerConfig>,
    pub ksd: Option<f64>,
    pub xi_std: Option<f64>,
    pub n_samples: Option<usize>,
    pub error: Option<String>,
}

fn select<F, M>(
    model: &M,
    map: &MapResult<F>,
    tuner: Tuner,
    template: &SamplerConfig,
    setup: &ComparisonSetup,
) -> Result<SamplerConfig>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let cv = template.use_cv.then_some(map);
    match tuner {
        Tuner::MambaKsd | Tuner::MambaFssd => {
            let metric = if tuner == Tuner::MambaKsd { Metric::Ksd } else { Metric::Fssd };
            let mamba = MambaSetup { metric, ..setup.mamba.clone() };
            Ok(tune_mamba(model, template, &mamba, &map.theta_map, cv)?.best)
        }
        Tuner::Grid => {
            let search = GridSearch { template: template.clone(), ..setup.grid.clone() };
            let objective = discrepancy_objective(model, Metric::Ksd, setup.settings);
            Ok(grid_search_tune(model, &search, map, objective)?.best)
        }
        Tuner::Heuristic => {
            let h = heuristic_tune(model.num_data())?;
            Ok(SamplerConfig { step_size: h.step_size, batch_fraction: h.batch_fraction, ..template.clone() })
        }
    }
}

fn final_run<F, M>(
    model: &M,
    map: &MapResult<F>,
    config: &SamplerConfig,
    setup: &ComparisonSetup,
    reference: Option<&ReferenceMoments>,
) -> Result<(f64, Option<f64>, usize)>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let mut runner = ChainRunner::new(model, config.clone(), &map.theta_map, config.use_cv.then_some(map))?;
    let mut chain = Chain::new(model.dim());
    runner.run(setup.final_mode.budget(setup.final_budget), setup.record_every, &mut chain)?;
    let ksd = ksd_reward(&chain, model, &setup.settings)?.as_f64();
    let xi = match reference {
        Some(r) => Some(relative_std_error(&chain, r, setup.settings.burn_in)?),
        None => None,
    };
    Ok((ksd, xi, chain.len()))
}

/// Tunes each sampler template with each method, then runs every selected
/// configuration from the MAP for the final budget. Cells are ordered by
/// sampler, then tuner.
pub fn compare_tuners<F, M>(
    model: &M,
    map: &MapResult<F>,
    tuners: &[Tuner],
    samplers: &[SamplerConfig],
    setup: &ComparisonSetup,
    reference: Option<&ReferenceMoments>,
) -> Vec<ComparisonCell>
where
    F: Real,
    M: TargetModel<F> + ?Sized,
{
    let mut cells = Vec::with_capacity(tuners.len() * samplers.len());
    for template in samplers {
        for &tuner in tuners {
            let mut cell = ComparisonCell {
                tuner,
                sampler: template.label(),
                config: None,
                ksd: None,
                xi_std: None,
                n_samples: None,
                error: None,
            };
            match select(model, map, tuner, template, setup) {
                Ok(config) => {
                    match final_run(model, map, &config, setup, reference) {
                        Ok((ksd, xi, n)) => {
                            cell.ksd = Some(ksd);
                            cell.xi_std = xi;
                            cell.n_samples = Some(n);
                        }
                        Err(e) => cell.error = Some(e.to_string()),
                    }
                    cell.config = Some(config);
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            if let Some(e) = &cell.error {
                log::warn!("{} / {}: {e}", tuner.name(), cell.sampler);
            }
            cells.push(cell);
        }
    }
    cells
}

/// Fixed-width text rendering of a comparison.
pub fn format_table(cells: &[ComparisonCell]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut out = format!("{:<12} {:<12} {:>12} {:>10} {:>10}\n", "tuner", "sampler", "ksd", "xi_std", "n_samples");
    for c in cells {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>12} {:>10} {:>10}",
            c.tuner.name(),
            c.sampler,
            fmt(c.ksd),
            fmt(c.xi_std),
            c.n_samples.map_or("-".to_string(), |n| n.to_string())
        );
    }
    out
}
