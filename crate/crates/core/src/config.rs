//! Flat TOML run configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{logistic_step_grid, GridSearch, MambaSetup};
use crate::error::{Error, Result};
use crate::eval::{ComparisonSetup, Tuner};
use crate::model::{
    build_gaussian_conjugate_model, laplace_scale, GaussianConjugate, LogisticRegression, PosteriorMoments,
    TargetModel, DEFAULT_LOGISTIC_PRIOR_VAR,
};
use crate::samplers::{BudgetMode, SamplerConfig, SamplerKind};
use crate::stein::{BandwidthRule, FssdSettings, GradMode, KernelSpec, Metric, SteinSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gaussian,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mamba,
    Grid,
    Heuristic,
    /// Runs every tuner in `compare_tuners` and writes a comparison table.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Imq,
    Gaussian,
}

fn d_num_data() -> usize {
    1000
}
fn d_dim() -> usize {
    2
}
fn d_one() -> f64 {
    1.0
}
fn d_prior_var() -> f64 {
    DEFAULT_LOGISTIC_PRIOR_VAR
}
fn d_metric() -> Metric {
    Metric::Ksd
}
fn d_sampler() -> SamplerKind {
    SamplerKind::Sgld
}
fn d_eta() -> usize {
    3
}
fn d_budget() -> f64 {
    3000.0
}
fn d_budget_mode() -> BudgetMode {
    BudgetMode::Iterations
}
fn d_steps() -> Vec<f64> {
    logistic_step_grid()
}
fn d_batches() -> Vec<f64> {
    vec![1.0, 0.1, 0.01]
}
fn d_leapfrogs() -> Vec<usize> {
    vec![5]
}
fn d_friction() -> f64 {
    0.01
}
fn d_thermostat() -> f64 {
    0.01
}
fn d_grid_iterations() -> u64 {
    5000
}
fn d_grid_noise() -> f64 {
    0.2
}
fn d_kernel() -> KernelFamily {
    KernelFamily::Imq
}
fn d_beta() -> f64 {
    -0.5
}
fn d_thin() -> usize {
    10
}
fn d_burn_in() -> f64 {
    0.1
}
fn d_grad_mode() -> GradMode {
    GradMode::Fullbatch
}
fn d_locations() -> usize {
    10
}
fn d_opt_steps() -> usize {
    20
}
fn d_opt_lr() -> f64 {
    0.1
}
fn d_output() -> PathBuf {
    PathBuf::from("out")
}
fn d_workers() -> usize {
    1
}
fn d_record_every() -> usize {
    1
}
fn d_final_budget() -> f64 {
    10_000.0
}
fn d_batch_fraction() -> f64 {
    0.1
}
fn d_repeats() -> usize {
    10
}
fn d_checkpoints() -> Vec<f64> {
    vec![1000.0, 2000.0, 5000.0, 10_000.0]
}
fn d_tuners() -> Vec<Tuner> {
    vec![Tuner::MambaKsd, Tuner::MambaFssd, Tuner::Grid, Tuner::Heuristic]
}
fn d_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::Sgld]
}
fn d_delta() -> f64 {
    0.05
}

/// Every key is optional except `model` and `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Target.
    pub model: ModelKind,
    #[serde(default = "d_num_data")]
    pub num_data: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    /// Gaussian observation noise standard deviation.
    #[serde(default = "d_one")]
    pub obs_noise: f64,
    #[serde(default = "d_prior_var")]
    pub prior_var: f64,
    /// Logistic data as `y,x_0,...`; a synthetic set is drawn when absent.
    pub data_file: Option<PathBuf>,
    #[serde(default)]
    pub model_seed: u64,
    /// JSON `{"mean": [...], "std": [...]}` used for the std error.
    pub reference_file: Option<PathBuf>,

    // Tuner.
    pub method: Method,
    #[serde(default = "d_metric")]
    pub metric: Metric,
    #[serde(default = "d_sampler")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub use_cv: bool,
    #[serde(default = "d_eta")]
    pub eta: usize,
    #[serde(default = "d_budget")]
    pub budget: f64,
    #[serde(default = "d_budget_mode")]
    pub budget_mode: BudgetMode,
    #[serde(default = "d_steps")]
    pub log10_step_sizes: Vec<f64>,
    #[serde(default = "d_batches")]
    pub batch_fractions: Vec<f64>,
    #[serde(default = "d_leapfrogs")]
    pub leapfrogs: Vec<usize>,
    #[serde(default = "d_friction")]
    pub friction: f64,
    #[serde(default)]
    pub noise_estimate: f64,
    #[serde(default = "d_thermostat")]
    pub thermostat: f64,
    #[serde(default = "d_grid_iterations")]
    pub grid_iterations: u64,
    #[serde(default = "d_grid_noise")]
    pub grid_init_noise: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,

    // Stein discrepancy.
    #[serde(default = "d_kernel")]
    pub kernel: KernelFamily,
    #[serde(default = "d_one")]
    pub imq_c: f64,
    #[serde(default = "d_beta")]
    pub imq_beta: f64,
    /// Replace `imq_c` by the Laplace posterior scale at the MAP. A `c` much
    /// wider than the posterior lets chains frozen at the mode score well.
    #[serde(default)]
    pub imq_c_laplace: bool,
    /// Gaussian-kernel bandwidth; the median heuristic when absent.
    pub bandwidth: Option<f64>,
    #[serde(default = "d_thin")]
    pub thin: usize,
    #[serde(default = "d_burn_in")]
    pub burn_in: f64,
    #[serde(default = "d_grad_mode")]
    pub grad_mode: GradMode,
    #[serde(default = "d_locations")]
    pub fssd_locations: usize,
    #[serde(default = "d_opt_steps")]
    pub fssd_opt_steps: usize,
    #[serde(default = "d_opt_lr")]
    pub fssd_opt_lr: f64,

    // Final runs, curves and comparisons.
    #[serde(default = "d_final_budget")]
    pub final_budget: f64,
    /// Configuration studied by `curve` when no selection is given.
    pub log10_h: Option<f64>,
    #[serde(default = "d_batch_fraction")]
    pub batch_fraction: f64,
    #[serde(default = "d_checkpoints")]
    pub curve_checkpoints: Vec<f64>,
    #[serde(default = "d_repeats")]
    pub curve_repeats: usize,
    #[serde(default = "d_tuners")]
    pub compare_tuners: Vec<Tuner>,
    #[serde(default = "d_samplers")]
    pub compare_samplers: Vec<SamplerKind>,

    // Execution.
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default = "d_record_every")]
    pub record_every: usize,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses and validates; relative data paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        for p in [&mut cfg.data_file, &mut cfg.reference_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < 2 {
            return Err(cfg_err(format!("eta = {} is invalid: eta >= 2 required", self.eta)));
        }
        if self.kernel == KernelFamily::Imq {
            self.kernel_spec().validate().map_err(|e| cfg_err(format!("imq_c / imq_beta: {e}")))?;
        }
        if let Some(b) = self.bandwidth {
            KernelSpec::Gaussian { bandwidth: b }.validate().map_err(|e| cfg_err(format!("bandwidth: {e}")))?;
        }
        if self.num_data == 0 || self.dim == 0 {
            return Err(cfg_err("num_data and dim must be positive"));
        }
        if !(self.obs_noise > 0.0) || !(self.prior_var > 0.0) {
            return Err(cfg_err("obs_noise and prior_var must be positive"));
        }
        if !(self.budget > 0.0) || !(self.final_budget > 0.0) {
            return Err(cfg_err("budget and final_budget must be positive"));
        }
        if self.thin == 0 {
            return Err(cfg_err("thin must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(cfg_err(format!("burn_in = {} must lie in [0, 1)", self.burn_in)));
        }
        if self.workers == 0 || self.record_every == 0 || self.fssd_locations == 0 || self.curve_repeats == 0 {
            return Err(cfg_err("workers, record_every, fssd_locations and curve_repeats must be at least 1"));
        }
        if matches!(self.method, Method::Mamba | Method::Grid | Method::Compare) && self.log10_step_sizes.is_empty() {
            return Err(cfg_err("log10_step_sizes must be non-empty for mamba and grid"));
        }
        if matches!(self.method, Method::Mamba | Method::Compare)
            && (self.batch_fractions.is_empty() || self.leapfrogs.is_empty())
        {
            return Err(cfg_err("batch_fractions and leapfrogs must be non-empty for mamba"));
        }
        if let Some(&f) = self.batch_fractions.iter().chain([&self.batch_fraction]).find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(cfg_err(format!("batch fraction {f} must lie in (0, 1]")));
        }
        if self.leapfrogs.contains(&0) {
            return Err(cfg_err("leapfrog counts must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(cfg_err("delta must lie in (0, 1)"));
        }
        for (key, p) in [("data_file", &self.data_file), ("reference_file", &self.reference_file)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(cfg_err(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        if self.data_file.is_some() && self.model != ModelKind::Logistic {
            return Err(cfg_err("data_file is only used by the logistic model"));
        }
        Ok(())
    }

    /// Applies `imq_c_laplace` using the curvature of `model` at `theta`.
    pub fn adapt_kernel_scale<M: TargetModel<f64> + ?Sized>(&mut self, model: &M, theta: &[f64]) -> Result<()> {
        if self.imq_c_laplace && self.kernel == KernelFamily::Imq {
            self.imq_c = laplace_scale(model, theta)?;
            log::info!("IMQ scale c set to {:.4e}", self.imq_c);
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        match self.kernel {
            KernelFamily::Imq => KernelSpec::Imq { c: self.imq_c, beta: self.imq_beta },
            KernelFamily::Gaussian => KernelSpec::Gaussian { bandwidth: self.bandwidth.unwrap_or(1.0) },
        }
    }

    pub fn stein_settings(&self) -> SteinSettings {
        SteinSettings {
            kernel: self.kernel_spec(),
            thin: self.thin,
            burn_in: self.burn_in,
            grad_mode: self.grad_mode,
            fssd: FssdSettings {
                locations: self.fssd_locations,
                opt_steps: self.fssd_opt_steps,
                opt_lr: self.fssd_opt_lr,
                bandwidth: self.bandwidth.map_or(BandwidthRule::Median, BandwidthRule::Fixed),
                seed: self.seed,
            },
        }
    }

    /// Sampler fields shared by every arm.
    pub fn template(&self, kind: SamplerKind) -> SamplerConfig {
        let mut c = SamplerConfig::new(kind, 1.0, 1.0).with_cv(self.use_cv).with_seed(self.seed);
        c.friction = self.friction;
        c.noise_estimate = self.noise_estimate;
        c.thermostat = self.thermostat;
        c.leapfrog = self.leapfrogs.first().copied().unwrap_or(c.leapfrog);
        c
    }

    pub fn mamba_setup(&self) -> MambaSetup {
        MambaSetup {
            log10_step_sizes: self.log10_step_sizes.clone(),
            batch_fractions: self.batch_fractions.clone(),
            leapfrogs: if self.sampler == SamplerKind::Sghmc {
                self.leapfrogs.clone()
            } else {
                vec![self.template(self.sampler).leapfrog]
            },
            eta: self.eta,
            budget: self.budget_mode.budget(self.budget),
            metric: self.metric,
            settings: self.stein_settings(),
            workers: self.workers,
            record_every: self.record_every,
            seed: self.seed,
            delta: self.delta,
        }
    }

    pub fn grid_search(&self, kind: SamplerKind) -> GridSearch {
        GridSearch {
            init_noise: self.grid_init_noise,
            seed: self.seed,
            record_every: self.record_every,
            ..GridSearch::new(self.log10_step_sizes.clone(), self.template(kind), self.grid_iterations)
        }
    }

    pub fn comparison_setup(&self) -> ComparisonSetup {
        ComparisonSetup {
            mamba: self.mamba_setup(),
            grid: self.grid_search(self.sampler),
            final_budget: self.final_budget,
            final_mode: self.budget_mode,
            settings: self.stein_settings(),
            record_every: self.record_every,
        }
    }

    pub fn build_model(&self) -> Result<AnyModel> {
        match self.model {
            ModelKind::Gaussian => Ok(AnyModel::Gaussian(build_gaussian_conjugate_model(
                self.num_data,
                self.dim,
                self.obs_noise,
                self.prior_var,
                self.model_seed,
            )?)),
            ModelKind::Logistic => match &self.data_file {
                Some(path) => {
                    let file = std::fs::File::open(path)?;
                    Ok(AnyModel::Logistic(crate::io::read_logistic_csv(file, self.prior_var)?))
                }
                None => Ok(AnyModel::Logistic(
                    LogisticRegression::synthetic(self.num_data, self.dim, self.prior_var, self.model_seed)?.0,
                )),
            },
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    RunConfig::from_toml_str(&text, base).map_err(|e| match e {
        Error::Config(msg) => cfg_err(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Any built-in target.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Gaussian(GaussianConjugate<f64>),
    Logistic(LogisticRegression<f64>),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Gaussian($m) => $e,
            AnyModel::Logistic($m) => $e,
        }
    };
}

impl TargetModel<f64> for AnyModel {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }
    fn num_data(&self) -> usize {
        delegate!(self, m => m.num_data())
    }
    fn potential_datum(&self, theta: &[f64], i: usize) -> f64 {
        delegate!(self, m => m.potential_datum(theta, i))
    }
    fn add_grad_datum(&self, theta: &[f64], i: usize, scale: f64, acc: &mut [f64]) {
        delegate!(self, m => m.add_grad_datum(theta, i, scale, acc))
    }
    fn exact_posterior_moments(&self) -> Option<PosteriorMoments<f64>> {
        delegate!(self, m => m.exact_posterior_moments())
    }
    fn full_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.full_grad_into(theta, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("."))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("model = \"gaussian\"\nmethod = \"mamba\"\n").unwrap();
        assert_eq!(c.eta, 3);
        assert_eq!(c.thin, 10);
        assert_eq!(c.burn_in, 0.1);
        assert_eq!(c.kernel_spec(), KernelSpec::Imq { c: 1.0, beta: -0.5 });
        assert_eq!(c.fssd_locations, 10);
        assert_eq!(c.log10_step_sizes.len(), 14);
        assert_eq!(c.workers, 1);
        assert_eq!(c.budget_mode, BudgetMode::Iterations);
        assert_eq!(c.metric, Metric::Ksd);
    }

    #[test]
    fn validation_rules() {
        let err = parse("model = \"gaussian\"\nmethod = \"mamba\"\neta = 1\n").unwrap_err().to_string();
        assert!(err.contains("eta"), "{err}");
        let err = parse("model = \"gaussian\"\nmethod = \"mamba\"\nimq_beta = -1.5\n").unwrap_err().to_string();
        assert!(err.contains("(-1, 0)"), "{err}");
        assert!(parse("model = \"gaussian\"\nmethod = \"mamba\"\nlog10_step_sizes = []\n").is_err());
        assert!(parse("model = \"gaussian\"\nmethod = \"heuristic\"\nlog10_step_sizes = []\n").is_ok());
        assert!(parse("model = \"logistic\"\nmethod = \"grid\"\ndata_file = \"/nonexistent.csv\"\n").is_err());
        assert!(parse("model = \"gaussian\"\nmethod = \"mamba\"\nbatch_fractions = [0.0]\n").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_types_are_named() {
        let err = parse("model = \"gaussian\"\nmethod = \"mamba\"\netaa = 3\n").unwrap_err().to_string();
        assert!(err.contains("etaa"), "{err}");
        let err = parse("model = \"gaussian\"\nmethod = \"mamba\"\neta = \"three\"\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("eta"), "{err}");
        assert!(matches!(parse("method = \"mamba\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn derived_settings() {
        let c = parse(
            "model = \"logistic\"\nmethod = \"mamba\"\nsampler = \"sghmc\"\nleapfrogs = [5, 10]\nnum_data = 50\ndim = 3\nbudget = 90\nbandwidth = 0.5\n",
        )
        .unwrap();
        let setup = c.mamba_setup();
        assert_eq!(setup.leapfrogs, vec![5, 10]);
        assert_eq!(setup.budget, crate::samplers::Budget::Iterations(90));
        assert_eq!(c.stein_settings().fssd.bandwidth, BandwidthRule::Fixed(0.5));
        let m = c.build_model().unwrap();
        assert_eq!((m.dim(), m.num_data()), (3, 50));
        assert!(m.exact_posterior_moments().is_none());
    }

    #[test]
    fn laplace_kernel_scale() {
        let mut c = parse("model = \"gaussian\"\nmethod = \"mamba\"\nimq_c_laplace = true\nnum_data = 50\n").unwrap();
        let m = c.build_model().unwrap();
        let mean = m.exact_posterior_moments().unwrap().mean;
        c.adapt_kernel_scale(&m, &mean).unwrap();
        let AnyModel::Gaussian(g) = &m else { unreachable!() };
        approx::assert_relative_eq!(c.imq_c, g.posterior_variance().sqrt(), max_relative = 1e-6);
    }
}
