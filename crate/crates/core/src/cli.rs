//! Command-line front end. `main` only parses arguments and maps errors to
//! exit codes; everything else lives here so it can be tested in-process.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::bandit::{
    discrepancy_objective, grid_search_tune, heuristic_tune, mamba_schedule, tune_mamba, ScheduleRound,
};
use crate::config::{parse_config, AnyModel, Method, RunConfig};
use crate::error::{invalid, Error, Result};
use crate::eval::{compare_tuners, format_table, relative_std_error, reward_curve, CurveSpec, ReferenceMoments};
use crate::io::{
    grid_round_rows, load_chain, load_reference, mamba_round_rows, read_json, save_chain, write_curve, write_json,
    write_rounds, write_table, SelectionReport,
};
use crate::model::{find_map, AdamConfig, MapResult, TargetModel, DEFAULT_MAP_MAX_ITERS, DEFAULT_MAP_TOL};
use crate::samplers::{run_chain, Budget, BudgetMode, Chain, SamplerConfig};
use crate::stein::{chain_discrepancy, Metric};
use crate::BudgetScalar;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALL_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mamba", version, about = "Tune SG-MCMC samplers by successive halving on Stein discrepancies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured tuner; writes rounds.csv and selection.json.
    Tune(RunArgs),
    /// Score a chain (or the chain of a selected configuration); writes metrics.json.
    Evaluate(EvaluateArgs),
    /// Print the per-round arm counts and budgets without sampling.
    Schedule(ScheduleArgs),
    /// Reward against budget over repeated chains; writes curve.csv.
    Curve(CurveArgs),
}

/// Flags shared by every config-driven command; they override the file.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_name = "seconds|iterations")]
    pub budget_mode: Option<BudgetMode>,
}

#[derive(Debug, Clone, Args)]
#[group(id = "input", required = true, multiple = false, args = ["chain", "selection"])]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Chain file written by a previous run.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// selection.json; its configuration is run for `final_budget` from the MAP.
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    /// Number of arms.
    pub arms: usize,
    /// Pruning rate.
    pub eta: usize,
    /// Total budget; whole numbers are split exactly.
    pub total: String,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Study the configuration in this selection.json instead of `log10_h`.
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

/// Metrics written by `evaluate`. Absent values are omitted, never zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub ksd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fssd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_std: Option<f64>,
    pub n_samples: usize,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::AllDiverged => EXIT_ALL_DIVERGED,
        _ => EXIT_OTHER,
    }
}

/// Executes a parsed command; human-readable output goes to `stdout`.
pub fn run<W: Write>(cli: Cli, stdout: &mut W) -> Result<()> {
    match cli.command {
        Command::Tune(args) => cmd_tune(&load(&args)?, stdout),
        Command::Evaluate(args) => {
            let cfg = load(&args.run)?;
            let metrics = match (&args.chain, &args.selection) {
                (Some(chain), _) => cmd_evaluate_chain(&cfg, chain)?,
                (None, Some(sel)) => cmd_evaluate_selection(&cfg, sel)?,
                (None, None) => return Err(invalid("evaluate needs --chain or --selection")),
            };
            writeln!(stdout, "{}", serde_json::to_string_pretty(&metrics)?)?;
            Ok(())
        }
        Command::Schedule(args) => cmd_schedule(args.arms, args.eta, &args.total, stdout),
        Command::Curve(args) => cmd_curve(&load(&args.run)?, args.selection.as_deref(), stdout),
    }
}

/// Reads the config and applies command-line overrides.
pub fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(m) = args.budget_mode {
        cfg.budget_mode = m;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg)
}

/// The analytic posterior mean when known, otherwise an Adam search from 0.
pub fn locate_map(model: &AnyModel) -> Result<MapResult<f64>> {
    if let Some(m) = model.exact_posterior_moments() {
        return Ok(MapResult::at(model, m.mean, DEFAULT_MAP_TOL));
    }
    let map = find_map(model, &vec![0.0; model.dim()], AdamConfig::default(), DEFAULT_MAP_MAX_ITERS, DEFAULT_MAP_TOL)?;
    if !map.converged {
        log::warn!("MAP search stopped with gradient norm {:.3e}", map.grad_norm);
    }
    Ok(map)
}

/// Model, MAP and a config with its kernel scale resolved.
pub fn prepare(cfg: &RunConfig) -> Result<(RunConfig, AnyModel, MapResult<f64>)> {
    let model = cfg.build_model()?;
    let map = locate_map(&model)?;
    let mut cfg = cfg.clone();
    cfg.adapt_kernel_scale(&model, &map.theta_map)?;
    Ok((cfg, model, map))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn cmd_tune<W: Write>(cfg: &RunConfig, stdout: &mut W) -> Result<()> {
    let (cfg, model, map) = prepare(cfg)?;
    let cfg = &cfg;
    let template = cfg.template(cfg.sampler);
    let cv = template.use_cv.then_some(&map);
    let (rows, report) = match cfg.method {
        Method::Mamba => {
            let setup = cfg.mamba_setup();
            let sel = tune_mamba(&model, &template, &setup, &map.theta_map, cv)?;
            for rec in &sel.outcome.history {
                log::info!("round {}: survivors {:?}", rec.round, rec.survivors);
            }
            let report = SelectionReport {
                method: "mamba".into(),
                metric: Some(cfg.metric),
                config: sel.best.clone(),
                best_arm: Some(sel.outcome.best),
                budget: setup.budget,
                reproducible: cfg.budget_mode == BudgetMode::Iterations,
                diagnostics: sel.diagnostics.clone(),
            };
            (mamba_round_rows(&sel), report)
        }
        Method::Grid => {
            let search = cfg.grid_search(cfg.sampler);
            let objective = discrepancy_objective(&model, cfg.metric, cfg.stein_settings());
            let outcome = grid_search_tune(&model, &search, &map, objective)?;
            let best_arm = outcome.points.iter().position(|p| p.config == outcome.best);
            let report = SelectionReport {
                method: "grid".into(),
                metric: Some(cfg.metric),
                config: outcome.best.clone(),
                best_arm,
                budget: Budget::Iterations(search.iterations),
                reproducible: true,
                diagnostics: None,
            };
            (grid_round_rows(&outcome, search.iterations), report)
        }
        Method::Heuristic => {
            let h = heuristic_tune(model.num_data())?;
            let config = SamplerConfig { step_size: h.step_size, batch_fraction: h.batch_fraction, ..template };
            let report = SelectionReport {
                method: "heuristic".into(),
                metric: None,
                config,
                best_arm: None,
                budget: Budget::Iterations(0),
                reproducible: true,
                diagnostics: None,
            };
            (Vec::new(), report)
        }
        Method::Compare => return cmd_compare(cfg, &model, &map, stdout),
    };
    write_rounds(&rows, create(&cfg.output_dir.join("rounds.csv"))?)?;
    write_json(&report, &cfg.output_dir.join("selection.json"))?;
    writeln!(
        stdout,
        "selected {} (h = {:e}, batch fraction {})",
        report.config.label(),
        report.config.step_size,
        report.config.batch_fraction
    )?;
    Ok(())
}

fn cmd_compare<W: Write>(cfg: &RunConfig, model: &AnyModel, map: &MapResult<f64>, stdout: &mut W) -> Result<()> {
    let templates: Vec<SamplerConfig> = cfg.compare_samplers.iter().map(|&k| cfg.template(k)).collect();
    let reference = reference_for(cfg, model)?;
    let cells =
        compare_tuners(model, map, &cfg.compare_tuners, &templates, &cfg.comparison_setup(), reference.as_ref());
    write_table(&cells, create(&cfg.output_dir.join("table.csv"))?)?;
    write!(stdout, "{}", format_table(&cells))?;
    if !cells.is_empty() && cells.iter().all(|c| c.ksd.is_none()) {
        return Err(Error::AllDiverged);
    }
    Ok(())
}

fn reference_for(cfg: &RunConfig, model: &AnyModel) -> Result<Option<ReferenceMoments>> {
    let reference = match &cfg.reference_file {
        Some(p) => Some(load_reference(p)?),
        None => ReferenceMoments::from_model(model),
    };
    if let Some(r) = &reference {
        if r.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), found: r.dim() });
        }
    }
    Ok(reference)
}

/// Scores a chain against the configured model.
pub fn evaluate_chain(cfg: &RunConfig, model: &AnyModel, chain: &Chain<f64>) -> Result<Metrics> {
    if chain.dim != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: chain.dim });
    }
    let settings = cfg.stein_settings();
    let ksd = chain_discrepancy(chain, model, Metric::Ksd, &settings)?;
    let fssd = match cfg.metric {
        Metric::Fssd => Some(chain_discrepancy(chain, model, Metric::Fssd, &settings)?),
        Metric::Ksd => None,
    };
    let xi_std = match reference_for(cfg, model)? {
        Some(r) => Some(relative_std_error(chain, &r, cfg.burn_in)?),
        None => None,
    };
    Ok(Metrics { ksd, fssd, xi_std, n_samples: chain.len() })
}

pub fn cmd_evaluate_chain(cfg: &RunConfig, path: &Path) -> Result<Metrics> {
    let (cfg, model, _) = prepare(cfg)?;
    let chain = load_chain(path)?;
    let metrics = evaluate_chain(&cfg, &model, &chain)?;
    write_json(&metrics, &cfg.output_dir.join("metrics.json"))?;
    Ok(metrics)
}

/// Runs the selected configuration from the MAP, saves chain.csv and scores it.
pub fn cmd_evaluate_selection(cfg: &RunConfig, path: &Path) -> Result<Metrics> {
    let (cfg, model, map) = prepare(cfg)?;
    let cfg = &cfg;
    let selection: SelectionReport = read_json(path)?;
    let config = &selection.config;
    let budget = cfg.budget_mode.budget(cfg.final_budget);
    let chain = run_chain(&model, config, &map.theta_map, budget, cfg.record_every, config.use_cv.then_some(&map))?;
    save_chain(&chain, &cfg.output_dir.join("chain.csv"))?;
    let metrics = evaluate_chain(cfg, &model, &chain)?;
    write_json(&metrics, &cfg.output_dir.join("metrics.json"))?;
    Ok(metrics)
}

fn print_schedule<S: BudgetScalar + std::fmt::Display, W: Write>(
    rounds: &[ScheduleRound<S>],
    stdout: &mut W,
) -> Result<()> {
    writeln!(stdout, "round,arms,per_arm")?;
    for r in rounds {
        writeln!(stdout, "{},{},{}", r.round, r.arms, r.per_arm)?;
    }
    Ok(())
}

/// Integer totals use exact rational arithmetic, so fractional grants print as `p/q`.
pub fn cmd_schedule<W: Write>(arms: usize, eta: usize, total: &str, stdout: &mut W) -> Result<()> {
    if let Ok(t) = total.parse::<u64>() {
        return print_schedule(&mamba_schedule(arms, eta, Ratio::from_integer(t))?, stdout);
    }
    let t: f64 = total.parse().map_err(|_| invalid(format!("total budget '{total}' is not a number")))?;
    print_schedule(&mamba_schedule(arms, eta, t)?, stdout)
}

pub fn cmd_curve<W: Write>(cfg: &RunConfig, selection: Option<&Path>, stdout: &mut W) -> Result<()> {
    let (cfg, model, map) = prepare(cfg)?;
    let cfg = &cfg;
    let config = match selection {
        Some(p) => read_json::<SelectionReport>(p)?.config,
        None => {
            let lh =
                cfg.log10_h.ok_or_else(|| Error::Config("curve needs log10_h in the config or --selection".into()))?;
            SamplerConfig { step_size: 10f64.powf(lh), batch_fraction: cfg.batch_fraction, ..cfg.template(cfg.sampler) }
        }
    };
    let spec = CurveSpec {
        checkpoints: cfg.curve_checkpoints.clone(),
        mode: cfg.budget_mode,
        metric: cfg.metric,
        settings: cfg.stein_settings(),
        repeats: cfg.curve_repeats,
        seed: cfg.seed,
        record_every: cfg.record_every,
    };
    let curve = reward_curve(&model, &config, &map.theta_map, config.use_cv.then_some(&map), &spec)?;
    write_curve(&curve, create(&cfg.output_dir.join("curve.csv"))?)?;
    for p in &curve.points {
        match p.mean {
            Some(m) => writeln!(stdout, "{}: {m:.6}", p.checkpoint)?,
            None => writeln!(stdout, "{}: all repeats diverged", p.checkpoint)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_output() {
        let mut out = Vec::new();
        cmd_schedule(27, 3, "81", &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "round,arms,per_arm\n0,27,1\n1,9,3\n2,3,9\n");
        let mut out = Vec::new();
        cmd_schedule(3, 3, "30", &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "round,arms,per_arm\n0,3,10\n");
        let mut out = Vec::new();
        cmd_schedule(10, 3, "100", &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "round,arms,per_arm\n0,10,5\n1,3,50/3\n");
        let err = cmd_schedule(2, 3, "10", &mut Vec::new()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::AllDiverged), EXIT_ALL_DIVERGED);
        assert_eq!(exit_code(&Error::Diverged), EXIT_OTHER);
    }

    #[test]
    fn metrics_omit_missing_fields() {
        let m = Metrics { ksd: 0.5, fssd: None, xi_std: None, n_samples: 3 };
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"ksd":0.5,"n_samples":3}"#);
    }
}
