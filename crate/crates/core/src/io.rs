//! On-disk artifacts: chains, datasets, round histories, comparison tables,
//! curves, and the final selection.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{BanditDiagnostics, GridOutcome, MambaSelection};
use crate::error::{invalid, Result};
use crate::eval::{ComparisonCell, ReferenceMoments, ReferenceSource, RewardCurve};
use crate::model::{build_logistic_model, LogisticRegression};
use crate::samplers::{Budget, Chain, ChainSample, SamplerConfig};
use crate::scalar::Real;
use crate::stein::Metric;

pub const ROUNDS_HEADER: [&str; 9] =
    ["round", "arm_id", "sampler", "log10_h", "batch_fraction", "leapfrog", "budget", "reward", "pruned"];
pub const TABLE_HEADER: [&str; 5] = ["tuner", "sampler", "ksd", "xi_std", "n_samples"];
pub const CURVE_HEADER: [&str; 4] = ["checkpoint", "mean", "lower", "upper"];

/// `iteration,wall_time_sec,theta_0..theta_{d-1},grad_0..grad_{d-1}`.
pub fn chain_header(dim: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "wall_time_sec".to_string()];
    h.extend((0..dim).map(|i| format!("theta_{i}")));
    h.extend((0..dim).map(|i| format!("grad_{i}")));
    h
}

/// Values are written with shortest round-trip formatting, so a reload is
/// bit-identical.
pub fn write_chain<F: Real, W: Write>(chain: &Chain<F>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(chain_header(chain.dim))?;
    for s in &chain.samples {
        let mut row = vec![s.iteration.to_string(), s.wall_time_sec.to_string()];
        row.extend(s.theta.iter().chain(&s.grad).map(|v| v.as_f64().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chain<F: Real, R: Read>(input: R) -> Result<Chain<F>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(invalid(format!("chain CSV has {cols} columns; expected 2 + 2d")));
    }
    let dim = (cols - 2) / 2;
    let expected = chain_header(dim);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(invalid(format!("chain CSV header must be {}", expected.join(","))));
    }
    let mut chain = Chain::new(dim);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| invalid(format!("row {}, column {}: {e}", line + 1, &header[i])))
        };
        let iteration = rec[0].parse::<u64>().map_err(|e| invalid(format!("row {}, iteration: {e}", line + 1)))?;
        let theta = (2..2 + dim).map(|i| num(i).map(F::lit)).collect::<Result<Vec<F>>>()?;
        let grad = (2 + dim..cols).map(|i| num(i).map(F::lit)).collect::<Result<Vec<F>>>()?;
        chain.samples.push(ChainSample { iteration, wall_time_sec: num(1)?, theta, grad });
    }
    chain.total_iterations = chain.samples.last().map_or(0, |s| s.iteration);
    Ok(chain)
}

pub fn save_chain<F: Real>(chain: &Chain<F>, path: &Path) -> Result<()> {
    write_chain(chain, BufWriter::new(File::create(path)?))
}

pub fn load_chain<F: Real>(path: &Path) -> Result<Chain<F>> {
    read_chain(File::open(path)?)
}

/// Logistic data as `y,x_0,...,x_{d-1}` rows.
pub fn read_logistic_csv<F: Real, R: Read>(input: R, prior_var: F) -> Result<LogisticRegression<F>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "y" || header.iter().skip(1).enumerate().any(|(i, h)| h != format!("x_{i}")) {
        return Err(invalid("logistic CSV header must be y,x_0,...,x_{d-1}"));
    }
    let dim = header.len() - 1;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|e| invalid(format!("row {}, column {}: {e}", line + 1, &header[i])))?;
            if i == 0 {
                y.push(F::lit(v));
            } else {
                x.push(F::lit(v));
            }
        }
    }
    build_logistic_model(dim, x, &y, prior_var)
}

pub fn write_logistic_csv<F: Real, W: Write>(model: &LogisticRegression<F>, out: W) -> Result<()> {
    use crate::model::TargetModel;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((0..model.dim()).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for i in 0..model.num_data() {
        let mut row = vec![model.label(i).as_f64().to_string()];
        row.extend(model.covariates(i).iter().map(|v| v.as_f64().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub arm_id: usize,
    pub sampler: String,
    pub log10_h: f64,
    pub batch_fraction: f64,
    pub leapfrog: usize,
    pub budget: f64,
    pub reward: f64,
    pub pruned: bool,
}

fn round_row(round: usize, arm_id: usize, c: &SamplerConfig, budget: f64, reward: f64, pruned: bool) -> RoundRow {
    RoundRow {
        round,
        arm_id,
        sampler: c.label(),
        log10_h: c.log10_step_size(),
        batch_fraction: c.batch_fraction,
        leapfrog: c.leapfrog,
        budget,
        reward,
        pruned,
    }
}

/// One row per arm per round.
pub fn mamba_round_rows(selection: &MambaSelection) -> Vec<RoundRow> {
    let mut rows = Vec::new();
    for rec in &selection.outcome.history {
        for a in &rec.arms {
            let pruned = rec.pruned.contains(&a.arm_id);
            rows.push(round_row(rec.round, a.arm_id, &selection.arms[a.arm_id], a.budget, a.reward, pruned));
        }
    }
    rows
}

/// Grid search as a single round: reward is the negated score and every
/// point but the winner counts as pruned.
pub fn grid_round_rows(outcome: &GridOutcome, iterations: u64) -> Vec<RoundRow> {
    outcome
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| round_row(0, i, &p.config, iterations as f64, -p.score, p.config != outcome.best))
        .collect()
}

pub fn write_rounds<W: Write>(rows: &[RoundRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(ROUNDS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rounds<R: Read>(input: R) -> Result<Vec<RoundRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(ROUNDS_HEADER) {
        return Err(invalid(format!("rounds CSV header must be {}", ROUNDS_HEADER.join(","))));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableRow<'a> {
    tuner: &'a str,
    sampler: &'a str,
    ksd: Option<f64>,
    xi_std: Option<f64>,
    n_samples: Option<usize>,
}

/// Missing metrics are written as empty fields.
pub fn write_table<W: Write>(cells: &[ComparisonCell], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for c in cells {
        w.serialize(TableRow {
            tuner: c.tuner.name(),
            sampler: &c.sampler,
            ksd: c.ksd,
            xi_std: c.xi_std,
            n_samples: c.n_samples,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve<W: Write>(curve: &RewardCurve, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for p in &curve.points {
        w.serialize((p.checkpoint, p.mean, p.lower, p.upper))?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: String,
    pub metric: Option<Metric>,
    pub config: SamplerConfig,
    pub best_arm: Option<usize>,
    pub budget: Budget,
    /// False for wall-clock budgets, whose results depend on the machine.
    pub reproducible: bool,
    pub diagnostics: Option<BanditDiagnostics>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsFile {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Reference moments from a JSON file `{"mean": [...], "std": [...]}`.
pub fn load_reference(path: &Path) -> Result<ReferenceMoments> {
    let m: MomentsFile = read_json(path)?;
    ReferenceMoments::new(m.mean, m.std, ReferenceSource::File)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{tune_mamba, MambaSetup};
    use crate::model::build_gaussian_conjugate_model;
    use crate::samplers::run_chain;
    use crate::stein::{ksd_reward, SteinSettings};

    #[test]
    fn chain_round_trip_is_bit_exact() {
        let m = build_gaussian_conjugate_model(50, 3, 1.0, 10.0, 2).unwrap();
        let chain = run_chain(
            &m,
            &SamplerConfig::sgld(1e-3, 0.2).with_seed(5),
            &m.posterior_mean(),
            Budget::Iterations(300),
            1,
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_chain(&chain, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iteration,wall_time_sec,theta_0,theta_1,theta_2,grad_0,grad_1,grad_2\n"));
        let back: Chain<f64> = read_chain(buf.as_slice()).unwrap();
        assert_eq!(back, chain);
        let s = SteinSettings::default();
        assert_eq!(ksd_reward(&back, &m, &s).unwrap().to_bits(), ksd_reward(&chain, &m, &s).unwrap().to_bits());
    }

    #[test]
    fn f32_chain_round_trip() {
        let m = build_gaussian_conjugate_model::<f32>(50, 2, 1.0, 10.0, 2).unwrap();
        let chain =
            run_chain(&m, &SamplerConfig::sgld(1e-3, 0.2), &m.posterior_mean(), Budget::Iterations(50), 1, None)
                .unwrap();
        let mut buf = Vec::new();
        write_chain(&chain, &mut buf).unwrap();
        assert_eq!(read_chain::<f32, _>(buf.as_slice()).unwrap(), chain);
    }

    #[test]
    fn bad_chain_headers_are_rejected() {
        assert!(read_chain::<f64, _>("iteration,wall_time_sec,theta_0\n1,0,0\n".as_bytes()).is_err());
        assert!(read_chain::<f64, _>("iteration,time,theta_0,grad_0\n1,0,0,0\n".as_bytes()).is_err());
        assert!(read_chain::<f64, _>("iteration,wall_time_sec,theta_0,grad_0\n1,0,abc,0\n".as_bytes()).is_err());
    }

    #[test]
    fn logistic_csv_round_trip() {
        let (model, _) = LogisticRegression::<f64>::synthetic(20, 3, 10.0, 1).unwrap();
        let mut buf = Vec::new();
        write_logistic_csv(&model, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("y,x_0,x_1,x_2\n"));
        let back = read_logistic_csv(buf.as_slice(), 10.0).unwrap();
        for i in 0..20 {
            assert_eq!(back.covariates(i), model.covariates(i));
            assert_eq!(back.label(i), model.label(i));
        }
        assert!(read_logistic_csv::<f64, _>("y,x_0\n2,0.5\n".as_bytes(), 10.0).is_err());
        assert!(read_logistic_csv::<f64, _>("label,x_0\n1,0.5\n".as_bytes(), 10.0).is_err());
    }

    #[test]
    fn rounds_csv_schema_and_round_trip() {
        let m = build_gaussian_conjugate_model(100, 2, 1.0, 10.0, 2).unwrap();
        let setup = MambaSetup::new(vec![-2.0, -3.0, -4.0], vec![0.1, 0.5, 1.0], Budget::Iterations(900));
        let sel = tune_mamba(&m, &SamplerConfig::sgld(1.0, 1.0), &setup, &m.posterior_mean(), None).unwrap();
        let rows = mamba_round_rows(&sel);
        assert_eq!(rows.len(), 9 + 3);
        let mut buf = Vec::new();
        write_rounds(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,arm_id,sampler,log10_h,batch_fraction,leapfrog,budget,reward,pruned\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,SGLD,-2.0,0.1,5,50.0,"));
        assert_eq!(read_rounds(buf.as_slice()).unwrap(), rows);
        assert_eq!(rows.iter().filter(|r| r.round == 1 && !r.pruned).count(), 1);
    }

    #[test]
    fn table_and_curve_headers() {
        use crate::eval::{CurvePoint, Tuner};
        let cell = ComparisonCell {
            tuner: Tuner::Heuristic,
            sampler: "SGLD".into(),
            config: None,
            ksd: Some(1.5),
            xi_std: None,
            n_samples: Some(10),
            error: None,
        };
        let mut buf = Vec::new();
        write_table(&[cell], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "tuner,sampler,ksd,xi_std,n_samples\nheuristic,SGLD,1.5,,10\n");
        let curve = RewardCurve {
            metric: Metric::Ksd,
            mode: crate::samplers::BudgetMode::Iterations,
            points: vec![
                CurvePoint { checkpoint: 100.0, mean: Some(2.0), lower: Some(1.0), upper: Some(3.0), repeats: 2 },
                CurvePoint { checkpoint: 200.0, mean: None, lower: None, upper: None, repeats: 0 },
            ],
        };
        let mut buf = Vec::new();
        write_curve(&curve, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "checkpoint,mean,lower,upper\n100.0,2.0,1.0,3.0\n200.0,,,\n");
    }
}
