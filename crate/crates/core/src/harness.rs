//! Experiment plumbing behind the CLI: loading data, running the selected
//! algorithm, metrics and model files, and the condition report.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{
    run_direct_average_unbalanced, run_periodic_averaging, run_simuparallel, run_wpsgd, ClusterSpec,
};
use crate::config::{Algorithm, DataSource, ExperimentConfig};
use crate::data::{align_dims, GenSpec, generate_analog, read_sparse_text, write_sparse_text};
use crate::delay::{run_delay_wpsgd, step_size_terms, DelayConfig};
use crate::error::{Error, Result};
use crate::objective::{error_rate, objective_value, LossParams};
use crate::sparse::{Dataset, DenseModel};
use crate::theory::{
    corollary2, corollary_terms, deduction_bounds, fit_contracting_rate, theorem4_bound, theorem5_bound, RateFit,
    TheoryParams,
};
use crate::trainer::{train, Checkpoint};

pub const METRICS_HEADER: &str =
    "algorithm,fastest_iteration,objective_train,objective_test,error_rate_test,wall_seconds,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: String,
    pub fastest_iteration: u64,
    pub objective_train: f64,
    pub objective_test: f64,
    pub error_rate_test: f64,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Training and test sets named by the config, sharing one dimension.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        Some(DataSource::Files { train, test, dim }) => {
            let a = read_sparse_text(train, *dim)?;
            let b = read_sparse_text(test, *dim)?;
            align_dims(a, b)
        }
        Some(DataSource::Generated(spec)) => generate_analog(spec),
        None => Err(Error::Config(vec![
            "no data configured; set data.train/data.test or gen.*".into(),
        ])),
    }
}

pub fn cluster_spec(cfg: &ExperimentConfig) -> Result<ClusterSpec> {
    let delays = cfg.cluster.profile(cfg.train.total_iterations)?;
    Ok(ClusterSpec::new(delays, cfg.cluster.partition_seed)
        .with_shares(cfg.cluster.shares.clone())
        .with_threads(cfg.threads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub final_model: DenseModel,
    pub checkpoints: Vec<Checkpoint>,
    pub warnings: Vec<String>,
    pub rejected_updates: usize,
    pub wall_seconds: f64,
}

/// Runs the configured algorithm on `train`.
pub fn run_algorithm(cfg: &ExperimentConfig, train_set: &Dataset) -> Result<RunOutput> {
    let started = Instant::now();
    let rate = cfg.rate.resolve(&cfg.train.loss);
    let mut rejected_updates = 0;
    let (final_model, checkpoints, warnings) = match cfg.algorithm {
        Algorithm::Sequential => {
            let (m, cps) = train(train_set, &cfg.train)?;
            (m, cps, Vec::new())
        }
        algo => {
            let spec = cluster_spec(cfg)?;
            let run = match algo {
                Algorithm::SimuParallel => run_simuparallel(train_set, &spec, &cfg.train)?,
                Algorithm::Wpsgd => run_wpsgd(train_set, &spec, &cfg.train, rate)?,
                Algorithm::DirectAvg => run_direct_average_unbalanced(train_set, &spec, &cfg.train)?,
                Algorithm::PeriodicAvg => {
                    let span = cfg.span.ok_or_else(|| Error::Config(vec!["periodic.span is required".into()]))?;
                    run_periodic_averaging(train_set, &spec, &cfg.train, span, rate)?
                }
                Algorithm::DelayWpsgd => {
                    let dcfg = cfg
                        .delay
                        .clone()
                        .ok_or_else(|| Error::Config(vec!["delay.max_delay is required".into()]))?;
                    let out = run_delay_wpsgd(train_set, &spec, &cfg.train, &dcfg, rate)?;
                    rejected_updates = out.rejections.len();
                    out.run
                }
                Algorithm::Sequential => unreachable!(),
            };
            (run.final_model, run.checkpoints, run.warnings)
        }
    };
    Ok(RunOutput {
        final_model,
        checkpoints,
        warnings,
        rejected_updates,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One row for the initial model, one per checkpoint and one for the final
/// model when it does not fall on a checkpoint. Wall time per row is the
/// run's total wall time prorated by fastest-node iterations.
pub fn metrics_rows(
    cfg: &ExperimentConfig,
    out: &RunOutput,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<MetricsRow>> {
    let t = cfg.train.total_iterations;
    let initial = cfg.train.initial_model(train_set.dim());
    let mut models: Vec<(u64, &DenseModel)> = vec![(0, &initial)];
    models.extend(out.checkpoints.iter().map(|c| (c.iteration, &c.model)));
    if models.last().map(|m| m.0) != Some(t) {
        models.push((t, &out.final_model));
    }
    let loss = &cfg.train.loss;
    models
        .into_iter()
        .map(|(it, m)| {
            Ok(MetricsRow {
                algorithm: cfg.algorithm.name().to_string(),
                fastest_iteration: it,
                objective_train: objective_value(m, train_set, loss)?,
                objective_test: objective_value(m, test_set, loss)?,
                error_rate_test: error_rate(m, test_set)?,
                wall_seconds: if t == 0 { 0.0 } else { out.wall_seconds * it as f64 / t as f64 },
                seed: cfg.train.seed,
            })
        })
        .collect()
}

pub fn write_metrics(rows: &[MetricsRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

pub fn write_metrics_file(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(rows, BufWriter::new(file))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header; expected {METRICS_HEADER}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Dense model as `#` header lines followed by 1-based `idx:val` pairs for
/// the nonzero weights.
pub fn write_model(model: &DenseModel, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "# wpsgd model")?;
    writeln!(out, "# dim = {}", model.dim())?;
    writeln!(out, "# iterations = {}", model.iterations)?;
    let mut first = true;
    for (i, w) in model.weights.iter().enumerate().filter(|(_, w)| **w != 0.0) {
        if !first {
            write!(out, " ")?;
        }
        write!(out, "{}:{}", i + 1, w)?;
        first = false;
    }
    writeln!(out)
}

pub fn write_model_file(model: &DenseModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_model(model, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<DenseModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim = None;
    let mut iterations = 0;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(comment) = line.trim().strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                match k.trim() {
                    "dim" => dim = Some(v.trim().parse().map_err(|_| fail(n + 1, "bad dim".into()))?),
                    "iterations" => {
                        iterations = v.trim().parse().map_err(|_| fail(n + 1, "bad iteration count".into()))?
                    }
                    _ => {}
                }
            }
            continue;
        }
        for tok in line.split_ascii_whitespace() {
            let parsed = tok
                .split_once(':')
                .and_then(|(i, v)| Some((i.parse::<usize>().ok()?, v.parse::<f64>().ok()?)));
            match parsed {
                Some((i, v)) if i >= 1 => pairs.push((i - 1, v)),
                _ => return Err(fail(n + 1, format!("bad entry {tok:?}"))),
            }
        }
    }
    let dim = dim.ok_or_else(|| fail(0, "missing `# dim = N` header".into()))?;
    let mut weights = vec![0.0; dim];
    for (i, v) in pairs {
        *weights
            .get_mut(i)
            .ok_or_else(|| fail(0, format!("index {} exceeds dim {dim}", i + 1)))? = v;
    }
    Ok(DenseModel { weights, iterations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub output: RunOutput,
}

/// Loads data, runs, writes the metrics CSV and model file when configured.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let (train_set, test_set) = load_data(cfg)?;
    let output = run_algorithm(cfg, &train_set)?;
    let rows = metrics_rows(cfg, &output, &train_set, &test_set)?;
    if let Some(path) = &cfg.metrics {
        write_metrics_file(&rows, path)?;
    }
    if let Some(path) = &cfg.model {
        write_model_file(&output.final_model, path)?;
    }
    Ok(TrainOutcome { rows, output })
}

/// Generates the analog dataset and writes both splits.
pub fn cmd_generate(spec: &GenSpec, train_out: &Path, test_out: &Path) -> Result<()> {
    let (train_set, test_set) = generate_analog(spec)?;
    write_sparse_text(&train_set, train_out)?;
    write_sparse_text(&test_set, test_out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSizeReport {
    pub lhs: f64,
    pub rhs: f64,
    pub beta_sq_max: f64,
    pub max_delay: usize,
    pub c_star: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeductionReport {
    pub span: u64,
    pub balanced_bound: f64,
    pub weighted_bound: f64,
    pub validity_factor: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub k: usize,
    pub delays: Vec<u64>,
    pub iterations: u64,
    pub lambda: f64,
    pub eta: f64,
    pub rate: f64,
    pub grad_lip: f64,
    pub corollary3: Condition,
    pub corollary4: Condition,
    pub corollary2: Option<Condition>,
    /// Why corollary 2 was not evaluated, when it was not.
    pub corollary2_note: Option<String>,
    pub theorem4_bound: f64,
    pub theorem5_bound: f64,
    pub deduction: Option<DeductionReport>,
    pub step_size: StepSizeReport,
    pub delay_wpsgd_eligible: bool,
}

fn condition((lhs, rhs): (f64, f64)) -> Condition {
    Condition {
        lhs,
        rhs,
        holds: lhs > rhs,
    }
}

/// Evaluates every predicate and bound for the configured parameters.
pub fn cmd_check(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let loss: LossParams = cfg.train.loss;
    let t = cfg.train.total_iterations;
    let delays = cfg.cluster.profile(t)?;
    let rate = cfg.rate.resolve(&loss);
    let dcfg = cfg.delay.clone().unwrap_or_else(|| DelayConfig::new(1));
    let beta_sq_max = match (cfg.theory.beta_sq_max, &cfg.data) {
        (Some(b), _) => b,
        (None, Some(_)) => load_data(cfg)?.0.max_norm_sq(),
        (None, None) => 1.0,
    };
    let grad_lip = cfg
        .theory
        .grad_lip
        .unwrap_or(loss.lambda + beta_sq_max * dcfg.c_star);

    let mut tp = TheoryParams::new(loss, delays.clone(), t);
    tp.g = cfg.theory.g;
    tp.rate = rate;
    tp.span = cfg.span;
    tp.grad_lip = grad_lip;
    tp.residual = cfg.theory.residual;
    tp.wasserstein_1 = cfg.theory.wasserstein_1;
    tp.wasserstein_2 = cfg.theory.wasserstein_2;
    tp.sigma_star = cfg.theory.sigma_star;

    let (corollary2, corollary2_note) = if tp.wasserstein_1.is_none() || tp.wasserstein_2.is_none() || tp.sigma_star.is_none() {
        (None, Some("not evaluated: theory.wasserstein_1, theory.wasserstein_2 and theory.sigma_star are required".to_string()))
    } else {
        match corollary2(&tp) {
            Ok(c) => (
                Some(Condition {
                    lhs: c.lhs,
                    rhs: c.rhs,
                    holds: c.holds,
                }),
                None,
            ),
            Err(Error::ZeroDenominator(what)) => (None, Some(format!("not evaluated: zero denominator in {what}"))),
            Err(e) => return Err(e),
        }
    };
    let deduction = match cfg.span {
        Some(span) => {
            let d = deduction_bounds(&tp)?;
            Some(DeductionReport {
                span,
                balanced_bound: d.balanced,
                weighted_bound: d.weighted,
                validity_factor: d.validity_factor,
                valid: d.valid,
            })
        }
        None => None,
    };
    let (lhs, rhs) = step_size_terms(&loss, beta_sq_max, &dcfg);
    let step_size = StepSizeReport {
        lhs,
        rhs,
        beta_sq_max,
        max_delay: dcfg.max_delay,
        c_star: dcfg.c_star,
        holds: lhs <= rhs,
    };
    Ok(CheckReport {
        k: delays.k(),
        delays: delays.delays().to_vec(),
        iterations: t,
        lambda: loss.lambda,
        eta: loss.eta,
        rate,
        grad_lip,
        corollary3: condition(corollary_terms(&delays, loss.contraction())),
        corollary4: condition(corollary_terms(&delays, rate)),
        corollary2,
        corollary2_note,
        theorem4_bound: theorem4_bound(&tp)?,
        theorem5_bound: theorem5_bound(&tp)?,
        deduction,
        delay_wpsgd_eligible: step_size.holds,
        step_size,
    })
}

impl CheckReport {
    pub fn to_text(&self) -> String {
        let cond = |name: &str, lhs: &str, rhs: &str, c: &Condition| {
            format!("{name}: {lhs} = {} > {rhs} = {} -> {}\n", c.lhs, c.rhs, c.holds)
        };
        let mut s = format!(
            "k = {}, delays = {:?}, t = {}, lambda = {}, eta = {}, r = {}\n",
            self.k, self.delays, self.iterations, self.lambda, self.eta, self.rate
        );
        s += &cond("corollary 3", "2*sum (1-eta*lambda)^T", "sqrt(k)+k", &self.corollary3);
        s += &cond("corollary 4", "2*sum r^T", "sqrt(k)+k", &self.corollary4);
        match (&self.corollary2, &self.corollary2_note) {
            (Some(c), _) => s += &cond("corollary 2", "lhs", "rhs", c),
            (None, Some(note)) => s += &format!("corollary 2: {note}\n"),
            _ => {}
        }
        s += &format!("theorem 4 bound: {}\n", self.theorem4_bound);
        s += &format!("theorem 5 bound (r = {}): {}\n", self.rate, self.theorem5_bound);
        if let Some(d) = &self.deduction {
            s += &format!(
                "periodic averaging (span {}): balanced bound = {}, weighted bound = {}, validity factor = {} -> {}\n",
                d.span,
                d.balanced_bound,
                d.weighted_bound,
                d.validity_factor,
                if d.valid { "valid" } else { "invalid" }
            );
        }
        let st = &self.step_size;
        s += &format!(
            "delay step size (M = {}, c* = {}, beta^2_max = {}): {} <= {} -> {}\n",
            st.max_delay, st.c_star, st.beta_sq_max, st.lhs, st.rhs, st.holds
        );
        s += &format!(
            "delay-wpsgd: {}\n",
            if self.delay_wpsgd_eligible { "eligible" } else { "ineligible (step size too large)" }
        );
        s
    }
}

/// Fits the contracting rate to one algorithm's curve in a metrics file.
/// `column` is `objective_train` or `objective_test`.
pub fn cmd_fit_rate(path: &Path, floor: f64, algorithm: Option<&str>, column: &str) -> Result<RateFit> {
    let rows = read_metrics(path)?;
    let mut names: Vec<&str> = rows.iter().map(|r| r.algorithm.as_str()).collect();
    names.dedup();
    let pick = match algorithm {
        Some(a) => a.to_string(),
        None if names.len() == 1 => names[0].to_string(),
        None => {
            return Err(Error::InvalidParameter(format!(
                "metrics file holds several algorithms ({}); choose one",
                names.join(", ")
            )))
        }
    };
    let curve: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.algorithm == pick)
        .map(|r| {
            let v = match column {
                "objective_test" => r.objective_test,
                _ => r.objective_train,
            };
            (r.fastest_iteration as f64, v)
        })
        .collect();
    if curve.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 3 checkpoints, found {}",
            curve.len()
        )));
    }
    fit_contracting_rate(&curve, floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub objective: f64,
    pub error_rate: f64,
}

/// Objective and error rate of a saved model on a dataset.
pub fn cmd_evaluate(model_path: &Path, data_path: &Path, loss: &LossParams) -> Result<Evaluation> {
    let model = read_model(model_path)?;
    let d = read_sparse_text(data_path, Some(model.dim()))?;
    Ok(Evaluation {
        objective: objective_value(&model, &d, loss)?,
        error_rate: error_rate(&model, &d)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_round_trip() {
        let mut m = DenseModel::from_weights(vec![0.0, 1.5, -2.25e-7, 0.0]);
        m.iterations = 42;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_model_file(&m, &p).unwrap();
        assert_eq!(read_model(&p).unwrap(), m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.ends_with("2:1.5 3:-0.000000225\n"));
    }

    #[test]
    fn metrics_header_is_stable() {
        let row = MetricsRow {
            algorithm: "wpsgd".into(),
            fastest_iteration: 3,
            objective_train: 1.0,
            objective_test: 2.0,
            error_rate_test: 0.5,
            wall_seconds: 0.25,
            seed: 7,
        };
        let mut buf = Vec::new();
        write_metrics(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "wpsgd,3,1.0,2.0,0.5,0.25,7");

        let mut empty = Vec::new();
        write_metrics(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), METRICS_HEADER);
    }
}
