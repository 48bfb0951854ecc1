use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wpsgd::config::{DataSource, ExperimentConfig};
use wpsgd::error::Result;
use wpsgd::harness;
use wpsgd::objective::LossParams;

#[derive(Parser)]
#[command(name = "wpsgd", version, about = "Weighted parallel SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides train.seed and gen.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; changes speed only.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            if let Some(DataSource::Generated(spec)) = &mut cfg.data {
                spec.seed = seed;
            }
        }
        if let Some(t) = self.threads {
            cfg.threads = t.max(1);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test files described by gen.*.
    Generate(Common),
    /// Run the configured algorithm; write metrics and the final model.
    Train(Common),
    /// Evaluate the convergence conditions and bounds for a config.
    Check {
        #[command(flatten)]
        common: Common,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Fit a contracting rate to an objective curve in a metrics CSV.
    FitRate {
        #[arg(long)]
        metrics: PathBuf,
        /// Objective floor subtracted before the log-linear fit.
        #[arg(long, default_value_t = 0.0)]
        floor: f64,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long, default_value = "objective_train", value_parser = ["objective_train", "objective_test"])]
        column: String,
    },
    /// Objective and error rate of a saved model on a data file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// Config to take lambda from when --lambda is absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e| wpsgd::error::Error::io("<stdout>", e);
    match cli.command {
        Command::Generate(common) => {
            let (mut spec, a, b) = ExperimentConfig::generator_from_file(&common.config)?;
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            harness::cmd_generate(&spec, &a, &b)?;
            writeln!(out, "{}\n{}", a.display(), b.display()).map_err(io)?;
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            let outcome = harness::cmd_train(&cfg)?;
            for w in &outcome.output.warnings {
                eprintln!("warning: {w}");
            }
            if outcome.output.rejected_updates > 0 {
                eprintln!("rejected updates: {}", outcome.output.rejected_updates);
            }
            if cfg.metrics.is_none() {
                harness::write_metrics(&outcome.rows, &mut out)?;
            }
        }
        Command::Check { common, json } => {
            let report = harness::cmd_check(&common.load()?)?;
            if json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                writeln!(out, "{text}").map_err(io)?;
            } else {
                write!(out, "{}", report.to_text()).map_err(io)?;
            }
        }
        Command::FitRate {
            metrics,
            floor,
            algorithm,
            column,
        } => {
            let fit = harness::cmd_fit_rate(&metrics, floor, algorithm.as_deref(), &column)?;
            writeln!(out, "rate = {}\nrms_residual = {}", fit.rate, fit.rms_residual).map_err(io)?;
        }
        Command::Evaluate {
            model,
            data,
            lambda,
            config,
        } => {
            let loss = match (lambda, config) {
                // Step size does not enter the objective.
                (Some(l), _) => LossParams::new(l, 0.5 / l.max(f64::MIN_POSITIVE))?,
                (None, Some(c)) => ExperimentConfig::from_file(c)?.train.loss,
                (None, None) => {
                    return Err(wpsgd::error::Error::Config(vec![
                        "evaluate needs --lambda or --config".into(),
                    ]))
                }
            };
            let e = harness::cmd_evaluate(&model, &data, &loss)?;
            writeln!(out, "objective = {}\nerror_rate = {}", e.objective, e.error_rate).map_err(io)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
