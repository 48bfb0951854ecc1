//! Experiment configuration: flat `section.key = value` lines, `#` comments.
//!
//! Relative paths resolve against the directory of the config file. Every
//! problem found during validation is reported at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregation::DelayProfile;
use crate::data::GenSpec;
use crate::delay::{CheckRoot, DelayConfig};
use crate::error::{Error, Result};
use crate::objective::LossParams;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sequential,
    SimuParallel,
    Wpsgd,
    DirectAvg,
    PeriodicAvg,
    DelayWpsgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Sequential,
        Algorithm::SimuParallel,
        Algorithm::Wpsgd,
        Algorithm::DirectAvg,
        Algorithm::PeriodicAvg,
        Algorithm::DelayWpsgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sequential => "sequential",
            Algorithm::SimuParallel => "simuparallel",
            Algorithm::Wpsgd => "wpsgd",
            Algorithm::DirectAvg => "direct-avg",
            Algorithm::PeriodicAvg => "periodic-avg",
            Algorithm::DelayWpsgd => "delay-wpsgd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                format!("unknown algorithm {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// How the combination rate `r` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateChoice {
    /// `1 − ηλ`.
    Auto,
    Fixed(f64),
}

impl RateChoice {
    pub fn resolve(self, loss: &LossParams) -> f64 {
        match self {
            RateChoice::Auto => loss.contraction(),
            RateChoice::Fixed(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Files {
        train: PathBuf,
        test: PathBuf,
        dim: Option<usize>,
    },
    Generated(GenSpec),
}

/// How per-node delays are given.
#[derive(Debug, Clone, PartialEq)]
pub enum DelaySpec {
    Iterations(Vec<u64>),
    /// Relative speeds; delays follow from the iteration budget.
    Speeds(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSection {
    pub k: usize,
    pub delays: DelaySpec,
    pub shares: Vec<f64>,
    pub partition_seed: u64,
}

impl ClusterSection {
    pub fn profile(&self, t: u64) -> Result<DelayProfile> {
        match &self.delays {
            DelaySpec::Iterations(d) => DelayProfile::new(d.clone()),
            DelaySpec::Speeds(f) => DelayProfile::from_speed_factors(t, f),
        }
    }
}

/// Inputs to the bound calculators that cannot be measured from data.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInputs {
    pub g: f64,
    pub grad_lip: Option<f64>,
    pub residual: f64,
    pub beta_sq_max: Option<f64>,
    pub wasserstein_1: Option<f64>,
    pub wasserstein_2: Option<f64>,
    pub sigma_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub data: Option<DataSource>,
    /// Output files for `generate`.
    pub gen_out: Option<(PathBuf, PathBuf)>,
    pub cluster: ClusterSection,
    pub train: TrainConfig,
    pub rate: RateChoice,
    pub span: Option<u64>,
    pub delay: Option<DelayConfig>,
    pub metrics: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub theory: TheoryInputs,
    pub threads: usize,
}

const KEYS: &[&str] = &[
    "algorithm",
    "data.train",
    "data.test",
    "data.dim",
    "gen.n_train",
    "gen.n_test",
    "gen.dim",
    "gen.nnz_min",
    "gen.nnz_max",
    "gen.seed",
    "gen.normalize",
    "gen.train_out",
    "gen.test_out",
    "cluster.k",
    "cluster.delays",
    "cluster.speeds",
    "cluster.shares",
    "cluster.partition_seed",
    "cluster.threads",
    "train.lambda",
    "train.eta",
    "train.iterations",
    "train.seed",
    "train.init",
    "train.checkpoint_every",
    "wpsgd.rate",
    "periodic.span",
    "delay.max_delay",
    "delay.c_star",
    "delay.history_len",
    "delay.check_root",
    "output.metrics",
    "output.model",
    "theory.g",
    "theory.grad_lip",
    "theory.residual",
    "theory.beta_sq_max",
    "theory.wasserstein_1",
    "theory.wasserstein_2",
    "theory.sigma_star",
];

struct Fields {
    values: BTreeMap<String, (usize, String)>,
    errors: Vec<String>,
    base: PathBuf,
}

impl Fields {
    fn parse(text: &str, base: &Path) -> Self {
        let mut values = BTreeMap::new();
        let mut errors = Vec::new();
        let known: BTreeSet<&str> = KEYS.iter().copied().collect();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`, found {line:?}", n + 1));
                continue;
            };
            let key = key.trim();
            if !known.contains(key) {
                errors.push(format!("line {}: unknown key {key:?}", n + 1));
                continue;
            }
            if values.insert(key.to_string(), (n + 1, value.trim().to_string())).is_some() {
                errors.push(format!("line {}: duplicate key {key:?}", n + 1));
            }
        }
        Self {
            values,
            errors,
            base: base.to_path_buf(),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let (line, raw) = self.values.get(key)?.clone();
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("line {line}: {key} = {raw:?}: {e}"));
                None
            }
        }
    }

    fn require<T: FromStr>(&mut self, key: &str, why: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        if !self.has(key) {
            self.errors.push(format!("missing {key} ({why})"));
            return None;
        }
        self.get(key)
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Option<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let (line, raw) = self.values.get(key)?.clone();
        let mut out = Vec::new();
        for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse() {
                Ok(v) => out.push(v),
                Err(e) => {
                    self.errors.push(format!("line {line}: {key}: bad entry {item:?}: {e}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let (_, raw) = self.values.get(key)?;
        let p = PathBuf::from(raw);
        Some(if p.is_absolute() { p } else { self.base.join(p) })
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Reads only the generator settings and output paths, so a
    /// generate-only config needs no training section.
    pub fn generator_from_file(path: impl AsRef<Path>) -> Result<(GenSpec, PathBuf, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_generator(&text, &base)
    }

    pub fn parse_generator(text: &str, base: &Path) -> Result<(GenSpec, PathBuf, PathBuf)> {
        let mut f = Fields::parse(text, base);
        let data = Self::data_source(&mut f);
        let train_out = f.require::<String>("gen.train_out", "output path for generate");
        let test_out = f.require::<String>("gen.test_out", "output path for generate");
        let spec = match data {
            Some(DataSource::Generated(spec)) => Some(spec),
            Some(DataSource::Files { .. }) => {
                f.errors.push("generate needs gen.* settings, not data.* files".into());
                None
            }
            None => {
                if f.errors.is_empty() {
                    f.errors.push("generate needs gen.* settings".into());
                }
                None
            }
        };
        if !f.errors.is_empty() {
            return Err(Error::Config(f.errors));
        }
        match (spec, train_out, test_out) {
            (Some(spec), Some(_), Some(_)) => {
                let a = f.path("gen.train_out").expect("checked above");
                let b = f.path("gen.test_out").expect("checked above");
                Ok((spec, a, b))
            }
            _ => Err(Error::Config(vec!["incomplete generator configuration".into()])),
        }
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut f = Fields::parse(text, base);
        let algorithm = if f.has("algorithm") {
            f.get::<Algorithm>("algorithm")
        } else {
            Some(Algorithm::Sequential)
        };
        let data = Self::data_source(&mut f);
        let gen_out = match (f.path("gen.train_out"), f.path("gen.test_out")) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                f.errors.push("gen.train_out and gen.test_out must be given together".into());
                None
            }
        };

        let lambda = f.require::<f64>("train.lambda", "regularization weight");
        let eta = f.require::<f64>("train.eta", "learning rate");
        let loss = match (lambda, eta) {
            (Some(lambda), Some(eta)) => match LossParams::new(lambda, eta) {
                Ok(p) => Some(p),
                Err(e) => {
                    f.errors.push(e.to_string());
                    None
                }
            },
            _ => None,
        };
        let iterations = f.require::<u64>("train.iterations", "fastest-node iteration budget");
        let seed = f.get::<u64>("train.seed").unwrap_or(0);
        let init = f.get::<f64>("train.init").unwrap_or(0.0);
        if !init.is_finite() {
            f.errors.push("train.init must be finite".into());
        }
        let checkpoint_every = f.get::<u64>("train.checkpoint_every").unwrap_or(0);

        let cluster = Self::cluster(&mut f, algorithm, iterations);
        let threads = f.get::<usize>("cluster.threads").unwrap_or(1);
        if threads == 0 {
            f.errors.push("cluster.threads must be at least 1".into());
        }

        let rate = match f.values.get("wpsgd.rate").map(|v| v.1.clone()) {
            None => RateChoice::Auto,
            Some(v) if v == "auto" => RateChoice::Auto,
            Some(_) => match f.get::<f64>("wpsgd.rate") {
                Some(r) if r > 0.0 && r <= 1.0 => RateChoice::Fixed(r),
                Some(r) => {
                    f.errors.push(format!("wpsgd.rate = {r} must lie in (0, 1] or be `auto`"));
                    RateChoice::Auto
                }
                None => RateChoice::Auto,
            },
        };

        let span = if algorithm == Some(Algorithm::PeriodicAvg) {
            f.require::<u64>("periodic.span", "required by periodic-avg")
        } else {
            f.get::<u64>("periodic.span")
        };
        if let (Some(span), Some(t)) = (span, iterations) {
            if span == 0 || span > t || t % span != 0 {
                f.errors.push(format!("periodic.span = {span} must be >= 1 and divide train.iterations = {t}"));
            }
        }

        let delay = Self::delay(&mut f, algorithm);
        let theory = TheoryInputs {
            g: f.get("theory.g").unwrap_or(1.0),
            grad_lip: f.get("theory.grad_lip"),
            residual: f.get("theory.residual").unwrap_or(0.0),
            beta_sq_max: f.get("theory.beta_sq_max"),
            wasserstein_1: f.get("theory.wasserstein_1"),
            wasserstein_2: f.get("theory.wasserstein_2"),
            sigma_star: f.get("theory.sigma_star"),
        };
        let metrics = f.path("output.metrics");
        let model = f.path("output.model");

        if !f.errors.is_empty() {
            return Err(Error::Config(f.errors));
        }
        let (algorithm, loss, iterations, cluster) = match (algorithm, loss, iterations, cluster) {
            (Some(a), Some(l), Some(t), Some(c)) => (a, l, t, c),
            _ => return Err(Error::Config(vec!["incomplete configuration".into()])),
        };
        let mut train = TrainConfig::new(loss, iterations, seed);
        train.init_value = init;
        train.checkpoint_every = checkpoint_every;
        Ok(Self {
            algorithm,
            data,
            gen_out,
            cluster,
            train,
            rate,
            span,
            delay,
            metrics,
            model,
            theory,
            threads,
        })
    }

    fn data_source(f: &mut Fields) -> Option<DataSource> {
        let files = f.has("data.train") || f.has("data.test");
        let generated = KEYS
            .iter()
            .filter(|k| k.starts_with("gen.") && !k.ends_with("_out"))
            .any(|k| f.has(k));
        if files && generated {
            f.errors.push("give either data.* files or gen.* generator settings, not both".into());
            return None;
        }
        if files {
            let train = f.path("data.train");
            let test = f.path("data.test");
            let dim = f.get("data.dim");
            return match (train, test) {
                (Some(train), Some(test)) => Some(DataSource::Files { train, test, dim }),
                _ => {
                    f.errors.push("data.train and data.test must be given together".into());
                    None
                }
            };
        }
        if generated {
            let n_train = f.require("gen.n_train", "training instances");
            let n_test = f.require("gen.n_test", "test instances");
            let dim = f.require("gen.dim", "dimensionality");
            let nnz_min = f.require("gen.nnz_min", "minimum features per instance");
            let nnz_max = f.require("gen.nnz_max", "maximum features per instance");
            let spec = GenSpec {
                n_train: n_train?,
                n_test: n_test?,
                dim: dim?,
                nnz_min: nnz_min?,
                nnz_max: nnz_max?,
                seed: f.get("gen.seed").unwrap_or(0),
                normalize: f.get("gen.normalize").unwrap_or(true),
            };
            if let Err(Error::Config(v)) = spec.validate() {
                f.errors.extend(v.into_iter().map(|m| format!("gen: {m}")));
            }
            return Some(DataSource::Generated(spec));
        }
        None
    }

    fn cluster(f: &mut Fields, algorithm: Option<Algorithm>, t: Option<u64>) -> Option<ClusterSection> {
        let parallel = !matches!(algorithm, Some(Algorithm::Sequential));
        let k = if parallel {
            f.require::<usize>("cluster.k", "node count")
        } else {
            Some(f.get::<usize>("cluster.k").unwrap_or(1))
        }?;
        if k == 0 {
            f.errors.push("cluster.k must be at least 1".into());
            return None;
        }
        let delays = match (f.has("cluster.delays"), f.has("cluster.speeds")) {
            (true, true) => {
                f.errors.push("give cluster.delays or cluster.speeds, not both".into());
                return None;
            }
            (false, true) => DelaySpec::Speeds(f.list("cluster.speeds")?),
            (true, false) => DelaySpec::Iterations(f.list("cluster.delays")?),
            (false, false) => DelaySpec::Iterations(vec![0; k]),
        };
        let len = match &delays {
            DelaySpec::Iterations(d) => d.len(),
            DelaySpec::Speeds(s) => s.len(),
        };
        if len != k {
            f.errors.push(format!("cluster delays/speeds list has {len} entries, cluster.k = {k}"));
        }
        let shares = f.list::<f64>("cluster.shares").unwrap_or_else(|| vec![1.0; k]);
        if shares.len() != k {
            f.errors.push(format!("cluster.shares has {} entries, cluster.k = {k}", shares.len()));
        }
        if shares.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            f.errors.push("cluster.shares entries must be positive".into());
        }
        let section = ClusterSection {
            k,
            delays,
            shares,
            partition_seed: f.get("cluster.partition_seed").unwrap_or(0),
        };
        if len == k {
            match (section.profile(t.unwrap_or(0)), &section.delays) {
                (Err(e), _) => f.errors.push(format!("cluster delays: {e}")),
                (Ok(p), _) if parallel && algorithm != Some(Algorithm::SimuParallel) => {
                    if let (Some(t), Some(max)) = (t, p.delays().iter().max()) {
                        if *max >= t {
                            f.errors.push(format!("largest delay {max} must be below train.iterations = {t}"));
                        }
                    }
                }
                (Ok(p), _) if algorithm == Some(Algorithm::SimuParallel) && !p.all_zero() => {
                    f.errors.push("simuparallel requires all cluster delays to be 0".into());
                }
                _ => {}
            }
        }
        Some(section)
    }

    fn delay(f: &mut Fields, algorithm: Option<Algorithm>) -> Option<DelayConfig> {
        let needed = algorithm == Some(Algorithm::DelayWpsgd);
        let m = if needed {
            f.require::<usize>("delay.max_delay", "required by delay-wpsgd")
        } else {
            f.get::<usize>("delay.max_delay")
        }?;
        let mut cfg = DelayConfig::new(m);
        if let Some(c) = f.get("delay.c_star") {
            cfg.c_star = c;
        }
        if let Some(h) = f.get("delay.history_len") {
            cfg.history_len = h;
        }
        if let Some((line, raw)) = f.values.get("delay.check_root").cloned() {
            cfg.check_root = match raw.as_str() {
                "per-update" => CheckRoot::PerUpdate,
                "max-delay" => CheckRoot::MaxDelay,
                other => {
                    f.errors.push(format!(
                        "line {line}: delay.check_root = {other:?}; expected per-update or max-delay"
                    ));
                    CheckRoot::PerUpdate
                }
            };
        }
        if let Err(Error::Config(v)) = cfg.validate() {
            f.errors.extend(v.into_iter().map(|m| format!("delay: {m}")));
        }
        Some(cfg)
    }
}
