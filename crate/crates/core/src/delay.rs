//! Delayed SGD with a geometric acceptance gate, aggregated across servers
//! with delay-aware weights.
//!
//! Each simulated server applies gradients computed at a model that is `τ`
//! accepted updates old, `τ` drawn uniformly below the maximum delay `M`.
//! Before and after each update the recent history is checked: projections
//! onto the current sample must stay on one side of the bracketed fixed
//! point range and the components orthogonal to the sample must not grow.
//! Rejected updates are discarded and the server moves on to its next sample.

use std::collections::VecDeque;
use std::fmt;

use log::debug;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{check_rate, combine, compute_weights};
use crate::cluster::{par_map_mut, partition, progress, validate_run, weighted, ClusterSpec, ParallelRunResult};
use crate::error::{Error, Result};
use crate::objective::{delayed_sgd_step, LossParams};
use crate::sparse::{dot, l2_norm_sq, Dataset, DenseModel, Sample, SparseVector};
use crate::trainer::{node_rng, shuffle_with, Checkpoint, TrainConfig};

/// Which root turns the per-`τ` contraction base into the check rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckRoot {
    /// `max(τ, 1)`-th root, using the lag of the update being checked.
    #[default]
    PerUpdate,
    /// `M`-th root for every update. Looser bracket, same guarantee when the
    /// step-size condition holds.
    MaxDelay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayConfig {
    /// Maximum delay `M`; lags are drawn from `0..M`.
    pub max_delay: usize,
    /// Lipschitz bound on the loss derivative (1 for the hinge).
    pub c_star: f64,
    /// Number of past models kept per server; at least `M + 2`.
    pub history_len: usize,
    pub check_root: CheckRoot,
}

impl DelayConfig {
    pub fn new(max_delay: usize) -> Self {
        Self {
            max_delay,
            c_star: 1.0,
            history_len: max_delay + 3,
            check_root: CheckRoot::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.max_delay == 0 {
            bad.push("max delay M must be at least 1".to_string());
        }
        if !(self.c_star > 0.0 && self.c_star.is_finite()) {
            bad.push(format!("c_star must be positive, got {}", self.c_star));
        }
        if self.history_len < self.max_delay + 2 {
            bad.push(format!(
                "history length {} is shorter than M + 2 = {}",
                self.history_len,
                self.max_delay + 2
            ));
        }
        match bad.len() {
            0 => Ok(()),
            _ => Err(Error::Config(bad)),
        }
    }

    fn root(&self, tau: usize) -> usize {
        match self.check_root {
            CheckRoot::PerUpdate => tau.max(1),
            CheckRoot::MaxDelay => self.max_delay,
        }
    }
}

/// Left and right sides of the step-size condition
/// `ηλ + η β²_max c* <= (1 − ηλ)^M`.
pub fn step_size_terms(p: &LossParams, beta_sq_max: f64, cfg: &DelayConfig) -> (f64, f64) {
    let lhs = p.eta * p.lambda + p.eta * beta_sq_max * cfg.c_star;
    let rhs = p.contraction().powi(cfg.max_delay as i32);
    (lhs, rhs)
}

pub fn validate_step_size(p: &LossParams, beta_sq_max: f64, cfg: &DelayConfig) -> bool {
    let (lhs, rhs) = step_size_terms(p, beta_sq_max, cfg);
    lhs <= rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicate {
    /// A projection left the bracket between `Length_min` and its predecessor.
    Interval,
    /// An orthogonal component grew.
    Perpendicular,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predicate::Interval => "interval",
            Predicate::Perpendicular => "perpendicular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub accepted: bool,
    /// Bracket end computed from the two newest projections before the
    /// newest scanned model.
    pub length_min: f64,
    /// Projection `x · w` of every history entry, oldest first.
    pub lengths: Vec<f64>,
    /// Norm of each entry's component orthogonal to `x`.
    pub perpendicular: Vec<f64>,
    pub rate: f64,
    /// First failing predicate, if any.
    pub failed: Option<Predicate>,
}

/// Orthogonal part of `w` with respect to `x`: `‖w − (x·w / β²) x‖`.
fn perpendicular_norm(w: &DenseModel, x: &SparseVector, beta_sq: f64, length: f64) -> f64 {
    let a = length / beta_sq;
    let mut support = x.iter().peekable();
    let mut total = 0.0;
    for (i, &wi) in w.weights.iter().enumerate() {
        let r = match support.next_if(|&(j, _)| j == i) {
            Some((_, v)) => wi - a * v,
            None => wi,
        };
        total += r * r;
    }
    total.sqrt()
}

/// Geometric acceptance test on a model history (oldest first).
///
/// Every entry with two predecessors in `history` is scanned: its projection
/// onto `x` must lie in the closed interval spanned by the predecessor's
/// projection and `Length_min = (L₁ − rate·L₂)/(1 − rate)`, and orthogonal
/// norms must be non-increasing along the triple. `rate` is the `root`-th
/// root of `λη + c* η β²`; `tau` selects the root via `cfg.check_root`.
pub fn check(
    history: &[&DenseModel],
    tau: usize,
    p: &LossParams,
    x: &SparseVector,
    cfg: &DelayConfig,
) -> Result<CheckOutcome> {
    if history.len() < 3 {
        return Err(Error::ShortHistory(history.len()));
    }
    let beta_sq = l2_norm_sq(x);
    if beta_sq == 0.0 {
        return Err(Error::ZeroSample);
    }
    let base = p.lambda * p.eta + cfg.c_star * p.eta * beta_sq;
    let rate = base.powf(1.0 / cfg.root(tau) as f64);
    if rate >= 1.0 {
        return Err(Error::DegenerateCheckRate { rate });
    }
    let lengths = history.iter().map(|w| dot(x, w)).collect::<Result<Vec<f64>>>()?;
    let perpendicular: Vec<f64> = history
        .iter()
        .zip(&lengths)
        .map(|(w, &l)| perpendicular_norm(w, x, beta_sq, l))
        .collect();

    let mut failed = None;
    let mut length_min = f64::NAN;
    for j in 2..history.len() {
        let (l0, l1, l2) = (lengths[j], lengths[j - 1], lengths[j - 2]);
        length_min = (l1 - rate * l2) / (1.0 - rate);
        let slack = 1e-12 * (1.0 + l1.abs() + length_min.abs());
        let (lo, hi) = (length_min.min(l1), length_min.max(l1));
        if failed.is_none() && !(lo - slack..=hi + slack).contains(&l0) {
            failed = Some(Predicate::Interval);
        }
        let grows = |newer: f64, older: f64| newer > older + 1e-12 * (1.0 + older);
        if failed.is_none()
            && (grows(perpendicular[j - 1], perpendicular[j - 2]) || grows(perpendicular[j], perpendicular[j - 1]))
        {
            failed = Some(Predicate::Perpendicular);
        }
    }
    Ok(CheckOutcome {
        accepted: failed.is_none(),
        length_min,
        lengths,
        perpendicular,
        rate,
        failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Check on the history before the update is applied.
    Pre,
    /// Check on the history including the tentative new model.
    Post,
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gate::Pre => "pre",
            Gate::Post => "post",
        })
    }
}

/// One discarded update.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub server: usize,
    /// Index of the accepted update being attempted (1-based).
    pub iteration: u64,
    /// Position of the sample in the server's shuffled local data.
    pub sample: usize,
    pub tau: usize,
    pub gate: Gate,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayRunResult {
    pub run: ParallelRunResult,
    pub rejections: Vec<Rejection>,
}

fn delay_rng(seed: u64, server: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | server as u64);
    rng
}

/// A single server's delayed-SGD state.
#[derive(Debug, Clone)]
pub struct DelayServer {
    id: usize,
    data: Dataset,
    cursor: usize,
    rng: ChaCha8Rng,
    history: VecDeque<DenseModel>,
    keep: usize,
    loss: LossParams,
    cfg: DelayConfig,
    rejections: Vec<Rejection>,
}

impl DelayServer {
    pub fn new(local: &Dataset, train: &TrainConfig, cfg: &DelayConfig, id: usize) -> Self {
        let data = shuffle_with(local, &mut node_rng(train.seed, id));
        let mut history = VecDeque::new();
        history.push_back(train.initial_model(local.dim()));
        Self {
            id,
            data,
            cursor: 0,
            rng: delay_rng(train.seed, id),
            history,
            keep: cfg.history_len.max(cfg.max_delay + 3),
            loss: train.loss,
            cfg: cfg.clone(),
            rejections: Vec::new(),
        }
    }

    pub fn model(&self) -> &DenseModel {
        self.history.back().expect("history is never empty")
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    /// Retained models, oldest first.
    pub fn history(&self) -> impl Iterator<Item = &DenseModel> {
        self.history.iter()
    }

    /// Performs one accepted update, skipping rejected samples. Fails after
    /// a full pass over the local data without an acceptance.
    pub fn step(&mut self) -> Result<()> {
        let iteration = self.model().iterations + 1;
        let mut last_reason = String::new();
        for _ in 0..self.data.len() {
            let saved = self.rng.clone();
            let available = self.history.len() - 1;
            let tau = self.rng.gen_range(0..=available.min(self.cfg.max_delay - 1));
            let sample_id = self.cursor;
            self.cursor = (self.cursor + 1) % self.data.len();
            match self.attempt(sample_id, tau)? {
                None => return Ok(()),
                Some((gate, predicate)) => {
                    self.rng = saved;
                    debug!(
                        "server {} iteration {iteration}: sample {sample_id} (tau {tau}) rejected by {gate} check ({predicate})",
                        self.id
                    );
                    last_reason = format!("{gate} check failed on {predicate} test for sample {sample_id}");
                    self.rejections.push(Rejection {
                        server: self.id,
                        iteration,
                        sample: sample_id,
                        tau,
                        gate,
                        predicate,
                    });
                }
            }
        }
        Err(Error::NoAdmissibleSample {
            server: self.id,
            iteration,
            attempts: self.data.len(),
            last_reason,
        })
    }

    fn attempt(&mut self, sample_id: usize, tau: usize) -> Result<Option<(Gate, Predicate)>> {
        let sample: &Sample = &self.data.samples()[sample_id];
        let x = &sample.features;
        let n = self.history.len();
        let gated = !x.is_empty();
        if gated && n >= 3 {
            let from = n.saturating_sub(tau + 3);
            let window: Vec<&DenseModel> = self.history.range(from..).collect();
            let outcome = check(&window, tau, &self.loss, x, &self.cfg)?;
            if let Some(p) = outcome.failed {
                return Ok(Some((Gate::Pre, p)));
            }
        }
        let mut next = self.model().clone();
        delayed_sgd_step(&mut next, &self.history[n - 1 - tau], sample, &self.loss)?;
        if gated && n >= 2 {
            let window = [&self.history[n - 2], &self.history[n - 1], &next];
            let outcome = check(&window, tau, &self.loss, x, &self.cfg)?;
            if let Some(p) = outcome.failed {
                return Ok(Some((Gate::Post, p)));
            }
        }
        self.history.push_back(next);
        while self.history.len() > self.keep {
            self.history.pop_front();
        }
        Ok(None)
    }

    pub fn advance(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Delayed SGD on every server, then a weighted combination with
/// `rate^{T_i}` weights. Server `i` performs `t − T_i` accepted updates.
pub fn run_delay_wpsgd(
    d: &Dataset,
    spec: &ClusterSpec,
    cfg: &TrainConfig,
    dcfg: &DelayConfig,
    rate: f64,
) -> Result<DelayRunResult> {
    validate_run(cfg, spec, rate)?;
    check_rate(rate)?;
    dcfg.validate()?;
    let (lhs, rhs) = step_size_terms(&cfg.loss, d.max_norm_sq(), dcfg);
    if lhs > rhs {
        return Err(Error::StepSizeInvalid { lhs, rhs });
    }
    let t = cfg.total_iterations;
    if let Some((node, &delay)) = spec.delays.delays().iter().enumerate().find(|(_, &lag)| lag >= t) {
        return Err(Error::DelayExceedsBudget {
            node,
            delay,
            iterations: t,
        });
    }
    let parts = partition(d, spec)?;
    let mut servers: Vec<DelayServer> = parts
        .iter()
        .enumerate()
        .map(|(i, p)| DelayServer::new(p, cfg, dcfg, i))
        .collect();
    let at = cfg.checkpoint_iterations();
    let totals: Vec<u64> = spec.delays.delays().iter().map(|&lag| t - lag).collect();

    let snaps = par_map_mut(&mut servers, spec.threads, |i, server| -> Result<Vec<DenseModel>> {
        let mut done = 0;
        let mut out = Vec::with_capacity(at.len());
        for &c in &at {
            let target = progress(c, totals[i], t);
            server.advance(target - done)?;
            done = target;
            out.push(server.model().clone());
        }
        server.advance(totals[i] - done)?;
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut checkpoints = Vec::with_capacity(at.len());
    for (j, &c) in at.iter().enumerate() {
        let models: Vec<&DenseModel> = snaps.iter().map(|s| &s[j]).collect();
        let lag = totals.iter().map(|&n| c - progress(c, n, t)).collect();
        checkpoints.push(Checkpoint {
            iteration: c,
            model: weighted(&models, lag, rate)?,
        });
    }
    let per_node_models: Vec<DenseModel> = servers.iter().map(|s| s.model().clone()).collect();
    let final_model = combine(&per_node_models, &compute_weights(&spec.delays, rate)?)?;
    let rejections = servers.into_iter().flat_map(|s| s.rejections).collect();
    Ok(DelayRunResult {
        run: ParallelRunResult {
            final_model,
            per_node_models,
            checkpoints,
            warnings: Vec::new(),
        },
        rejections,
    })
}
