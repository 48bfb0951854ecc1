//! In-process simulation of a heterogeneous k-node cluster.
//!
//! Every node trains on its own data slice with its own random stream, so a
//! run is a pure function of its inputs whatever the thread count. Node `i`
//! performs `t - T_i` updates while the fastest node performs `t`.

use log::warn;

use crate::aggregation::{combine_refs, compute_weights, rate_pow, DelayProfile};
use crate::error::{Error, Result};
use crate::sparse::{Dataset, DenseModel};
use crate::trainer::{node_rng, shuffle_with, Checkpoint, NodeTrainer, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub delays: DelayProfile,
    pub partition_seed: u64,
    /// Relative amount of data per node; normalized internally.
    pub data_shares: Vec<f64>,
    /// Worker threads used for node loops. Affects speed only.
    pub threads: usize,
}

impl ClusterSpec {
    /// Equal data shares, one thread.
    pub fn new(delays: DelayProfile, partition_seed: u64) -> Self {
        let k = delays.k();
        Self {
            delays,
            partition_seed,
            data_shares: vec![1.0; k],
            threads: 1,
        }
    }

    /// `k` nodes, no delays, equal shares.
    pub fn balanced(k: usize, partition_seed: u64) -> Self {
        Self::new(DelayProfile::zeros(k), partition_seed)
    }

    pub fn with_shares(mut self, shares: Vec<f64>) -> Self {
        self.data_shares = shares;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn k(&self) -> usize {
        self.delays.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_shares.len() != self.k() {
            return Err(Error::LengthMismatch {
                what: "data_shares",
                expected: self.k(),
                found: self.data_shares.len(),
            });
        }
        if self
            .data_shares
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidParameter(
                "data shares must be positive and finite".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelRunResult {
    pub final_model: DenseModel,
    /// Node models before the final combination; node `i` has `t - T_i`
    /// iterations.
    pub per_node_models: Vec<DenseModel>,
    /// Combined model at each checkpoint, keyed by fastest-node iteration.
    pub checkpoints: Vec<Checkpoint>,
    /// Non-fatal diagnostics raised during the run.
    pub warnings: Vec<String>,
}

/// Splits `d` into `k` disjoint slices proportional to the data shares,
/// taken from one seeded global shuffle. Sizes use largest-remainder
/// apportionment with ties going to the lower node index. A single node
/// receives the dataset unchanged.
pub fn partition(d: &Dataset, spec: &ClusterSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let k = spec.k();
    if d.len() < k {
        return Err(Error::DatasetTooSmall {
            samples: d.len(),
            nodes: k,
        });
    }
    if k == 1 {
        return Ok(vec![d.clone()]);
    }
    let sizes = apportion(d.len(), &spec.data_shares);
    if let Some(node) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!(
            "node {node} would receive no samples; raise its data share or use more data"
        )));
    }
    let shuffled = shuffle_with(d, &mut node_rng(spec.partition_seed, 0)).into_samples();
    let mut rest = shuffled.as_slice();
    let mut out = Vec::with_capacity(k);
    for size in sizes {
        let (head, tail) = rest.split_at(size);
        out.push(Dataset::new(head.to_vec(), d.dim())?);
        rest = tail;
    }
    Ok(out)
}

fn apportion(m: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| m as f64 * s / total).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // stable sort keeps the lower index first on equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().cycle().take(m.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Balanced parallel SGD: every node trains `t` steps, then the models are
/// averaged uniformly. Rejects any nonzero delay.
pub fn run_simuparallel(d: &Dataset, spec: &ClusterSpec, cfg: &TrainConfig) -> Result<ParallelRunResult> {
    if let Some((node, &delay)) = spec.delays.delays().iter().enumerate().find(|(_, &t)| t > 0) {
        return Err(Error::NonZeroDelay { node, delay });
    }
    simulate(d, spec, cfg, 1.0, cfg.total_iterations, false)
}

/// Node `i` trains `t - T_i` steps; the models are combined with weights
/// proportional to `rate^{T_i}`.
pub fn run_wpsgd(d: &Dataset, spec: &ClusterSpec, cfg: &TrainConfig, rate: f64) -> Result<ParallelRunResult> {
    simulate(d, spec, cfg, rate, cfg.total_iterations, true)
}

/// Same training as [`run_wpsgd`], averaged uniformly regardless of delays.
pub fn run_direct_average_unbalanced(
    d: &Dataset,
    spec: &ClusterSpec,
    cfg: &TrainConfig,
) -> Result<ParallelRunResult> {
    run_wpsgd(d, spec, cfg, 1.0)
}

/// Averages every `span` fastest-node iterations; after each round every
/// node continues from the combined model. `span` must divide `t`.
pub fn run_periodic_averaging(
    d: &Dataset,
    spec: &ClusterSpec,
    cfg: &TrainConfig,
    span: u64,
    rate: f64,
) -> Result<ParallelRunResult> {
    let t = cfg.total_iterations;
    let reason = if span == 0 {
        Some("span must be at least 1")
    } else if span > t {
        Some("span exceeds the iteration budget")
    } else if !t.is_multiple_of(span) {
        Some("span must divide the iteration budget")
    } else {
        None
    };
    if let Some(reason) = reason {
        return Err(Error::InvalidSpan {
            span,
            iterations: t,
            reason,
        });
    }
    let mut result = simulate(d, spec, cfg, rate, span, true)?;
    let shrink = cfg.loss.contraction();
    let factor = spec.k() as f64 / spec.delays.discounted_sum(shrink) * rate_pow(shrink, span as f64);
    if factor >= 1.0 {
        let msg = format!(
            "averaging every {span} iterations is outside the valid regime: \
             (k / sum) * (1 - eta*lambda)^span = {factor} >= 1"
        );
        warn!("{msg}");
        result.warnings.push(msg);
    }
    Ok(result)
}

pub(crate) fn validate_run(cfg: &TrainConfig, spec: &ClusterSpec, rate: f64) -> Result<()> {
    cfg.loss.validate()?;
    crate::aggregation::check_rate(rate)?;
    spec.validate()?;
    if !cfg.init_value.is_finite() {
        return Err(Error::InvalidParameter("init value must be finite".into()));
    }
    Ok(())
}

/// Per-round step counts: node `i` spreads its `t - T_i` steps over the
/// rounds, giving the remainder to the earliest rounds.
fn schedule(delays: &[u64], t: u64, rounds: u64) -> Result<Vec<Vec<u64>>> {
    delays
        .iter()
        .enumerate()
        .map(|(node, &delay)| {
            let total = t - delay;
            let (base, extra) = (total / rounds, total % rounds);
            if base == 0 && extra < rounds {
                return Err(Error::EmptyRound {
                    node,
                    round: extra,
                });
            }
            Ok((0..rounds).map(|r| base + u64::from(r < extra)).collect())
        })
        .collect()
}

fn simulate(
    d: &Dataset,
    spec: &ClusterSpec,
    cfg: &TrainConfig,
    rate: f64,
    span: u64,
    check_budget: bool,
) -> Result<ParallelRunResult> {
    validate_run(cfg, spec, rate)?;
    let t = cfg.total_iterations;
    if check_budget {
        if let Some((node, &delay)) = spec.delays.delays().iter().enumerate().find(|(_, &lag)| lag >= t) {
            return Err(Error::DelayExceedsBudget {
                node,
                delay,
                iterations: t,
            });
        }
    }
    let parts = partition(d, spec)?;
    let mut nodes: Vec<NodeTrainer> = parts
        .iter()
        .enumerate()
        .map(|(i, p)| NodeTrainer::new(p, cfg, i))
        .collect();
    let rounds = if t == 0 { 0 } else { t / span };
    let steps = if rounds == 0 {
        Vec::new()
    } else {
        schedule(spec.delays.delays(), t, rounds)?
    };
    let mut checkpoint_at = cfg.checkpoint_iterations().into_iter().peekable();
    let mut checkpoints = Vec::new();

    for r in 0..rounds {
        let start = r * span;
        let mut local = Vec::new();
        while let Some(c) = checkpoint_at.next_if(|&c| c <= start + span) {
            local.push(c - start);
        }
        let targets: Vec<Vec<u64>> = steps
            .iter()
            .map(|s| {
                let n = s[r as usize];
                local
                    .iter()
                    .map(|&c| progress(c, n, span))
                    .chain(std::iter::once(n))
                    .collect()
            })
            .collect();
        let snaps = advance_all(&mut nodes, &targets, spec.threads)?;
        for (j, &c) in local.iter().enumerate() {
            let models: Vec<&DenseModel> = snaps.iter().map(|s| &s[j]).collect();
            let lag: Vec<u64> = targets.iter().map(|tg| c - tg[j]).collect();
            checkpoints.push(Checkpoint {
                iteration: start + c,
                model: weighted(&models, lag, rate)?,
            });
        }
        if r + 1 < rounds {
            let models: Vec<&DenseModel> = nodes.iter().map(NodeTrainer::model).collect();
            let lag = steps.iter().map(|s| span - s[r as usize]).collect();
            let merged = weighted(&models, lag, rate)?;
            for node in &mut nodes {
                node.set_weights(&merged.weights);
            }
        }
    }

    let per_node_models: Vec<DenseModel> = nodes.into_iter().map(NodeTrainer::into_model).collect();
    let models: Vec<&DenseModel> = per_node_models.iter().collect();
    let lag = if rounds == 0 {
        vec![0; models.len()]
    } else {
        steps.iter().map(|s| span - s[s.len() - 1]).collect()
    };
    let final_model = weighted(&models, lag, rate)?;
    Ok(ParallelRunResult {
        final_model,
        per_node_models,
        checkpoints,
        warnings: Vec::new(),
    })
}

/// Steps a node with `n` steps per round has taken when the fastest node is
/// `c` steps into a round of length `span`.
pub(crate) fn progress(c: u64, n: u64, span: u64) -> u64 {
    (u128::from(c) * u128::from(n) / u128::from(span)) as u64
}

pub(crate) fn weighted(models: &[&DenseModel], lag: Vec<u64>, rate: f64) -> Result<DenseModel> {
    let w = compute_weights(&DelayProfile::new(lag)?, rate)?;
    combine_refs(models, &w)
}

/// Advances node `i` through `targets[i]` (cumulative step counts), cloning
/// its model at every target except the last.
fn advance_all(nodes: &mut [NodeTrainer], targets: &[Vec<u64>], threads: usize) -> Result<Vec<Vec<DenseModel>>> {
    par_map_mut(nodes, threads, |i, n| advance_one(n, &targets[i]))
        .into_iter()
        .collect()
}

/// Applies `f(index, item)` to every item, spreading contiguous chunks over
/// up to `threads` scoped threads. Output order follows input order.
pub(crate) fn par_map_mut<T, R, F>(items: &mut [T], threads: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, xs)| {
                s.spawn(move || {
                    xs.iter_mut()
                        .enumerate()
                        .map(|(i, x)| f(c * chunk + i, x))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn advance_one(node: &mut NodeTrainer, targets: &[u64]) -> Result<Vec<DenseModel>> {
    let mut done = 0;
    let mut snaps = Vec::with_capacity(targets.len().saturating_sub(1));
    for (j, &target) in targets.iter().enumerate() {
        node.advance(target - done)?;
        done = target;
        if j + 1 < targets.len() {
            snaps.push(node.model().clone());
        }
    }
    Ok(snaps)
}
