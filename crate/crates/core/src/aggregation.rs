//! Delay-aware model weights and weighted model combination.
//!
//! A node that lags the fastest node by `T` iterations gets weight
//! proportional to `rate^T`; with `rate = 1 - ηλ` this is the shrink factor
//! the slow node missed out on. `rate = 1` gives plain averaging.

use log::warn;

use crate::error::{Error, Result};
use crate::sparse::{check_dim, DenseModel};

/// Weights below this are flushed to exactly zero.
const UNDERFLOW_FLOOR: f64 = 1e-300;
/// Exponent magnitude above which the power is evaluated as `exp(T ln r)`.
const LOG_SPACE_THRESHOLD: f64 = 500.0;

/// Per-node iteration deficits relative to the fastest node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayProfile {
    delays: Vec<u64>,
}

impl DelayProfile {
    /// Requires at least one node, and the fastest node must have delay 0.
    pub fn new(delays: Vec<u64>) -> Result<Self> {
        match delays.iter().min() {
            None => Err(Error::InvalidParameter(
                "delay profile needs at least one node".into(),
            )),
            Some(&m) if m != 0 => Err(Error::InvalidParameter(format!(
                "the fastest node must have delay 0, smallest delay is {m}"
            ))),
            Some(_) => Ok(Self { delays }),
        }
    }

    pub fn zeros(k: usize) -> Self {
        Self { delays: vec![0; k] }
    }

    /// Converts relative speeds into delays for a run in which the fastest
    /// node performs `t` updates: `T_i = round(t (1 - f_i / f_max))`.
    pub fn from_speed_factors(t: u64, factors: &[f64]) -> Result<Self> {
        if factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidParameter(
                "speed factors must be positive and finite".into(),
            ));
        }
        let fastest = factors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let delays = factors
            .iter()
            .map(|f| (t as f64 * (1.0 - f / fastest)).round() as u64)
            .collect();
        Self::new(delays)
    }

    pub fn k(&self) -> usize {
        self.delays.len()
    }

    pub fn delays(&self) -> &[u64] {
        &self.delays
    }

    pub fn all_zero(&self) -> bool {
        self.delays.iter().all(|&d| d == 0)
    }

    /// `Σ_j rate^{T_j}`.
    pub fn discounted_sum(&self, rate: f64) -> f64 {
        self.delays.iter().map(|&t| rate_pow(rate, t as f64)).sum()
    }
}

/// `rate^exponent`, switching to `exp(exponent · ln rate)` for large exponents.
pub(crate) fn rate_pow(rate: f64, exponent: f64) -> f64 {
    let log_rate = rate.ln();
    if exponent * log_rate.abs() > LOG_SPACE_THRESHOLD {
        (exponent * log_rate).exp()
    } else {
        rate.powf(exponent)
    }
}

/// Normalized node weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    /// `1/k` for every node.
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRate(rate))
    }
}

/// `weight_i = rate^{T_i} / Σ_j rate^{T_j}` for `0 < rate <= 1`.
pub fn compute_weights(profile: &DelayProfile, rate: f64) -> Result<WeightVector> {
    check_rate(rate)?;
    let offset = profile.delays.iter().copied().min().unwrap_or(0);
    let raw: Vec<f64> = profile
        .delays
        .iter()
        .map(|&t| rate_pow(rate, (t - offset) as f64))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights = raw
        .iter()
        .enumerate()
        .map(|(node, r)| {
            let w = r / total;
            if w < UNDERFLOW_FLOOR {
                warn!(
                    "weight of node {node} (delay {}) underflows; treating it as 0",
                    profile.delays[node]
                );
                0.0
            } else {
                w
            }
        })
        .collect();
    Ok(WeightVector { weights })
}

/// `Σ_i weight_i · model_i`, accumulated in ascending node order. The result
/// carries the largest iteration count among the inputs.
pub fn combine(models: &[DenseModel], weights: &WeightVector) -> Result<DenseModel> {
    combine_refs(&models.iter().collect::<Vec<_>>(), weights)
}

pub(crate) fn combine_refs(models: &[&DenseModel], weights: &WeightVector) -> Result<DenseModel> {
    if models.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "weight vector",
            expected: models.len(),
            found: weights.len(),
        });
    }
    let (first, rest) = models.split_first().ok_or(Error::LengthMismatch {
        what: "model list",
        expected: 1,
        found: 0,
    })?;
    let w = weights.as_slice();
    let mut out: Vec<f64> = first.weights.iter().map(|v| w[0] * v).collect();
    for (model, &wi) in rest.iter().zip(&w[1..]) {
        check_dim(out.len(), model.dim())?;
        for (acc, v) in out.iter_mut().zip(&model.weights) {
            *acc += wi * v;
        }
    }
    let iterations = models.iter().map(|m| m.iterations).max().unwrap_or(0);
    Ok(DenseModel {
        weights: out,
        iterations,
    })
}

/// Uniform average, the baseline that ignores delays.
pub fn direct_average(models: &[DenseModel]) -> Result<DenseModel> {
    if models.is_empty() {
        return Err(Error::EmptyDataset);
    }
    combine(models, &WeightVector::uniform(models.len()))
}
