//! L2-regularized hinge loss, its subgradient and the plain SGD step.

use crate::error::{Error, Result};
use crate::sparse::{check_dim, dot, DenseModel, Dataset, Sample};

/// Regularization weight and learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub lambda: f64,
    pub eta: f64,
}

impl LossParams {
    /// Validated constructor: `lambda > 0`, `eta > 0`, `0 < eta * lambda < 1`.
    pub fn new(lambda: f64, eta: f64) -> Result<Self> {
        let p = Self { lambda, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        let product = self.eta * self.lambda;
        if !(product > 0.0 && product < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eta * lambda must lie in (0, 1), got {product}"
            )));
        }
        Ok(())
    }

    /// The per-step shrink factor `1 - eta * lambda`.
    pub fn contraction(&self) -> f64 {
        1.0 - self.eta * self.lambda
    }
}

/// Signed margin `ŷ (w · x)`.
pub fn margin(w: &DenseModel, s: &Sample) -> Result<f64> {
    Ok(s.signed_label() * dot(&s.features, w)?)
}

/// Whether the hinge is active. A margin of exactly 1 counts as satisfied.
fn hinge_active(margin: f64) -> bool {
    margin < 1.0
}

/// `(λ/2)‖w‖² + max(0, 1 − ŷ (w·x))`.
pub fn sample_loss(w: &DenseModel, s: &Sample, p: &LossParams) -> Result<f64> {
    let m = margin(w, s)?;
    Ok(0.5 * p.lambda * w.norm_sq() + (1.0 - m).max(0.0))
}

/// Mean of [`sample_loss`] over the dataset.
pub fn objective_value(w: &DenseModel, d: &Dataset, p: &LossParams) -> Result<f64> {
    check_dim(d.dim(), w.dim())?;
    // The regularizer is shared by every sample; add it once.
    let reg = 0.5 * p.lambda * w.norm_sq();
    let mut hinge = 0.0;
    for s in d.samples() {
        hinge += (1.0 - margin(w, s)?).max(0.0);
    }
    Ok(reg + hinge / d.len() as f64)
}

/// Dense subgradient of [`sample_loss`] at `w`: `λw − ŷx` on an active hinge,
/// `λw` otherwise.
pub fn subgradient(w: &DenseModel, s: &Sample, p: &LossParams) -> Result<Vec<f64>> {
    let m = margin(w, s)?;
    let mut g: Vec<f64> = w.weights.iter().map(|wi| p.lambda * wi).collect();
    if hinge_active(m) {
        let y = s.signed_label();
        for (i, v) in s.features.iter() {
            g[i] -= y * v;
        }
    }
    Ok(g)
}

/// One SGD update in place: `w ← (1−ηλ) w + η ŷ x` on an active hinge,
/// `w ← (1−ηλ) w` otherwise. Increments the iteration counter.
pub fn sgd_step(w: &mut DenseModel, s: &Sample, p: &LossParams) -> Result<()> {
    let m = margin(w, s)?;
    apply_update(w, s, p, hinge_active(m))
}

/// Applies the gradient evaluated at `stale` (a possibly older model) to `w`:
/// `w ← w − η (λ stale + g(stale))`. With `stale == w` this is [`sgd_step`].
pub fn delayed_sgd_step(
    w: &mut DenseModel,
    stale: &DenseModel,
    s: &Sample,
    p: &LossParams,
) -> Result<()> {
    check_dim(w.dim(), stale.dim())?;
    let m = margin(stale, s)?;
    let shrink = p.eta * p.lambda;
    for (wi, si) in w.weights.iter_mut().zip(&stale.weights) {
        *wi -= shrink * si;
    }
    if hinge_active(m) {
        let a = p.eta * s.signed_label();
        for (i, v) in s.features.iter() {
            w.weights[i] += a * v;
        }
    }
    finish_update(w, s, true)
}

fn apply_update(w: &mut DenseModel, s: &Sample, p: &LossParams, active: bool) -> Result<()> {
    check_dim(w.dim(), s.features.dim())?;
    let keep = p.contraction();
    for wi in w.weights.iter_mut() {
        *wi *= keep;
    }
    if active {
        let a = p.eta * s.signed_label();
        for (i, v) in s.features.iter() {
            w.weights[i] += a * v;
        }
    }
    // A shrink factor in [0, 1] cannot create non-finite values off the support.
    finish_update(w, s, !(0.0..=1.0).contains(&keep))
}

fn finish_update(w: &mut DenseModel, s: &Sample, check_all: bool) -> Result<()> {
    w.iterations += 1;
    let ok = if check_all {
        w.is_finite()
    } else {
        s.features.indices().iter().all(|&i| w.weights[i].is_finite())
    };
    if !ok {
        return Err(Error::NonFinite {
            iteration: w.iterations,
        });
    }
    Ok(())
}

/// Fraction of samples whose predicted class disagrees with the label. A score
/// of exactly zero predicts class 0.
pub fn error_rate(w: &DenseModel, d: &Dataset) -> Result<f64> {
    check_dim(d.dim(), w.dim())?;
    let mut wrong = 0usize;
    for s in d.samples() {
        let predicted = u8::from(dot(&s.features, w)? > 0.0);
        if predicted != s.label() {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / d.len() as f64)
}
