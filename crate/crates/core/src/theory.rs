//! Closed-form convergence bounds, tolerance predicates and the empirical
//! contracting-rate fitter.
//!
//! The Lipschitz constants `G` and `‖∇c‖_Lip` and the residual `c(v) − min c`
//! are inputs. The residual depends on the very output it bounds, so callers
//! supply an estimate. For unit-norm hinge data `G = 1` and
//! `‖∇c‖_Lip ≈ λ + β²_max c*` are reasonable heuristics.

use crate::aggregation::{check_rate, rate_pow, DelayProfile};
use crate::error::{Error, Result};
use crate::objective::LossParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryParams {
    /// Lipschitz bound `G` on the loss.
    pub g: f64,
    pub loss: LossParams,
    pub delays: DelayProfile,
    /// Fastest-node iterations.
    pub t: u64,
    /// Overall contracting rate `r` used by the rate-generalized bound.
    pub rate: f64,
    pub span: Option<u64>,
    /// `‖∇c‖_Lip`.
    pub grad_lip: f64,
    /// Estimate of `c(v) − min c`.
    pub residual: f64,
    pub wasserstein_1: Option<f64>,
    pub wasserstein_2: Option<f64>,
    pub sigma_star: Option<f64>,
}

impl TheoryParams {
    /// `G = 1`, `‖∇c‖_Lip = 1`, zero residual, `r = 1 − ηλ`, no span and no
    /// distribution estimates.
    pub fn new(loss: LossParams, delays: DelayProfile, t: u64) -> Self {
        Self {
            g: 1.0,
            rate: loss.contraction(),
            loss,
            delays,
            t,
            span: None,
            grad_lip: 1.0,
            residual: 0.0,
            wasserstein_1: None,
            wasserstein_2: None,
            sigma_star: None,
        }
    }

    pub fn k(&self) -> usize {
        self.delays.k()
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        check_rate(self.rate)?;
        let reals = [
            ("G", Some(self.g)),
            ("grad_lip", Some(self.grad_lip)),
            ("residual", Some(self.residual)),
            ("wasserstein_1", self.wasserstein_1),
            ("wasserstein_2", self.wasserstein_2),
            ("sigma_star", self.sigma_star),
        ];
        let bad: Vec<String> = reals
            .iter()
            .filter_map(|(name, v)| match v {
                Some(v) if !(v.is_finite() && *v >= 0.0) => {
                    Some(format!("{name} must be finite and non-negative, got {v}"))
                }
                _ => None,
            })
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Both sides of `2 Σ rate^{T_i} > √k + k`.
pub fn corollary_terms(delays: &DelayProfile, rate: f64) -> (f64, f64) {
    let k = delays.k() as f64;
    (2.0 * delays.discounted_sum(rate), k.sqrt() + k)
}

/// Tolerance condition with rate `1 − ηλ`.
pub fn corollary3_holds(delays: &DelayProfile, p: &LossParams) -> bool {
    corollary4_holds(delays, p.contraction())
}

/// Tolerance condition with a user-supplied rate.
pub fn corollary4_holds(delays: &DelayProfile, rate: f64) -> bool {
    let (lhs, rhs) = corollary_terms(delays, rate);
    lhs > rhs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Distribution-aware condition under which the weighted output beats the
/// fastest node alone:
/// `(Σ − √k)/(k − Σ) > ρ^t W₁ / (ρ^t W₂ + σ*)` with `ρ = 1 − ηλ`.
pub fn corollary2(tp: &TheoryParams) -> Result<Comparison> {
    tp.validate()?;
    let (w1, w2, sigma) = match (tp.wasserstein_1, tp.wasserstein_2, tp.sigma_star) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::InvalidParameter(
                "corollary 2 needs wasserstein_1, wasserstein_2 and sigma_star".into(),
            ))
        }
    };
    let rho = tp.loss.contraction();
    let k = tp.k() as f64;
    let sum = tp.delays.discounted_sum(rho);
    let denom = k - sum;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("corollary 2 left-hand side (k equals the discounted sum)"));
    }
    let decay = rate_pow(rho, tp.t as f64);
    let rhs_denom = decay * w2 + sigma;
    let rhs_num = decay * w1;
    let rhs = if rhs_num == 0.0 {
        0.0
    } else if rhs_denom == 0.0 {
        return Err(Error::ZeroDenominator("corollary 2 right-hand side"));
    } else {
        rhs_num / rhs_denom
    };
    let lhs = (sum - k.sqrt()) / denom;
    Ok(Comparison {
        lhs,
        rhs,
        holds: lhs > rhs,
    })
}

pub fn corollary2_holds(tp: &TheoryParams) -> Result<bool> {
    corollary2(tp).map(|c| c.holds)
}

/// `exp(x)` that yields exactly +∞ past the overflow threshold and 0 for
/// `x = −∞`.
fn exp_or_inf(x: f64) -> f64 {
    if x > 709.0 {
        f64::INFINITY
    } else {
        x.exp()
    }
}

/// `((A + B) √(2‖∇c‖_Lip) + √residual)²` with
/// `A = G ρ^t/λ · mean_factor^rounds` and
/// `B = var_factor^rounds (2G√η/√λ + G ρ^t/λ)`, all powers in log space.
fn assemble(tp: &TheoryParams, rho: f64, ln_mean_factor: f64, ln_var_factor: f64, rounds: f64) -> f64 {
    let LossParams { lambda, eta } = tp.loss;
    let g = tp.g;
    let ln_decay = tp.t as f64 * rho.ln();
    let ln_g = g.ln();
    let mean_term = if g == 0.0 {
        0.0
    } else {
        exp_or_inf(ln_g + ln_decay - lambda.ln() + rounds * ln_mean_factor)
    };
    let spread = 2.0 * g * eta.sqrt() / lambda.sqrt() + g / lambda * exp_or_inf(ln_decay);
    let var_term = if spread == 0.0 {
        0.0
    } else {
        exp_or_inf(rounds * ln_var_factor + spread.ln())
    };
    let first = if tp.grad_lip == 0.0 {
        0.0
    } else {
        (mean_term + var_term) * (2.0 * tp.grad_lip).sqrt()
    };
    let inner = first + tp.residual.sqrt();
    inner * inner
}

fn rate_bound(tp: &TheoryParams, rho: f64) -> Result<f64> {
    tp.validate()?;
    check_rate(rho)?;
    let k = tp.k() as f64;
    let sum = tp.delays.discounted_sum(rho);
    Ok(assemble(tp, rho, (k / sum).ln(), (k.sqrt() / sum).ln(), 1.0))
}

/// Objective gap bound for weighted averaging with rate `1 − ηλ`.
pub fn theorem4_bound(tp: &TheoryParams) -> Result<f64> {
    rate_bound(tp, tp.loss.contraction())
}

/// [`theorem4_bound`] with every power of `1 − ηλ` replaced by `tp.rate`.
pub fn theorem5_bound(tp: &TheoryParams) -> Result<f64> {
    rate_bound(tp, tp.rate)
}

/// Balanced-cluster bound, evaluated without reference to delays:
/// `((G ρ^t/λ + (2G√η/√λ + G ρ^t/λ)/√k) √(2‖∇c‖_Lip) + √residual)²`.
pub fn simuparallel_bound(tp: &TheoryParams) -> Result<f64> {
    tp.validate()?;
    let k = tp.k() as f64;
    let LossParams { lambda, eta } = tp.loss;
    let decay = rate_pow(tp.loss.contraction(), tp.t as f64);
    let mean = tp.g * decay / lambda;
    let spread = 2.0 * tp.g * eta.sqrt() / lambda.sqrt() + tp.g / lambda * decay;
    let inner = (mean + spread / k.sqrt()) * (2.0 * tp.grad_lip).sqrt() + tp.residual.sqrt();
    Ok(inner * inner)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeductionBounds {
    /// Periodic averaging on a balanced cluster.
    pub balanced: f64,
    /// Periodic weighted averaging under the given delays.
    pub weighted: f64,
    /// `(k / Σ)(1 − ηλ)^span`; the weighted scheme is valid below 1.
    pub validity_factor: f64,
    pub valid: bool,
}

/// Bounds for averaging every `span` fastest-node iterations.
pub fn deduction_bounds(tp: &TheoryParams) -> Result<DeductionBounds> {
    tp.validate()?;
    let span = tp.span.unwrap_or(0);
    let reason = if span == 0 {
        Some("span must be at least 1")
    } else if !tp.t.is_multiple_of(span) {
        Some("span must divide the iteration budget")
    } else {
        None
    };
    if let Some(reason) = reason {
        return Err(Error::InvalidSpan {
            span,
            iterations: tp.t,
            reason,
        });
    }
    let rho = tp.loss.contraction();
    let k = tp.k() as f64;
    let sum = tp.delays.discounted_sum(rho);
    let rounds = (tp.t / span) as f64;
    let balanced = assemble(tp, rho, 0.0, -0.5 * k.ln(), rounds);
    let weighted = assemble(tp, rho, (k / sum).ln(), (k.sqrt() / sum).ln(), rounds);
    let validity_factor = k / sum * rate_pow(rho, span as f64);
    Ok(DeductionBounds {
        balanced,
        weighted,
        validity_factor,
        valid: validity_factor < 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Fitted per-iteration contracting rate.
    pub rate: f64,
    /// Intercept `ln A` of `ln(obj − floor) = ln A + t ln r`.
    pub log_amplitude: f64,
    /// Root-mean-square residual of the fit in log space.
    pub rms_residual: f64,
}

/// Least-squares fit of `ln(objective − floor)` against the iteration.
/// Needs at least two distinct iterations and every objective above `floor`.
pub fn fit_contracting_rate(curve: &[(f64, f64)], floor: f64) -> Result<RateFit> {
    if curve.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs at least 2 points, got {}",
            curve.len()
        )));
    }
    let mut pts = Vec::with_capacity(curve.len());
    for &(t, obj) in curve {
        if obj.partial_cmp(&floor) != Some(std::cmp::Ordering::Greater) || !t.is_finite() || !obj.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "objective {obj} at iteration {t} is not above the floor {floor}"
            )));
        }
        pts.push((t, (obj - floor).ln()));
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroDenominator("rate fit (all iterations equal)"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    let rate = slope.exp();
    if rate >= 1.0 {
        return Err(Error::NotContracting(rate));
    }
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(RateFit {
        rate,
        log_amplitude: intercept,
        rms_residual: (sse / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(d: &[u64]) -> DelayProfile {
        DelayProfile::new(d.to_vec()).unwrap()
    }

    fn params(lambda: f64, eta: f64) -> LossParams {
        LossParams::new(lambda, eta).unwrap()
    }

    #[test]
    fn corollary3_examples() {
        let p = params(0.01, 0.0001);
        assert!(corollary3_holds(&profile(&[0; 4]), &p));
        assert!(!corollary3_holds(&profile(&[0]), &p));
        let half = params(1.0, 0.5);
        let (lhs, rhs) = corollary_terms(&profile(&[0, 10, 10, 10]), half.contraction());
        assert!((lhs - 2.0 * (1.0 + 3.0 / 1024.0)).abs() < 1e-15);
        assert_eq!(rhs, 6.0);
        assert!(!corollary3_holds(&profile(&[0, 10, 10, 10]), &half));
    }

    #[test]
    fn corollary4_examples() {
        let p = params(0.3, 0.5);
        let d = profile(&[0, 3, 1, 7]);
        assert_eq!(corollary4_holds(&d, p.contraction()), corollary3_holds(&d, &p));
        for k in 2..50 {
            assert!(corollary4_holds(&profile(&vec![0; k]), 1.0));
        }
        let mut t = vec![100_000; 10];
        t[0] = 0;
        let (lhs, rhs) = corollary_terms(&profile(&t), 0.99999);
        assert!((lhs - 2.0 * (1.0 + 9.0 * 0.99999f64.powi(100_000))).abs() < 1e-12);
        assert!((lhs - 8.62).abs() < 0.01 && (rhs - 13.162).abs() < 1e-3);
        assert!(!corollary4_holds(&profile(&t), 0.99999));
    }

    fn with_w(mut tp: TheoryParams, w1: f64, w2: f64, s: f64) -> TheoryParams {
        tp.wasserstein_1 = Some(w1);
        tp.wasserstein_2 = Some(w2);
        tp.sigma_star = Some(s);
        tp
    }

    #[test]
    fn corollary2_examples() {
        let p = params(0.01, 0.0001);
        let zero = with_w(TheoryParams::new(p, profile(&[0; 4]), 10), 1.0, 1.0, 1.0);
        assert!(matches!(corollary2(&zero), Err(Error::ZeroDenominator(_))));

        let half = params(1.0, 0.5);
        let skewed = TheoryParams::new(half, profile(&[0, 0, 1, 1]), 2000);
        let c = corollary2(&with_w(skewed.clone(), 0.0, 1.0, 1.0)).unwrap();
        assert_eq!(c.rhs, 0.0);
        assert!(c.holds);
        let c = corollary2(&with_w(skewed.clone(), 5.0, 5.0, 0.3)).unwrap();
        assert_eq!(c.lhs, 1.0);
        assert!(c.rhs < 1e-300 && c.holds);
        assert!(corollary2(&skewed).is_err());
    }

    #[test]
    fn theorem4_worked_example() {
        let tp = TheoryParams::new(params(0.01, 0.0001), profile(&[0]), 0);
        let b = theorem4_bound(&tp).unwrap();
        assert!((b - 80_160.08).abs() < 1e-7, "{b}");
    }

    #[test]
    fn theorem4_zero_delays_is_the_balanced_bound() {
        for k in [1usize, 2, 7, 64] {
            for t in [0u64, 10, 10_000] {
                let mut tp = TheoryParams::new(params(0.05, 0.01), profile(&vec![0; k]), t);
                tp.residual = 0.3;
                let a = theorem4_bound(&tp).unwrap();
                let b = simuparallel_bound(&tp).unwrap();
                assert!((a - b).abs() <= 1e-12 * b, "{a} {b}");
            }
        }
    }

    #[test]
    fn theorem4_large_t_limit() {
        let p = params(0.01, 0.0001);
        let mut tp = TheoryParams::new(p, profile(&[0, 5, 9]), 1_000_000_000);
        tp.residual = 0.04;
        tp.grad_lip = 2.0;
        let sum = tp.delays.discounted_sum(p.contraction());
        let limit = (2.0 * p.eta.sqrt() * (2.0 * 2.0 * 3.0f64).sqrt() / (p.lambda.sqrt() * sum) + 0.2).powi(2);
        let b = theorem4_bound(&tp).unwrap();
        assert!((b - limit).abs() <= 1e-12 * limit);
    }

    #[test]
    fn theorem5_examples() {
        let p = params(0.01, 0.001);
        let mut tp = TheoryParams::new(p, profile(&[0, 40, 200]), 500);
        tp.rate = p.contraction();
        assert_eq!(theorem5_bound(&tp).unwrap(), theorem4_bound(&tp).unwrap());
        let mut prev = f64::INFINITY;
        for r in [0.999, 0.99, 0.9] {
            tp.rate = r;
            let b = theorem5_bound(&tp).unwrap();
            assert!(b <= prev);
            prev = b;
        }
        tp.rate = 1.0;
        tp.delays = profile(&[0, 0, 0]);
        let b = theorem5_bound(&tp).unwrap();
        let lambda = p.lambda;
        let inner = (1.0 / lambda + (2.0 * p.eta.sqrt() / lambda.sqrt() + 1.0 / lambda) / 3f64.sqrt()) * 2f64.sqrt();
        assert!((b - inner * inner).abs() <= 1e-12 * b);
        tp.rate = 0.0;
        assert!(theorem5_bound(&tp).is_err());
    }

    #[test]
    fn deduction_examples() {
        let p = params(0.01, 0.0001);
        let mut tp = TheoryParams::new(p, profile(&[0, 30, 70]), 100);
        tp.residual = 0.5;
        tp.span = Some(100);
        let d = deduction_bounds(&tp).unwrap();
        assert!((d.weighted - theorem4_bound(&tp).unwrap()).abs() <= 1e-12 * d.weighted);

        tp.delays = profile(&[0; 4]);
        tp.span = Some(50);
        let d = deduction_bounds(&tp).unwrap();
        assert!((d.weighted - d.balanced).abs() <= 1e-12 * d.balanced);
        // two rounds at k = 4 divide the spread term by (√4)² = 4
        let mut one = tp.clone();
        one.grad_lip = 0.5;
        one.residual = 0.0;
        one.g = 1.0;
        let rho_t = p.contraction().powi(100);
        let spread = 2.0 * p.eta.sqrt() / p.lambda.sqrt() + rho_t / p.lambda;
        let expect = (rho_t / p.lambda + spread / 4.0).powi(2);
        let got = deduction_bounds(&one).unwrap().balanced;
        assert!((got - expect).abs() <= 1e-12 * expect);

        tp.span = Some(30);
        assert!(matches!(deduction_bounds(&tp), Err(Error::InvalidSpan { .. })));
        tp.span = None;
        assert!(deduction_bounds(&tp).is_err());
    }

    #[test]
    fn deduction_validity_flag() {
        let p = params(0.1, 0.1);
        let mut tp = TheoryParams::new(p, profile(&[0, 90, 90]), 100);
        tp.span = Some(10);
        assert!(!deduction_bounds(&tp).unwrap().valid);
        tp.delays = profile(&[0, 0, 0]);
        assert!(deduction_bounds(&tp).unwrap().valid);
    }

    #[test]
    fn huge_exponents_stay_finite_or_infinite() {
        let p = params(0.01, 0.0001);
        let mut tp = TheoryParams::new(p, profile(&[0, 1_000_000_000]), 1_000_000_000);
        tp.span = Some(1);
        let d = deduction_bounds(&tp).unwrap();
        assert_eq!(d.weighted, f64::INFINITY);
        assert!(d.balanced.is_finite());
        assert!(theorem4_bound(&tp).unwrap().is_finite());
    }

    #[test]
    fn fitter_examples() {
        let floor = 1.5;
        let curve: Vec<(f64, f64)> = (0..40).map(|t| (t as f64, 5.0 * 0.9f64.powi(t) + floor)).collect();
        let fit = fit_contracting_rate(&curve, floor).unwrap();
        assert!((fit.rate - 0.9).abs() < 1e-9);
        assert!((fit.log_amplitude - 5f64.ln()).abs() < 1e-9);

        let two = fit_contracting_rate(&[(0.0, 10.0 + floor), (1.0, 5.0 + floor)], floor).unwrap();
        assert!((two.rate - 0.5).abs() < 1e-15);

        let flat = [(0.0, 3.0), (1.0, 3.0), (2.0, 3.0)];
        assert!(matches!(fit_contracting_rate(&flat, 0.0), Err(Error::NotContracting(_))));
        assert!(fit_contracting_rate(&[(0.0, 1.0)], 0.0).is_err());
        assert!(fit_contracting_rate(&[(0.0, 1.0), (1.0, 0.5)], 0.7).is_err());
    }

    fn arb_tuple() -> impl Strategy<Value = (LossParams, Vec<u64>, u64, f64)> {
        (
            1e-4f64..1.0,
            1e-5f64..0.5,
            proptest::collection::vec(0u64..5000, 1..12),
            0u64..100_000,
            0.0f64..10.0,
        )
            .prop_map(|(lambda, eta, mut d, t, residual)| {
                d[0] = 0;
                (LossParams { lambda, eta }, d, t, residual)
            })
    }

    proptest! {
        #[test]
        fn theorem4_monotonicity((p, d, t, residual) in arb_tuple(), pick in 0usize..12, bump in 1u64..1000) {
            let mut tp = TheoryParams::new(p, profile(&d), t);
            tp.residual = residual;
            let base = theorem4_bound(&tp).unwrap();

            let mut later = tp.clone();
            later.t = t + bump;
            prop_assert!(theorem4_bound(&later).unwrap() <= base * (1.0 + 1e-12));

            let mut noisier = tp.clone();
            noisier.residual = residual + 1.0;
            prop_assert!(theorem4_bound(&noisier).unwrap() >= base);

            let mut slower = d.clone();
            let i = pick % d.len();
            slower[i] += bump;
            if slower.contains(&0) {
                tp.delays = profile(&slower);
                prop_assert!(theorem4_bound(&tp).unwrap() >= base * (1.0 - 1e-12));
            }
        }

        #[test]
        fn corollaries_agree(d in proptest::collection::vec(0u64..10_000, 1..40), lambda in 1e-4f64..1.0, eta in 1e-4f64..0.9) {
            let mut d = d;
            d[0] = 0;
            let p = LossParams { lambda, eta };
            let prof = profile(&d);
            prop_assert_eq!(corollary4_holds(&prof, p.contraction()), corollary3_holds(&prof, &p));
        }

        #[test]
        fn fitter_is_scale_invariant(r in 0.5f64..0.999, amp in 0.1f64..100.0, scale in 0.01f64..100.0) {
            let curve: Vec<(f64, f64)> = (0..30).map(|t| (t as f64 * 10.0, amp * r.powf(t as f64 * 10.0) * (1.0 + 0.01 * ((t % 3) as f64)))).collect();
            let scaled: Vec<(f64, f64)> = curve.iter().map(|&(t, v)| (t, v * scale)).collect();
            let a = fit_contracting_rate(&curve, 0.0).unwrap();
            let b = fit_contracting_rate(&scaled, 0.0).unwrap();
            prop_assert!((a.rate - b.rate).abs() < 1e-12);
        }
    }
}
