//! Sample budget, per-vertex failure probabilities and the stopping rule.
//!
//! The adaptive phase stops once, for every vertex `x`, a lower deviation
//! width `f(b(x), delta_L(x), omega, tau)` and an upper width
//! `g(b(x), delta_U(x), omega, tau)` are both below `eps`, or once the static
//! budget `omega` is exhausted. The widths come from a [`DeviationBound`];
//! two are provided (Hoeffding and empirical Bernstein), both valid one-sided
//! bounds for means of i.i.d. variables in `[0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epoch::StateFrame;

/// Constant of the VC-dimension sample bound used for `omega`.
pub const OMEGA_CONSTANT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum StoppingError {
    #[error("tau must be at least 2, got {0}")]
    TooFewSamples(u64),
    #[error("estimate {0} outside [0, 1]")]
    EstimateOutOfRange(f64),
    #[error("failure probability {0} outside (0, 1)")]
    BadFailureProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    #[default]
    Hoeffding,
    #[serde(rename = "eb", alias = "empirical-bernstein")]
    EmpiricalBernstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorKind {
    #[default]
    Uniform,
    Weighted,
}

/// One-sided deviation widths for the mean of `tau` samples in `[0, 1]`.
///
/// `lower` corresponds to `f` (guarding `b < b~ - width`) and `upper` to `g`.
pub trait DeviationBound: Sync {
    fn lower(&self, estimate: f64, delta: f64, omega: u64, tau: u64) -> f64;
    fn upper(&self, estimate: f64, delta: f64, omega: u64, tau: u64) -> f64;
}

pub struct Hoeffding;

impl DeviationBound for Hoeffding {
    fn lower(&self, _estimate: f64, delta: f64, _omega: u64, tau: u64) -> f64 {
        ((1.0 / delta).ln() / (2.0 * tau as f64)).sqrt()
    }

    fn upper(&self, estimate: f64, delta: f64, omega: u64, tau: u64) -> f64 {
        self.lower(estimate, delta, omega, tau)
    }
}

/// Maurer–Pontil empirical Bernstein bound, with the plug-in variance
/// `b(1 - b)` of a Bernoulli mean.
pub struct EmpiricalBernstein;

impl DeviationBound for EmpiricalBernstein {
    fn lower(&self, estimate: f64, delta: f64, _omega: u64, tau: u64) -> f64 {
        let log = (2.0 / delta).ln();
        let tau = tau as f64;
        (2.0 * estimate * (1.0 - estimate) * log / tau).sqrt() + 7.0 * log / (3.0 * (tau - 1.0))
    }

    fn upper(&self, estimate: f64, delta: f64, omega: u64, tau: u64) -> f64 {
        self.lower(estimate, delta, omega, tau)
    }
}

impl BoundKind {
    pub fn bound(self) -> &'static dyn DeviationBound {
        match self {
            BoundKind::Hoeffding => &Hoeffding,
            BoundKind::EmpiricalBernstein => &EmpiricalBernstein,
        }
    }
}

fn check_domain(estimate: f64, delta: f64, tau: u64) -> Result<(), StoppingError> {
    if tau < 2 {
        return Err(StoppingError::TooFewSamples(tau));
    }
    if !(0.0..=1.0).contains(&estimate) {
        return Err(StoppingError::EstimateOutOfRange(estimate));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(StoppingError::BadFailureProbability(delta));
    }
    Ok(())
}

pub fn f_bound(estimate: f64, delta_lower: f64, omega: u64, tau: u64, kind: BoundKind) -> Result<f64, StoppingError> {
    check_domain(estimate, delta_lower, tau)?;
    Ok(kind.bound().lower(estimate, delta_lower, omega, tau))
}

pub fn g_bound(estimate: f64, delta_upper: f64, omega: u64, tau: u64, kind: BoundKind) -> Result<f64, StoppingError> {
    check_domain(estimate, delta_upper, tau)?;
    Ok(kind.bound().upper(estimate, delta_upper, omega, tau))
}

/// Static sample budget: `ceil(c / eps^2 * (floor(log2(VD - 2)) + 1 + ln(1 / delta)))`.
pub fn compute_omega(vertex_diameter_bound: u64, eps: f64, delta: f64) -> u64 {
    assert!(vertex_diameter_bound >= 2, "vertex diameter bound must be at least 2");
    assert!(eps > 0.0 && delta > 0.0 && delta < 1.0);
    let log_term = if vertex_diameter_bound > 2 {
        (vertex_diameter_bound - 2).ilog2() as f64
    } else {
        0.0
    };
    let omega = OMEGA_CONSTANT / (eps * eps) * (log_term + 1.0 + (1.0 / delta).ln());
    (omega.ceil() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingParams {
    pub eps: f64,
    pub delta: f64,
    pub omega: u64,
    pub delta_lower: Vec<f64>,
    pub delta_upper: Vec<f64>,
}

impl StoppingParams {
    pub fn new(eps: f64, delta: f64, omega: u64, delta_lower: Vec<f64>, delta_upper: Vec<f64>) -> Self {
        assert!(eps > 0.0, "eps must be positive");
        assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
        assert!(omega >= 1);
        assert_eq!(delta_lower.len(), delta_upper.len());
        StoppingParams {
            eps,
            delta,
            omega,
            delta_lower,
            delta_upper,
        }
    }

    /// True iff `sum_x delta_L(x) + delta_U(x) <= delta`, evaluated exactly.
    pub fn within_budget(&self) -> bool {
        sum_at_most(self.delta_lower.iter().chain(&self.delta_upper).copied(), self.delta)
    }
}

/// `delta / (2n)`, lowered by an ulp if needed so that `2n` copies sum to at most `delta`.
fn uniform_share(delta: f64, n: usize) -> f64 {
    let mut share = delta / (2 * n) as f64;
    while !sum_at_most(std::iter::repeat_n(share, 2 * n), delta) {
        share = f64::from_bits(share.to_bits() - 1);
    }
    share
}

/// Per-vertex failure probabilities from the calibration samples.
///
/// The uniform allocator assigns `delta / (2n)` to each side of each vertex.
/// The weighted allocator gives every side a floor of `delta / (4n)` and
/// splits the remaining mass of `delta (1 - 1e-6)` proportionally to
/// `sqrt(b~(x))`; it falls back to uniform when the calibration frame carries
/// no path occurrences.
pub fn calibrate(calibration: &StateFrame, delta: f64, n: usize, allocator: AllocatorKind) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    assert_eq!(calibration.n(), n);
    let uniform = || {
        let share = uniform_share(delta, n);
        (vec![share; n], vec![share; n])
    };
    match allocator {
        AllocatorKind::Uniform => uniform(),
        AllocatorKind::Weighted => {
            let tau = calibration.tau();
            if tau == 0 {
                return uniform();
            }
            let roots: Vec<f64> = calibration
                .counts()
                .iter()
                .map(|&c| (c as f64 / tau as f64).sqrt())
                .collect();
            let total: f64 = roots.iter().sum();
            if total == 0.0 {
                return uniform();
            }
            let floor = delta / (4 * n) as f64;
            let budget = delta * (1.0 - 1e-6);
            let extra_per_side = (budget - 2.0 * n as f64 * floor) / 2.0;
            let sides: Vec<f64> = roots.iter().map(|r| floor + extra_per_side * r / total).collect();
            (sides.clone(), sides)
        }
    }
}

/// Evaluates the stopping rule on a consistent aggregated frame.
pub fn check_stop(aggregated: &StateFrame, params: &StoppingParams, kind: BoundKind) -> bool {
    let tau = aggregated.tau();
    if tau >= params.omega {
        return true;
    }
    if tau < 2 {
        return false;
    }
    assert_eq!(aggregated.n(), params.delta_lower.len());
    let bound = kind.bound();
    let inv_tau = 1.0 / tau as f64;
    aggregated.counts().iter().enumerate().all(|(x, &c)| {
        let b = c as f64 * inv_tau;
        bound.lower(b, params.delta_lower[x], params.omega, tau) < params.eps
            && bound.upper(b, params.delta_upper[x], params.omega, tau) < params.eps
    })
}

/// Exact test of `sum(values) <= limit` using a floating-point expansion
/// (error-free summation), so no rounding can hide an overshoot.
pub fn sum_at_most(values: impl IntoIterator<Item = f64>, limit: f64) -> bool {
    let mut expansion: Vec<f64> = Vec::new();
    let mut grow = |x: f64| {
        let mut q = x;
        let mut out = Vec::with_capacity(expansion.len() + 1);
        for &e in &expansion {
            let (sum, err) = two_sum(q, e);
            if err != 0.0 {
                out.push(err);
            }
            q = sum;
        }
        if q != 0.0 {
            out.push(q);
        }
        expansion = out;
    };
    for v in values {
        grow(v);
    }
    grow(-limit);
    // Components are non-overlapping with increasing magnitude; the largest
    // decides the sign.
    expansion.last().is_none_or(|&top| top <= 0.0)
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_examples() {
        assert_eq!(compute_omega(2, 0.1, 0.1), 166);
        assert_eq!(compute_omega(6, 0.05, 0.1), 1061);
        // VD = 3 also has a zero log term.
        assert_eq!(compute_omega(3, 0.1, 0.1), 166);
    }

    #[test]
    fn omega_scales_with_inverse_square_eps() {
        let raw = |eps: f64| OMEGA_CONSTANT / (eps * eps) * (2.0 + 1.0 + (10f64).ln());
        assert!((raw(0.05) / raw(0.1) - 4.0).abs() < 1e-12);
        assert!((raw(0.001) / raw(0.01) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn hoeffding_example() {
        let w = f_bound(0.3, 1e-5, 100, 5000, BoundKind::Hoeffding).unwrap();
        assert!((w - 0.033931).abs() < 5e-7, "{w}");
        let w2 = f_bound(0.3, 1e-5, 100, 10_000, BoundKind::Hoeffding).unwrap();
        assert!((w2 - w / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bernstein_variance_term_vanishes_at_zero() {
        for (delta, tau) in [(0.01, 10u64), (1e-4, 1000), (0.3, 2)] {
            let w = g_bound(0.0, delta, 1, tau, BoundKind::EmpiricalBernstein).unwrap();
            let expected = 7.0 * (2.0 / delta).ln() / (3.0 * (tau as f64 - 1.0));
            assert_eq!(w, expected);
        }
    }

    #[test]
    fn bound_domain_errors() {
        assert_eq!(
            f_bound(0.1, 0.1, 1, 1, BoundKind::Hoeffding),
            Err(StoppingError::TooFewSamples(1))
        );
        assert!(f_bound(1.5, 0.1, 1, 5, BoundKind::Hoeffding).is_err());
        assert!(g_bound(0.5, 1.0, 1, 5, BoundKind::EmpiricalBernstein).is_err());
        assert!(g_bound(0.5, 0.0, 1, 5, BoundKind::EmpiricalBernstein).is_err());
    }

    #[test]
    fn uniform_calibration() {
        let frame = StateFrame::zeroed(4);
        let (lo, hi) = calibrate(&frame, 0.1, 4, AllocatorKind::Uniform);
        assert_eq!(lo, vec![0.0125; 4]);
        assert_eq!(hi, vec![0.0125; 4]);
    }

    #[test]
    fn weighted_with_no_occurrences_falls_back_to_uniform() {
        let frame = StateFrame::from_parts(50, &[0, 0, 0, 0]);
        assert_eq!(
            calibrate(&frame, 0.1, 4, AllocatorKind::Weighted),
            calibrate(&frame, 0.1, 4, AllocatorKind::Uniform)
        );
        let empty = StateFrame::zeroed(4);
        assert_eq!(
            calibrate(&empty, 0.1, 4, AllocatorKind::Weighted),
            calibrate(&empty, 0.1, 4, AllocatorKind::Uniform)
        );
    }

    #[test]
    fn weighted_shifts_mass_to_central_vertices() {
        let frame = StateFrame::from_parts(10, &[5, 0, 0, 0]);
        let (lo, hi) = calibrate(&frame, 0.1, 4, AllocatorKind::Weighted);
        assert!(lo[0] > 0.0125 && hi[0] > 0.0125);
        for x in 1..4 {
            assert_eq!(lo[x], 0.1 / 16.0);
            assert_eq!(hi[x], 0.1 / 16.0);
        }
        let p = StoppingParams::new(0.1, 0.1, 10, lo, hi);
        assert!(p.within_budget());
    }

    #[test]
    fn stop_on_budget_exhaustion() {
        let (lo, hi) = (vec![0.01; 3], vec![0.01; 3]);
        let p = StoppingParams::new(1e-9, 0.1, 40, lo, hi);
        let frame = StateFrame::from_parts(40, &[40, 3, 17]);
        assert!(check_stop(&frame, &p, BoundKind::Hoeffding));
        assert!(check_stop(&frame, &p, BoundKind::EmpiricalBernstein));
    }

    #[test]
    fn wide_bounds_do_not_stop() {
        let (lo, hi) = (vec![0.1 / 200.0; 100], vec![0.1 / 200.0; 100]);
        let p = StoppingParams::new(0.001, 0.1, 1_000_000, lo, hi);
        let frame = StateFrame::from_parts(10, &[0; 100]);
        assert!(!check_stop(&frame, &p, BoundKind::Hoeffding));
    }

    #[test]
    fn hoeffding_stops_exactly_at_877() {
        let frame = StateFrame::zeroed(4);
        let (lo, hi) = calibrate(&frame, 0.1, 4, AllocatorKind::Uniform);
        let p = StoppingParams::new(0.05, 0.1, u64::MAX, lo, hi);
        let at = |tau| check_stop(&StateFrame::from_parts(tau, &[0; 4]), &p, BoundKind::Hoeffding);
        assert!(!at(876));
        assert!(at(877));
        assert!(at(5000));
    }

    #[test]
    fn exact_budget_check_catches_single_ulp_overshoot() {
        // 0.1 + 0.2 rounds to 0.30000000000000004 but the exact sum is smaller.
        assert!(sum_at_most([0.1, 0.2], 0.300_000_000_000_000_04));
        let over = f64::from_bits(0.05f64.to_bits() + 1);
        assert!(!sum_at_most([over, 0.05], 0.1));
        assert!(sum_at_most(std::iter::empty(), 0.0));
    }
}
