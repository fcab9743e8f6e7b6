//! Deterministic sequences driving the iteration.
//!
//! Step sizes `γ_n = γ₁ n^{-β}`, the gradient-squared gain `p_n = p₁ n^{-r}`,
//! the forgetting rate `q_n`, the noise scale `σ_n = σ₁ n^{-s}` (a mini-batch
//! of size `∝ n^{2s}`), the historical `β₂(n)` family and its normalizing
//! sequence `S_n`.
//!
//! Index convention: the update from `(θ_n, w_n)` uses `γ_{n+1}`, `p_n`, `q_n`
//! and `σ_{n+1}`.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("{name}: coefficient must be positive, got {value}")]
    NonPositiveCoef { name: &'static str, value: f64 },
    #[error("{name}: exponent must be non-negative and finite, got {value}")]
    BadExponent { name: &'static str, value: f64 },
    #[error("eps must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("q_inf must be positive, got {0}")]
    NonPositiveQ(f64),
    #[error("beta2 must lie in (0, 1], got {0}")]
    BadBeta2(f64),
}

/// `coef · n^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSeq {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerSeq {
    pub fn new(coef: f64, exponent: f64) -> Self {
        PowerSeq { coef, exponent }
    }

    pub fn constant(coef: f64) -> Self {
        PowerSeq { coef, exponent: 0.0 }
    }

    /// Value at index `n ≥ 1`.
    pub fn value(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        if self.exponent == 0.0 {
            self.coef
        } else {
            self.coef * (n as f64).powf(-self.exponent)
        }
    }

    /// Limit as `n → ∞`.
    pub fn limit(&self) -> f64 {
        if self.exponent > 0.0 {
            0.0
        } else {
            self.coef
        }
    }

    fn check(&self, name: &'static str, allow_zero: bool) -> Result<(), ScheduleError> {
        let bad_coef = if allow_zero {
            !(self.coef >= 0.0) || !self.coef.is_finite()
        } else {
            !(self.coef > 0.0) || !self.coef.is_finite()
        };
        if bad_coef {
            return Err(ScheduleError::NonPositiveCoef {
                name,
                value: self.coef,
            });
        }
        if !(self.exponent >= 0.0) || !self.exponent.is_finite() {
            return Err(ScheduleError::BadExponent {
                name,
                value: self.exponent,
            });
        }
        Ok(())
    }
}

/// Forgetting rate `q_n`: either constant or `q_∞ + c·n^{-r}` so that
/// `|q_n − q_∞| = O(p_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QSeq {
    Constant { q_inf: f64 },
    Converging { q_inf: f64, c: f64, r: f64 },
}

impl QSeq {
    pub fn value(&self, n: u64) -> f64 {
        match *self {
            QSeq::Constant { q_inf } => q_inf,
            QSeq::Converging { q_inf, c, r } => q_inf + c * (n as f64).powf(-r),
        }
    }

    pub fn limit(&self) -> f64 {
        match *self {
            QSeq::Constant { q_inf } | QSeq::Converging { q_inf, .. } => q_inf,
        }
    }
}

/// All tunables of the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub gamma: PowerSeq,
    pub p: PowerSeq,
    pub q: QSeq,
    pub sigma: PowerSeq,
    pub eps: f64,
}

/// Values used by the update from index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// `γ_{n+1}`
    pub gamma: f64,
    /// `p_n`
    pub p: f64,
    /// `q_n`
    pub q: f64,
    /// `σ_{n+1}`
    pub sigma: f64,
}

impl ScheduleSet {
    /// Power-law schedule `γ₁ n^{-β}`, `p₁ n^{-r}`, constant `q_∞`, `σ₁ n^{-s}`.
    #[allow(clippy::too_many_arguments)]
    pub fn power_law(
        beta: f64,
        r: f64,
        s: f64,
        gamma1: f64,
        p1: f64,
        q_inf: f64,
        sigma1: f64,
        eps: f64,
    ) -> Result<Self, ScheduleError> {
        let set = ScheduleSet {
            gamma: PowerSeq::new(gamma1, beta),
            p: PowerSeq::new(p1, r),
            q: QSeq::Constant { q_inf },
            sigma: PowerSeq::new(sigma1, s),
            eps,
        };
        set.check()?;
        Ok(set)
    }

    /// Structural checks; assumption checks live in [`validate_assumptions`].
    pub fn check(&self) -> Result<(), ScheduleError> {
        self.gamma.check("gamma", false)?;
        self.p.check("p", true)?;
        self.sigma.check("sigma", true)?;
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(ScheduleError::NonPositiveEps(self.eps));
        }
        if !(self.q.limit() > 0.0) {
            return Err(ScheduleError::NonPositiveQ(self.q.limit()));
        }
        Ok(())
    }

    pub fn p_inf(&self) -> f64 {
        self.p.limit()
    }

    pub fn q_inf(&self) -> f64 {
        self.q.limit()
    }

    /// `sup_n p_n`; the sequence is non-increasing so this is `p₁`.
    pub fn sup_p(&self) -> f64 {
        self.p.coef
    }
}

/// Evaluates `(γ_{n+1}, p_n, q_n, σ_{n+1})` at step `n ≥ 1`.
pub fn eval_schedules(set: &ScheduleSet, n: u64) -> StepParams {
    assert!(n >= 1, "schedules are indexed from 1");
    StepParams {
        gamma: set.gamma.value(n + 1),
        p: set.p.value(n),
        q: set.q.value(n),
        sigma: set.sigma.value(n + 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.pass { "pass" } else { "FAIL" };
            writeln!(f, "[{tag}] {:<28} {}", c.name, c.reason)?;
        }
        Ok(())
    }
}

pub const CHECK_SUM_GAMMA: &str = "sum_gamma_diverges";
pub const CHECK_SUM_GAMMA_SQ: &str = "sum_gamma_sq_converges";
pub const CHECK_SUM_P_GAMMA_SIGMA: &str = "sum_p_gamma_sigma_sq_converges";
pub const CHECK_GAMMA_Q: &str = "gamma_q_below_one";
pub const CHECK_GAMMA_OVER_P: &str = "gamma_over_p_vanishes";

/// Checks the step-size hypotheses from the exponents alone (p-series tests).
pub fn validate_assumptions(set: &ScheduleSet) -> ValidationReport {
    let beta = set.gamma.exponent;
    let r = set.p.exponent;
    let s = set.sigma.exponent;
    let mut checks = Vec::with_capacity(5);

    checks.push(Check {
        name: CHECK_SUM_GAMMA.into(),
        pass: beta <= 1.0,
        reason: format!("sum of n^-{beta} diverges iff beta <= 1"),
    });
    checks.push(Check {
        name: CHECK_SUM_GAMMA_SQ.into(),
        pass: beta > 0.5,
        reason: format!("sum of n^-{} converges iff beta > 1/2", 2.0 * beta),
    });

    let noiseless = set.sigma.coef == 0.0 || set.p.coef == 0.0;
    let total = beta + r + 2.0 * s;
    checks.push(Check {
        name: CHECK_SUM_P_GAMMA_SIGMA.into(),
        pass: noiseless || total > 1.0,
        reason: if noiseless {
            "series is identically zero".to_string()
        } else {
            format!("beta + r + 2s = {total} must exceed 1")
        },
    });

    // γ_{n+1} q_n is maximal either at n = 1 (q non-increasing) or in the limit.
    let gq_first = set.gamma.value(2) * set.q.value(1);
    let gq_limit = set.gamma.coef * set.q_inf();
    let gq = gq_first.max(gq_limit);
    checks.push(Check {
        name: CHECK_GAMMA_Q.into(),
        pass: gq < 1.0,
        reason: format!("max(gamma1*q_inf, gamma2*q1) = {gq} must be < 1"),
    });

    let ratio_ok = set.p.coef > 0.0 && (r < beta);
    checks.push(Check {
        name: CHECK_GAMMA_OVER_P.into(),
        pass: ratio_ok,
        reason: if set.p.coef == 0.0 {
            "p is identically zero".to_string()
        } else {
            format!("gamma/p ~ n^({r} - {beta}) vanishes iff r < beta")
        },
    });

    ValidationReport { checks }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Invalid,
    CriticalPoint,
    LocalMinimizer,
}

impl Regime {
    pub fn guarantee(&self) -> &'static str {
        match self {
            Regime::Invalid => "no guarantee",
            Regime::CriticalPoint => "critical point",
            Regime::LocalMinimizer => "local minimizer",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Invalid => "invalid",
            Regime::CriticalPoint => "critical_point",
            Regime::LocalMinimizer => "local_minimizer",
        };
        f.write_str(s)
    }
}

/// Places the exponent triple `(β, r, s)` in the convergence phase diagram.
///
/// Strict inequalities fall back to the weaker regime on equality. The
/// mini-batch bound `s ≤ (1 − β)/2` is inclusive.
pub fn classify_regime(beta: f64, r: f64, s: f64) -> Regime {
    let finite = beta.is_finite() && r.is_finite() && s.is_finite();
    if !finite || r < 0.0 || s < 0.0 {
        return Regime::Invalid;
    }
    let critical = beta > 0.5 && beta <= 1.0 && beta + r + 2.0 * s > 1.0 && r < beta;
    if !critical {
        return Regime::Invalid;
    }
    let lower = (1.0 - beta).max(beta / 2.0 + s);
    let minimizer = beta < 1.0 && s <= (1.0 - beta) / 2.0 && lower < r;
    if minimizer {
        Regime::LocalMinimizer
    } else {
        Regime::CriticalPoint
    }
}

/// The historical second-moment decay `β₂(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Beta2Schedule {
    ConstantOne,
    Constant { beta2: f64 },
    /// `β₂(n) = 1 − b·n^{-beta}`
    Vanishing { b: f64, beta: f64 },
}

impl Beta2Schedule {
    pub fn check(&self) -> Result<(), ScheduleError> {
        match *self {
            Beta2Schedule::ConstantOne => Ok(()),
            Beta2Schedule::Constant { beta2 } => {
                if beta2 > 0.0 && beta2 <= 1.0 {
                    Ok(())
                } else {
                    Err(ScheduleError::BadBeta2(beta2))
                }
            }
            Beta2Schedule::Vanishing { b, beta } => {
                if !(b > 0.0 && b < 1.0) {
                    return Err(ScheduleError::BadBeta2(1.0 - b));
                }
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(ScheduleError::BadExponent {
                        name: "beta2",
                        value: beta,
                    });
                }
                Ok(())
            }
        }
    }

    /// `β₂(n)`; index 0 reuses the value at 1.
    pub fn value(&self, n: u64) -> f64 {
        match *self {
            Beta2Schedule::ConstantOne => 1.0,
            Beta2Schedule::Constant { beta2 } => beta2,
            Beta2Schedule::Vanishing { b, beta } => 1.0 - b * (n.max(1) as f64).powf(-beta),
        }
    }
}

/// Iterates the normalizing recursion `S_0 = 1`, `S_{n+1} = β₂(n) S_n + 1`
/// and hands each `S_n` (starting from `S_0`) to `visit`.
pub fn sn_for_each(b2: &Beta2Schedule, n_max: u64, mut visit: impl FnMut(u64, f64)) {
    let mut s = 1.0;
    visit(0, s);
    for n in 0..n_max {
        s = b2.value(n) * s + 1.0;
        visit(n + 1, s);
    }
}

/// `S_0, …, S_{n_max}`.
pub fn sn_values(b2: &Beta2Schedule, n_max: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max as usize + 1);
    sn_for_each(b2, n_max, |_, s| out.push(s));
    out
}

/// One step of the canonical form equivalent to the historical recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalStep {
    pub n: u64,
    /// `γ_{n+1} = α_{n+1} / √S_n`
    pub gamma: f64,
    /// `γ̃_{n+1} = 1 / S_{n+1}`
    pub gamma_tilde: f64,
    pub p: f64,
    pub q: f64,
}

/// Maps the historical step sizes `α_{n+1}` and `β₂(n)` onto canonical data
/// for `n = 0, …, n_max − 1`.
pub fn historical_to_canonical(alpha: &PowerSeq, b2: &Beta2Schedule, n_max: u64) -> Vec<CanonicalStep> {
    let s = sn_values(b2, n_max);
    (0..n_max)
        .map(|n| {
            let i = n as usize;
            CanonicalStep {
                n,
                gamma: alpha.value(n + 1) / s[i].sqrt(),
                gamma_tilde: 1.0 / s[i + 1],
                p: 1.0,
                q: 1.0,
            }
        })
        .collect()
}
