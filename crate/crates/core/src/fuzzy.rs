//! Fuzzy connectives and quantifiers.
//!
//! Conjunction is the product t-norm, disjunction the max t-conorm, negation
//! is `1 - a` and implication is the Reichenbach form `1 - a + a·b`. The
//! quantifiers are generalized means with an integer exponent `q`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FuzzyError {
    #[error("quantifier over an empty set")]
    EmptySet,
    #[error("quantifier exponent q must be >= 1, got {0}")]
    BadExponent(u32),
    #[error("clamp eps must lie in (0, 1e-3), got {0}")]
    BadEps(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzyConfig {
    pub q: u32,
    pub eps: f64,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        FuzzyConfig { q: 5, eps: 1e-7 }
    }
}

impl FuzzyConfig {
    pub fn new(q: u32, eps: f64) -> Result<Self, FuzzyError> {
        let cfg = FuzzyConfig { q, eps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_q(q: u32) -> Result<Self, FuzzyError> {
        Self::new(q, FuzzyConfig::default().eps)
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        if self.q < 1 {
            return Err(FuzzyError::BadExponent(self.q));
        }
        if !(self.eps > 0.0 && self.eps < 1e-3) {
            return Err(FuzzyError::BadEps(self.eps));
        }
        Ok(())
    }
}

#[inline]
fn in_unit(a: f64) -> bool {
    (0.0..=1.0).contains(&a)
}

#[inline]
pub fn t_norm(a: f64, b: f64) -> f64 {
    debug_assert!(in_unit(a) && in_unit(b), "truth values out of range: {a}, {b}");
    a * b
}

#[inline]
pub fn t_conorm(a: f64, b: f64) -> f64 {
    debug_assert!(in_unit(a) && in_unit(b), "truth values out of range: {a}, {b}");
    a.max(b)
}

#[inline]
pub fn negation(a: f64) -> f64 {
    debug_assert!(in_unit(a), "truth value out of range: {a}");
    1.0 - a
}

#[inline]
pub fn implication(a: f64, b: f64) -> f64 {
    debug_assert!(in_unit(a) && in_unit(b), "truth values out of range: {a}, {b}");
    1.0 - a + a * b
}

/// `((1/K) Σ x^q)^(1/q)`; exact zeros contribute zero.
pub fn generalized_mean(values: &[f64], q: u32) -> Result<f64, FuzzyError> {
    if values.is_empty() {
        return Err(FuzzyError::EmptySet);
    }
    if q < 1 {
        return Err(FuzzyError::BadExponent(q));
    }
    let sum: f64 = values.iter().map(|&x| pow_q(x, q)).sum();
    Ok(root_q(sum / values.len() as f64, q))
}

/// Existential quantifier: generalized mean of the truth values.
pub fn exists(values: &[f64], q: u32) -> Result<f64, FuzzyError> {
    debug_assert!(values.iter().all(|&v| in_unit(v)));
    generalized_mean(values, q)
}

/// Universal quantifier: one minus the generalized mean of the falsities.
pub fn forall(values: &[f64], q: u32) -> Result<f64, FuzzyError> {
    debug_assert!(values.iter().all(|&v| in_unit(v)));
    if values.is_empty() {
        return Err(FuzzyError::EmptySet);
    }
    if q < 1 {
        return Err(FuzzyError::BadExponent(q));
    }
    let sum: f64 = values.iter().map(|&v| pow_q(1.0 - v, q)).sum();
    Ok(1.0 - root_q(sum / values.len() as f64, q))
}

#[inline(always)]
pub(crate) fn pow_q(x: f64, q: u32) -> f64 {
    match q {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        4 => {
            let x2 = x * x;
            x2 * x2
        }
        5 => {
            let x2 = x * x;
            x2 * x2 * x
        }
        _ => x.powi(q as i32),
    }
}

#[inline]
pub(crate) fn root_q(m: f64, q: u32) -> f64 {
    match q {
        1 => m,
        2 => m.sqrt(),
        _ if m == 0.0 => 0.0,
        _ => m.powf(1.0 / q as f64),
    }
}
