use serde::{Deserialize, Serialize};

use crate::error::{MastError, Result};

/// How the next-state value is extracted from a utility vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Max,
    Softmax,
    Mellowmax,
    SoftMellowmax,
}

impl std::str::FromStr for Operator {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Operator::Max),
            "softmax" => Ok(Operator::Softmax),
            "mellowmax" => Ok(Operator::Mellowmax),
            "soft_mellowmax" | "sm" => Ok(Operator::SoftMellowmax),
            _ => Err(MastError::Config(format!(
                "unknown operator {s:?} (expected max, softmax, mellowmax or soft_mellowmax)"
            ))),
        }
    }
}

impl std::fmt::Display for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Operator::Max => "max",
            Operator::Softmax => "softmax",
            Operator::Mellowmax => "mellowmax",
            Operator::SoftMellowmax => "soft_mellowmax",
        })
    }
}

fn check_finite(q: &[f64], what: &str) -> Result<()> {
    if q.is_empty() {
        return Err(MastError::InvalidArgument(format!("{what}: empty input")));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(MastError::NonFinite(format!("{what}: input {q:?}")));
    }
    Ok(())
}

fn max_of(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Softmax weights `exp(β q_u) / Σ exp(β q_u')`, max-shifted.
pub fn softmax_weights(q: &[f64], beta: f64) -> Vec<f64> {
    let m = q.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|v| (beta * v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `(1/ω) · log Σ_u softmax_α(q)_u · exp(ω q_u)`.
pub fn soft_mellowmax(q: &[f64], alpha: f64, omega: f64) -> Result<f64> {
    check_finite(q, "soft_mellowmax")?;
    if !(omega > 0.0) {
        return Err(MastError::InvalidArgument(format!("omega must be > 0, got {omega}")));
    }
    let m = max_of(q);
    // Ratio of two log-sum-exps over the unnormalized softmax weights, each
    // shifted by its own maximum so neither side underflows. Constant
    // inputs give identical sums and stay exact.
    let am = q.iter().map(|v| alpha * v).fold(f64::NEG_INFINITY, f64::max);
    let den: Vec<f64> = q.iter().map(|v| alpha * v - am).collect();
    let num: Vec<f64> = q.iter().zip(&den).map(|(v, d)| d + omega * (v - m)).collect();
    Ok(m + (log_sum_exp(&num) - log_sum_exp(&den)) / omega)
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let mx = max_of(x);
    mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// `(1/ω) · log mean_u exp(ω q_u)`.
pub fn mellowmax(q: &[f64], omega: f64) -> Result<f64> {
    check_finite(q, "mellowmax")?;
    if !(omega > 0.0) {
        return Err(MastError::InvalidArgument(format!("omega must be > 0, got {omega}")));
    }
    let m = max_of(q);
    let s: f64 = q.iter().map(|qu| (omega * (qu - m)).exp()).sum::<f64>() / q.len() as f64;
    Ok(m + s.ln() / omega)
}

/// Boltzmann-weighted average `Σ_u softmax_β(q)_u · q_u`.
pub fn softmax_value(q: &[f64], beta: f64) -> Result<f64> {
    check_finite(q, "softmax")?;
    Ok(softmax_weights(q, beta)
        .iter()
        .zip(q)
        .map(|(p, v)| p * v)
        .sum())
}
