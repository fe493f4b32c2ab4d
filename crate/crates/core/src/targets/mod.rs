//! Next-state value operators, bootstrapped joint values, one-step and
//! TD(λ) targets with a burn-in switch, and the weighted TD loss.

mod operators;

use serde::{Deserialize, Serialize};

pub use operators::{mellowmax, soft_mellowmax, softmax_value, softmax_weights, Operator};

use crate::error::{MastError, Result};
use crate::networks::{argmax_available, Mixing};
use crate::numerics::Matrix;
use crate::sparse_topology::ParamStore;

/// Largest joint action space the joint softmax operator will enumerate.
pub const JOINT_SOFTMAX_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub operator: Operator,
    /// Soft Mellowmax softmax temperature α.
    pub alpha: f64,
    /// Soft Mellowmax / mellowmax ω.
    pub omega: f64,
    pub lambda: f64,
    /// Global step at which TD(λ) targets replace one-step targets.
    pub t0: u64,
    pub gamma: f64,
    pub double_dqn: bool,
    /// Weight of samples with `Q_tot ≥ y` in the weighted loss.
    pub ow_alpha: f64,
    /// Inverse temperature of the joint softmax operator.
    pub softmax_beta: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            operator: Operator::SoftMellowmax,
            alpha: 1.0,
            omega: 10.0,
            lambda: 0.8,
            t0: 750_000,
            gamma: 0.99,
            double_dqn: true,
            ow_alpha: 0.1,
            softmax_beta: 5.0,
        }
    }
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(MastError::Config(format!("omega must be > 0, got {}", self.omega)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(MastError::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(MastError::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

fn restrict(q: &[f64], avail: Option<&[bool]>) -> Vec<f64> {
    match avail {
        Some(a) => q.iter().zip(a).filter(|(_, &ok)| ok).map(|(v, _)| *v).collect(),
        None => q.to_vec(),
    }
}

/// Value of one agent's utility vector under the configured operator.
///
/// With `max` and double-Q enabled the action is chosen on `online_q` and
/// evaluated on `q`; the smooth operators always read `q` in full.
pub fn operator_value(
    q: &[f64],
    cfg: &TargetConfig,
    online_q: Option<&[f64]>,
    avail: Option<&[bool]>,
) -> Result<f64> {
    let all = vec![true; q.len()];
    let avail_mask = avail.unwrap_or(&all);
    let vals = restrict(q, Some(avail_mask));
    if vals.is_empty() {
        return Err(MastError::InvalidArgument("no available action".into()));
    }
    match cfg.operator {
        Operator::Max => {
            if cfg.double_dqn {
                let online = online_q.ok_or_else(|| {
                    MastError::InvalidArgument(
                        "double-Q max needs the online utilities".into(),
                    )
                })?;
                let a = argmax_available(online, avail_mask)
                    .ok_or_else(|| MastError::InvalidArgument("no available action".into()))?;
                Ok(q[a])
            } else {
                Ok(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            }
        }
        Operator::Softmax => softmax_value(&vals, cfg.softmax_beta),
        Operator::Mellowmax => mellowmax(&vals, cfg.omega),
        Operator::SoftMellowmax => soft_mellowmax(&vals, cfg.alpha, cfg.omega),
    }
}

/// Per-agent utilities over a batch of rows for next-state bootstrapping.
pub struct BootstrapInputs<'a> {
    /// Global states, `R x state_dim`.
    pub states: &'a Matrix,
    /// Target-network utilities per agent, each `R x |U|`.
    pub target_q: &'a [Matrix],
    /// Online utilities per agent (double-Q selection), each `R x |U|`.
    pub online_q: Option<&'a [Matrix]>,
    /// Availability per agent, row-major `R·|U|` flags.
    pub avail: &'a [Vec<bool>],
}

/// Joint next-state values: the operator per agent followed by the mixer,
/// or the joint softmax over all available joint actions.
pub fn bootstrap_values<M: Mixing>(
    mixer: &M,
    store: &ParamStore,
    inp: &BootstrapInputs<'_>,
    cfg: &TargetConfig,
) -> Result<Vec<f64>> {
    let n = inp.target_q.len();
    let rows = inp.states.rows();
    if inp.avail.len() != n || inp.online_q.is_some_and(|o| o.len() != n) {
        return Err(MastError::InvalidArgument(
            "bootstrap inputs disagree on the agent count".into(),
        ));
    }
    if cfg.operator == Operator::Softmax {
        return joint_softmax_values(mixer, store, inp, cfg.softmax_beta);
    }
    let mut agent_vals = Matrix::zeros(rows, n);
    for i in 0..n {
        let q = &inp.target_q[i];
        let u = q.cols();
        for r in 0..rows {
            let online = inp.online_q.map(|o| o[i].row(r));
            let avail = &inp.avail[i][r * u..(r + 1) * u];
            agent_vals.set(r, i, operator_value(q.row(r), cfg, online, Some(avail))?);
        }
    }
    Ok(mixer.forward_plain(store, &agent_vals, inp.states)?.into_vec())
}

/// Single-row convenience wrapper around [`bootstrap_values`].
pub fn bootstrap_value<M: Mixing>(
    mixer: &M,
    store: &ParamStore,
    state: &[f64],
    target_q: &[Vec<f64>],
    online_q: Option<&[Vec<f64>]>,
    avail: &[Vec<bool>],
    cfg: &TargetConfig,
) -> Result<f64> {
    let states = Matrix::row_vector(state);
    let tq: Vec<Matrix> = target_q.iter().map(|q| Matrix::row_vector(q)).collect();
    let oq: Option<Vec<Matrix>> = online_q.map(|o| o.iter().map(|q| Matrix::row_vector(q)).collect());
    let inp = BootstrapInputs {
        states: &states,
        target_q: &tq,
        online_q: oq.as_deref(),
        avail,
    };
    Ok(bootstrap_values(mixer, store, &inp, cfg)?[0])
}

fn joint_softmax_values<M: Mixing>(
    mixer: &M,
    store: &ParamStore,
    inp: &BootstrapInputs<'_>,
    beta: f64,
) -> Result<Vec<f64>> {
    let n = inp.target_q.len();
    let rows = inp.states.rows();
    let sizes: Vec<usize> = inp.target_q.iter().map(Matrix::cols).collect();
    let joint: usize = sizes.iter().product();
    if joint > JOINT_SOFTMAX_LIMIT {
        return Err(MastError::Unsupported(format!(
            "joint softmax over {joint} joint actions exceeds the limit of {JOINT_SOFTMAX_LIMIT}"
        )));
    }
    let mut qs = Vec::new();
    let mut ss = Vec::new();
    let mut owner = Vec::new();
    for r in 0..rows {
        for code in 0..joint {
            let mut rem = code;
            let mut ok = true;
            let mut qrow = Vec::with_capacity(n);
            for i in 0..n {
                let a = rem % sizes[i];
                rem /= sizes[i];
                ok &= inp.avail[i][r * sizes[i] + a];
                qrow.push(inp.target_q[i].get(r, a));
            }
            if ok {
                qs.push(qrow);
                ss.push(inp.states.row(r).to_vec());
                owner.push(r);
            }
        }
    }
    let mixed = mixer.forward_plain(store, &Matrix::from_rows(&qs)?, &Matrix::from_rows(&ss)?)?;
    let mut out = Vec::with_capacity(rows);
    let mut start = 0;
    for r in 0..rows {
        let end = start + owner[start..].iter().take_while(|&&o| o == r).count();
        if end == start {
            return Err(MastError::InvalidArgument(format!("row {r}: no available joint action")));
        }
        out.push(softmax_value(&mixed.as_slice()[start..end], beta)?);
        start = end;
    }
    Ok(out)
}

/// Forward-view TD(λ) targets of one episode by backward recursion:
/// `y_{T−1} = r_{T−1} + γ b_{T−1}` and
/// `y_t = r_t + γ((1−λ) b_t + λ y_{t+1})`,
/// where `b_t` is the bootstrap value at `s_{t+1}` (zero after termination).
pub fn td_lambda_targets(rewards: &[f64], bootstraps: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MastError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if rewards.len() != bootstraps.len() {
        return Err(MastError::DimensionMismatch {
            context: "td_lambda_targets",
            left: format!("{} rewards", rewards.len()),
            right: format!("{} bootstraps", bootstraps.len()),
        });
    }
    let t_len = rewards.len();
    let mut y = vec![0.0; t_len];
    for t in (0..t_len).rev() {
        y[t] = if t + 1 == t_len {
            rewards[t] + gamma * bootstraps[t]
        } else {
            rewards[t] + gamma * ((1.0 - lambda) * bootstraps[t] + lambda * y[t + 1])
        };
    }
    Ok(y)
}

/// λ in effect at global step `t_global`: zero (one-step targets) strictly
/// before `t0`, the configured λ from `t0` on.
pub fn effective_lambda(t_global: u64, cfg: &TargetConfig) -> f64 {
    if t_global < cfg.t0 {
        0.0
    } else {
        cfg.lambda
    }
}

pub fn hybrid_target(
    rewards: &[f64],
    bootstraps: &[f64],
    t_global: u64,
    cfg: &TargetConfig,
) -> Result<Vec<f64>> {
    td_lambda_targets(rewards, bootstraps, cfg.gamma, effective_lambda(t_global, cfg))
}

/// 1 when the joint value underestimates the target, `ow_alpha` otherwise.
pub fn ow_weight(q_tot: f64, target: f64, ow_alpha: f64) -> f64 {
    if q_tot < target {
        1.0
    } else {
        ow_alpha
    }
}

/// Mean over valid entries of `w · (y − q)²`.
pub fn td_loss(q_tot: &[f64], targets: &[f64], weights: &[f64], valid: &[bool]) -> Result<f64> {
    let n = q_tot.len();
    if targets.len() != n || weights.len() != n || valid.len() != n {
        return Err(MastError::DimensionMismatch {
            context: "td_loss",
            left: format!("{n} predictions"),
            right: format!(
                "{} targets, {} weights, {} flags",
                targets.len(),
                weights.len(),
                valid.len()
            ),
        });
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(MastError::InvalidArgument("td_loss over an empty valid set".into()));
    }
    let s: f64 = (0..n)
        .filter(|&i| valid[i])
        .map(|i| weights[i] * (targets[i] - q_tot[i]).powi(2))
        .sum();
    Ok(s / count as f64)
}
