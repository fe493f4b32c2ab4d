//! RMSProp with squared-gradient running average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, ParamId};
use crate::error::{MastError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub smoothing: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 5e-4,
            smoothing: 0.99,
            epsilon: 1e-5,
        }
    }
}

/// Single-tensor update: `v ← ρ·v + (1−ρ)·g²`, `p ← p − lr·g/(√v + ε)`.
pub fn rmsprop_step(param: &mut Matrix, grad: &Matrix, v: &mut Matrix, cfg: &RmsPropConfig) {
    debug_assert_eq!(param.shape(), grad.shape());
    debug_assert_eq!(param.shape(), v.shape());
    let rho = cfg.smoothing;
    for ((p, &g), s) in param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(v.as_mut_slice())
    {
        *s = rho * *s + (1.0 - rho) * g * g;
        *p -= cfg.lr * g / (s.sqrt() + cfg.epsilon);
    }
}

#[derive(Clone, Debug, Default)]
pub struct RmsProp {
    pub cfg: RmsPropConfig,
    state: BTreeMap<ParamId, Matrix>,
}

impl RmsProp {
    pub fn new(cfg: RmsPropConfig) -> Self {
        RmsProp {
            cfg,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    ///
    /// A non-finite gradient anywhere rejects the whole step and leaves
    /// parameters and state untouched.
    pub fn step<'a, I>(&mut self, params: I, grads: &Gradients) -> Result<()>
    where
        I: IntoIterator<Item = (ParamId, &'a mut Matrix)>,
    {
        if !grads.is_finite() {
            let bad: Vec<String> = grads
                .iter()
                .filter(|(_, g)| !g.is_finite())
                .map(|(id, _)| id.0.to_string())
                .collect();
            return Err(MastError::NonFinite(format!(
                "gradient for params [{}]",
                bad.join(", ")
            )));
        }
        for (id, p) in params {
            let Some(g) = grads.get(id) else { continue };
            let v = self
                .state
                .entry(id)
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            rmsprop_step(p, g, v, &self.cfg);
        }
        Ok(())
    }

    pub fn state(&self, id: ParamId) -> Option<&Matrix> {
        self.state.get(&id)
    }
}
