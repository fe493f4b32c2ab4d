//! Fully connected and GRU layers recorded on a [`Tape`].
//!
//! The GRU is the Cho et al. cell with gate matrices acting on the
//! concatenation `[h, x]`:
//!
//! ```text
//! z  = σ(W_z [h, x] + b_z)
//! r  = σ(W_r [h, x] + b_r)
//! h~ = tanh(W_h [r ⊙ h, x] + b_h)
//! h' = (1 − z) ⊙ h~ + z ⊙ h
//! ```
//!
//! Each gate matrix is `hidden x (hidden + input)`, so the cell holds
//! `3·h·(h + I)` weights.

use rand::Rng;

use super::matrix::Matrix;
use super::tape::{NodeId, ParamId, Tape};
use crate::error::{MastError, Result};

/// `x · wᵀ + b` for `x: B x I`, `w: O x I`, `b: 1 x O`.
pub fn linear_forward(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let (xs, ws, bs) = (
        tape.value(x).shape(),
        tape.value(w).shape(),
        tape.value(b).shape(),
    );
    if xs.1 != ws.1 {
        return Err(MastError::shapes("linear_forward (x vs w)", xs, ws));
    }
    if bs != (1, ws.0) {
        return Err(MastError::shapes("linear_forward (w vs b)", ws, bs));
    }
    let y = tape.matmul_t(x, w)?;
    tape.add_bias(y, b)
}

/// Tape handles for the six tensors of one GRU cell.
#[derive(Clone, Copy, Debug)]
pub struct GruNodes {
    pub wz: NodeId,
    pub wr: NodeId,
    pub wh: NodeId,
    pub bz: NodeId,
    pub br: NodeId,
    pub bh: NodeId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// One GRU step for a batch: `x: B x I`, `h_prev: B x H`, returns `B x H`.
pub fn gru_step(tape: &mut Tape, x: NodeId, h_prev: NodeId, p: &GruNodes) -> Result<NodeId> {
    let (xs, hs) = (tape.value(x).shape(), tape.value(h_prev).shape());
    if xs.1 != p.input_dim || hs.1 != p.hidden_dim || xs.0 != hs.0 {
        return Err(MastError::DimensionMismatch {
            context: "gru_step",
            left: format!("x {}x{}, h {}x{}", xs.0, xs.1, hs.0, hs.1),
            right: format!("input_dim {}, hidden_dim {}", p.input_dim, p.hidden_dim),
        });
    }
    let hx = tape.concat_cols(&[h_prev, x])?;
    let z_pre = linear_forward(tape, hx, p.wz, p.bz)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = linear_forward(tape, hx, p.wr, p.br)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let rhx = tape.concat_cols(&[rh, x])?;
    let c_pre = linear_forward(tape, rhx, p.wh, p.bh)?;
    let cand = tape.tanh(c_pre);
    let keep = tape.one_minus(z);
    let fresh = tape.mul(keep, cand)?;
    let carried = tape.mul(z, h_prev)?;
    tape.add(fresh, carried)
}

/// Owned GRU cell parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wz: Matrix,
    pub wr: Matrix,
    pub wh: Matrix,
    pub bz: Matrix,
    pub br: Matrix,
    pub bh: Matrix,
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = Matrix::zeros(hidden_dim, hidden_dim + input_dim);
        let b = Matrix::zeros(1, hidden_dim);
        GruCellParams {
            input_dim,
            hidden_dim,
            wz: w.clone(),
            wr: w.clone(),
            wh: w,
            bz: b.clone(),
            br: b.clone(),
            bh: b,
        }
    }

    /// Uniform init in `±1/sqrt(hidden)` for every tensor.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let cols = hidden_dim + input_dim;
        GruCellParams {
            input_dim,
            hidden_dim,
            wz: Matrix::uniform(hidden_dim, cols, bound, rng),
            wr: Matrix::uniform(hidden_dim, cols, bound, rng),
            wh: Matrix::uniform(hidden_dim, cols, bound, rng),
            bz: Matrix::uniform(1, hidden_dim, bound, rng),
            br: Matrix::uniform(1, hidden_dim, bound, rng),
            bh: Matrix::uniform(1, hidden_dim, bound, rng),
        }
    }

    pub fn weight_count(&self) -> usize {
        3 * self.hidden_dim * (self.hidden_dim + self.input_dim)
    }

    /// Places the six tensors on `tape` as parameters `ids[0..6]` in the
    /// order `wz, wr, wh, bz, br, bh`.
    pub fn register(&self, tape: &mut Tape, ids: [ParamId; 6]) -> GruNodes {
        GruNodes {
            wz: tape.param(ids[0], &self.wz),
            wr: tape.param(ids[1], &self.wr),
            wh: tape.param(ids[2], &self.wh),
            bz: tape.param(ids[3], &self.bz),
            br: tape.param(ids[4], &self.br),
            bh: tape.param(ids[5], &self.bh),
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}
