//! Tape-free forward passes used for acting and as an independent route
//! in tests.

use crate::error::{MastError, Result};
use crate::numerics::{elu, sigmoid, Matrix};

pub fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.shape() != (1, w.rows()) {
        return Err(MastError::shapes("linear (w vs b)", w.shape(), b.shape()));
    }
    let mut y = x.matmul_t(w)?;
    for r in 0..y.rows() {
        for (v, bv) in y.row_mut(r).iter_mut().zip(b.as_slice()) {
            *v += bv;
        }
    }
    Ok(y)
}

pub fn relu(x: Matrix) -> Matrix {
    map_in_place(x, |v| v.max(0.0))
}

pub fn elu_m(x: Matrix) -> Matrix {
    map_in_place(x, elu)
}

pub fn abs(x: Matrix) -> Matrix {
    map_in_place(x, f64::abs)
}

fn map_in_place(mut x: Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    for v in x.as_mut_slice() {
        *v = f(*v);
    }
    x
}

fn hcat(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

/// GRU step with gate matrices over `[h, x]`; `w = [wz, wr, wh]`, `b` likewise.
pub fn gru(x: &Matrix, h: &Matrix, w: [&Matrix; 3], b: [&Matrix; 3]) -> Result<Matrix> {
    let hidden = h.cols();
    if w[0].shape() != (hidden, hidden + x.cols()) || x.rows() != h.rows() {
        return Err(MastError::DimensionMismatch {
            context: "gru",
            left: format!("x {}x{}, h {}x{}", x.rows(), x.cols(), h.rows(), h.cols()),
            right: format!("gate {}x{}", w[0].rows(), w[0].cols()),
        });
    }
    let hx = hcat(h, x);
    let z = map_in_place(linear(&hx, w[0], b[0])?, sigmoid);
    let r = map_in_place(linear(&hx, w[1], b[1])?, sigmoid);
    let mut rh = r;
    for (v, hv) in rh.as_mut_slice().iter_mut().zip(h.as_slice()) {
        *v *= hv;
    }
    let cand = map_in_place(linear(&hcat(&rh, x), w[2], b[2])?, f64::tanh);
    let mut out = Matrix::zeros(h.rows(), hidden);
    for (((o, &zv), &cv), &hv) in out
        .as_mut_slice()
        .iter_mut()
        .zip(z.as_slice())
        .zip(cand.as_slice())
        .zip(h.as_slice())
    {
        *o = (1.0 - zv) * cv + zv * hv;
    }
    Ok(out)
}

/// `out[r, j] = Σ_i q[r, i] · w[r, i·e + j]`.
pub fn batched_mix(q: &Matrix, w: &Matrix, e: usize) -> Matrix {
    let n = q.cols();
    let mut out = Matrix::zeros(q.rows(), e);
    for r in 0..q.rows() {
        let (qr, wr) = (q.row(r), w.row(r));
        let or = out.row_mut(r);
        for i in 0..n {
            for j in 0..e {
                or[j] += qr[i] * wr[i * e + j];
            }
        }
    }
    out
}

pub fn add(mut a: Matrix, b: &Matrix) -> Matrix {
    a.add_assign(b);
    a
}
