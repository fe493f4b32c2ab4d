use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agent::add_linear;
use super::plain;
use crate::error::{MastError, Result};
use crate::numerics::{linear_forward, Matrix, NodeId, ParamId, Tape};
use crate::sparse_topology::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerArch {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    pub hyper_dim: usize,
}

/// Weight and bias ids of one fully connected layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearIds {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        let (w, b) = add_linear(store, name, inp, out, rng);
        LinearIds { w, b }
    }

    fn plain(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        plain::linear(x, store.value(self.w), store.value(self.b))
    }

    fn tape(&self, store: &ParamStore, tape: &mut Tape, trainable: bool, x: NodeId) -> Result<NodeId> {
        let w = store.bind(tape, self.w, trainable);
        let b = store.bind(tape, self.b, trainable);
        linear_forward(tape, x, w, b)
    }
}

/// Two-layer ReLU network `state → hidden → out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoLayer {
    pub l1: LinearIds,
    pub l2: LinearIds,
}

impl TwoLayer {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        TwoLayer {
            l1: LinearIds::new(store, &format!("{name}.0"), dims.0, dims.1, rng),
            l2: LinearIds::new(store, &format!("{name}.1"), dims.1, dims.2, rng),
        }
    }

    fn plain(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let h = plain::relu(self.l1.plain(store, x)?);
        self.l2.plain(store, &h)
    }

    fn tape(&self, store: &ParamStore, tape: &mut Tape, trainable: bool, x: NodeId) -> Result<NodeId> {
        let pre = self.l1.tape(store, tape, trainable, x)?;
        let h = tape.relu(pre);
        self.l2.tape(store, tape, trainable, h)
    }

    fn weight_slots(&self) -> [ParamId; 2] {
        [self.l1.w, self.l2.w]
    }

    fn ids(&self) -> [ParamId; 4] {
        [self.l1.w, self.l1.b, self.l2.w, self.l2.b]
    }
}

/// Monotonic mixing network whose weights come from state-conditioned
/// hypernetworks:
///
/// ```text
/// Q_tot = |w2(s)|ᵀ · elu(|W1(s)|ᵀ q + b1(s)) + v(s)
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerNet {
    pub arch: MixerArch,
    pub hyper_w1: TwoLayer,
    pub hyper_b1: LinearIds,
    pub hyper_w2: TwoLayer,
    pub value: TwoLayer,
}

impl MixerNet {
    pub fn build<R: Rng + ?Sized>(store: &mut ParamStore, arch: MixerArch, rng: &mut R) -> Self {
        let (s, e, hd, n) = (arch.state_dim, arch.embed_dim, arch.hyper_dim, arch.n_agents);
        MixerNet {
            arch,
            hyper_w1: TwoLayer::new(store, "mixer.hyper_w1", (s, hd, n * e), rng),
            hyper_b1: LinearIds::new(store, "mixer.hyper_b1", s, e, rng),
            hyper_w2: TwoLayer::new(store, "mixer.hyper_w2", (s, hd, e), rng),
            value: TwoLayer::new(store, "mixer.value", (s, hd, 1), rng),
        }
    }

    pub fn weight_slots(&self) -> Vec<ParamId> {
        let mut v = self.hyper_w1.weight_slots().to_vec();
        v.push(self.hyper_b1.w);
        v.extend(self.hyper_w2.weight_slots());
        v.extend(self.value.weight_slots());
        v
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.hyper_w1.ids().to_vec();
        v.extend([self.hyper_b1.w, self.hyper_b1.b]);
        v.extend(self.hyper_w2.ids());
        v.extend(self.value.ids());
        v
    }

    fn check(&self, q: (usize, usize), s: (usize, usize)) -> Result<()> {
        if q.1 != self.arch.n_agents || s.1 != self.arch.state_dim || q.0 != s.0 {
            return Err(MastError::DimensionMismatch {
                context: "mixer (utilities vs state)",
                left: format!("{}x{}", q.0, q.1),
                right: format!("{}x{}", s.0, s.1),
            });
        }
        Ok(())
    }

    /// `q: R x N` utilities, `s: R x state_dim`; returns `R x 1`.
    pub fn forward_plain(&self, store: &ParamStore, q: &Matrix, s: &Matrix) -> Result<Matrix> {
        self.check(q.shape(), s.shape())?;
        let e = self.arch.embed_dim;
        let w1 = plain::abs(self.hyper_w1.plain(store, s)?);
        let b1 = self.hyper_b1.plain(store, s)?;
        let hidden = plain::elu_m(plain::add(plain::batched_mix(q, &w1, e), &b1));
        let w2 = plain::abs(self.hyper_w2.plain(store, s)?);
        let y = plain::batched_mix(&hidden, &w2, 1);
        Ok(plain::add(y, &self.value.plain(store, s)?))
    }

    pub fn forward_tape(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        trainable: bool,
        q: NodeId,
        s: NodeId,
    ) -> Result<NodeId> {
        self.check(tape.value(q).shape(), tape.value(s).shape())?;
        let (n, e) = (self.arch.n_agents, self.arch.embed_dim);
        let w1_raw = self.hyper_w1.tape(store, tape, trainable, s)?;
        let w1 = tape.abs(w1_raw);
        let b1 = self.hyper_b1.tape(store, tape, trainable, s)?;
        let mixed = tape.batched_mix(q, w1, n, e)?;
        let pre = tape.add(mixed, b1)?;
        let hidden = tape.elu(pre);
        let w2_raw = self.hyper_w2.tape(store, tape, trainable, s)?;
        let w2 = tape.abs(w2_raw);
        let y = tape.batched_mix(hidden, w2, e, 1)?;
        let v = self.value.tape(store, tape, trainable, s)?;
        tape.add(y, v)
    }
}

/// Feedforward joint-value network over `[q, s]` with no sign constraint:
/// two ReLU layers of width `embed_dim` plus a state value head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnrestrictedMixer {
    pub arch: MixerArch,
    pub l1: LinearIds,
    pub l2: LinearIds,
    pub l3: LinearIds,
    pub value: TwoLayer,
}

impl UnrestrictedMixer {
    pub fn build<R: Rng + ?Sized>(store: &mut ParamStore, arch: MixerArch, rng: &mut R) -> Self {
        let (s, e, n) = (arch.state_dim, arch.embed_dim, arch.n_agents);
        UnrestrictedMixer {
            arch,
            l1: LinearIds::new(store, "umixer.0", n + s, e, rng),
            l2: LinearIds::new(store, "umixer.1", e, e, rng),
            l3: LinearIds::new(store, "umixer.2", e, 1, rng),
            value: TwoLayer::new(store, "umixer.value", (s, e, 1), rng),
        }
    }

    pub fn weight_slots(&self) -> Vec<ParamId> {
        let mut v = vec![self.l1.w, self.l2.w, self.l3.w];
        v.extend(self.value.weight_slots());
        v
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![
            self.l1.w, self.l1.b, self.l2.w, self.l2.b, self.l3.w, self.l3.b,
        ];
        v.extend(self.value.ids());
        v
    }

    fn check(&self, q: (usize, usize), s: (usize, usize)) -> Result<()> {
        if q.1 != self.arch.n_agents || s.1 != self.arch.state_dim || q.0 != s.0 {
            return Err(MastError::DimensionMismatch {
                context: "unrestricted mixer (utilities vs state)",
                left: format!("{}x{}", q.0, q.1),
                right: format!("{}x{}", s.0, s.1),
            });
        }
        Ok(())
    }

    pub fn forward_plain(&self, store: &ParamStore, q: &Matrix, s: &Matrix) -> Result<Matrix> {
        self.check(q.shape(), s.shape())?;
        let mut x = Matrix::zeros(q.rows(), q.cols() + s.cols());
        for r in 0..q.rows() {
            x.row_mut(r)[..q.cols()].copy_from_slice(q.row(r));
            x.row_mut(r)[q.cols()..].copy_from_slice(s.row(r));
        }
        let h1 = plain::relu(self.l1.plain(store, &x)?);
        let h2 = plain::relu(self.l2.plain(store, &h1)?);
        let y = self.l3.plain(store, &h2)?;
        Ok(plain::add(y, &self.value.plain(store, s)?))
    }

    pub fn forward_tape(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        trainable: bool,
        q: NodeId,
        s: NodeId,
    ) -> Result<NodeId> {
        self.check(tape.value(q).shape(), tape.value(s).shape())?;
        let x = tape.concat_cols(&[q, s])?;
        let p1 = self.l1.tape(store, tape, trainable, x)?;
        let h1 = tape.relu(p1);
        let p2 = self.l2.tape(store, tape, trainable, h1)?;
        let h2 = tape.relu(p2);
        let y = self.l3.tape(store, tape, trainable, h2)?;
        let v = self.value.tape(store, tape, trainable, s)?;
        tape.add(y, v)
    }
}
