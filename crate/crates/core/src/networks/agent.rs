use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plain;
use crate::error::{MastError, Result};
use crate::numerics::{gru_step, linear_forward, GruNodes, Matrix, NodeId, ParamId, Tape};
use crate::sparse_topology::ParamStore;

/// Shape of the per-agent recurrent utility network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentArch {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub hidden_dim: usize,
    /// One parameter set for all agents instead of one per agent.
    pub shared: bool,
}

impl AgentArch {
    /// Observation, previous action one-hot and agent id one-hot.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Writes the network input for one agent into `row`.
    pub fn encode_input(
        &self,
        row: &mut [f64],
        obs: &[f64],
        last_action: Option<usize>,
        agent: usize,
    ) {
        debug_assert_eq!(row.len(), self.input_dim());
        row.fill(0.0);
        row[..self.obs_dim].copy_from_slice(obs);
        if let Some(a) = last_action {
            row[self.obs_dim + a] = 1.0;
        }
        row[self.obs_dim + self.n_actions + agent] = 1.0;
    }
}

/// Parameter ids of one agent network: input layer, GRU cell, output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNet {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub gru_w: [ParamId; 3],
    pub gru_b: [ParamId; 3],
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

impl AgentNet {
    pub fn weight_slots(&self) -> Vec<ParamId> {
        vec![
            self.fc1_w,
            self.gru_w[0],
            self.gru_w[1],
            self.gru_w[2],
            self.fc2_w,
        ]
    }
}

/// Weight `out x inp` and bias `1 x out`, both uniform in `±1/sqrt(inp)`.
pub(crate) fn add_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    inp: usize,
    out: usize,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let bound = 1.0 / (inp as f64).sqrt();
    let w = store.add_sparse(format!("{name}.w"), Matrix::uniform(out, inp, bound, rng));
    let b = store.add_dense(format!("{name}.b"), Matrix::uniform(1, out, bound, rng));
    (w, b)
}

/// Tape handles of one bound agent network.
#[derive(Clone, Copy, Debug)]
pub struct BoundAgent {
    fc1_w: NodeId,
    fc1_b: NodeId,
    gru: GruNodes,
    fc2_w: NodeId,
    fc2_b: NodeId,
}

/// All agent networks of a team.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub arch: AgentArch,
    pub nets: Vec<AgentNet>,
}

impl AgentNets {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        arch: AgentArch,
        prefix: &str,
        rng: &mut R,
    ) -> Self {
        let count = if arch.shared { 1 } else { arch.n_agents };
        let (inp, h) = (arch.input_dim(), arch.hidden_dim);
        let nets = (0..count)
            .map(|i| {
                let name = format!("{prefix}{i}");
                let (fc1_w, fc1_b) = add_linear(store, &format!("{name}.fc1"), inp, h, rng);
                let bound = 1.0 / (h as f64).sqrt();
                let gates = ["z", "r", "h"];
                let gru_w = gates.map(|g| {
                    store.add_sparse(
                        format!("{name}.gru.w{g}"),
                        Matrix::uniform(h, 2 * h, bound, rng),
                    )
                });
                let gru_b = gates.map(|g| {
                    store.add_dense(format!("{name}.gru.b{g}"), Matrix::uniform(1, h, bound, rng))
                });
                let (fc2_w, fc2_b) =
                    add_linear(store, &format!("{name}.fc2"), h, arch.n_actions, rng);
                AgentNet {
                    fc1_w,
                    fc1_b,
                    gru_w,
                    gru_b,
                    fc2_w,
                    fc2_b,
                }
            })
            .collect();
        AgentNets { arch, nets }
    }

    pub fn net_for(&self, agent: usize) -> &AgentNet {
        if self.arch.shared {
            &self.nets[0]
        } else {
            &self.nets[agent]
        }
    }

    pub fn weight_slots(&self) -> Vec<ParamId> {
        self.nets.iter().flat_map(AgentNet::weight_slots).collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.nets
            .iter()
            .flat_map(|n| {
                let mut v = vec![n.fc1_w, n.fc1_b];
                v.extend(n.gru_w);
                v.extend(n.gru_b);
                v.extend([n.fc2_w, n.fc2_b]);
                v
            })
            .collect()
    }

    /// One recurrent step for `agent` on a batch of inputs.
    pub fn step_plain(
        &self,
        store: &ParamStore,
        agent: usize,
        input: &Matrix,
        h: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        let n = self.net_for(agent);
        let x = plain::relu(plain::linear(input, store.value(n.fc1_w), store.value(n.fc1_b))?);
        let h_next = plain::gru(
            &x,
            h,
            n.gru_w.map(|id| store.value(id)),
            n.gru_b.map(|id| store.value(id)),
        )?;
        let q = plain::linear(&h_next, store.value(n.fc2_w), store.value(n.fc2_b))?;
        Ok((q, h_next))
    }

    /// Binds each distinct agent network on `tape` once.
    pub fn bind(&self, store: &ParamStore, tape: &mut Tape, trainable: bool) -> Vec<BoundAgent> {
        let h = self.arch.hidden_dim;
        self.nets
            .iter()
            .map(|n| {
                let g = |tape: &mut Tape, id| store.bind(tape, id, trainable);
                BoundAgent {
                    fc1_w: g(tape, n.fc1_w),
                    fc1_b: g(tape, n.fc1_b),
                    gru: GruNodes {
                        wz: g(tape, n.gru_w[0]),
                        wr: g(tape, n.gru_w[1]),
                        wh: g(tape, n.gru_w[2]),
                        bz: g(tape, n.gru_b[0]),
                        br: g(tape, n.gru_b[1]),
                        bh: g(tape, n.gru_b[2]),
                        input_dim: h,
                        hidden_dim: h,
                    },
                    fc2_w: g(tape, n.fc2_w),
                    fc2_b: g(tape, n.fc2_b),
                }
            })
            .collect()
    }

    /// Runs agent `agent` over `steps` time steps of a batch of `batch`
    /// sequences. `inputs` is `(steps·batch) x input_dim` in time-major row
    /// order; the result is `(steps·batch) x n_actions` in the same order.
    pub fn unroll_tape(
        &self,
        tape: &mut Tape,
        bound: &[BoundAgent],
        agent: usize,
        inputs: NodeId,
        steps: usize,
        batch: usize,
    ) -> Result<NodeId> {
        let b = if self.arch.shared {
            &bound[0]
        } else {
            &bound[agent]
        };
        let rows = tape.value(inputs).rows();
        if rows != steps * batch {
            return Err(MastError::DimensionMismatch {
                context: "unroll_tape",
                left: format!("{rows} input rows"),
                right: format!("{steps} steps x {batch} sequences"),
            });
        }
        let pre = linear_forward(tape, inputs, b.fc1_w, b.fc1_b)?;
        let x_all = tape.relu(pre);
        let mut h = tape.input(Matrix::zeros(batch, self.arch.hidden_dim));
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = tape.slice_rows(x_all, t * batch, batch)?;
            h = gru_step(tape, xt, h, &b.gru)?;
            hs.push(h);
        }
        let h_all = tape.concat_rows(&hs)?;
        linear_forward(tape, h_all, b.fc2_w, b.fc2_b)
    }

    /// Tape-free counterpart of [`AgentNets::unroll_tape`].
    pub fn unroll_plain(
        &self,
        store: &ParamStore,
        agent: usize,
        inputs: &Matrix,
        steps: usize,
        batch: usize,
    ) -> Result<Matrix> {
        if inputs.rows() != steps * batch {
            return Err(MastError::DimensionMismatch {
                context: "unroll_plain",
                left: format!("{} input rows", inputs.rows()),
                right: format!("{steps} steps x {batch} sequences"),
            });
        }
        let n = self.net_for(agent);
        let hd = self.arch.hidden_dim;
        let x_all = plain::relu(plain::linear(inputs, store.value(n.fc1_w), store.value(n.fc1_b))?);
        let mut h = Matrix::zeros(batch, hd);
        let mut h_all = Vec::with_capacity(steps * batch * hd);
        for t in 0..steps {
            let xt = Matrix::from_vec(
                batch,
                hd,
                x_all.as_slice()[t * batch * hd..(t + 1) * batch * hd].to_vec(),
            )?;
            h = plain::gru(
                &xt,
                &h,
                n.gru_w.map(|id| store.value(id)),
                n.gru_b.map(|id| store.value(id)),
            )?;
            h_all.extend_from_slice(h.as_slice());
        }
        let h_all = Matrix::from_vec(steps * batch, hd, h_all)?;
        plain::linear(&h_all, store.value(n.fc2_w), store.value(n.fc2_b))
    }
}

/// Index of the largest available entry; ties go to the lowest index.
pub fn argmax_available(q: &[f64], avail: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// Recurrent state carried through an episode while acting.
#[derive(Clone, Debug, PartialEq)]
pub struct ActingState {
    pub hidden: Vec<Matrix>,
    pub last_actions: Vec<Option<usize>>,
}

impl ActingState {
    pub fn new(arch: &AgentArch) -> Self {
        ActingState {
            hidden: vec![Matrix::zeros(1, arch.hidden_dim); arch.n_agents],
            last_actions: vec![None; arch.n_agents],
        }
    }
}

impl AgentNets {
    /// Per-agent utilities for the current observations, advancing `state`'s
    /// hidden vectors. The caller records the chosen actions afterwards.
    pub fn act_q(
        &self,
        store: &ParamStore,
        obs: &[Vec<f64>],
        state: &mut ActingState,
    ) -> Result<Vec<Vec<f64>>> {
        let arch = &self.arch;
        let mut out = Vec::with_capacity(arch.n_agents);
        let mut row = vec![0.0; arch.input_dim()];
        for (i, o) in obs.iter().enumerate() {
            if o.len() != arch.obs_dim {
                return Err(MastError::DimensionMismatch {
                    context: "act_q observation",
                    left: format!("{}", o.len()),
                    right: format!("{}", arch.obs_dim),
                });
            }
            arch.encode_input(&mut row, o, state.last_actions[i], i);
            let (q, h) = self.step_plain(store, i, &Matrix::row_vector(&row), &state.hidden[i])?;
            state.hidden[i] = h;
            out.push(q.into_vec());
        }
        Ok(out)
    }

    /// Greedy decentralized joint action.
    pub fn greedy_joint_action(q: &[Vec<f64>], avail: &[Vec<bool>]) -> Vec<usize> {
        q.iter()
            .zip(avail)
            .map(|(qi, ai)| argmax_available(qi, ai).unwrap_or(0))
            .collect()
    }
}
