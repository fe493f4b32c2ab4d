use std::sync::Arc;

use log::warn;
use rand::Rng;

use crate::config::{Algorithm, RunConfig, SparseMode};
use crate::error::{MastError, Result};
use crate::networks::{
    AgentArch, AgentNets, MixerArch, Mixing, QmixNets, TargetCopy, TeamNets, UnrestrictedNets,
};
use crate::numerics::{Gradients, Matrix, NodeId, RmsProp, RmsPropConfig, Tape};
use crate::replay::{pad_batch, Episode, PaddedBatch};
use crate::sparse_topology::{
    evolve, random_init_mask, EvolutionGroup, EvolutionReport, EvolutionSchedule, ParamStore,
};
use crate::targets::{bootstrap_values, hybrid_target, ow_weight, BootstrapInputs, TargetConfig};

/// Id base of the unrestricted networks' store, disjoint from the
/// restricted store's ids.
pub const UNRESTRICTED_BASE: u32 = 1_000_000;

/// Episode batch laid out for unrolling: every per-step array has
/// `(T+1)·B` rows in time-major order, where `T` is the longest episode.
#[derive(Clone, Debug)]
pub struct BatchTensors {
    pub pad: PaddedBatch,
    /// Per agent network inputs; padded rows are zero.
    pub inputs: Vec<Matrix>,
    pub states: Matrix,
    /// Per agent chosen actions on the `T·B` transition rows (0 on padding).
    pub actions: Vec<Vec<usize>>,
    /// Per agent availability, `(T+1)·B·|U|` flags; padded rows are all true.
    pub avail: Vec<Vec<bool>>,
}

impl BatchTensors {
    pub fn new(episodes: &[Arc<Episode>], arch: &AgentArch, state_dim: usize) -> Result<Self> {
        let pad = pad_batch(episodes);
        let (bsz, steps) = (pad.batch, pad.steps);
        if bsz == 0 || steps == 0 {
            return Err(MastError::InvalidArgument("empty episode batch".into()));
        }
        let rows = (steps + 1) * bsz;
        let (n, u, inp) = (arch.n_agents, arch.n_actions, arch.input_dim());
        let mut inputs = vec![Matrix::zeros(rows, inp); n];
        let mut states = Matrix::zeros(rows, state_dim);
        let mut actions = vec![vec![0usize; steps * bsz]; n];
        let mut avail = vec![vec![true; rows * u]; n];
        for (b, ep) in episodes.iter().enumerate() {
            if ep.n_agents() != n {
                return Err(MastError::InvalidArgument(format!(
                    "episode has {} agents, networks expect {n}",
                    ep.n_agents()
                )));
            }
            for t in 0..=ep.len() {
                let r = t * bsz + b;
                if ep.states[t].len() != state_dim {
                    return Err(MastError::shapes(
                        "batch state",
                        (1, ep.states[t].len()),
                        (1, state_dim),
                    ));
                }
                states.row_mut(r).copy_from_slice(&ep.states[t]);
                for i in 0..n {
                    let last = (t > 0).then(|| ep.actions[t - 1][i]);
                    arch.encode_input(inputs[i].row_mut(r), &ep.obs[t][i], last, i);
                    avail[i][r * u..(r + 1) * u].copy_from_slice(&ep.avail[t][i]);
                    if t < ep.len() {
                        actions[i][r] = ep.actions[t][i];
                    }
                }
            }
        }
        Ok(BatchTensors {
            pad,
            inputs,
            states,
            actions,
            avail,
        })
    }

    fn steps(&self) -> usize {
        self.pad.steps
    }

    fn batch(&self) -> usize {
        self.pad.batch
    }
}

/// Copies `count` rows of `m` starting at `start`.
fn rows_of(m: &Matrix, start: usize, count: usize) -> Result<Matrix> {
    let c = m.cols();
    Matrix::from_vec(count, c, m.as_slice()[start * c..(start + count) * c].to_vec())
}

/// Summary of one gradient update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss: f64,
    /// Loss of the unrestricted joint value, when one is trained.
    pub unrestricted_loss: Option<f64>,
    pub mean_q_tot: f64,
    pub mean_target: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// True when a non-finite loss or gradient caused the update to be dropped.
    pub skipped: bool,
}

/// Unrestricted joint-value networks trained alongside the restricted ones.
#[derive(Clone, Debug)]
pub struct UnrestrictedPart {
    pub nets: UnrestrictedNets,
    pub target: TargetCopy,
    pub opt: RmsProp,
    pub groups: Vec<EvolutionGroup>,
    pub last_grads: Option<Gradients>,
}

/// Online and target networks, optimizers and sparse topology state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: RunConfig,
    pub target_cfg: TargetConfig,
    pub nets: QmixNets,
    pub target: TargetCopy,
    pub opt: RmsProp,
    pub groups: Vec<EvolutionGroup>,
    pub last_grads: Option<Gradients>,
    pub unrestricted: Option<UnrestrictedPart>,
    pub schedule: EvolutionSchedule,
}

/// Per-agent utilities of the final `T·B` rows (the successor rows).
type NextQ = Vec<Matrix>;

impl Learner {
    /// Builds networks for the given environment shape. Sparse modes draw
    /// a random mask per group at the configured sparsity.
    pub fn new<R: Rng + ?Sized>(
        cfg: &RunConfig,
        n_agents: usize,
        n_actions: usize,
        obs_dim: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let cfg = cfg.resolved()?;
        let agent_arch = AgentArch {
            n_agents,
            obs_dim,
            n_actions,
            hidden_dim: cfg.hidden_dim,
            shared: cfg.shared_agents,
        };
        let mixer_arch = MixerArch {
            n_agents,
            state_dim,
            embed_dim: cfg.embed_dim,
            hyper_dim: cfg.hyper_dim,
        };
        let (s_agent, s_mixer) = cfg.effective_sparsity();
        let mut nets: QmixNets = TeamNets::build(0, agent_arch, mixer_arch, "agent", rng)?;
        let groups = nets.groups(s_agent, s_mixer, cfg.grouping, "")?;
        if cfg.mode != SparseMode::Dense {
            for g in &groups {
                random_init_mask(&mut nets.store, g, rng)?;
            }
        }
        let opt_cfg = RmsPropConfig {
            lr: cfg.lr,
            smoothing: cfg.rms_smoothing,
            epsilon: cfg.rms_eps,
        };
        let unrestricted = if cfg.algo == Algorithm::Owqmix {
            let u_arch = MixerArch {
                embed_dim: cfg.unrestricted_embed_dim,
                ..mixer_arch
            };
            let mut u: UnrestrictedNets =
                TeamNets::build(UNRESTRICTED_BASE, agent_arch, u_arch, "uagent", rng)?;
            let u_groups = u.groups(s_agent, s_mixer, cfg.grouping, "u")?;
            if cfg.mode != SparseMode::Dense {
                for g in &u_groups {
                    random_init_mask(&mut u.store, g, rng)?;
                }
            }
            Some(UnrestrictedPart {
                target: TargetCopy::new(&u.store),
                nets: u,
                opt: RmsProp::new(opt_cfg),
                groups: u_groups,
                last_grads: None,
            })
        } else {
            None
        };
        let t_end = (cfg.evolution_end * cfg.total_steps as f64) as u64;
        let schedule = EvolutionSchedule::new(cfg.zeta0, cfg.delta_m as usize, t_end)?;
        Ok(Learner {
            target_cfg: cfg.target_config(),
            target: TargetCopy::new(&nets.store),
            nets,
            opt: RmsProp::new(opt_cfg),
            groups,
            last_grads: None,
            unrestricted,
            schedule,
            cfg,
        })
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        self.target.sync(&self.nets.store)?;
        if let Some(u) = &mut self.unrestricted {
            u.target.sync(&u.nets.store)?;
        }
        Ok(())
    }

    /// All evolution groups with their current mask counts, restricted first.
    pub fn mask_ones(&self) -> Vec<(String, usize, usize)> {
        let mut out: Vec<(String, usize, usize)> = self
            .groups
            .iter()
            .map(|g| (g.name.clone(), g.mask_ones(&self.nets.store), g.active_target))
            .collect();
        if let Some(u) = &self.unrestricted {
            out.extend(
                u.groups
                    .iter()
                    .map(|g| (g.name.clone(), g.mask_ones(&u.nets.store), g.active_target)),
            );
        }
        out
    }

    /// One drop-and-grow round on every group using the gradients of the
    /// latest update. Returns nothing before the first update.
    pub fn evolve(&mut self, t_global: u64) -> Result<Vec<EvolutionReport>> {
        let mut out = Vec::new();
        if let Some(g) = &self.last_grads {
            for group in &self.groups {
                out.push(evolve(&mut self.nets.store, group, g, &self.schedule, t_global)?);
            }
        }
        if let Some(u) = &mut self.unrestricted {
            if let Some(g) = &u.last_grads {
                for group in &u.groups {
                    out.push(evolve(&mut u.nets.store, group, g, &self.schedule, t_global)?);
                }
            }
        }
        Ok(out)
    }

    /// Target-network utilities for the successor rows of every agent.
    fn target_next_q<M: Mixing>(
        nets: &TeamNets<M>,
        store: &ParamStore,
        bt: &BatchTensors,
    ) -> Result<NextQ> {
        let (steps, bsz) = (bt.steps(), bt.batch());
        (0..nets.agents.arch.n_agents)
            .map(|i| {
                let q = nets.agents.unroll_plain(store, i, &bt.inputs[i], steps + 1, bsz)?;
                rows_of(&q, bsz, steps * bsz)
            })
            .collect()
    }

    /// Hybrid TD targets on the `T·B` transition rows (0 on padding).
    fn targets<M: Mixing>(
        &self,
        mixer: &M,
        target_store: &ParamStore,
        bt: &BatchTensors,
        target_q: &[Matrix],
        online_q: Option<&[Matrix]>,
        t_global: u64,
    ) -> Result<Vec<f64>> {
        let (steps, bsz) = (bt.steps(), bt.batch());
        let u = self.nets.agents.arch.n_actions;
        let next_states = rows_of(&bt.states, bsz, steps * bsz)?;
        let next_avail: Vec<Vec<bool>> = bt
            .avail
            .iter()
            .map(|a| a[bsz * u..].to_vec())
            .collect();
        let inp = BootstrapInputs {
            states: &next_states,
            target_q,
            online_q,
            avail: &next_avail,
        };
        let boot = bootstrap_values(mixer, target_store, &inp, &self.target_cfg)?;
        let mut y = vec![0.0; steps * bsz];
        for b in 0..bsz {
            let len = bt.pad.lengths[b];
            let rewards: Vec<f64> = (0..len).map(|t| bt.pad.rewards[bt.pad.index(t, b)]).collect();
            let mut bs: Vec<f64> = (0..len).map(|t| boot[bt.pad.index(t, b)]).collect();
            if bt.pad.terminated[b] && len > 0 {
                bs[len - 1] = 0.0;
            }
            let yb = hybrid_target(&rewards, &bs, t_global, &self.target_cfg)?;
            for (t, v) in yb.into_iter().enumerate() {
                y[bt.pad.index(t, b)] = v;
            }
        }
        Ok(y)
    }

    /// Unrolls every agent on `tape` and returns the `(T+1)·B x |U|` utility
    /// nodes plus the mixed joint values of the chosen actions.
    fn forward_online<M: Mixing>(
        nets: &TeamNets<M>,
        tape: &mut Tape,
        bt: &BatchTensors,
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let (steps, bsz) = (bt.steps(), bt.batch());
        let bound = nets.agents.bind(&nets.store, tape, true);
        let mut q_all = Vec::new();
        let mut chosen = Vec::new();
        for i in 0..nets.agents.arch.n_agents {
            let x = tape.input(bt.inputs[i].clone());
            let q = nets.agents.unroll_tape(tape, &bound, i, x, steps + 1, bsz)?;
            let head = tape.slice_rows(q, 0, steps * bsz)?;
            chosen.push(tape.gather_cols(head, bt.actions[i].clone())?);
            q_all.push(q);
        }
        let q_chosen = tape.concat_cols(&chosen)?;
        let s = tape.input(rows_of(&bt.states, 0, steps * bsz)?);
        let q_tot = nets.mixer.forward_tape(&nets.store, tape, true, q_chosen, s)?;
        Ok((q_all, q_tot))
    }

    fn online_next_q(tape: &Tape, q_all: &[NodeId], bt: &BatchTensors) -> Result<NextQ> {
        q_all
            .iter()
            .map(|&q| rows_of(tape.value(q), bt.batch(), bt.steps() * bt.batch()))
            .collect()
    }

    /// One gradient update on a sampled batch of episodes.
    pub fn train_step(&mut self, episodes: &[Arc<Episode>], t_global: u64) -> Result<UpdateStats> {
        let bt = BatchTensors::new(
            episodes,
            &self.nets.agents.arch,
            self.nets.mixer.arch.state_dim,
        )?;
        let mut tape = Tape::new();
        let (q_all, q_tot) = Self::forward_online(&self.nets, &mut tape, &bt)?;
        let online_next = Self::online_next_q(&tape, &q_all, &bt)?;
        let valid = bt.pad.valid.clone();
        let count = bt.pad.valid_count() as f64;
        let (y, u_q_tot) = match &self.unrestricted {
            None => {
                let tq = Self::target_next_q(&self.nets, &self.target.store, &bt)?;
                let y = self.targets(
                    &self.nets.mixer,
                    &self.target.store,
                    &bt,
                    &tq,
                    Some(&online_next),
                    t_global,
                )?;
                (y, None)
            }
            Some(u) => {
                let tq = Self::target_next_q(&u.nets, &u.target.store, &bt)?;
                let y = self.targets(
                    &u.nets.mixer,
                    &u.target.store,
                    &bt,
                    &tq,
                    Some(&online_next),
                    t_global,
                )?;
                let (_, uq) = Self::forward_online(&u.nets, &mut tape, &bt)?;
                (y, Some(uq))
            }
        };
        let qv = tape.value(q_tot).as_slice().to_vec();
        let weights: Vec<f64> = (0..y.len())
            .map(|k| match (valid[k], u_q_tot.is_some()) {
                (false, _) => 0.0,
                (true, false) => 1.0,
                (true, true) => ow_weight(qv[k], y[k], self.target_cfg.ow_alpha),
            })
            .collect();
        let loss = tape.weighted_sse(q_tot, y.clone(), weights, count)?;
        let u_loss = match u_q_tot {
            Some(uq) => {
                let w: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
                Some(tape.weighted_sse(uq, y.clone(), w, count)?)
            }
            None => None,
        };
        let (mean_q, mean_y) = {
            let (mut sq, mut sy) = (0.0, 0.0);
            for k in (0..y.len()).filter(|&k| valid[k]) {
                sq += qv[k];
                sy += y[k];
            }
            (sq / count, sy / count)
        };
        let mut stats = UpdateStats {
            loss: tape.value(loss).get(0, 0),
            unrestricted_loss: u_loss.map(|l| tape.value(l).get(0, 0)),
            mean_q_tot: mean_q,
            mean_target: mean_y,
            grad_norm: 0.0,
            skipped: false,
        };
        if !stats.loss.is_finite() || stats.unrestricted_loss.is_some_and(|l| !l.is_finite()) {
            warn!("non-finite loss at step {t_global}; update skipped");
            stats.skipped = true;
            return Ok(stats);
        }
        let mut grads = tape.backward(loss, 1.0)?;
        if !self.nets.store.owns_all(&grads) {
            return Err(MastError::InvalidArgument(
                "restricted loss produced gradients outside the restricted networks".into(),
            ));
        }
        let u_grads = match (u_loss, &self.unrestricted) {
            (Some(l), Some(u)) => {
                let g = tape.backward(l, 1.0)?;
                if !u.nets.store.owns_all(&g) {
                    return Err(MastError::InvalidArgument(
                        "unrestricted loss produced gradients outside the unrestricted networks"
                            .into(),
                    ));
                }
                Some(g)
            }
            _ => None,
        };
        if !grads.is_finite() || u_grads.as_ref().is_some_and(|g| !g.is_finite()) {
            warn!("non-finite gradient at step {t_global}; update skipped");
            stats.skipped = true;
            return Ok(stats);
        }
        stats.grad_norm = grads.clip_global_norm(self.cfg.grad_clip);
        self.opt.step(self.nets.store.values_mut(), &grads)?;
        self.nets.store.apply_masks();
        self.last_grads = Some(grads);
        if let (Some(mut g), Some(u)) = (u_grads, &mut self.unrestricted) {
            g.clip_global_norm(self.cfg.grad_clip);
            u.opt.step(u.nets.store.values_mut(), &g)?;
            u.nets.store.apply_masks();
            u.last_grads = Some(g);
        }
        Ok(stats)
    }

    /// Restricted agents, used for acting.
    pub fn agents(&self) -> &AgentNets {
        &self.nets.agents
    }
}
