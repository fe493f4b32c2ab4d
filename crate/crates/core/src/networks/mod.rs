//! Recurrent agent utility networks, the monotonic hypernetwork mixer, the
//! unrestricted mixer used by weighted QMIX, frozen target copies and
//! checkpoints. Every weight matrix lives in a [`ParamStore`] as a masked
//! slot; biases stay dense.

mod agent;
mod mixer;
pub mod plain;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use agent::{argmax_available, ActingState, AgentArch, AgentNet, AgentNets, BoundAgent};
pub use mixer::{LinearIds, MixerArch, MixerNet, TwoLayer, UnrestrictedMixer};

use crate::error::{MastError, Result};
use crate::numerics::{Matrix, NodeId, ParamId, Tape};
use crate::sparse_topology::{EvolutionGroup, ParamStore};

/// Joint-value network over per-agent utilities and the global state.
pub trait Mixing {
    fn build_in<R: Rng + ?Sized>(store: &mut ParamStore, arch: MixerArch, rng: &mut R) -> Self;
    fn arch(&self) -> &MixerArch;
    fn weight_slots(&self) -> Vec<ParamId>;
    fn param_ids(&self) -> Vec<ParamId>;
    fn forward_plain(&self, store: &ParamStore, q: &Matrix, s: &Matrix) -> Result<Matrix>;
    fn forward_tape(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        trainable: bool,
        q: NodeId,
        s: NodeId,
    ) -> Result<NodeId>;
}

macro_rules! impl_mixing {
    ($t:ty) => {
        impl Mixing for $t {
            fn build_in<R: Rng + ?Sized>(
                store: &mut ParamStore,
                arch: MixerArch,
                rng: &mut R,
            ) -> Self {
                <$t>::build(store, arch, rng)
            }
            fn arch(&self) -> &MixerArch {
                &self.arch
            }
            fn weight_slots(&self) -> Vec<ParamId> {
                <$t>::weight_slots(self)
            }
            fn param_ids(&self) -> Vec<ParamId> {
                <$t>::param_ids(self)
            }
            fn forward_plain(&self, store: &ParamStore, q: &Matrix, s: &Matrix) -> Result<Matrix> {
                <$t>::forward_plain(self, store, q, s)
            }
            fn forward_tape(
                &self,
                store: &ParamStore,
                tape: &mut Tape,
                trainable: bool,
                q: NodeId,
                s: NodeId,
            ) -> Result<NodeId> {
                <$t>::forward_tape(self, store, tape, trainable, q, s)
            }
        }
    };
}

impl_mixing!(MixerNet);
impl_mixing!(UnrestrictedMixer);

/// Agent networks plus a mixer, with all parameters in one store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamNets<M> {
    pub store: ParamStore,
    pub agents: AgentNets,
    pub mixer: M,
}

pub type QmixNets = TeamNets<MixerNet>;
pub type UnrestrictedNets = TeamNets<UnrestrictedMixer>;

/// How sparse slots are pooled into evolution groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// All agent weights share one budget, mixer weights another.
    Pooled,
    /// Every weight matrix has its own budget.
    PerLayer,
}

impl<M: Mixing> TeamNets<M> {
    pub fn build<R: Rng + ?Sized>(
        base: u32,
        agent_arch: AgentArch,
        mixer_arch: MixerArch,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if agent_arch.n_agents != mixer_arch.n_agents {
            return Err(MastError::InvalidArgument(format!(
                "agent count {} differs from mixer agent count {}",
                agent_arch.n_agents, mixer_arch.n_agents
            )));
        }
        let mut store = ParamStore::new(base);
        let agents = AgentNets::build(&mut store, agent_arch, prefix, rng);
        let mixer = M::build_in(&mut store, mixer_arch, rng);
        Ok(TeamNets {
            store,
            agents,
            mixer,
        })
    }

    /// Evolution groups at the given agent and mixer sparsities.
    pub fn groups(
        &self,
        agent_sparsity: f64,
        mixer_sparsity: f64,
        grouping: Grouping,
        label: &str,
    ) -> Result<Vec<EvolutionGroup>> {
        let agent_slots = self.agents.weight_slots();
        let mixer_slots = self.mixer.weight_slots();
        match grouping {
            Grouping::Pooled => Ok(vec![
                EvolutionGroup::new(format!("{label}agents"), &self.store, agent_slots, agent_sparsity)?,
                EvolutionGroup::new(format!("{label}mixer"), &self.store, mixer_slots, mixer_sparsity)?,
            ]),
            Grouping::PerLayer => {
                let mut out = Vec::new();
                for (slots, s) in [(agent_slots, agent_sparsity), (mixer_slots, mixer_sparsity)] {
                    for id in slots {
                        let name = self.store.slot(id).map_or("?", |sl| sl.name.as_str());
                        out.push(EvolutionGroup::new(
                            format!("{label}{name}"),
                            &self.store,
                            vec![id],
                            s,
                        )?);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Utilities of a single joint step from the plain route.
    pub fn mix_plain(&self, store: &ParamStore, q: &[f64], state: &[f64]) -> Result<f64> {
        let out = self.mixer.forward_plain(
            store,
            &Matrix::row_vector(q),
            &Matrix::row_vector(state),
        )?;
        Ok(out.get(0, 0))
    }
}

/// Greedy decentralized joint action: each agent's argmax over its
/// available actions, ties to the lowest index.
pub fn greedy_joint_action(q: &[Vec<f64>], avail: &[Vec<bool>]) -> Vec<usize> {
    AgentNets::greedy_joint_action(q, avail)
}

/// Frozen copy of a store's weights and masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetCopy {
    pub store: ParamStore,
    pub syncs: u64,
}

impl TargetCopy {
    pub fn new(online: &ParamStore) -> Self {
        TargetCopy {
            store: online.clone(),
            syncs: 0,
        }
    }

    pub fn sync(&mut self, online: &ParamStore) -> Result<()> {
        self.store.copy_from(online)?;
        self.store.apply_masks();
        self.syncs += 1;
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "mast-checkpoint-v1";

/// Weights and masks of every network in a run plus the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub step: u64,
    pub restricted: QmixNets,
    pub unrestricted: Option<UnrestrictedNets>,
}

impl Checkpoint {
    pub fn new(
        config_hash: String,
        step: u64,
        restricted: QmixNets,
        unrestricted: Option<UnrestrictedNets>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config_hash,
            step,
            restricted,
            unrestricted,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| MastError::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| MastError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MastError::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| MastError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(MastError::Checkpoint(format!(
                "{}: unknown format {:?}",
                path.display(),
                ck.format
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests;
