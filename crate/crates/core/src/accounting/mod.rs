//! Closed-form model size and FLOPs bookkeeping for the agent, mixer and
//! unrestricted networks, budgeted from the sparsity level and realized
//! from the actual masks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{MastError, Result};
use crate::networks::{AgentArch, MixerArch, Mixing, TeamNets};

/// Weights of a sparse fully connected layer: `(1−S)·I·O`.
pub fn linear_size(s: f64, i: usize, o: usize) -> f64 {
    (1.0 - s) * (i * o) as f64
}

/// Weights of a sparse GRU layer with three gates: `(1−S)·3h(h+I)`.
pub fn gru_size(s: f64, h: usize, i: usize) -> f64 {
    (1.0 - s) * (3 * h * (h + i)) as f64
}

/// Forward FLOPs of a sparse fully connected layer: `(1−S)(2I−1)O`.
pub fn linear_fwd_flops(s: f64, i: usize, o: usize) -> f64 {
    (1.0 - s) * ((2 * i - 1) * o) as f64
}

/// Forward FLOPs of a sparse GRU layer: `(1−S)·3h[2(h+I)−1]`.
pub fn gru_fwd_flops(s: f64, h: usize, i: usize) -> f64 {
    (1.0 - s) * (3 * h * (2 * (h + i) - 1)) as f64
}

/// Closed forms for the FLOPs of one training update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainFormula {
    /// `4B(F_A + F_M)`.
    Qmix,
    /// `B(3F_A + 3F_M + 4F_UA + 4F_UM)`.
    Wqmix,
    /// Summary-table form `4B·F_A + (5 + nm)B·F_M`.
    ResTable,
    /// Step-by-step derivation `B(4F_A + (3 + 2nm)F_M)`.
    ResDerived,
}

impl TrainFormula {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "qmix" => Ok(TrainFormula::Qmix),
            "wqmix" | "owqmix" => Ok(TrainFormula::Wqmix),
            "res_table" => Ok(TrainFormula::ResTable),
            "res_derived" => Ok(TrainFormula::ResDerived),
            _ => Err(MastError::InvalidArgument(format!("unknown training formula {name:?}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrainFormula::Qmix => "qmix",
            TrainFormula::Wqmix => "wqmix",
            TrainFormula::ResTable => "res_table",
            TrainFormula::ResDerived => "res_derived",
        }
    }
}

/// Forward FLOPs of each network for one time step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentFlops {
    pub agent: f64,
    pub mixer: f64,
    pub unrestricted_agent: f64,
    pub unrestricted_mixer: f64,
}

/// Training FLOPs per update for batch size `b`, `n` agents and at most
/// `m` actions per agent.
pub fn train_flops(formula: TrainFormula, b: usize, c: &ComponentFlops, n: usize, m: usize) -> Result<f64> {
    if b == 0 {
        return Err(MastError::InvalidArgument("batch size must be at least 1".into()));
    }
    let b = b as f64;
    let nm = (n * m) as f64;
    Ok(match formula {
        TrainFormula::Qmix => 4.0 * b * (c.agent + c.mixer),
        TrainFormula::Wqmix => {
            b * (3.0 * c.agent
                + 3.0 * c.mixer
                + 4.0 * c.unrestricted_agent
                + 4.0 * c.unrestricted_mixer)
        }
        TrainFormula::ResTable => 4.0 * b * c.agent + (5.0 + nm) * b * c.mixer,
        TrainFormula::ResDerived => b * (4.0 * c.agent + (3.0 + 2.0 * nm) * c.mixer),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear { inp: usize, out: usize },
    /// One gate of a GRU cell; three of these form the layer.
    GruGate { hidden: usize, inp: usize },
}

impl LayerKind {
    pub fn dense_params(&self) -> usize {
        match *self {
            LayerKind::Linear { inp, out } => inp * out,
            LayerKind::GruGate { hidden, inp } => hidden * (hidden + inp),
        }
    }

    pub fn size(&self, s: f64) -> f64 {
        match *self {
            LayerKind::Linear { inp, out } => linear_size(s, inp, out),
            LayerKind::GruGate { hidden, inp } => gru_size(s, hidden, inp) / 3.0,
        }
    }

    pub fn fwd_flops(&self, s: f64) -> f64 {
        match *self {
            LayerKind::Linear { inp, out } => linear_fwd_flops(s, inp, out),
            LayerKind::GruGate { hidden, inp } => gru_fwd_flops(s, hidden, inp) / 3.0,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Linear { out, .. } => out,
            LayerKind::GruGate { hidden, .. } => hidden,
        }
    }
}

/// One weight matrix and how often it runs per forward pass of its network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Applications per network forward; shared agent weights run once per agent.
    pub uses: usize,
}

/// Weight layers of the agent networks, derived from the architecture.
pub fn agent_layers(arch: &AgentArch, prefix: &str) -> Vec<LayerSpec> {
    let (count, uses) = if arch.shared {
        (1, arch.n_agents)
    } else {
        (arch.n_agents, 1)
    };
    let h = arch.hidden_dim;
    let mut out = Vec::new();
    for i in 0..count {
        let name = format!("{prefix}{i}");
        out.push(LayerSpec {
            name: format!("{name}.fc1.w"),
            kind: LayerKind::Linear { inp: arch.input_dim(), out: h },
            uses,
        });
        for g in ["z", "r", "h"] {
            out.push(LayerSpec {
                name: format!("{name}.gru.w{g}"),
                kind: LayerKind::GruGate { hidden: h, inp: h },
                uses,
            });
        }
        out.push(LayerSpec {
            name: format!("{name}.fc2.w"),
            kind: LayerKind::Linear { inp: h, out: arch.n_actions },
            uses,
        });
    }
    out
}

fn lin(name: &str, inp: usize, out: usize) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind: LayerKind::Linear { inp, out },
        uses: 1,
    }
}

/// Hypernetwork layers of the monotonic mixer.
pub fn mixer_layers(a: &MixerArch) -> Vec<LayerSpec> {
    let (s, e, hd, n) = (a.state_dim, a.embed_dim, a.hyper_dim, a.n_agents);
    vec![
        lin("mixer.hyper_w1.0.w", s, hd),
        lin("mixer.hyper_w1.1.w", hd, n * e),
        lin("mixer.hyper_b1.w", s, e),
        lin("mixer.hyper_w2.0.w", s, hd),
        lin("mixer.hyper_w2.1.w", hd, e),
        lin("mixer.value.0.w", s, hd),
        lin("mixer.value.1.w", hd, 1),
    ]
}

/// Layers of the unrestricted feed-forward mixer.
pub fn unrestricted_mixer_layers(a: &MixerArch) -> Vec<LayerSpec> {
    let (s, e, n) = (a.state_dim, a.embed_dim, a.n_agents);
    vec![
        lin("umixer.0.w", n + s, e),
        lin("umixer.1.w", e, e),
        lin("umixer.2.w", e, 1),
        lin("umixer.value.0.w", s, e),
        lin("umixer.value.1.w", e, 1),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotCost {
    pub name: String,
    pub sparsity: f64,
    pub size: f64,
    pub flops: f64,
    pub dense_size: f64,
    pub dense_flops: f64,
    /// Mask-ones based values; `None` without a network instance.
    pub realized_size: Option<f64>,
    pub realized_flops: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCost {
    pub name: String,
    pub slots: Vec<SlotCost>,
    pub bias_params: usize,
}

impl NetworkCost {
    fn from_layers(name: &str, layers: &[LayerSpec], s: f64, bias_params: usize) -> Self {
        let slots = layers
            .iter()
            .map(|l| SlotCost {
                name: l.name.clone(),
                sparsity: s,
                size: l.kind.size(s),
                flops: l.uses as f64 * l.kind.fwd_flops(s),
                dense_size: l.kind.size(0.0),
                dense_flops: l.uses as f64 * l.kind.fwd_flops(0.0),
                realized_size: None,
                realized_flops: None,
            })
            .collect();
        NetworkCost {
            name: name.into(),
            slots,
            bias_params,
        }
    }

    pub fn size(&self) -> f64 {
        self.slots.iter().map(|s| s.size).sum()
    }

    pub fn flops(&self) -> f64 {
        self.slots.iter().map(|s| s.flops).sum()
    }

    pub fn dense_size(&self) -> f64 {
        self.slots.iter().map(|s| s.dense_size).sum()
    }

    pub fn dense_flops(&self) -> f64 {
        self.slots.iter().map(|s| s.dense_flops).sum()
    }

    pub fn realized_size(&self) -> Option<f64> {
        self.slots.iter().map(|s| s.realized_size).sum()
    }

    pub fn realized_flops(&self) -> Option<f64> {
        self.slots.iter().map(|s| s.realized_flops).sum()
    }

    /// Fills realized values from the masks of a built network.
    fn realize<M: Mixing>(&mut self, nets: &TeamNets<M>) -> Result<()> {
        for slot in self.slots.iter_mut() {
            let id = nets
                .store
                .slots()
                .find(|s| s.name == slot.name)
                .map(|s| s.slot_id)
                .ok_or_else(|| {
                    MastError::InvalidArgument(format!("network has no weight slot {}", slot.name))
                })?;
            let sl = nets.store.slot(id).expect("found above");
            let dense = sl.mask.len() as f64;
            if dense != slot.dense_size {
                return Err(MastError::DimensionMismatch {
                    context: "accounting vs allocated slot",
                    left: format!("{} = {}", slot.name, slot.dense_size),
                    right: format!("{dense}"),
                });
            }
            let frac = sl.mask.count_ones() as f64 / dense;
            slot.realized_size = Some(frac * slot.dense_size);
            slot.realized_flops = Some(frac * slot.dense_flops);
        }
        Ok(())
    }
}

/// Everything needed to cost a run without building networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub agent: AgentArch,
    pub mixer: MixerArch,
    /// Present for weighted QMIX.
    pub unrestricted_mixer: Option<MixerArch>,
    pub agent_sparsity: f64,
    pub mixer_sparsity: f64,
    pub batch: usize,
}

/// One row of the report: a quantity with its budgeted, realized and dense
/// values and the budgeted/dense ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub budgeted: f64,
    pub realized: Option<f64>,
    pub dense: f64,
}

impl ReportRow {
    pub fn ratio(&self) -> f64 {
        if self.dense == 0.0 {
            1.0
        } else {
            self.budgeted / self.dense
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub networks: Vec<NetworkCost>,
    pub rows: Vec<ReportRow>,
}

pub const FLOPS_CSV_HEADER: &str = "quantity,budgeted,realized,dense,ratio";

fn agent_bias(arch: &AgentArch) -> usize {
    let count = if arch.shared { 1 } else { arch.n_agents };
    count * (4 * arch.hidden_dim + arch.n_actions)
}

fn mixer_bias(a: &MixerArch) -> usize {
    a.hyper_dim + a.n_agents * a.embed_dim + a.embed_dim + a.hyper_dim + a.embed_dim + a.hyper_dim + 1
}

fn unrestricted_bias(a: &MixerArch) -> usize {
    3 * a.embed_dim + 2
}

impl FlopsReport {
    pub fn network(&self, name: &str) -> Option<&NetworkCost> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn row(&self, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(FLOPS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let realized = r.realized.map(|v| format!("{v}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.quantity, r.budgeted, realized, r.dense, r.ratio());
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<28} {:>16} {:>16} {:>16} {:>8}\n",
            "quantity", "budgeted", "realized", "dense", "ratio"
        );
        for r in &self.rows {
            let realized = r.realized.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<28} {:>16.1} {:>16} {:>16.1} {:>8.4}",
                r.quantity,
                r.budgeted,
                realized,
                r.dense,
                r.ratio()
            );
        }
        out
    }
}

/// Budgeted report; pass built networks to also fill realized values and
/// cross-check the allocated parameter counts.
pub fn report<R: Mixing, U: Mixing>(
    model: &CostModel,
    restricted: Option<&TeamNets<R>>,
    unrestricted: Option<&TeamNets<U>>,
) -> Result<FlopsReport> {
    for s in [model.agent_sparsity, model.mixer_sparsity] {
        if !(0.0..=1.0).contains(&s) {
            return Err(MastError::InvalidArgument(format!("sparsity {s} outside [0, 1]")));
        }
    }
    let (sa, sm) = (model.agent_sparsity, model.mixer_sparsity);
    let a_layers = agent_layers(&model.agent, "agent");
    let m_layers = mixer_layers(&model.mixer);
    let mut agent = NetworkCost::from_layers("agent", &a_layers, sa, agent_bias(&model.agent));
    let mut mixer = NetworkCost::from_layers("mixer", &m_layers, sm, mixer_bias(&model.mixer));
    if let Some(nets) = restricted {
        agent.realize(nets)?;
        mixer.realize(nets)?;
        let allocated = nets.store.total_len();
        let counted = agent.dense_size() + mixer.dense_size() + (agent.bias_params + mixer.bias_params) as f64;
        if allocated as f64 != counted {
            return Err(MastError::DimensionMismatch {
                context: "accounting vs allocated parameters",
                left: format!("{counted}"),
                right: format!("{allocated}"),
            });
        }
    }
    let mut networks = vec![agent, mixer];
    if let Some(um) = &model.unrestricted_mixer {
        let ua_layers = agent_layers(&model.agent, "uagent");
        let um_layers = unrestricted_mixer_layers(um);
        let mut ua = NetworkCost::from_layers("unrestricted_agent", &ua_layers, sa, agent_bias(&model.agent));
        let mut umc = NetworkCost::from_layers("unrestricted_mixer", &um_layers, sm, unrestricted_bias(um));
        if let Some(nets) = unrestricted {
            ua.realize(nets)?;
            umc.realize(nets)?;
            let counted = ua.dense_size() + umc.dense_size() + (ua.bias_params + umc.bias_params) as f64;
            if nets.store.total_len() as f64 != counted {
                return Err(MastError::DimensionMismatch {
                    context: "accounting vs allocated unrestricted parameters",
                    left: format!("{counted}"),
                    right: format!("{}", nets.store.total_len()),
                });
            }
        }
        networks.push(ua);
        networks.push(umc);
    }

    let comp = |f: &dyn Fn(&NetworkCost) -> f64| ComponentFlops {
        agent: f(&networks[0]),
        mixer: f(&networks[1]),
        unrestricted_agent: networks.get(2).map_or(0.0, f),
        unrestricted_mixer: networks.get(3).map_or(0.0, f),
    };
    let budget = comp(&|n| n.flops());
    let dense = comp(&|n| n.dense_flops());
    let realized = if networks.iter().all(|n| n.realized_flops().is_some()) {
        Some(comp(&|n| n.realized_flops().unwrap_or(0.0)))
    } else {
        None
    };
    let sizes = |f: &dyn Fn(&NetworkCost) -> f64| -> f64 {
        if networks.len() == 4 {
            f(&networks[0]) + f(&networks[1]) + 2.0 * f(&networks[2]) + 2.0 * f(&networks[3])
        } else {
            2.0 * f(&networks[0]) + 2.0 * f(&networks[1])
        }
    };
    let realized_size = networks
        .iter()
        .all(|n| n.realized_size().is_some())
        .then(|| sizes(&|n| n.realized_size().unwrap_or(0.0)));

    let mut rows = Vec::new();
    for n in &networks {
        rows.push(ReportRow {
            quantity: format!("size_{}", n.name),
            budgeted: n.size(),
            realized: n.realized_size(),
            dense: n.dense_size(),
        });
        rows.push(ReportRow {
            quantity: format!("flops_{}", n.name),
            budgeted: n.flops(),
            realized: n.realized_flops(),
            dense: n.dense_flops(),
        });
    }
    rows.push(ReportRow {
        quantity: "total_size".into(),
        budgeted: sizes(&|n| n.size()),
        realized: realized_size,
        dense: sizes(&|n| n.dense_size()),
    });
    rows.push(ReportRow {
        quantity: "inference_flops".into(),
        budgeted: budget.agent,
        realized: realized.map(|r| r.agent),
        dense: dense.agent,
    });
    let formulas: &[TrainFormula] = if networks.len() == 4 {
        &[TrainFormula::Wqmix]
    } else {
        &[TrainFormula::Qmix, TrainFormula::ResTable, TrainFormula::ResDerived]
    };
    let (n, m) = (model.agent.n_agents, model.agent.n_actions);
    for &f in formulas {
        rows.push(ReportRow {
            quantity: format!("train_flops_{}", f.label()),
            budgeted: train_flops(f, model.batch, &budget, n, m)?,
            realized: match &realized {
                Some(r) => Some(train_flops(f, model.batch, r, n, m)?),
                None => None,
            },
            dense: train_flops(f, model.batch, &dense, n, m)?,
        });
    }
    Ok(FlopsReport { networks, rows })
}

#[cfg(test)]
mod tests;
