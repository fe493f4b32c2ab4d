use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::store::ParamStore;
use crate::error::{MastError, Result};
use crate::numerics::{Gradients, ParamId};

/// Slots whose masks are evolved jointly under a single budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionGroup {
    pub name: String,
    pub slots: Vec<ParamId>,
    pub sparsity: f64,
    pub total_params: usize,
    pub active_target: usize,
}

impl EvolutionGroup {
    pub fn new(
        name: impl Into<String>,
        store: &ParamStore,
        slots: Vec<ParamId>,
        sparsity: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&sparsity) {
            return Err(MastError::InvalidArgument(format!(
                "sparsity must lie in [0, 1), got {sparsity}"
            )));
        }
        let mut total = 0;
        for &id in &slots {
            let slot = store.slot(id).ok_or_else(|| {
                MastError::InvalidArgument(format!("param {} is not a sparse slot", id.0))
            })?;
            total += slot.weights.len();
        }
        let active_target = ((1.0 - sparsity) * total as f64).round() as usize;
        Ok(EvolutionGroup {
            name: name.into(),
            slots,
            sparsity,
            total_params: total,
            active_target,
        })
    }

    pub fn mask_ones(&self, store: &ParamStore) -> usize {
        self.slots
            .iter()
            .filter_map(|id| store.slot(*id))
            .map(|s| s.mask.count_ones())
            .sum()
    }

    /// Number of connections exchanged for update fraction `zeta`.
    ///
    /// Uses the integer `active_target` rather than `(1−S)·N` so that
    /// floating-point noise in `1−S` cannot shave one connection off.
    pub fn update_count(&self, zeta: f64) -> usize {
        (zeta * self.active_target as f64 + 1e-9).floor().max(0.0) as usize
    }
}

/// Cosine-annealed update fraction with a hard stop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSchedule {
    pub zeta0: f64,
    pub delta_m: usize,
    pub t_end: u64,
}

impl EvolutionSchedule {
    pub fn new(zeta0: f64, delta_m: usize, t_end: u64) -> Result<Self> {
        if !(zeta0 > 0.0 && zeta0 <= 1.0) {
            return Err(MastError::InvalidArgument(format!(
                "zeta0 must lie in (0, 1], got {zeta0}"
            )));
        }
        if delta_m == 0 {
            return Err(MastError::InvalidArgument("delta_m must be at least 1".into()));
        }
        Ok(EvolutionSchedule {
            zeta0,
            delta_m,
            t_end,
        })
    }
}

/// `ζ_t = ζ₀/2 · (1 + cos(π·min(t, t_end)/t_end))`, zero from `t_end` on.
pub fn zeta_at(schedule: &EvolutionSchedule, t: u64) -> f64 {
    if schedule.t_end == 0 || t >= schedule.t_end {
        return 0.0;
    }
    let frac = t as f64 / schedule.t_end as f64;
    0.5 * schedule.zeta0 * (1.0 + (PI * frac).cos())
}

/// Places exactly `active_target` ones uniformly across the group's pooled
/// entries and zeroes the weights outside the new masks.
pub fn random_init_mask<R: Rng + ?Sized>(
    store: &mut ParamStore,
    group: &EvolutionGroup,
    rng: &mut R,
) -> Result<()> {
    let chosen = rand::seq::index::sample(rng, group.total_params, group.active_target);
    let mut on = vec![false; group.total_params];
    for i in chosen.iter() {
        on[i] = true;
    }
    let mut offset = 0;
    for &id in &group.slots {
        let slot = store
            .slot_mut(id)
            .ok_or_else(|| MastError::InvalidArgument(format!("param {} not sparse", id.0)))?;
        let n = slot.weights.len();
        for i in 0..n {
            slot.mask.set_flat(i, on[offset + i]);
        }
        slot.apply_mask();
        offset += n;
    }
    Ok(())
}

/// Position in a group's pooled parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PoolIndex {
    pub slot: ParamId,
    pub index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub group: String,
    pub zeta: f64,
    pub k: usize,
    pub dropped: Vec<PoolIndex>,
    pub grown: Vec<PoolIndex>,
    /// Connections that could not be regrown for lack of candidates.
    pub shortfall: usize,
    pub mask_ones: usize,
}

/// Orders `(score, flat)` pairs by score, breaking ties by flat index.
fn by_score_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` smallest entries under [`by_score_then_index`], in that order.
fn smallest_k(mut items: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if k == 0 {
        return Vec::new();
    }
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, by_score_then_index);
        items.truncate(k);
    }
    items.sort_by(by_score_then_index);
    items
}

/// One drop/grow exchange with update fraction `zeta`.
///
/// Drops the `k` active entries with the smallest magnitude and grows the
/// `k` entries with the largest gradient magnitude among all positions that
/// are not kept active (just-dropped positions are eligible again). Newly
/// activated weights start at zero; a just-dropped entry that is regrown
/// keeps its value. Ties go to the lower pooled index.
pub fn evolve_with_fraction(
    store: &mut ParamStore,
    group: &EvolutionGroup,
    grads: &Gradients,
    zeta: f64,
) -> Result<EvolutionReport> {
    let mut offsets = Vec::with_capacity(group.slots.len());
    let mut weights = Vec::with_capacity(group.total_params);
    let mut grad_abs = Vec::with_capacity(group.total_params);
    let mut active = Vec::with_capacity(group.total_params);
    for &id in &group.slots {
        let slot = store
            .slot(id)
            .ok_or_else(|| MastError::InvalidArgument(format!("param {} not sparse", id.0)))?;
        let g = grads.get(id).ok_or_else(|| {
            MastError::InvalidArgument(format!(
                "no gradient for slot {} ({}) in group {}",
                id.0, slot.name, group.name
            ))
        })?;
        if g.shape() != slot.weights.shape() {
            return Err(MastError::shapes("evolve gradient", g.shape(), slot.weights.shape()));
        }
        offsets.push(weights.len());
        weights.extend_from_slice(slot.weights.as_slice());
        grad_abs.extend(g.as_slice().iter().map(|v| v.abs()));
        active.extend_from_slice(slot.mask.bits());
    }

    let k = group.update_count(zeta);
    let ones = active.iter().filter(|&&b| b).count();
    let mut report = EvolutionReport {
        group: group.name.clone(),
        zeta,
        k,
        mask_ones: ones,
        ..Default::default()
    };
    if k == 0 {
        return Ok(report);
    }

    let active_scores: Vec<(f64, usize)> = (0..weights.len())
        .filter(|&i| active[i])
        .map(|i| (weights[i].abs(), i))
        .collect();
    let was_active = active.clone();
    let k_drop = k.min(active_scores.len());
    let drop = smallest_k(active_scores, k_drop);
    for &(_, i) in &drop {
        active[i] = false;
    }

    // Every position outside the kept set is a candidate, dropped ones included.
    let grow_scores: Vec<(f64, usize)> = (0..weights.len())
        .filter(|&i| !active[i])
        .map(|i| (-grad_abs[i], i))
        .collect();
    let k_grow = k_drop.min(grow_scores.len());
    let grow = smallest_k(grow_scores, k_grow);
    report.shortfall = k - k_grow;

    let mut drop_idx: Vec<usize> = drop.iter().map(|d| d.1).collect();
    if k_grow < k_drop {
        // Undo the largest-magnitude drops so the ones count is preserved.
        for &i in &drop_idx[k_grow..] {
            active[i] = true;
        }
        drop_idx.truncate(k_grow);
    }
    let grow_idx: Vec<usize> = grow.iter().map(|g| g.1).collect();
    for &i in &grow_idx {
        active[i] = true;
    }

    let locate = |flat: usize| -> PoolIndex {
        let s = offsets.partition_point(|&o| o <= flat) - 1;
        PoolIndex {
            slot: group.slots[s],
            index: flat - offsets[s],
        }
    };
    report.dropped = drop_idx.iter().map(|&i| locate(i)).collect();
    report.grown = grow_idx.iter().map(|&i| locate(i)).collect();

    for (s, &id) in group.slots.iter().enumerate() {
        let slot = store.slot_mut(id).expect("checked above");
        let off = offsets[s];
        let n = slot.weights.len();
        for i in 0..n {
            slot.mask.set_flat(i, active[off + i]);
        }
        // A regrown just-dropped entry keeps its weight; only new ones start at zero.
        for &p in report.grown.iter().filter(|p| p.slot == id) {
            if !was_active[off + p.index] {
                slot.weights.as_mut_slice()[p.index] = 0.0;
            }
        }
        slot.apply_mask();
    }
    report.mask_ones = active.iter().filter(|&&b| b).count();
    Ok(report)
}

/// Evolution step at global step `t` using the scheduled update fraction.
pub fn evolve(
    store: &mut ParamStore,
    group: &EvolutionGroup,
    grads: &Gradients,
    schedule: &EvolutionSchedule,
    t: u64,
) -> Result<EvolutionReport> {
    evolve_with_fraction(store, group, grads, zeta_at(schedule, t))
}
