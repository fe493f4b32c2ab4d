//! Binary masks over weight matrices, sparsity budgets shared by groups of
//! slots, and magnitude-drop / gradient-grow topology evolution.

mod evolution;
mod mask;
mod stats;
mod store;

pub use evolution::{
    evolve, evolve_with_fraction, random_init_mask, zeta_at, EvolutionGroup, EvolutionReport,
    EvolutionSchedule, PoolIndex,
};
pub use mask::Mask;
pub use stats::{mask_stats, stats_from_csv, stats_to_csv, MaskStats, MASK_STATS_HEADER};
pub use store::{DenseParam, Param, ParamStore, SparseSlot};
