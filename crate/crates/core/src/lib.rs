pub mod accounting;
pub mod config;
pub mod envs;
pub mod error;
pub mod numerics;
pub mod replay;
pub mod networks;
pub mod sparse_topology;
pub mod targets;
pub mod trainer;

pub use error::{MastError, Result};
