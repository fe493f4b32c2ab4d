//! Small cooperative multi-agent environments and exact solvers for the
//! enumerable ones.

mod grid;
mod matrix_game;
mod tabular;

use serde::{Deserialize, Serialize};

pub use grid::{CoopGrid, GridConfig, GRID_ACTIONS};
pub use matrix_game::MatrixGame;
pub use tabular::{
    policy_value, solve_exact, ExactValues, JointPolicy, TabularDecPomdp, TabularEnv,
    ENUMERATION_LIMIT,
};

use crate::error::{MastError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminated: bool,
    /// True on the step that completes the task.
    pub success: bool,
}

/// Cooperative environment with per-agent observations and a team reward.
pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn episode_limit(&self) -> usize;
    /// Starts a new episode; identical seeds give identical episodes under
    /// identical actions.
    fn reset(&mut self, seed: u64);
    fn observations(&self) -> Vec<Vec<f64>>;
    fn state(&self) -> Vec<f64>;
    fn avail_actions(&self) -> Vec<Vec<bool>>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;
    /// Enumerable model of the environment, when one exists.
    fn tabular(&self) -> Option<TabularDecPomdp> {
        None
    }
}

pub(crate) fn check_actions(actions: &[usize], avail: &[Vec<bool>]) -> Result<()> {
    if actions.len() != avail.len() {
        return Err(MastError::Env(format!(
            "expected {} actions, got {}",
            avail.len(),
            actions.len()
        )));
    }
    for (i, (&a, av)) in actions.iter().zip(avail).enumerate() {
        if !av.get(a).copied().unwrap_or(false) {
            return Err(MastError::Env(format!("agent {i}: action {a} is not available")));
        }
    }
    Ok(())
}

/// Environment presets selectable by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvPreset {
    Climb,
    Penalty,
    Grid(GridConfig),
}

impl EnvPreset {
    /// `climb`, `penalty`, or `gridN` for an N-agent 5x5 grid (N in 2..=4).
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "climb" => Ok(EnvPreset::Climb),
            "penalty" => Ok(EnvPreset::Penalty),
            _ => {
                let n = name
                    .strip_prefix("grid")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| (2..=4).contains(n))
                    .ok_or_else(|| {
                        MastError::Config(format!(
                            "unknown environment preset {name:?} (expected climb, penalty, grid2, grid3 or grid4)"
                        ))
                    })?;
                Ok(EnvPreset::Grid(GridConfig::preset(n)))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            EnvPreset::Climb => "climb".into(),
            EnvPreset::Penalty => "penalty".into(),
            EnvPreset::Grid(g) => format!("grid{}", g.n_agents),
        }
    }

    pub fn build(&self) -> Box<dyn MultiAgentEnv + Send> {
        match self {
            EnvPreset::Climb => Box::new(MatrixGame::climb()),
            EnvPreset::Penalty => Box::new(MatrixGame::penalty()),
            EnvPreset::Grid(g) => Box::new(CoopGrid::new(g.clone())),
        }
    }
}
