use super::{check_actions, MultiAgentEnv, StepOutcome, TabularDecPomdp};
use crate::error::{MastError, Result};

/// Two-agent single-step cooperative game with a shared payoff table.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGame {
    pub name: String,
    /// `payoff[a0][a1]`.
    pub payoff: Vec<Vec<f64>>,
    done: bool,
}

impl MatrixGame {
    pub fn new(name: &str, payoff: Vec<Vec<f64>>) -> Result<Self> {
        let n = payoff.len();
        if n == 0 || payoff.iter().any(|r| r.len() != n) {
            return Err(MastError::Env("payoff table must be square and non-empty".into()));
        }
        if payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MastError::Env("payoff table must be finite".into()));
        }
        Ok(MatrixGame {
            name: name.into(),
            payoff,
            done: false,
        })
    }

    /// Miscoordination next to the optimum costs 30.
    pub fn climb() -> Self {
        Self::new(
            "climb",
            vec![
                vec![11.0, -30.0, 0.0],
                vec![-30.0, 7.0, 6.0],
                vec![0.0, 0.0, 5.0],
            ],
        )
        .expect("static table")
    }

    /// Two coordinated corners separated by a -100 penalty; the top-left
    /// corner pays slightly more so the optimum is unique.
    pub fn penalty() -> Self {
        Self::new(
            "penalty",
            vec![
                vec![10.0, 0.0, -100.0],
                vec![0.0, 2.0, 0.0],
                vec![-100.0, 0.0, 9.0],
            ],
        )
        .expect("static table")
    }

    pub fn optimal_joint_action(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for (i, row) in self.payoff.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > self.payoff[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        best
    }

    pub fn optimal_value(&self) -> f64 {
        let (i, j) = self.optimal_joint_action();
        self.payoff[i][j]
    }
}

impl MultiAgentEnv for MatrixGame {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        self.payoff.len()
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn episode_limit(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) {
        self.done = false;
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![vec![1.0]; 2]
    }

    fn state(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.n_actions()]; 2]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(MastError::Env("step after the episode terminated".into()));
        }
        check_actions(actions, &self.avail_actions())?;
        self.done = true;
        let reward = self.payoff[actions[0]][actions[1]];
        Ok(StepOutcome {
            reward,
            terminated: true,
            success: (actions[0], actions[1]) == self.optimal_joint_action(),
        })
    }

    fn tabular(&self) -> Option<TabularDecPomdp> {
        let u = self.n_actions();
        let mut rewards = vec![vec![0.0; u * u]; 2];
        for a0 in 0..u {
            for a1 in 0..u {
                rewards[0][a0 + u * a1] = self.payoff[a0][a1];
            }
        }
        Some(TabularDecPomdp {
            n_agents: 2,
            n_actions: u,
            n_states: 2,
            gamma: 0.99,
            transitions: vec![vec![vec![(1, 1.0)]; u * u]; 2],
            rewards,
            terminal: vec![false, true],
            observations: vec![vec![0, 0], vec![1, 1]],
            n_obs: 2,
            initial: vec![(0, 1.0)],
            episode_limit: 1,
        })
    }
}
