use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tabular::ENUMERATION_LIMIT;
use super::{check_actions, MultiAgentEnv, StepOutcome, TabularDecPomdp};
use crate::error::{MastError, Result};

/// Moves: stay, up, down, left, right.
pub const GRID_ACTIONS: usize = 5;
const MOVES: [(i64, i64); GRID_ACTIONS] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];
/// Observation radius; agents see a `(2r+1)^2` window.
const RADIUS: i64 = 1;
const WINDOW: usize = ((2 * RADIUS + 1) * (2 * RADIUS + 1)) as usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub episode_limit: usize,
    /// Fixed target cells `(x, y)`.
    pub targets: Vec<(usize, usize)>,
}

impl GridConfig {
    /// 5x5 grid with one corner target per agent.
    pub fn preset(n_agents: usize) -> Self {
        let corners = [(0, 0), (4, 4), (4, 0), (0, 4)];
        GridConfig {
            width: 5,
            height: 5,
            n_agents,
            episode_limit: 20,
            targets: corners[..n_agents.min(4)].to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.n_agents == 0 || self.episode_limit == 0 {
            return Err(MastError::Config("grid dimensions must be positive".into()));
        }
        if self.targets.is_empty() || self.targets.len() > self.n_agents {
            return Err(MastError::Config(format!(
                "{} targets cannot all be covered by {} agents",
                self.targets.len(),
                self.n_agents
            )));
        }
        if self.targets.iter().any(|&(x, y)| x >= self.width || y >= self.height) {
            return Err(MastError::Config("target outside the grid".into()));
        }
        Ok(())
    }
}

/// Agents on a grid must occupy every target cell at the same time.
///
/// The team reward is the change in the fraction of covered targets plus
/// 1 on the step that covers all of them, which ends the episode.
#[derive(Clone, Debug)]
pub struct CoopGrid {
    pub cfg: GridConfig,
    positions: Vec<(usize, usize)>,
    t: usize,
    done: bool,
}

impl CoopGrid {
    pub fn new(cfg: GridConfig) -> Self {
        cfg.validate().expect("invalid grid config");
        let positions = vec![(0, 0); cfg.n_agents];
        CoopGrid {
            cfg,
            positions,
            t: 0,
            done: false,
        }
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    /// Places agents explicitly; used by tests and the enumerated model.
    pub fn set_positions(&mut self, positions: Vec<(usize, usize)>) {
        assert_eq!(positions.len(), self.cfg.n_agents);
        self.positions = positions;
        self.t = 0;
        self.done = false;
    }

    fn covered(&self, positions: &[(usize, usize)]) -> usize {
        self.cfg
            .targets
            .iter()
            .filter(|t| positions.contains(t))
            .count()
    }

    fn moved(&self, p: (usize, usize), a: usize) -> (usize, usize) {
        let (dx, dy) = MOVES[a];
        let x = p.0 as i64 + dx;
        let y = p.1 as i64 + dy;
        if x < 0 || y < 0 || x >= self.cfg.width as i64 || y >= self.cfg.height as i64 {
            p
        } else {
            (x as usize, y as usize)
        }
    }

    fn transition(&self, positions: &[(usize, usize)], actions: &[usize]) -> (Vec<(usize, usize)>, f64, bool) {
        let k = self.cfg.targets.len() as f64;
        let before = self.covered(positions);
        let next: Vec<(usize, usize)> = positions
            .iter()
            .zip(actions)
            .map(|(&p, &a)| self.moved(p, a))
            .collect();
        let after = self.covered(&next);
        let success = after == self.cfg.targets.len();
        let reward = (after as f64 - before as f64) / k + if success { 1.0 } else { 0.0 };
        (next, reward, success)
    }

    fn cells(&self) -> usize {
        self.cfg.width * self.cfg.height
    }
}

impl MultiAgentEnv for CoopGrid {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_actions(&self) -> usize {
        GRID_ACTIONS
    }

    fn obs_dim(&self) -> usize {
        self.cfg.width + self.cfg.height + 2 * WINDOW
    }

    fn state_dim(&self) -> usize {
        self.cfg.n_agents * (self.cfg.width + self.cfg.height) + self.cfg.targets.len()
    }

    fn episode_limit(&self) -> usize {
        self.cfg.episode_limit
    }

    fn reset(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            self.positions = (0..self.cfg.n_agents)
                .map(|_| {
                    (
                        rng.gen_range(0..self.cfg.width),
                        rng.gen_range(0..self.cfg.height),
                    )
                })
                .collect();
            if self.covered(&self.positions) < self.cfg.targets.len() {
                break;
            }
        }
        self.t = 0;
        self.done = false;
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        let (w, h) = (self.cfg.width, self.cfg.height);
        (0..self.cfg.n_agents)
            .map(|i| {
                let (px, py) = self.positions[i];
                let mut o = vec![0.0; self.obs_dim()];
                o[px] = 1.0;
                o[w + py] = 1.0;
                let base = w + h;
                let mut cell = 0;
                for dy in -RADIUS..=RADIUS {
                    for dx in -RADIUS..=RADIUS {
                        let x = px as i64 + dx;
                        let y = py as i64 + dy;
                        if x >= 0 && y >= 0 && x < w as i64 && y < h as i64 {
                            let c = (x as usize, y as usize);
                            if self.cfg.targets.contains(&c) {
                                o[base + cell] = 1.0;
                            }
                            if self
                                .positions
                                .iter()
                                .enumerate()
                                .any(|(j, &p)| j != i && p == c)
                            {
                                o[base + WINDOW + cell] = 1.0;
                            }
                        }
                        cell += 1;
                    }
                }
                o
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let mut s = vec![0.0; self.state_dim()];
        for (i, &(x, y)) in self.positions.iter().enumerate() {
            s[i * (w + h) + x] = 1.0;
            s[i * (w + h) + w + y] = 1.0;
        }
        let base = self.cfg.n_agents * (w + h);
        for (k, t) in self.cfg.targets.iter().enumerate() {
            if self.positions.contains(t) {
                s[base + k] = 1.0;
            }
        }
        s
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        vec![vec![true; GRID_ACTIONS]; self.cfg.n_agents]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(MastError::Env("step after the episode ended".into()));
        }
        check_actions(actions, &self.avail_actions())?;
        let (next, reward, success) = self.transition(&self.positions, actions);
        self.positions = next;
        self.t += 1;
        self.done = success || self.t >= self.cfg.episode_limit;
        Ok(StepOutcome {
            reward,
            terminated: success,
            success,
        })
    }

    /// Enumerates joint positions plus one absorbing success state; the
    /// time limit is not part of the model.
    fn tabular(&self) -> Option<TabularDecPomdp> {
        let cells = self.cells();
        let n = self.cfg.n_agents;
        let n_pos = cells.checked_pow(n as u32)?;
        let n_joint = GRID_ACTIONS.pow(n as u32);
        if (n_pos + 1).saturating_mul(n_joint) > ENUMERATION_LIMIT {
            return None;
        }
        let decode = |mut s: usize| -> Vec<(usize, usize)> {
            (0..n)
                .map(|_| {
                    let c = s % cells;
                    s /= cells;
                    (c % self.cfg.width, c / self.cfg.width)
                })
                .collect()
        };
        let encode = |ps: &[(usize, usize)]| -> usize {
            ps.iter()
                .rev()
                .fold(0, |acc, &(x, y)| acc * cells + y * self.cfg.width + x)
        };
        let absorbing = n_pos;
        let mut transitions = Vec::with_capacity(n_pos + 1);
        let mut rewards = Vec::with_capacity(n_pos + 1);
        let mut terminal = Vec::with_capacity(n_pos + 1);
        let mut observations = Vec::with_capacity(n_pos + 1);
        let mut starts = Vec::new();
        for s in 0..n_pos {
            let ps = decode(s);
            let done = self.covered(&ps) == self.cfg.targets.len();
            terminal.push(done);
            if !done {
                starts.push(s);
            }
            let mut trow = Vec::with_capacity(n_joint);
            let mut rrow = Vec::with_capacity(n_joint);
            for j in 0..n_joint {
                let mut jj = j;
                let acts: Vec<usize> = (0..n)
                    .map(|_| {
                        let a = jj % GRID_ACTIONS;
                        jj /= GRID_ACTIONS;
                        a
                    })
                    .collect();
                let (next, r, success) = self.transition(&ps, &acts);
                let target = if success { absorbing } else { encode(&next) };
                trow.push(vec![(target, 1.0)]);
                rrow.push(if done { 0.0 } else { r });
            }
            transitions.push(trow);
            rewards.push(rrow);
            observations.push(ps.iter().map(|&(x, y)| y * self.cfg.width + x).collect());
        }
        transitions.push(vec![vec![(absorbing, 1.0)]; n_joint]);
        rewards.push(vec![0.0; n_joint]);
        terminal.push(true);
        observations.push(vec![cells; n]);
        let p = 1.0 / starts.len() as f64;
        Some(TabularDecPomdp {
            n_agents: n,
            n_actions: GRID_ACTIONS,
            n_states: n_pos + 1,
            gamma: 0.99,
            transitions,
            rewards,
            terminal,
            observations,
            n_obs: cells + 1,
            initial: starts.into_iter().map(|s| (s, p)).collect(),
            episode_limit: self.cfg.episode_limit,
        })
    }
}
