use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, MultiAgentEnv, StepOutcome};
use crate::error::{MastError, Result};

/// Largest `|S|·|U|^N` the exact solvers accept.
pub const ENUMERATION_LIMIT: usize = 100_000;

/// Fully enumerated Dec-POMDP. Joint actions are encoded as
/// `Σ_i u_i · |U|^i` (agent 0 least significant). Terminal states are
/// absorbing with zero value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDecPomdp {
    pub n_agents: usize,
    pub n_actions: usize,
    pub n_states: usize,
    pub gamma: f64,
    /// `[s][joint]` successor distribution.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// `[s][joint]` expected reward.
    pub rewards: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    /// `[s][agent]` observation symbol.
    pub observations: Vec<Vec<usize>>,
    pub n_obs: usize,
    pub initial: Vec<(usize, f64)>,
    pub episode_limit: usize,
}

/// Exact joint action values and state values.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactValues {
    /// `[s][joint]`.
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub iterations: usize,
}

/// `[s][joint]` probabilities of a joint policy conditioned on the state.
pub type JointPolicy = Vec<Vec<f64>>;

impl TabularDecPomdp {
    pub fn n_joint(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .rev()
            .fold(0, |acc, &a| acc * self.n_actions + a)
    }

    pub fn decode(&self, mut joint: usize) -> Vec<usize> {
        (0..self.n_agents)
            .map(|_| {
                let a = joint % self.n_actions;
                joint /= self.n_actions;
                a
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let nj = self.n_joint();
        if self.n_states.saturating_mul(nj) > ENUMERATION_LIMIT {
            return Err(MastError::Unsupported(format!(
                "{} states x {} joint actions exceeds the enumeration limit {}",
                self.n_states, nj, ENUMERATION_LIMIT
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(MastError::InvalidArgument(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.transitions.len() != self.n_states
            || self.rewards.len() != self.n_states
            || self.terminal.len() != self.n_states
            || self.observations.len() != self.n_states
        {
            return Err(MastError::InvalidArgument("per-state tables are not aligned".into()));
        }
        for s in 0..self.n_states {
            if self.transitions[s].len() != nj || self.rewards[s].len() != nj {
                return Err(MastError::InvalidArgument(format!("state {s}: joint tables wrong size")));
            }
            for row in &self.transitions[s] {
                let p: f64 = row.iter().map(|x| x.1).sum();
                if (p - 1.0).abs() > 1e-9 || row.iter().any(|x| x.0 >= self.n_states || x.1 < 0.0) {
                    return Err(MastError::InvalidArgument(format!(
                        "state {s}: transition row is not a distribution"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Random model with a few successors per joint action; about one
    /// state in ten is terminal.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_agents: usize,
        n_actions: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Self {
        let nj = n_actions.pow(n_agents as u32);
        let terminal: Vec<bool> = (0..n_states).map(|s| s > 0 && rng.gen_bool(0.1)).collect();
        let transitions = (0..n_states)
            .map(|_| {
                (0..nj)
                    .map(|_| {
                        let k = rng.gen_range(1..=3);
                        let raw: Vec<(usize, f64)> = (0..k)
                            .map(|_| (rng.gen_range(0..n_states), rng.gen_range(0.1..1.0)))
                            .collect();
                        let z: f64 = raw.iter().map(|x| x.1).sum();
                        raw.into_iter().map(|(s, p)| (s, p / z)).collect()
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..n_states)
            .map(|s| {
                (0..nj)
                    .map(|_| if terminal[s] { 0.0 } else { rng.gen_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let n_obs = n_states.div_ceil(2).max(1);
        let observations = (0..n_states)
            .map(|_| (0..n_agents).map(|_| rng.gen_range(0..n_obs)).collect())
            .collect();
        TabularDecPomdp {
            n_agents,
            n_actions,
            n_states,
            gamma,
            transitions,
            rewards,
            terminal,
            observations,
            n_obs,
            initial: vec![(0, 1.0)],
            episode_limit: 50,
        }
    }

    fn backup(&self, s: usize, j: usize, v: &[f64]) -> f64 {
        if self.terminal[s] {
            return 0.0;
        }
        let next: f64 = self.transitions[s][j].iter().map(|&(s2, p)| p * v[s2]).sum();
        self.rewards[s][j] + self.gamma * next
    }

    /// Largest `|Q(s,u) − (R + γ·E[max Q(s',·)])|` over non-terminal pairs.
    pub fn bellman_residual(&self, q: &[Vec<f64>]) -> f64 {
        let v: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(s, row)| {
                if self.terminal[s] {
                    0.0
                } else {
                    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            for j in 0..self.n_joint() {
                worst = worst.max((q[s][j] - self.backup(s, j, &v)).abs());
            }
        }
        worst
    }

    /// Greedy deterministic joint policy with respect to `q`.
    pub fn greedy_policy(&self, q: &[Vec<f64>]) -> JointPolicy {
        q.iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                let mut p = vec![0.0; row.len()];
                p[best] = 1.0;
                p
            })
            .collect()
    }
}

/// Value iteration on the joint state-action space until successive
/// iterates differ by less than `1e-12`.
pub fn solve_exact(spec: &TabularDecPomdp) -> Result<ExactValues> {
    spec.validate()?;
    let (ns, nj) = (spec.n_states, spec.n_joint());
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; nj]; ns];
    for it in 1..=1_000_000 {
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for j in 0..nj {
                q[s][j] = spec.backup(s, j, &v);
            }
        }
        for s in 0..ns {
            let nv = if spec.terminal[s] {
                0.0
            } else {
                q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            delta = delta.max((nv - v[s]).abs());
            v[s] = nv;
        }
        if delta < 1e-12 {
            for s in 0..ns {
                for j in 0..nj {
                    q[s][j] = spec.backup(s, j, &v);
                }
            }
            return Ok(ExactValues { q, v, iterations: it });
        }
    }
    Err(MastError::NonFinite("value iteration did not converge".into()))
}

/// Exact action values of a fixed joint policy, by iterating the policy's
/// Bellman operator to a `1e-12` fixed point.
pub fn policy_value(spec: &TabularDecPomdp, policy: &JointPolicy) -> Result<ExactValues> {
    spec.validate()?;
    let (ns, nj) = (spec.n_states, spec.n_joint());
    if policy.len() != ns || policy.iter().any(|p| p.len() != nj) {
        return Err(MastError::InvalidArgument("policy table has the wrong shape".into()));
    }
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; nj]; ns];
    for it in 1..=1_000_000 {
        for s in 0..ns {
            for j in 0..nj {
                q[s][j] = spec.backup(s, j, &v);
            }
        }
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            let nv = if spec.terminal[s] {
                0.0
            } else {
                policy[s].iter().zip(&q[s]).map(|(p, x)| p * x).sum()
            };
            delta = delta.max((nv - v[s]).abs());
            v[s] = nv;
        }
        if delta < 1e-12 {
            for s in 0..ns {
                for j in 0..nj {
                    q[s][j] = spec.backup(s, j, &v);
                }
            }
            return Ok(ExactValues { q, v, iterations: it });
        }
    }
    Err(MastError::NonFinite("policy evaluation did not converge".into()))
}

/// Sampled rollouts over a tabular model; observations are one-hot symbols.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    pub spec: TabularDecPomdp,
    state: usize,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(spec: TabularDecPomdp) -> Result<Self> {
        spec.validate()?;
        Ok(TabularEnv {
            spec,
            state: 0,
            t: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    fn draw(&mut self, dist: &[(usize, f64)]) -> usize {
        let x: f64 = self.rng.gen();
        let mut acc = 0.0;
        for &(s, p) in dist {
            acc += p;
            if x < acc {
                return s;
            }
        }
        dist.last().map_or(0, |d| d.0)
    }
}

impl MultiAgentEnv for TabularEnv {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn obs_dim(&self) -> usize {
        self.spec.n_obs
    }

    fn state_dim(&self) -> usize {
        self.spec.n_states
    }

    fn episode_limit(&self) -> usize {
        self.spec.episode_limit
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let init = self.spec.initial.clone();
        self.state = self.draw(&init);
        self.t = 0;
        self.done = self.spec.terminal[self.state];
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.spec.observations[self.state]
            .iter()
            .map(|&o| {
                let mut v = vec![0.0; self.spec.n_obs];
                v[o] = 1.0;
                v
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.spec.n_states];
        v[self.state] = 1.0;
        v
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.spec.n_actions]; self.spec.n_agents]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(MastError::Env("step after the episode terminated".into()));
        }
        check_actions(actions, &self.avail_actions())?;
        let j = self.spec.encode(actions);
        let reward = self.spec.rewards[self.state][j];
        let dist = self.spec.transitions[self.state][j].clone();
        self.state = self.draw(&dist);
        self.t += 1;
        let terminal = self.spec.terminal[self.state];
        self.done = terminal || self.t >= self.spec.episode_limit;
        Ok(StepOutcome {
            reward,
            terminated: terminal,
            success: terminal,
        })
    }

    fn tabular(&self) -> Option<TabularDecPomdp> {
        Some(self.spec.clone())
    }
}
