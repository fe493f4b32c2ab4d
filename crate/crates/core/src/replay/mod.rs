//! Episode storage and the pair of FIFO replay buffers: a large one for
//! off-policy data and a small one holding only the newest episodes.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MastError, Result};

/// One complete trajectory.
///
/// Per-step arrays hold `len + 1` entries for states, observations and
/// availability (the last one is the state after the final action), and
/// `len` entries for actions and rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seq: u64,
    pub states: Vec<Vec<f64>>,
    /// `[t][agent]` observation vectors.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `[t][agent][action]` availability flags.
    pub avail: Vec<Vec<Vec<bool>>>,
    /// `[t][agent]` chosen actions.
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// True when the last step ended the episode; false on truncation.
    pub terminated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self, episode_limit: usize) -> Result<()> {
        let t = self.len();
        let bad = |m: String| Err(MastError::InvalidArgument(format!("episode {}: {m}", self.seq)));
        if t == 0 || t > episode_limit {
            return bad(format!("length {t} outside 1..={episode_limit}"));
        }
        if self.actions.len() != t || self.states.len() != t + 1 || self.obs.len() != t + 1 {
            return bad("per-step arrays are not aligned".into());
        }
        if self.avail.len() != t + 1 {
            return bad("availability array is not aligned".into());
        }
        if !self.terminated && t != episode_limit {
            return bad(format!("truncated at {t} before the limit {episode_limit}"));
        }
        for (step, acts) in self.actions.iter().enumerate() {
            for (i, &a) in acts.iter().enumerate() {
                if !self.avail[step][i].get(a).copied().unwrap_or(false) {
                    return bad(format!("agent {i} took unavailable action {a} at step {step}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub capacity_offline: usize,
    pub capacity_online: usize,
    pub sample_offline: usize,
    pub sample_online: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            capacity_offline: 5000,
            capacity_online: 128,
            sample_offline: 20,
            sample_online: 12,
        }
    }
}

impl BufferConfig {
    pub fn batch_size(&self) -> usize {
        self.sample_offline + self.sample_online
    }

    /// Named `offline:online` sample splits of a 32-episode batch.
    pub fn preset(name: &str) -> Option<(usize, usize)> {
        let (a, b) = match name {
            "8:0" => (8, 0),
            "6:2" => (6, 2),
            "5:3" => (5, 3),
            "3:5" => (3, 5),
            "2:6" => (2, 6),
            "0:8" => (0, 8),
            "default" => return Some((20, 12)),
            _ => return None,
        };
        Some((a * 4, b * 4))
    }
}

/// Two FIFO rings fed with every episode; the online ring is the newest
/// `capacity_online` episodes.
#[derive(Clone, Debug)]
pub struct DualBuffer {
    cfg: BufferConfig,
    offline: VecDeque<Arc<Episode>>,
    online: VecDeque<Arc<Episode>>,
    pushes: u64,
}

impl DualBuffer {
    pub fn new(cfg: BufferConfig) -> Result<Self> {
        if cfg.capacity_offline == 0 {
            return Err(MastError::Config("offline buffer capacity must be positive".into()));
        }
        if cfg.capacity_online > cfg.capacity_offline {
            return Err(MastError::Config(format!(
                "online capacity {} exceeds offline capacity {}",
                cfg.capacity_online, cfg.capacity_offline
            )));
        }
        if cfg.sample_offline > cfg.capacity_offline || cfg.sample_online > cfg.capacity_online {
            return Err(MastError::Config(format!(
                "sample sizes {}:{} exceed capacities {}:{}",
                cfg.sample_offline, cfg.sample_online, cfg.capacity_offline, cfg.capacity_online
            )));
        }
        Ok(DualBuffer {
            cfg,
            offline: VecDeque::with_capacity(cfg.capacity_offline),
            online: VecDeque::with_capacity(cfg.capacity_online),
            pushes: 0,
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.cfg
    }

    /// Stamps the episode with the next sequence number and stores it.
    pub fn push(&mut self, mut ep: Episode) -> u64 {
        ep.seq = self.pushes;
        self.pushes += 1;
        let ep = Arc::new(ep);
        if self.offline.len() == self.cfg.capacity_offline {
            self.offline.pop_front();
        }
        self.offline.push_back(Arc::clone(&ep));
        if self.cfg.capacity_online > 0 {
            if self.online.len() == self.cfg.capacity_online {
                self.online.pop_front();
            }
            self.online.push_back(ep);
        }
        self.pushes - 1
    }

    pub fn len_offline(&self) -> usize {
        self.offline.len()
    }

    pub fn len_online(&self) -> usize {
        self.online.len()
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn offline(&self) -> impl Iterator<Item = &Arc<Episode>> {
        self.offline.iter()
    }

    pub fn online(&self) -> impl Iterator<Item = &Arc<Episode>> {
        self.online.iter()
    }

    pub fn can_sample(&self) -> bool {
        self.offline.len() >= self.cfg.sample_offline && self.online.len() >= self.cfg.sample_online
    }

    /// `sample_offline` distinct episodes from the offline ring followed by
    /// `sample_online` distinct episodes from the online ring.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Arc<Episode>>> {
        let (b1, b2) = (self.cfg.sample_offline, self.cfg.sample_online);
        if self.offline.len() < b1 || self.online.len() < b2 {
            return Err(MastError::InvalidArgument(format!(
                "cannot sample {b1}:{b2} from buffers holding {}:{}",
                self.offline.len(),
                self.online.len()
            )));
        }
        let mut out = Vec::with_capacity(b1 + b2);
        for i in rand::seq::index::sample(rng, self.offline.len(), b1).iter() {
            out.push(Arc::clone(&self.offline[i]));
        }
        for i in rand::seq::index::sample(rng, self.online.len(), b2).iter() {
            out.push(Arc::clone(&self.online[i]));
        }
        Ok(out)
    }

    pub fn dump(&self, path: &Path, config_hash: &str) -> Result<()> {
        let d = BufferDump {
            config_hash: config_hash.to_string(),
            config: self.cfg,
            pushes: self.pushes,
            episodes: self.offline.iter().map(|e| (**e).clone()).collect(),
        };
        let text = serde_json::to_string(&d).map_err(|e| MastError::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| MastError::io(path, e))
    }

    /// Rebuilds a buffer from a dump; the online ring is the dump's newest
    /// episodes. Fails when the stored config hash differs.
    pub fn restore(path: &Path, config_hash: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MastError::io(path, e))?;
        let d: BufferDump =
            serde_json::from_str(&text).map_err(|e| MastError::Serde(e.to_string()))?;
        if d.config_hash != config_hash {
            return Err(MastError::Config(format!(
                "buffer dump was written for config {} not {}",
                d.config_hash, config_hash
            )));
        }
        let mut buf = DualBuffer::new(d.config)?;
        let n_online = d.config.capacity_online.min(d.episodes.len());
        let first_online = d.episodes.len() - n_online;
        for (i, ep) in d.episodes.into_iter().enumerate() {
            let ep = Arc::new(ep);
            if i >= first_online {
                buf.online.push_back(Arc::clone(&ep));
            }
            buf.offline.push_back(ep);
        }
        buf.pushes = d.pushes;
        Ok(buf)
    }
}

#[derive(Serialize, Deserialize)]
struct BufferDump {
    config_hash: String,
    config: BufferConfig,
    pushes: u64,
    episodes: Vec<Episode>,
}

/// Episodes aligned to a common length, indexed time-major: entry
/// `t * batch + b` is step `t` of episode `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    pub valid: Vec<bool>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl PaddedBatch {
    pub fn index(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

pub fn pad_batch(episodes: &[Arc<Episode>]) -> PaddedBatch {
    let batch = episodes.len();
    let steps = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
    let mut valid = vec![false; steps * batch];
    let mut rewards = vec![0.0; steps * batch];
    for (b, ep) in episodes.iter().enumerate() {
        for t in 0..ep.len() {
            valid[t * batch + b] = true;
            rewards[t * batch + b] = ep.rewards[t];
        }
    }
    PaddedBatch {
        batch,
        steps,
        lengths: episodes.iter().map(|e| e.len()).collect(),
        valid,
        rewards,
        terminated: episodes.iter().map(|e| e.terminated).collect(),
    }
}
