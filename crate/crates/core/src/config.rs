//! Flat run configuration loaded from TOML. Every key has a default; keys
//! left unset that depend on the algorithm or the run length are resolved
//! by [`RunConfig::resolved`].

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::EnvPreset;
use crate::error::{MastError, Result};
use crate::networks::Grouping;
use crate::replay::BufferConfig;
use crate::targets::{Operator, TargetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Qmix,
    /// Optimistically weighted QMIX with an unrestricted mixer.
    Owqmix,
    /// QMIX with the joint softmax bootstrap.
    Res,
}

impl FromStr for Algorithm {
    type Err = MastError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmix" => Ok(Algorithm::Qmix),
            "owqmix" | "wqmix" => Ok(Algorithm::Owqmix),
            "res" => Ok(Algorithm::Res),
            _ => Err(MastError::Config(format!(
                "unknown algorithm {s:?} (expected qmix, owqmix or res)"
            ))),
        }
    }
}

/// How the sparse topology is treated during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseMode {
    /// All masks stay full regardless of `sparsity`.
    Dense,
    /// Random masks fixed at initialization.
    Static,
    /// Random masks evolved by magnitude drop and gradient grow.
    Mast,
}

impl FromStr for SparseMode {
    type Err = MastError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SparseMode::Dense),
            "static" => Ok(SparseMode::Static),
            "mast" | "rigl" => Ok(SparseMode::Mast),
            _ => Err(MastError::Config(format!(
                "unknown sparse mode {s:?} (expected dense, static or mast)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `climb`, `penalty`, `grid2`, `grid3` or `grid4`.
    pub env: String,
    pub algo: Algorithm,
    pub mode: SparseMode,
    /// Fraction of weights masked out, shared by agents and mixers.
    pub sparsity: f64,
    /// Mixer sparsity when it should differ from `sparsity`.
    pub mixer_sparsity: Option<f64>,
    pub grouping: Grouping,
    pub seed: u64,
    pub total_steps: u64,
    /// Environment steps collected before the first update.
    pub warmup_steps: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Defaults to 50k steps, 100k for owqmix.
    pub eps_anneal_steps: Option<u64>,
    /// Target network sync interval in episodes.
    pub target_interval: u64,
    /// Topology evolution interval in gradient updates.
    pub delta_m: u64,
    pub zeta0: f64,
    /// Evolution stops at this fraction of `total_steps`.
    pub evolution_end: f64,
    pub lr: f64,
    pub rms_smoothing: f64,
    pub rms_eps: f64,
    pub grad_clip: f64,
    pub gamma: f64,
    /// Defaults to 0.8, 0.6 for owqmix.
    pub lambda: Option<f64>,
    /// Burn-in step count; defaults to 3/8 of `total_steps`.
    pub t0: Option<u64>,
    pub operator: Operator,
    pub alpha: f64,
    pub omega: f64,
    pub double_q: bool,
    pub ow_alpha: f64,
    pub softmax_beta: f64,
    pub buffer_offline: usize,
    pub buffer_online: usize,
    pub sample_offline: usize,
    pub sample_online: usize,
    /// Named `offline:online` split such as `6:2`; overrides the sample sizes.
    pub buffer_preset: Option<String>,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub hyper_dim: usize,
    pub unrestricted_embed_dim: usize,
    pub shared_agents: bool,
    /// Greedy evaluation interval in environment steps.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub updates_per_episode: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TargetConfig::default();
        let b = BufferConfig::default();
        RunConfig {
            env: "grid2".into(),
            algo: Algorithm::Qmix,
            mode: SparseMode::Mast,
            sparsity: 0.9,
            mixer_sparsity: None,
            grouping: Grouping::Pooled,
            seed: 0,
            total_steps: 2_000_000,
            warmup_steps: 50_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_steps: None,
            target_interval: 200,
            delta_m: 200,
            zeta0: 0.5,
            evolution_end: 0.75,
            lr: 5e-4,
            rms_smoothing: 0.99,
            rms_eps: 1e-5,
            grad_clip: 10.0,
            gamma: t.gamma,
            lambda: None,
            t0: None,
            operator: t.operator,
            alpha: t.alpha,
            omega: t.omega,
            double_q: t.double_dqn,
            ow_alpha: t.ow_alpha,
            softmax_beta: t.softmax_beta,
            buffer_offline: b.capacity_offline,
            buffer_online: b.capacity_online,
            sample_offline: b.sample_offline,
            sample_online: b.sample_online,
            buffer_preset: None,
            hidden_dim: 64,
            embed_dim: 32,
            hyper_dim: 64,
            unrestricted_embed_dim: 256,
            shared_agents: false,
            eval_interval: 10_000,
            eval_episodes: 32,
            updates_per_episode: 1,
        }
    }
}

fn toml_err(path: Option<&Path>, e: impl std::fmt::Display) -> MastError {
    match path {
        Some(p) => MastError::Config(format!("{}: {e}", p.display())),
        None => MastError::Config(e.to_string()),
    }
}

impl RunConfig {
    /// Every accepted config key, in declaration order.
    pub const KEYS: &'static [&'static str] = &[
        "env", "algo", "mode", "sparsity", "mixer_sparsity", "grouping", "seed", "total_steps",
        "warmup_steps", "eps_start", "eps_end", "eps_anneal_steps", "target_interval", "delta_m",
        "zeta0", "evolution_end", "lr", "rms_smoothing", "rms_eps", "grad_clip", "gamma",
        "lambda", "t0", "operator", "alpha", "omega", "double_q", "ow_alpha", "softmax_beta",
        "buffer_offline", "buffer_online", "sample_offline", "sample_online", "buffer_preset",
        "hidden_dim", "embed_dim", "hyper_dim", "unrestricted_embed_dim", "shared_agents",
        "eval_interval", "eval_episodes", "updates_per_episode",
    ];

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_err(None, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MastError::io(path, e))?;
        toml::from_str(&text).map_err(|e| toml_err(Some(path), e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MastError::Serde(e.to_string()))
    }

    /// Sets one key from its TOML literal text (bare words are read as
    /// strings), going through the same validation as a config file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()?)
            .map_err(|e| MastError::Serde(e.to_string()))?;
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let text = toml::to_string(&table).map_err(|e| MastError::Serde(e.to_string()))?;
        *self = toml::from_str(&text)
            .map_err(|e| MastError::Config(format!("override {key}={value}: {e}")))?;
        Ok(())
    }

    /// Fills algorithm- and length-dependent defaults and validates.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let ow = c.algo == Algorithm::Owqmix;
        c.eps_anneal_steps.get_or_insert(if ow { 100_000 } else { 50_000 });
        c.lambda.get_or_insert(if ow { 0.6 } else { 0.8 });
        c.t0.get_or_insert(c.total_steps * 3 / 8);
        c.mixer_sparsity.get_or_insert(c.sparsity);
        if c.algo == Algorithm::Res {
            c.operator = Operator::Softmax;
        }
        if let Some(p) = &c.buffer_preset {
            let (a, b) = BufferConfig::preset(p)
                .ok_or_else(|| MastError::Config(format!("unknown buffer preset {p:?}")))?;
            c.sample_offline = a;
            c.sample_online = b;
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MastError::Config(m));
        EnvPreset::parse(&self.env)?;
        for (name, s) in [("sparsity", self.sparsity), ("mixer_sparsity", self.mixer_sparsity.unwrap_or(0.0))] {
            if !(0.0..1.0).contains(&s) {
                return bad(format!("{name} must lie in [0, 1), got {s}"));
            }
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            return bad("epsilon values must lie in [0, 1]".into());
        }
        if self.target_interval == 0 || self.delta_m == 0 || self.eval_episodes == 0 {
            return bad("target_interval, delta_m and eval_episodes must be positive".into());
        }
        if self.eval_interval == 0 || self.updates_per_episode == 0 {
            return bad("eval_interval and updates_per_episode must be positive".into());
        }
        if !(self.zeta0 > 0.0 && self.zeta0 <= 1.0) {
            return bad(format!("zeta0 must lie in (0, 1], got {}", self.zeta0));
        }
        if !(0.0..=1.0).contains(&self.evolution_end) {
            return bad("evolution_end must lie in [0, 1]".into());
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return bad("lr and grad_clip must be positive".into());
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.hyper_dim == 0 {
            return bad("network widths must be positive".into());
        }
        self.target_config().validate()?;
        crate::replay::DualBuffer::new(self.buffer_config())?;
        Ok(())
    }

    pub fn target_config(&self) -> TargetConfig {
        TargetConfig {
            operator: self.operator,
            alpha: self.alpha,
            omega: self.omega,
            lambda: self.lambda.unwrap_or(0.8),
            t0: self.t0.unwrap_or(self.total_steps * 3 / 8),
            gamma: self.gamma,
            double_dqn: self.double_q,
            ow_alpha: self.ow_alpha,
            softmax_beta: self.softmax_beta,
        }
    }

    pub fn buffer_config(&self) -> BufferConfig {
        BufferConfig {
            capacity_offline: self.buffer_offline,
            capacity_online: self.buffer_online,
            sample_offline: self.sample_offline,
            sample_online: self.sample_online,
        }
    }

    /// Masked fraction actually applied: zero in dense mode.
    pub fn effective_sparsity(&self) -> (f64, f64) {
        match self.mode {
            SparseMode::Dense => (0.0, 0.0),
            _ => (self.sparsity, self.mixer_sparsity.unwrap_or(self.sparsity)),
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> Result<String> {
        let c = self.resolved()?;
        let json = serde_json::to_string(&c).map_err(|e| MastError::Serde(e.to_string()))?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
