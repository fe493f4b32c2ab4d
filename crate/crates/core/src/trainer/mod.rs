//! Episode collection, the training loop and run outputs.

mod learner;

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use learner::{BatchTensors, Learner, UnrestrictedPart, UpdateStats, UNRESTRICTED_BASE};

use crate::accounting::{report, CostModel, FlopsReport};
use crate::config::{RunConfig, SparseMode};
use crate::envs::{EnvPreset, MultiAgentEnv};
use crate::error::{MastError, Result};
use crate::networks::{argmax_available, ActingState, AgentNets, Checkpoint, MixerNet};
use crate::replay::{DualBuffer, Episode};
use crate::sparse_topology::ParamStore;

/// Offset mixed into the run seed for the evaluation episode stream.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

pub const METRICS_HEADER: &str =
    "step,episodes,updates,eval_return,solve_rate,loss,mean_q_tot,mean_target,epsilon,mask_ones";
pub const EVOLUTION_HEADER: &str =
    "update,step,interval_steps,group,zeta,k,dropped,grown,mask_ones,active_target";

/// Linearly annealed exploration rate at global step `step`.
pub fn epsilon_at(cfg: &RunConfig, step: u64) -> f64 {
    let span = cfg.eps_anneal_steps.unwrap_or(50_000);
    if span == 0 || step >= span {
        return cfg.eps_end;
    }
    let frac = step as f64 / span as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Plays one episode with ε-greedy decentralized actions: with probability
/// `epsilon` an agent picks uniformly among its available actions.
/// Returns the episode and whether it ended in success.
pub fn rollout_episode<R: Rng + ?Sized>(
    env: &mut dyn MultiAgentEnv,
    agents: &AgentNets,
    store: &ParamStore,
    epsilon: f64,
    env_seed: u64,
    rng: &mut R,
) -> Result<(Episode, bool)> {
    env.reset(env_seed);
    let mut acting = ActingState::new(&agents.arch);
    let mut ep = Episode {
        seq: 0,
        states: Vec::new(),
        obs: Vec::new(),
        avail: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: false,
    };
    let mut success = false;
    for _ in 0..env.episode_limit() {
        let obs = env.observations();
        let avail = env.avail_actions();
        // Fully random steps skip the forward pass; the recurrent state
        // only matters for greedy choices.
        let q = if epsilon < 1.0 {
            Some(agents.act_q(store, &obs, &mut acting)?)
        } else {
            None
        };
        let mut actions = Vec::with_capacity(avail.len());
        for (i, av) in avail.iter().enumerate() {
            let explore = rng.gen::<f64>() < epsilon;
            let a = match (&q, explore) {
                (Some(q), false) => argmax_available(&q[i], av),
                _ => {
                    let choices: Vec<usize> = (0..av.len()).filter(|&a| av[a]).collect();
                    (!choices.is_empty()).then(|| choices[rng.gen_range(0..choices.len())])
                }
            }
            .ok_or_else(|| MastError::Env(format!("agent {i} has no available action")))?;
            actions.push(a);
        }
        acting.last_actions = actions.iter().map(|&a| Some(a)).collect();
        ep.states.push(env.state());
        let out = env.step(&actions)?;
        ep.obs.push(obs);
        ep.avail.push(avail);
        ep.actions.push(actions);
        ep.rewards.push(out.reward);
        success |= out.success;
        if out.terminated {
            ep.terminated = true;
            break;
        }
    }
    ep.states.push(env.state());
    ep.obs.push(env.observations());
    ep.avail.push(env.avail_actions());
    Ok((ep, success))
}

/// Greedy evaluation over `episodes` episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub solve_rate: f64,
    pub mean_length: f64,
}

pub fn evaluate<R: Rng + ?Sized>(
    env: &mut dyn MultiAgentEnv,
    agents: &AgentNets,
    store: &ParamStore,
    episodes: usize,
    rng: &mut R,
) -> Result<EvalResult> {
    let mut r = EvalResult::default();
    for _ in 0..episodes {
        let (ep, ok) = rollout_episode(env, agents, store, 0.0, rng.gen(), rng)?;
        r.mean_return += ep.total_reward();
        r.solve_rate += f64::from(u8::from(ok));
        r.mean_length += ep.len() as f64;
    }
    let n = episodes.max(1) as f64;
    r.mean_return /= n;
    r.solve_rate /= n;
    r.mean_length /= n;
    Ok(r)
}

/// One evaluation row of the metrics log. Training statistics are means
/// over the updates since the previous row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    pub updates: u64,
    pub eval_return: f64,
    pub solve_rate: f64,
    pub loss: Option<f64>,
    pub mean_q_tot: Option<f64>,
    pub mean_target: Option<f64>,
    pub epsilon: f64,
    /// Mask ones per evolution group, in group order.
    pub mask_ones: Vec<usize>,
}

impl MetricsRow {
    fn csv_line(&self, out: &mut String) {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let ones: Vec<String> = self.mask_ones.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episodes,
            self.updates,
            self.eval_return,
            self.solve_rate,
            opt(self.loss),
            opt(self.mean_q_tot),
            opt(self.mean_target),
            self.epsilon,
            ones.join(";")
        );
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    rows.iter().for_each(|r| r.csv_line(&mut out));
    out
}

/// Audit record of one group's drop-and-grow round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionEvent {
    pub update: u64,
    pub step: u64,
    /// Environment steps since the previous evolution (or since training began).
    pub interval_steps: u64,
    pub group: String,
    pub zeta: f64,
    pub k: usize,
    pub dropped: usize,
    pub grown: usize,
    pub mask_ones: usize,
    pub active_target: usize,
}

pub fn evolution_csv(events: &[EvolutionEvent]) -> String {
    let mut out = format!("{EVOLUTION_HEADER}\n");
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.update,
            e.step,
            e.interval_steps,
            e.group,
            e.zeta,
            e.k,
            e.dropped,
            e.grown,
            e.mask_ones,
            e.active_target
        );
    }
    out
}

/// Mean of the last `n` evaluation returns and solve rates.
pub fn final_score(rows: &[MetricsRow], n: usize) -> (f64, f64) {
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return (0.0, 0.0);
    }
    let k = tail.len() as f64;
    (
        tail.iter().map(|r| r.eval_return).sum::<f64>() / k,
        tail.iter().map(|r| r.solve_rate).sum::<f64>() / k,
    )
}

/// Evaluation rows averaged for the final score.
pub const FINAL_SCORE_EVALS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub skipped_updates: u64,
    pub evolutions: u64,
    pub final_return: f64,
    pub final_solve_rate: f64,
    pub last_eval_return: f64,
    pub last_solve_rate: f64,
}

/// Everything a finished run produced.
pub struct RunOutcome {
    pub config: RunConfig,
    pub config_hash: String,
    pub metrics: Vec<MetricsRow>,
    pub evolution: Vec<EvolutionEvent>,
    pub summary: RunSummary,
    pub learner: Learner,
    pub flops: FlopsReport,
}

impl RunOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.config_hash.clone(),
            self.summary.steps,
            self.learner.nets.clone(),
            self.learner.unrestricted.as_ref().map(|u| u.nets.clone()),
        )
    }

    /// Writes the metrics, evolution log, resolved config, FLOPs report,
    /// checkpoint and manifest into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| MastError::io(dir, e))?;
        let put = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| MastError::io(&p, e))
        };
        put("metrics.csv", metrics_csv(&self.metrics))?;
        put("evolution.csv", evolution_csv(&self.evolution))?;
        put("config.toml", self.config.to_toml()?)?;
        put("flops.csv", self.flops.to_csv())?;
        self.checkpoint().save(&dir.join("checkpoint.json"))?;
        let manifest = serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "env": self.config.env,
            "algo": self.config.algo,
            "mode": self.config.mode,
            "sparsity": self.config.sparsity,
            "version": env!("CARGO_PKG_VERSION"),
            "summary": self.summary,
        });
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| MastError::Serde(e.to_string()))?;
        put("manifest.json", text)
    }
}

impl Learner {
    /// Cost model of this learner's networks at its configured sparsity.
    pub fn cost_model(&self) -> CostModel {
        let (sa, sm) = self.cfg.effective_sparsity();
        CostModel {
            agent: self.nets.agents.arch,
            mixer: self.nets.mixer.arch,
            unrestricted_mixer: self.unrestricted.as_ref().map(|u| u.nets.mixer.arch),
            agent_sparsity: sa,
            mixer_sparsity: sm,
            batch: self.cfg.buffer_config().batch_size(),
        }
    }

    pub fn flops_report(&self) -> Result<FlopsReport> {
        report::<MixerNet, _>(
            &self.cost_model(),
            Some(&self.nets),
            self.unrestricted.as_ref().map(|u| &u.nets),
        )
    }
}

#[derive(Default)]
struct Running {
    n: u64,
    loss: f64,
    q: f64,
    y: f64,
}

impl Running {
    fn add(&mut self, s: &UpdateStats) {
        self.n += 1;
        self.loss += s.loss;
        self.q += s.mean_q_tot;
        self.y += s.mean_target;
    }

    fn mean(&self, v: f64) -> Option<f64> {
        (self.n > 0).then(|| v / self.n as f64)
    }
}

/// Trains according to `cfg` and returns the logs and final networks.
///
/// One gradient update follows every collected episode once `warmup_steps`
/// environment steps have been taken; target networks are synced every
/// `target_interval` episodes and, in `mast` mode, masks evolve every
/// `delta_m` updates. Identical configs give identical logs.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let cfg = cfg.resolved()?;
    let config_hash = cfg.hash()?;
    let mut env = EnvPreset::parse(&cfg.env)?.build();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED_OFFSET);
    let mut learner = Learner::new(
        &cfg,
        env.n_agents(),
        env.n_actions(),
        env.obs_dim(),
        env.state_dim(),
        &mut rng,
    )?;
    let mut buffer = DualBuffer::new(cfg.buffer_config())?;
    let (mut step, mut episodes, mut updates, mut skipped) = (0u64, 0u64, 0u64, 0u64);
    let mut evolutions = 0u64;
    let mut last_evolution_step: Option<u64> = None;
    let mut next_eval = 0u64;
    let mut running = Running::default();
    let mut metrics = Vec::new();
    let mut events = Vec::new();

    let mut eval_row = |learner: &Learner,
                        env: &mut dyn MultiAgentEnv,
                        running: &mut Running,
                        step: u64,
                        episodes: u64,
                        updates: u64|
     -> Result<MetricsRow> {
        let r = evaluate(
            env,
            &learner.nets.agents,
            &learner.nets.store,
            cfg.eval_episodes,
            &mut eval_rng,
        )?;
        let row = MetricsRow {
            step,
            episodes,
            updates,
            eval_return: r.mean_return,
            solve_rate: r.solve_rate,
            loss: running.mean(running.loss),
            mean_q_tot: running.mean(running.q),
            mean_target: running.mean(running.y),
            epsilon: epsilon_at(&cfg, step),
            mask_ones: learner.mask_ones().into_iter().map(|(_, m, _)| m).collect(),
        };
        *running = Running::default();
        info!(
            "step {step} episodes {episodes} return {:.4} solved {:.3}",
            row.eval_return, row.solve_rate
        );
        Ok(row)
    };

    while step < cfg.total_steps {
        if step >= next_eval {
            metrics.push(eval_row(&learner, env.as_mut(), &mut running, step, episodes, updates)?);
            next_eval += cfg.eval_interval;
        }
        let eps = epsilon_at(&cfg, step);
        let env_seed = rng.gen();
        let (ep, _) = rollout_episode(
            env.as_mut(),
            &learner.nets.agents,
            &learner.nets.store,
            eps,
            env_seed,
            &mut rng,
        )?;
        step += ep.len() as u64;
        episodes += 1;
        buffer.push(ep);
        if episodes % cfg.target_interval == 0 {
            learner.sync_targets()?;
        }
        if step < cfg.warmup_steps || !buffer.can_sample() {
            continue;
        }
        for _ in 0..cfg.updates_per_episode {
            let batch = buffer.sample(&mut rng)?;
            let stats = learner.train_step(&batch, step)?;
            updates += 1;
            if stats.skipped {
                skipped += 1;
            } else {
                running.add(&stats);
            }
            if cfg.mode == SparseMode::Mast && updates % cfg.delta_m == 0 {
                let interval = step - last_evolution_step.unwrap_or(cfg.warmup_steps.min(step));
                last_evolution_step = Some(step);
                evolutions += 1;
                for rep in learner.evolve(step)? {
                    let target = learner
                        .mask_ones()
                        .into_iter()
                        .find(|(name, _, _)| *name == rep.group)
                        .map(|(_, _, t)| t)
                        .unwrap_or(0);
                    if rep.mask_ones != target {
                        return Err(MastError::InvalidArgument(format!(
                            "group {} holds {} connections after evolution, budget is {target}",
                            rep.group, rep.mask_ones
                        )));
                    }
                    events.push(EvolutionEvent {
                        update: updates,
                        step,
                        interval_steps: interval,
                        group: rep.group,
                        zeta: rep.zeta,
                        k: rep.k,
                        dropped: rep.dropped.len(),
                        grown: rep.grown.len(),
                        mask_ones: rep.mask_ones,
                        active_target: target,
                    });
                }
            }
        }
    }
    if metrics.last().is_none_or(|r| r.step != step) {
        metrics.push(eval_row(&learner, env.as_mut(), &mut running, step, episodes, updates)?);
    }
    let (final_return, final_solve_rate) = final_score(&metrics, FINAL_SCORE_EVALS);
    let last = metrics.last().cloned().expect("at least one evaluation row");
    let summary = RunSummary {
        steps: step,
        episodes,
        updates,
        skipped_updates: skipped,
        evolutions,
        final_return,
        final_solve_rate,
        last_eval_return: last.eval_return,
        last_solve_rate: last.solve_rate,
    };
    let flops = learner.flops_report()?;
    Ok(RunOutcome {
        config: cfg,
        config_hash,
        metrics,
        evolution: events,
        summary,
        learner,
        flops,
    })
}
