use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode};

use anyhow::{anyhow, Context};
use log::info;
use mast_core::config::RunConfig;
use mast_core::envs::EnvPreset;
use mast_core::networks::Checkpoint;
use mast_core::sparse_topology::{mask_stats, stats_to_csv, MaskStats};
use mast_core::trainer::{self, rollout_episode, Learner};
use mast_core::MastError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{usage, ConfigArgs, EvalArgs, Failure, FlopsArgs, MaskstatsArgs, SpecDumpArgs, TrainArgs, OUTPUT_ROOT_VAR};

type CmdResult = Result<ExitCode, Failure>;

/// Config errors and unreadable inputs are usage errors; anything raised
/// while running is a runtime error.
fn classify(e: MastError) -> Failure {
    match e {
        MastError::Config(_) | MastError::Io { .. } | MastError::Checkpoint(_) => usage(e),
        other => Failure::Runtime(other.into()),
    }
}

pub fn build_config(a: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).map_err(classify)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(classify);
    if let Some(v) = a.seed {
        set("seed", v.to_string())?;
    }
    if let Some(v) = a.sparsity {
        set("sparsity", v.to_string())?;
    }
    if let Some(v) = &a.algo {
        set("algo", format!("{v:?}"))?;
    }
    if let Some(v) = &a.operator {
        set("operator", format!("{v:?}"))?;
    }
    if let Some(v) = a.lambda {
        set("lambda", v.to_string())?;
    }
    if let Some(v) = a.t0 {
        set("t0", v.to_string())?;
    }
    if let Some(v) = &a.preset {
        set("env", format!("{v:?}"))?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("override {kv:?} is not key=value")))?;
        set(k.trim(), v.trim().to_string())?;
    }
    cfg.resolved().map_err(classify)
}

fn output_root(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates a fresh timestamped directory under `root`.
fn create_run_dir(root: &Path, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f");
    let base = format!(
        "{stamp}-{}-{:?}-{:?}-seed{}",
        cfg.env, cfg.algo, cfg.mode, cfg.seed
    )
    .to_lowercase();
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn parse_seed_range(s: &str) -> Result<std::ops::Range<u64>, Failure> {
    let bad = || usage(anyhow!("--seeds expects a..b with a < b, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

/// Re-invokes this binary once per seed and waits for all children.
fn fan_out(seeds: std::ops::Range<u64>) -> CmdResult {
    let exe = std::env::current_exe().context("locating the running executable")?;
    let mut args: Vec<String> = Vec::new();
    let mut it = std::env::args().skip(1);
    while let Some(a) = it.next() {
        if a == "--seeds" {
            it.next();
        } else if !a.starts_with("--seeds=") {
            args.push(a);
        }
    }
    let mut children = Vec::new();
    for seed in seeds {
        let child = Process::new(&exe)
            .args(&args)
            .args(["--seed", &seed.to_string()])
            .spawn()
            .with_context(|| format!("starting the run for seed {seed}"))?;
        children.push((seed, child));
    }
    let mut failed = Vec::new();
    for (seed, mut child) in children {
        let status = child.wait().with_context(|| format!("waiting for seed {seed}"))?;
        if !status.success() {
            failed.push(seed);
        }
    }
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Failure::Runtime(anyhow!("runs failed for seeds {failed:?}")))
    }
}

pub fn train(a: TrainArgs) -> CmdResult {
    if let Some(s) = &a.seeds {
        let range = parse_seed_range(s)?;
        build_config(&a.cfg)?;
        return fan_out(range);
    }
    let cfg = build_config(&a.cfg)?;
    let dir = create_run_dir(&output_root(&a.out), &cfg)?;
    info!("run directory {}", dir.display());
    let out = trainer::run(&cfg).map_err(classify)?;
    out.write_to(&dir).map_err(classify)?;
    info!("\n{}", out.flops.to_table());
    let s = &out.summary;
    println!(
        "steps {} episodes {} updates {} final_return {:.6} final_solve_rate {:.4}",
        s.steps, s.episodes, s.updates, s.final_return, s.final_solve_rate
    );
    println!("run directory: {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn load_checkpoint_config(checkpoint: &Path, config: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    let path = match config {
        Some(p) => p.clone(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("config.toml"),
    };
    RunConfig::load(&path).and_then(|c| c.resolved()).map_err(classify)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    if a.episodes == 0 {
        return Err(usage(anyhow!("--episodes must be at least 1")));
    }
    let ck = Checkpoint::load(&a.checkpoint).map_err(classify)?;
    let cfg = load_checkpoint_config(&a.checkpoint, &a.config)?;
    let mut env = EnvPreset::parse(&cfg.env).map_err(classify)?.build();
    let arch = ck.restricted.agents.arch;
    if arch.n_agents != env.n_agents() || arch.obs_dim != env.obs_dim() || arch.n_actions != env.n_actions()
    {
        return Err(usage(anyhow!(
            "checkpoint networks ({} agents, obs {}, {} actions) do not fit environment {} ({} agents, obs {}, {} actions)",
            arch.n_agents,
            arch.obs_dim,
            arch.n_actions,
            cfg.env,
            env.n_agents(),
            env.obs_dim(),
            env.n_actions()
        )));
    }
    if ck.restricted.mixer.arch.state_dim != env.state_dim() {
        return Err(usage(anyhow!("checkpoint mixer state size does not fit {}", cfg.env)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut returns = Vec::with_capacity(a.episodes);
    let mut solved = 0usize;
    for _ in 0..a.episodes {
        let seed = rng.gen();
        let (ep, ok) = rollout_episode(
            env.as_mut(),
            &ck.restricted.agents,
            &ck.restricted.store,
            0.0,
            seed,
            &mut rng,
        )
        .map_err(classify)?;
        returns.push(ep.total_reward());
        solved += usize::from(ok);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if returns.len() > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let half = 1.96 * (var / n).sqrt();
    let rate = solved as f64 / n;
    let rate_half = 1.96 * (rate * (1.0 - rate) / n).sqrt();
    println!("episodes {}", returns.len());
    println!("mean_return {mean:.6} ci95 [{:.6}, {:.6}]", mean - half, mean + half);
    println!(
        "solve_rate {rate:.4} ci95 [{:.4}, {:.4}]",
        (rate - rate_half).max(0.0),
        (rate + rate_half).min(1.0)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn flops(a: FlopsArgs) -> CmdResult {
    let cfg = build_config(&a.cfg)?;
    let env = EnvPreset::parse(&cfg.env).map_err(classify)?.build();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let learner = Learner::new(
        &cfg,
        env.n_agents(),
        env.n_actions(),
        env.obs_dim(),
        env.state_dim(),
        &mut rng,
    )
    .map_err(classify)?;
    let report = learner.flops_report().map_err(classify)?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_table());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn maskstats(a: MaskstatsArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint).map_err(classify)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut stats: Vec<MaskStats> = Vec::new();
    let mut bitmaps = String::new();
    let stores = std::iter::once(&ck.restricted.store).chain(ck.unrestricted.as_ref().map(|u| &u.store));
    for store in stores {
        for slot in store.slots() {
            stats.push(mask_stats(slot, ck.step));
            let (r, c) = slot.mask.shape();
            bitmaps.push_str(&format!("# {} {} {}x{}\n", slot.slot_id.0, slot.name, r, c));
            bitmaps.push_str(&slot.mask.to_bitmap());
            if !bitmaps.ends_with('\n') {
                bitmaps.push('\n');
            }
        }
    }
    let csv = a.out.join("maskstats.csv");
    std::fs::write(&csv, stats_to_csv(&stats)).with_context(|| format!("writing {}", csv.display()))?;
    let masks = a.out.join("masks.txt");
    std::fs::write(&masks, bitmaps).with_context(|| format!("writing {}", masks.display()))?;
    let mut names = String::from("slot_id,name,rows,cols,ones\n");
    for s in &stats {
        names.push_str(&format!(
            "{},{},{},{},{}\n",
            s.slot_id,
            s.slot_name,
            s.output_counts.len(),
            s.input_counts.len(),
            s.total()
        ));
    }
    let slots = a.out.join("slots.csv");
    std::fs::write(&slots, names).with_context(|| format!("writing {}", slots.display()))?;
    let total: usize = stats.iter().map(MaskStats::total).sum();
    println!("slots {} mask_ones {}", stats.len(), total);
    Ok(ExitCode::SUCCESS)
}

pub fn spec_dump(a: SpecDumpArgs) -> CmdResult {
    let env = EnvPreset::parse(&a.preset).map_err(classify)?.build();
    let Some(model) = env.tabular() else {
        return Err(usage(anyhow!("preset {} is too large to enumerate", a.preset)));
    };
    let text = serde_json::to_string(&model).context("serializing the model")?;
    match &a.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
