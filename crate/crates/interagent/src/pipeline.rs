//! The collect → train → rollout → react → eval pipeline.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use interagent_core::dataset::{fit_stats, WindowDataset};
use interagent_core::diffusion::{self, make_schedule, ModelDenoiser, RolloutReport};
use interagent_core::evalphys::{combine, evaluate, TrajMetrics};
use interagent_core::interdit::InterDit;
use interagent_core::representation::NormStats;
use interagent_core::simworld::{AgentState, SimState, SimWorld};
use interagent_core::tracking::{collect_motion, gen_reference, motion_rng, MotionCollection, ReferenceMotion, Scenario};
use interagent_core::training::{StepReport, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::formats::{read_optimizer, state_path, write_atomic, write_optimizer, Checkpoint, TrajectoryFile};

fn core_err(e: interagent_core::Error) -> anyhow::Error {
    anyhow::anyhow!("{e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSummary {
    pub episodes: usize,
    pub frames: usize,
    pub mean_reward: f64,
    pub per_scenario: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for CollectSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        for (s, n) in &self.per_scenario {
            writeln!(f, "scenario {s}: {n} episodes")?;
        }
        write!(
            f,
            "episodes = {}\nframes = {}\nmean_ig_reward = {:.6}",
            self.episodes, self.frames, self.mean_reward
        )
    }
}

/// Reference motions for every scenario, `motions_per_scenario` each.
pub fn references(cfg: &Config) -> Result<Vec<ReferenceMotion>> {
    let body = cfg.body_spec();
    let mut out = Vec::new();
    for s in Scenario::ALL {
        for k in 0..cfg.motions_per_scenario {
            let seed = cfg.seed.wrapping_mul(1000).wrapping_add(k as u64);
            out.push(gen_reference(&body, s, cfg.reference_frames, seed).map_err(core_err)?);
        }
    }
    Ok(out)
}

/// Tracks every reference with the scripted expert. Motions run on
/// separate threads unless `deterministic`; results are identical either way.
pub fn collect(cfg: &Config, deterministic: bool) -> Result<(TrajectoryFile, CollectSummary)> {
    let body = cfg.body_spec();
    let motions = references(cfg)?;
    let ccfg = cfg.collect();
    let run = |i: usize, m: &ReferenceMotion| collect_motion(&body, m, &ccfg, &mut motion_rng(cfg.seed, i)).map_err(core_err);
    let results: Vec<MotionCollection> = if deterministic {
        motions.iter().enumerate().map(|(i, m)| run(i, m)).collect::<Result<_>>()?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = motions.iter().enumerate().map(|(i, m)| s.spawn(move || run(i, m))).collect();
            handles.into_iter().map(|h| h.join().expect("collection thread panicked")).collect::<Result<Vec<_>>>()
        })?
    };

    let mut file = TrajectoryFile::new(&body, cfg.extero);
    file.meta = vec![
        ("kind".into(), "dataset".into()),
        ("digest".into(), cfg.digest()),
        ("seed".into(), cfg.seed.to_string()),
        ("sigma".into(), cfg.sigma.to_string()),
    ];
    let mut rewards = Vec::new();
    let mut per_scenario: Vec<(String, usize)> = Scenario::ALL.iter().map(|s| (s.name().to_string(), 0)).collect();
    let mut warnings = Vec::new();
    for (m, r) in motions.iter().zip(results) {
        if let Some(w) = r.warning {
            warnings.push(w);
        }
        let slot = per_scenario.iter_mut().find(|(n, _)| n == m.scenario.name()).expect("known scenario");
        slot.1 += r.kept.len();
        for ep in r.kept {
            rewards.push(ep.mean_reward);
            file.episodes.push(ep.trajectory);
        }
    }
    let summary = CollectSummary {
        episodes: file.episodes.len(),
        frames: file.frames(),
        mean_reward: if rewards.is_empty() { 0.0 } else { rewards.iter().sum::<f64>() / rewards.len() as f64 },
        per_scenario,
        warnings,
    };
    if file.episodes.is_empty() {
        bail!("collection produced no successful episodes ({} warnings)", summary.warnings.len());
    }
    Ok((file, summary))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub losses: Vec<StepReport>,
    pub resumed_from: u64,
}

impl TrainSummary {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().map(|r| r.loss)
    }

    /// Mean of the last `n` logged losses.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let k = n.min(self.losses.len());
        (k > 0).then(|| self.losses[self.losses.len() - k..].iter().map(|r| r.loss).sum::<f64>() / k as f64)
    }
}

fn save_checkpoint(cfg: &Config, model: &InterDit, trainer: &Trainer, stats: &NormStats, path: &Path) -> Result<()> {
    let digest = cfg.digest();
    Checkpoint::from_store(digest.clone(), cfg.to_text(), trainer.step(), stats.clone(), &model.params).save(path)?;
    let mut buf = Vec::new();
    write_optimizer(&mut buf, &digest, &trainer.opt)?;
    write_atomic(&state_path(path), &buf)
}

/// Trains on `data`, writing `(step, loss, lr)` rows to `log` and a
/// checkpoint every `checkpoint_every` steps and at the end. With `resume`,
/// parameters and optimizer moments are restored from `checkpoint`.
/// `stop_after` ends the run early after that many steps (for testing
/// resumption).
pub fn train(
    cfg: &Config,
    data: &TrajectoryFile,
    checkpoint: &Path,
    resume: bool,
    stop_after: Option<u64>,
    log: &mut dyn Write,
) -> Result<TrainSummary> {
    let mcfg = cfg.model()?;
    ensure!(
        data.layout() == mcfg.layout(),
        "dataset frame layout {:?} does not match the model {:?}",
        data.layout(),
        mcfg.layout()
    );
    let stats = fit_stats(&data.episodes).map_err(core_err)?;
    let windows = WindowDataset::new(&data.episodes, &stats, mcfg.layout(), mcfg.horizon, mcfg.history_len, mcfg.text_buckets)
        .map_err(core_err)?;
    let sched = make_schedule(mcfg.diffusion_steps, cfg.schedule).map_err(core_err)?;
    let mut model = InterDit::new(mcfg, cfg.seed).map_err(core_err)?;
    let mut trainer = Trainer::new(cfg.train(), &model.params);
    let digest = cfg.digest();
    if resume {
        let ck = Checkpoint::load(checkpoint)?;
        ensure!(ck.digest == digest, "checkpoint config digest {} does not match runtime {}", ck.digest, digest);
        ck.restore(&mut model.params)?;
        let bytes = std::fs::read(state_path(checkpoint)).context("reading optimizer state")?;
        read_optimizer(bytes.as_slice(), &digest, &mut trainer.opt)?;
        ensure!(trainer.step() == ck.step, "optimizer state is at step {}, checkpoint at {}", trainer.step(), ck.step);
    }
    let resumed_from = trainer.step();
    writeln!(
        log,
        "# adamw {} lr_peak={} lr_floor={} warmup={} steps={} batch={} windows={}",
        trainer.config.adamw,
        trainer.config.lr.peak,
        trainer.config.lr.floor,
        trainer.config.lr.warmup,
        trainer.config.steps,
        trainer.config.batch,
        windows.len()
    )?;
    writeln!(log, "step\tloss\tlr")?;
    let mut losses = Vec::new();
    let mut ran = 0;
    while !trainer.done() && stop_after.is_none_or(|s| ran < s) {
        let r = trainer
            .train_step(&mut model, &windows, &sched)
            .map_err(|e| anyhow::anyhow!("training aborted, last checkpoint kept: {e}"))?;
        writeln!(log, "{}\t{}\t{}", r.step, r.loss, r.lr)?;
        losses.push(r);
        ran += 1;
        if cfg.checkpoint_every > 0 && trainer.step().is_multiple_of(cfg.checkpoint_every) {
            save_checkpoint(cfg, &model, &trainer, &stats, checkpoint)?;
        }
    }
    save_checkpoint(cfg, &model, &trainer, &stats, checkpoint)?;
    Ok(TrainSummary { losses, resumed_from })
}

/// Loads a checkpoint after checking it was produced by a compatible config.
pub fn load_model(cfg: &Config, checkpoint: &Path) -> Result<(InterDit, NormStats)> {
    let ck = Checkpoint::load(checkpoint)?;
    let digest = cfg.digest();
    if ck.digest != digest {
        bail!(
            "checkpoint {} was trained with config digest {}, runtime config digest is {}; \
             model-defining keys (widths, depths, horizon, history, diffusion steps, exteroception, sparsity) must match",
            checkpoint.display(),
            ck.digest,
            digest
        );
    }
    let mut model = InterDit::new(cfg.model()?, cfg.seed).map_err(core_err)?;
    ck.restore(&mut model.params)?;
    Ok((model, ck.stats))
}

fn dump(cfg: &Config, kind: &str, command: &str, report: RolloutReport) -> TrajectoryFile {
    let mut file = TrajectoryFile::new(&cfg.body_spec(), cfg.extero);
    file.meta = vec![
        ("kind".into(), kind.into()),
        ("digest".into(), cfg.digest()),
        ("seed".into(), cfg.seed.to_string()),
        ("command".into(), command.into()),
        ("guidance".into(), cfg.guidance.to_string()),
        ("sampler_calls".into(), report.sampler_calls.to_string()),
    ];
    file.episodes.push(report.trajectory);
    file
}

/// Both agents standing `start_separation` apart, facing each other.
pub fn initial_state(cfg: &Config) -> SimState {
    let body = cfg.body_spec();
    let d = cfg.start_separation / 2.0;
    SimState {
        agents: [
            AgentState::standing(&body, -d, 0.0, 0.0),
            AgentState::standing(&body, d, 0.0, std::f64::consts::PI),
        ],
        time: 0.0,
    }
}

pub fn rollout(cfg: &Config, checkpoint: &Path, command: &str, steps: usize) -> Result<TrajectoryFile> {
    let (model, stats) = load_model(cfg, checkpoint)?;
    let sched = make_schedule(cfg.diffusion_steps, cfg.schedule).map_err(core_err)?;
    let mut den = ModelDenoiser::new(&model);
    let mut world = SimWorld::new(cfg.body_spec(), initial_state(cfg));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = diffusion::rollout(&mut den, &mut world, &stats, &sched, &cfg.control(), command, steps, &mut rng)
        .map_err(core_err)?;
    Ok(dump(cfg, "rollout", command, report))
}

/// Agent 1 replays episode 0 of `fixed`; agent 2 is controlled.
pub fn react(cfg: &Config, checkpoint: &Path, fixed: &TrajectoryFile, command: &str, steps: usize) -> Result<TrajectoryFile> {
    let (model, stats) = load_model(cfg, checkpoint)?;
    let body = cfg.body_spec();
    let ep = fixed.episodes.first().context("fixed trajectory file has no episodes")?;
    ensure!(
        ep.len() >= cfg.horizon,
        "fixed trajectory has {} frames, fewer than the horizon {}",
        ep.len(),
        cfg.horizon
    );
    let axes = body.axis_count();
    let start = |a: usize| -> Result<AgentState> {
        match ep.agents[a].world.first() {
            Some(w) => AgentState::from_flat(&w.raw, axes).map_err(core_err),
            None => bail!("fixed trajectory has no world states"),
        }
    };
    let state = SimState { agents: [start(0)?, start(1)?], time: 0.0 };
    let sched = make_schedule(cfg.diffusion_steps, cfg.schedule).map_err(core_err)?;
    let mut den = ModelDenoiser::new(&model);
    let mut world = SimWorld::new(body, state);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = diffusion::react(&mut den, &mut world, &stats, &sched, &cfg.control(), ep, command, steps, &mut rng)
        .map_err(core_err)?;
    Ok(dump(cfg, "react", command, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub agents: Vec<TrajMetrics>,
    pub combined: TrajMetrics,
}

impl EvalReport {
    /// `key = value` lines followed by tab-separated rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |name: &str, m: &TrajMetrics| {
            let _ = writeln!(s, "{name}.floating_mm = {}", m.floating);
            let _ = writeln!(s, "{name}.skating_mm_per_frame = {}", m.skating);
            let _ = writeln!(s, "{name}.jerk_mm_per_frame3 = {}", m.jerk);
        };
        for (i, m) in self.agents.iter().enumerate() {
            kv(&format!("agent{i}"), m);
        }
        kv("combined", &self.combined);
        s.push_str("agent\tfloating\tskating\tjerk\n");
        for (i, m) in self.agents.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{}\t{}\t{}", m.floating, m.skating, m.jerk);
        }
        let c = &self.combined;
        let _ = writeln!(s, "all\t{}\t{}\t{}", c.floating, c.skating, c.jerk);
        s
    }
}

/// Metrics of each agent over all episodes, concatenated per agent episode.
pub fn eval(file: &TrajectoryFile) -> Result<EvalReport> {
    ensure!(!file.episodes.is_empty(), "trajectory file has no episodes");
    let mut agents = Vec::new();
    for ep in &file.episodes {
        for track in &ep.agents {
            ensure!(track.world.len() == track.len(), "trajectory file carries no world states");
            agents.push(evaluate(track).map_err(core_err)?);
        }
    }
    let combined = combine(&agents);
    Ok(EvalReport { agents, combined })
}
