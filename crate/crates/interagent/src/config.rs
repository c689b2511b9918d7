//! Flat `key = value` configuration with two built-in profiles.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use interagent_core::attention::{JointGrouping, SparseConfig, SparseMode};
use interagent_core::diffusion::{ControlConfig, RolloutMode, SamplerKind, ScheduleKind};
use interagent_core::interdit::InterDitConfig;
use interagent_core::optim::{AdamWConfig, CosineSchedule};
use interagent_core::representation::ExteroKind;
use interagent_core::simworld::BodySpec;
use interagent_core::tracking::{CollectConfig, RewardWeights, TrackingGains};
use interagent_core::training::TrainConfig;
use interagent_core::diffusion::LossOptions;
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BodyKind {
    Desk,
    Full,
}

impl BodyKind {
    pub fn spec(self) -> BodySpec {
        match self {
            BodyKind::Desk => BodySpec::desk(),
            BodyKind::Full => BodySpec::full_scale(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub body: BodyKind,
    pub extero: ExteroKind,
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ig_heads: usize,
    pub cond_layers: usize,
    pub ffn_mult: usize,
    pub horizon: usize,
    pub history_len: usize,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    pub text_buckets: usize,
    pub sparse_mode: SparseMode,
    pub sparse_ratio: f64,
    pub sparse_temperature: f64,
    pub sparse_grouping: JointGrouping,
    pub train_gumbel: bool,
    pub cfg_mask_rate: f64,

    pub guidance: f64,
    pub sampler: SamplerKind,
    pub rollout_mode: RolloutMode,
    pub rollout_steps: usize,
    pub start_separation: f64,
    pub drive_limit: f64,

    pub lr_peak: f64,
    pub lr_floor: f64,
    pub warmup: u64,
    pub train_steps: u64,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub checkpoint_every: u64,

    pub sigma: f64,
    pub keep: usize,
    pub rollouts_per_motion: usize,
    pub motions_per_scenario: usize,
    pub reference_frames: usize,
    pub success_threshold: f64,
    pub lambda_pos: f64,
    pub lambda_vel: f64,
    pub lambda_root: f64,

    pub seed: u64,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
}

/// Keys whose values must agree between a checkpoint and the runtime.
const MODEL_KEYS: &[&str] = &[
    "body",
    "extero",
    "d_model",
    "blocks",
    "heads",
    "ig_heads",
    "cond_layers",
    "ffn_mult",
    "horizon",
    "history_len",
    "diffusion_steps",
    "schedule",
    "text_buckets",
    "sparse_mode",
    "sparse_ratio",
    "sparse_temperature",
    "sparse_grouping",
];

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("expected a boolean, got '{v}'"),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("cannot parse '{v}': {e}"))
}

impl Config {
    /// Published constants: 15 joints, width 768, 4 blocks, 50 diffusion
    /// steps, 80k iterations at batch 256.
    pub fn full() -> Self {
        Self {
            body: BodyKind::Full,
            extero: ExteroKind::Sig,
            d_model: 768,
            blocks: 4,
            heads: 12,
            ig_heads: 4,
            cond_layers: 5,
            ffn_mult: 4,
            horizon: 4,
            history_len: 364,
            diffusion_steps: 50,
            schedule: ScheduleKind::Cosine,
            text_buckets: 4096,
            sparse_mode: SparseMode::Edge,
            sparse_ratio: 0.5,
            sparse_temperature: 1.0,
            sparse_grouping: JointGrouping::Other,
            train_gumbel: true,
            cfg_mask_rate: 0.1,
            guidance: 3.5,
            sampler: SamplerKind::Ancestral,
            rollout_mode: RolloutMode::ExecuteHorizon,
            rollout_steps: 120,
            start_separation: 2.0,
            drive_limit: 3.0,
            lr_peak: 1e-4,
            lr_floor: 1e-6,
            warmup: 1000,
            train_steps: 80_000,
            batch: 256,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 2e-5,
            grad_clip: 1.0,
            checkpoint_every: 5000,
            sigma: 0.01,
            keep: 8,
            rollouts_per_motion: 16,
            motions_per_scenario: 1,
            reference_frames: 120,
            success_threshold: 0.5,
            lambda_pos: 2.0,
            lambda_vel: 0.1,
            lambda_root: 1.0,
            seed: 0,
            dataset: PathBuf::from("dataset.iads"),
            checkpoint: PathBuf::from("model.idtc"),
        }
    }

    /// Laptop-scale overrides of [`Config::full`].
    pub fn desk() -> Self {
        Self {
            body: BodyKind::Desk,
            d_model: 64,
            blocks: 2,
            heads: 4,
            ig_heads: 4,
            cond_layers: 2,
            ffn_mult: 2,
            text_buckets: 64,
            lr_peak: 1e-3,
            lr_floor: 1e-5,
            warmup: 50,
            train_steps: 2000,
            batch: 8,
            checkpoint_every: 500,
            ..Self::full()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => bail!("unknown profile '{name}' (expected desk or full)"),
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let c = self;
        match key {
            "body" => {
                c.body = match v {
                    "desk" => BodyKind::Desk,
                    "full" => BodyKind::Full,
                    _ => bail!("unknown body '{v}'"),
                }
            }
            "extero" => c.extero = ExteroKind::parse(v).ok_or_else(|| anyhow!("unknown extero kind '{v}'"))?,
            "d_model" => c.d_model = num(v)?,
            "blocks" => c.blocks = num(v)?,
            "heads" => c.heads = num(v)?,
            "ig_heads" => c.ig_heads = num(v)?,
            "cond_layers" => c.cond_layers = num(v)?,
            "ffn_mult" => c.ffn_mult = num(v)?,
            "horizon" => c.horizon = num(v)?,
            "history_len" => c.history_len = num(v)?,
            "diffusion_steps" => c.diffusion_steps = num(v)?,
            "schedule" => {
                c.schedule = match v {
                    "cosine" => ScheduleKind::Cosine,
                    "linear" => ScheduleKind::Linear,
                    _ => bail!("unknown schedule '{v}'"),
                }
            }
            "text_buckets" => c.text_buckets = num(v)?,
            "sparse_mode" => {
                c.sparse_mode = match v {
                    "edge" => SparseMode::Edge,
                    "joint" => SparseMode::Joint,
                    _ => bail!("unknown sparse mode '{v}'"),
                }
            }
            "sparse_ratio" => c.sparse_ratio = num(v)?,
            "sparse_temperature" => c.sparse_temperature = num(v)?,
            "sparse_grouping" => {
                c.sparse_grouping = match v {
                    "other" => JointGrouping::Other,
                    "ego" => JointGrouping::Ego,
                    _ => bail!("unknown joint grouping '{v}'"),
                }
            }
            "train_gumbel" => c.train_gumbel = parse_bool(v)?,
            "cfg_mask_rate" => c.cfg_mask_rate = num(v)?,
            "guidance" => c.guidance = num(v)?,
            "sampler" => {
                c.sampler = match v {
                    "ancestral" => SamplerKind::Ancestral,
                    "ddim" => SamplerKind::Ddim,
                    _ => bail!("unknown sampler '{v}'"),
                }
            }
            "rollout_mode" => {
                c.rollout_mode = match v {
                    "execute_horizon" => RolloutMode::ExecuteHorizon,
                    "replan_every_frame" => RolloutMode::ReplanEveryFrame,
                    _ => bail!("unknown rollout mode '{v}'"),
                }
            }
            "rollout_steps" => c.rollout_steps = num(v)?,
            "start_separation" => c.start_separation = num(v)?,
            "drive_limit" => c.drive_limit = num(v)?,
            "lr_peak" => c.lr_peak = num(v)?,
            "lr_floor" => c.lr_floor = num(v)?,
            "warmup" => c.warmup = num(v)?,
            "train_steps" => c.train_steps = num(v)?,
            "batch" => c.batch = num(v)?,
            "beta1" => c.beta1 = num(v)?,
            "beta2" => c.beta2 = num(v)?,
            "adam_eps" => c.adam_eps = num(v)?,
            "weight_decay" => c.weight_decay = num(v)?,
            "grad_clip" => c.grad_clip = num(v)?,
            "checkpoint_every" => c.checkpoint_every = num(v)?,
            "sigma" => c.sigma = num(v)?,
            "keep" => c.keep = num(v)?,
            "rollouts_per_motion" => c.rollouts_per_motion = num(v)?,
            "motions_per_scenario" => c.motions_per_scenario = num(v)?,
            "reference_frames" => c.reference_frames = num(v)?,
            "success_threshold" => c.success_threshold = num(v)?,
            "lambda_pos" => c.lambda_pos = num(v)?,
            "lambda_vel" => c.lambda_vel = num(v)?,
            "lambda_root" => c.lambda_root = num(v)?,
            "seed" => c.seed = num(v)?,
            "dataset" => c.dataset = PathBuf::from(v),
            "checkpoint" => c.checkpoint = PathBuf::from(v),
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", n + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Every key with its current value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let c = self;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("body", match c.body { BodyKind::Desk => "desk", BodyKind::Full => "full" }.into());
        put("extero", c.extero.name().to_lowercase());
        put("d_model", c.d_model.to_string());
        put("blocks", c.blocks.to_string());
        put("heads", c.heads.to_string());
        put("ig_heads", c.ig_heads.to_string());
        put("cond_layers", c.cond_layers.to_string());
        put("ffn_mult", c.ffn_mult.to_string());
        put("horizon", c.horizon.to_string());
        put("history_len", c.history_len.to_string());
        put("diffusion_steps", c.diffusion_steps.to_string());
        put("schedule", match c.schedule { ScheduleKind::Cosine => "cosine", ScheduleKind::Linear => "linear" }.into());
        put("text_buckets", c.text_buckets.to_string());
        put("sparse_mode", match c.sparse_mode { SparseMode::Edge => "edge", SparseMode::Joint => "joint" }.into());
        put("sparse_ratio", c.sparse_ratio.to_string());
        put("sparse_temperature", c.sparse_temperature.to_string());
        put("sparse_grouping", match c.sparse_grouping { JointGrouping::Other => "other", JointGrouping::Ego => "ego" }.into());
        put("train_gumbel", c.train_gumbel.to_string());
        put("cfg_mask_rate", c.cfg_mask_rate.to_string());
        put("guidance", c.guidance.to_string());
        put("sampler", match c.sampler { SamplerKind::Ancestral => "ancestral", SamplerKind::Ddim => "ddim" }.into());
        put(
            "rollout_mode",
            match c.rollout_mode {
                RolloutMode::ExecuteHorizon => "execute_horizon",
                RolloutMode::ReplanEveryFrame => "replan_every_frame",
            }
            .into(),
        );
        put("rollout_steps", c.rollout_steps.to_string());
        put("start_separation", c.start_separation.to_string());
        put("drive_limit", c.drive_limit.to_string());
        put("lr_peak", c.lr_peak.to_string());
        put("lr_floor", c.lr_floor.to_string());
        put("warmup", c.warmup.to_string());
        put("train_steps", c.train_steps.to_string());
        put("batch", c.batch.to_string());
        put("beta1", c.beta1.to_string());
        put("beta2", c.beta2.to_string());
        put("adam_eps", c.adam_eps.to_string());
        put("weight_decay", c.weight_decay.to_string());
        put("grad_clip", c.grad_clip.to_string());
        put("checkpoint_every", c.checkpoint_every.to_string());
        put("sigma", c.sigma.to_string());
        put("keep", c.keep.to_string());
        put("rollouts_per_motion", c.rollouts_per_motion.to_string());
        put("motions_per_scenario", c.motions_per_scenario.to_string());
        put("reference_frames", c.reference_frames.to_string());
        put("success_threshold", c.success_threshold.to_string());
        put("lambda_pos", c.lambda_pos.to_string());
        put("lambda_vel", c.lambda_vel.to_string());
        put("lambda_root", c.lambda_root.to_string());
        put("seed", c.seed.to_string());
        put("dataset", c.dataset.display().to_string());
        put("checkpoint", c.checkpoint.display().to_string());
        s
    }

    /// SHA-256 over the model-defining keys, hex encoded.
    pub fn digest(&self) -> String {
        let text = self.to_text();
        let mut h = Sha256::new();
        for line in text.lines() {
            let key = line.split(" = ").next().unwrap_or("");
            if MODEL_KEYS.contains(&key) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn body_spec(&self) -> BodySpec {
        self.body.spec()
    }

    pub fn model(&self) -> Result<InterDitConfig> {
        let body = self.body_spec();
        let cfg = InterDitConfig {
            joints: body.joint_count(),
            extero: self.extero,
            action_dim: body.dof_count(),
            d_model: self.d_model,
            blocks: self.blocks,
            heads: self.heads,
            ig_heads: self.ig_heads,
            cond_layers: self.cond_layers,
            ffn_mult: self.ffn_mult,
            horizon: self.horizon,
            history_len: self.history_len,
            diffusion_steps: self.diffusion_steps,
            text_buckets: self.text_buckets,
            sparse: SparseConfig {
                mode: self.sparse_mode,
                ratio: self.sparse_ratio,
                temperature: self.sparse_temperature,
                noise: self.train_gumbel,
                grouping: self.sparse_grouping,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            batch: self.batch,
            lr: CosineSchedule {
                peak: self.lr_peak,
                floor: self.lr_floor,
                warmup: self.warmup,
                total: self.train_steps,
            },
            adamw: self.adamw(),
            clip: self.grad_clip,
            loss: LossOptions {
                cfg_mask_rate: self.cfg_mask_rate,
                gumbel: self.train_gumbel,
            },
            seed: self.seed,
        }
    }

    pub fn collect(&self) -> CollectConfig {
        CollectConfig {
            sigma: self.sigma,
            rollouts_per_motion: self.rollouts_per_motion,
            keep: self.keep,
            threshold: self.success_threshold,
            gains: TrackingGains {
                drive_limit: self.drive_limit,
                ..TrackingGains::default()
            },
            weights: RewardWeights {
                pos: self.lambda_pos,
                vel: self.lambda_vel,
                root: self.lambda_root,
            },
            extero: self.extero,
        }
    }

    pub fn control(&self) -> ControlConfig {
        ControlConfig {
            extero: self.extero,
            horizon: self.horizon,
            history_len: self.history_len,
            guidance: self.guidance,
            sampler: self.sampler,
            mode: self.rollout_mode,
            text_buckets: self.text_buckets,
            drive_limit: self.drive_limit,
        }
    }
}
