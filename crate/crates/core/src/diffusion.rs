//! Clean-signal diffusion: noise schedules, the training objective,
//! classifier-free guidance, ancestral/DDIM sampling with optional
//! inpainting, the FIFO history buffer and closed-loop control.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::interdit::{history_indices, text_tokens, AgentInput, ForwardOptions, InterDit, Predictor, HISTORY_TOKENS};
use crate::numerics::{Graph, Tensor, Var};
use crate::optim::{Bound, ParamStore};
use crate::representation::{ExteroKind, FrameLayout, NormStats};
use crate::simworld::{ActuatorCmd, AgentState, BodySpec, SimWorld, ROOT_DRIVE_DOFS};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// DDPM posterior sampling with fresh noise each step.
    Ancestral,
    /// Deterministic DDIM update.
    Ddim,
}

/// Per-step tables indexed `0..=N`; index 0 is the clean signal
/// (`ᾱ_0 = 1`, `β_0 = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Closed-form cosine `ᾱ(t) = f(t)/f(0)`, `f(t) = cos²((t/N + s)/(1 + s)·π/2)`.
pub fn cosine_alpha_bar(t: usize, n: usize) -> f64 {
    let f = |t: f64| {
        let x = (t / n as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * core::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    f(t as f64) / f(0.0)
}

impl NoiseSchedule {
    /// Builds a schedule from `β_1..β_N`, each in `(0, 1)`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let mut all = vec![0.0];
        all.extend_from_slice(betas);
        let alphas: Vec<f64> = all.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = vec![1.0];
        for a in &alphas[1..] {
            let prev = *alpha_bar.last().expect("non-empty");
            alpha_bar.push(prev * a);
        }
        Ok(Self {
            betas: all,
            alphas,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }
}

pub fn make_schedule(n: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if n < 2 {
        return Err(Error::Config(format!("diffusion needs N >= 2 steps, got {n}")));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Cosine => (1..=n)
            .map(|t| (1.0 - cosine_alpha_bar(t, n) / cosine_alpha_bar(t - 1, n)).min(MAX_BETA))
            .collect(),
        ScheduleKind::Linear => {
            let scale = 1000.0 / n as f64;
            let (lo, hi) = (1e-4 * scale, (0.02 * scale).min(MAX_BETA));
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    NoiseSchedule::from_betas(&betas)
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// One reverse step `t → t−1` given the clean estimate. At `t = 1` the
/// estimate itself is returned.
pub fn reverse_step(
    sched: &NoiseSchedule,
    kind: SamplerKind,
    t: usize,
    x_t: &[f64],
    x0: &[f64],
    noise: Option<&[f64]>,
) -> Vec<f64> {
    if t <= 1 {
        return x0.to_vec();
    }
    let (ab_t, ab_prev) = (sched.alpha_bar[t], sched.alpha_bar[t - 1]);
    match kind {
        SamplerKind::Ancestral => {
            let beta = sched.betas[t];
            let c0 = beta * ab_prev.sqrt() / (1.0 - ab_t);
            let ct = (1.0 - ab_prev) * sched.alphas[t].sqrt() / (1.0 - ab_t);
            let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab_t)).sqrt();
            let noise = noise.expect("ancestral step needs noise");
            x0.iter()
                .zip(x_t)
                .zip(noise)
                .map(|((x0, xt), z)| c0 * x0 + ct * xt + sigma * z)
                .collect()
        }
        SamplerKind::Ddim => {
            let (a_t, s_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
            let (a_p, s_p) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
            x0.iter()
                .zip(x_t)
                .map(|(x0, xt)| a_p * x0 + s_p * (xt - a_t * x0) / s_t)
                .collect()
        }
    }
}

fn gaussian(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// Clean-window predictor for both agents, on normalized data.
pub trait Denoiser {
    fn denoise(
        &mut self,
        x_t: [&Tensor; 2],
        t: usize,
        tokens: &[usize],
        history: [&Tensor; 2],
    ) -> Result<[Tensor; 2]>;
}

/// Inference wrapper around [`InterDit`] with Gumbel noise disabled.
pub struct ModelDenoiser<'a> {
    predictor: Predictor<'a>,
    pub options: ForwardOptions,
}

impl<'a> ModelDenoiser<'a> {
    pub fn new(model: &'a InterDit) -> Self {
        Self {
            predictor: Predictor::new(model),
            options: ForwardOptions::default(),
        }
    }
}

impl Denoiser for ModelDenoiser<'_> {
    fn denoise(&mut self, x_t: [&Tensor; 2], t: usize, tokens: &[usize], history: [&Tensor; 2]) -> Result<[Tensor; 2]> {
        self.predictor.predict(
            [
                AgentInput { window: x_t[0], history: history[0] },
                AgentInput { window: x_t[1], history: history[1] },
            ],
            t,
            tokens,
            self.options,
            None,
        )
    }
}

/// `Φ_null + s·(Φ_c − Φ_null)`. Returns `Φ_c` unchanged for `s = 1` and
/// `Φ_null` for an empty condition.
pub fn cfg_predict<D: Denoiser + ?Sized>(
    den: &mut D,
    x_t: [&Tensor; 2],
    t: usize,
    tokens: &[usize],
    history: [&Tensor; 2],
    s: f64,
) -> Result<[Tensor; 2]> {
    if !(s >= 0.0) {
        return Err(Error::Contract(format!("guidance scale must be >= 0, got {s}")));
    }
    if tokens.is_empty() {
        return den.denoise(x_t, t, &[], history);
    }
    let cond = den.denoise(x_t, t, tokens, history)?;
    if s == 1.0 {
        return Ok(cond);
    }
    let null = den.denoise(x_t, t, &[], history)?;
    let mix = |c: &Tensor, n: &Tensor| {
        let data = c.data().iter().zip(n.data()).map(|(c, n)| n + s * (c - n)).collect();
        Tensor::new(c.shape(), data).expect("same shape")
    };
    Ok([mix(&cond[0], &null[0]), mix(&cond[1], &null[1])])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    pub rows: usize,
    pub cols: usize,
    pub guidance: f64,
    pub sampler: SamplerKind,
}

/// Iterative denoising from pure noise. `inpaint` runs on every clean
/// estimate before it is used to re-noise. Output is in normalized units.
pub fn sample_with<D: Denoiser + ?Sized>(
    den: &mut D,
    sched: &NoiseSchedule,
    spec: &SampleSpec,
    tokens: &[usize],
    history: [&Tensor; 2],
    rng: &mut dyn RngCore,
    inpaint: &mut dyn FnMut(&mut [Tensor; 2]),
) -> Result<[Tensor; 2]> {
    let shape = [spec.rows, spec.cols];
    let n = spec.rows * spec.cols;
    let mut x = [Tensor::new(&shape, gaussian(rng, n))?, Tensor::new(&shape, gaussian(rng, n))?];
    for t in (1..=sched.steps()).rev() {
        let mut x0 = cfg_predict(den, [&x[0], &x[1]], t, tokens, history, spec.guidance)?;
        inpaint(&mut x0);
        if t == 1 {
            return Ok(x0);
        }
        let mut next = [Tensor::zeros(&shape), Tensor::zeros(&shape)];
        for a in 0..2 {
            let noise = match spec.sampler {
                SamplerKind::Ancestral => Some(gaussian(rng, n)),
                SamplerKind::Ddim => None,
            };
            let v = reverse_step(sched, spec.sampler, t, x[a].data(), x0[a].data(), noise.as_deref());
            next[a] = Tensor::new(&shape, v)?;
        }
        x = next;
    }
    unreachable!("schedule has at least one step")
}

pub fn sample<D: Denoiser + ?Sized>(
    den: &mut D,
    sched: &NoiseSchedule,
    spec: &SampleSpec,
    tokens: &[usize],
    history: [&Tensor; 2],
    rng: &mut dyn RngCore,
) -> Result<[Tensor; 2]> {
    sample_with(den, sched, spec, tokens, history, rng, &mut |_| {})
}

/// Sampling in which agent 1's proprioception columns `[0, P)` of every
/// clean estimate are overwritten by `fixed` (`[≥m × P]`, normalized).
/// Actions and exteroception are never replaced.
pub fn reactive_sample<D: Denoiser + ?Sized>(
    den: &mut D,
    sched: &NoiseSchedule,
    spec: &SampleSpec,
    fixed: &Tensor,
    tokens: &[usize],
    history: [&Tensor; 2],
    rng: &mut dyn RngCore,
) -> Result<[Tensor; 2]> {
    if fixed.rows() < spec.rows {
        return Err(Error::Data(format!(
            "fixed trajectory has {} frames, window needs {}",
            fixed.rows(),
            spec.rows
        )));
    }
    let p = fixed.cols();
    if p > spec.cols {
        return Err(Error::dim("reactive_sample", format!("{p} fixed columns exceed frame width {}", spec.cols)));
    }
    sample_with(den, sched, spec, tokens, history, rng, &mut |x0| {
        for r in 0..spec.rows {
            x0[0].row_mut(r)[..p].copy_from_slice(fixed.row(r));
        }
    })
}

/// Network whose prediction can be recorded on a graph for training.
pub trait DiffusionNet {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    fn forward_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        x_t: [&Tensor; 2],
        t: usize,
        tokens: &[usize],
        history: [&Tensor; 2],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<[Var; 2]>;
}

impl DiffusionNet for InterDit {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        x_t: [&Tensor; 2],
        t: usize,
        tokens: &[usize],
        history: [&Tensor; 2],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<[Var; 2]> {
        let opts = ForwardOptions {
            sparse_noise: rng.is_some(),
            ..ForwardOptions::default()
        };
        self.forward(
            g,
            b,
            [
                AgentInput { window: x_t[0], history: history[0] },
                AgentInput { window: x_t[1], history: history[1] },
            ],
            t,
            tokens,
            opts,
            rng,
        )
    }
}

/// One training example: clean normalized windows, history tokens and the
/// command tokens of both agents.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub x0: [Tensor; 2],
    pub history: [Tensor; 2],
    pub tokens: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Probability that a sample's command is replaced by the null condition.
    pub cfg_mask_rate: f64,
    /// Gumbel noise in sparse attention during training.
    pub gumbel: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            cfg_mask_rate: 0.1,
            gumbel: true,
        }
    }
}

/// Draws whether a training sample's command is masked to null.
pub fn cfg_mask(rng: &mut dyn RngCore, rate: f64) -> bool {
    rng.random::<f64>() < rate
}

/// `‖x0 − pred‖₂` over the flattened window, as a `[1×1]` node.
pub fn window_loss(g: &mut Graph, pred: Var, x0: &Tensor) -> Result<Var> {
    let target = x0.map(|v| -v);
    let diff = g.add_const(pred, &target)?;
    let n = g.value(diff).len();
    let flat = g.reshape(diff, &[1, n])?;
    Ok(g.row_norm(flat))
}

/// Explicitly drawn diffusion inputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: [Vec<f64>; 2],
    pub masked: bool,
}

impl NoiseDraw {
    pub fn draw(rng: &mut dyn RngCore, sched: &NoiseSchedule, len: usize, mask_rate: f64) -> Self {
        let t = rng.random_range(1..=sched.steps());
        let eps = [gaussian(rng, len), gaussian(rng, len)];
        let masked = cfg_mask(rng, mask_rate);
        Self { t, eps, masked }
    }
}

/// Loss of one sample with fixed noise: the mean over both agents of the
/// window L2 error.
pub fn sample_loss<N: DiffusionNet + ?Sized>(
    net: &N,
    g: &mut Graph,
    b: &Bound,
    s: &TrainingSample,
    sched: &NoiseSchedule,
    draw: &NoiseDraw,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let x_t: Vec<Tensor> = (0..2)
        .map(|a| Tensor::new(s.x0[a].shape(), q_sample(s.x0[a].data(), draw.t, &draw.eps[a], sched)))
        .collect::<Result<_>>()?;
    let tokens: &[usize] = if draw.masked { &[] } else { &s.tokens };
    let pred = net.forward_graph(g, b, [&x_t[0], &x_t[1]], draw.t, tokens, [&s.history[0], &s.history[1]], rng)?;
    let l0 = window_loss(g, pred[0], &s.x0[0])?;
    let l1 = window_loss(g, pred[1], &s.x0[1])?;
    let both = g.concat_cols(&[l0, l1])?;
    Ok(g.mean(both))
}

/// Mean per-sample loss over a batch with freshly drawn timesteps, noise
/// and condition masks.
pub fn training_loss<N: DiffusionNet + ?Sized>(
    net: &N,
    g: &mut Graph,
    b: &Bound,
    batch: &[&TrainingSample],
    sched: &NoiseSchedule,
    opts: &LossOptions,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let mut losses = Vec::with_capacity(batch.len());
    for s in batch {
        let draw = NoiseDraw::draw(rng, sched, s.x0[0].len(), opts.cfg_mask_rate);
        let noise: Option<&mut dyn RngCore> = if opts.gumbel { Some(&mut *rng) } else { None };
        losses.push(sample_loss(net, g, b, s, sched, &draw, noise)?);
    }
    let all = g.concat_cols(&losses)?;
    Ok(g.mean(all))
}

/// FIFO of the most recent `capacity` state frames, oldest first. Reads
/// before the buffer fills see the oldest frame repeated on the left.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    capacity: usize,
    frames: VecDeque<Vec<f64>>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of left-padding slots in the virtual full-length buffer.
    pub fn padding(&self) -> usize {
        self.capacity - self.frames.len()
    }

    /// Frame at virtual slot `v ∈ [0, capacity)`.
    pub fn slot(&self, v: usize) -> &[f64] {
        let pad = self.padding();
        &self.frames[v.saturating_sub(pad)]
    }

    /// `[indices.len() × width]` tensor of the selected slots.
    pub fn context(&self, indices: &[usize]) -> Result<Tensor> {
        if self.frames.is_empty() {
            return Err(Error::Contract("history buffer is empty".into()));
        }
        let width = self.frames[0].len();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.slot(i));
        }
        Tensor::new(&[indices.len(), width], data)
    }
}

/// Index into an episode of the frame at virtual history slot `v` when the
/// newest frame is `n`, matching [`HistoryBuffer`] padding.
pub fn history_frame_index(n: usize, v: usize, capacity: usize) -> usize {
    (n + 1 + v).saturating_sub(capacity)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    ReplanEveryFrame,
    ExecuteHorizon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlConfig {
    pub extero: ExteroKind,
    pub horizon: usize,
    pub history_len: usize,
    pub guidance: f64,
    pub sampler: SamplerKind,
    pub mode: RolloutMode,
    pub text_buckets: usize,
    /// Bound on commanded forward speed (m/s) and yaw rate (rad/s).
    pub drive_limit: f64,
}

impl ControlConfig {
    pub fn from_model(cfg: &crate::interdit::InterDitConfig) -> Self {
        Self {
            extero: cfg.extero,
            horizon: cfg.horizon,
            history_len: cfg.history_len,
            guidance: 3.5,
            sampler: SamplerKind::Ancestral,
            mode: RolloutMode::ExecuteHorizon,
            text_buckets: cfg.text_buckets,
            drive_limit: 3.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RolloutReport {
    pub trajectory: Trajectory,
    pub sampler_calls: usize,
}

struct Loop<'a> {
    body: &'a BodySpec,
    stats: &'a NormStats,
    layout: FrameLayout,
    cfg: &'a ControlConfig,
    indices: Vec<usize>,
    fifo: [HistoryBuffer; 2],
}

impl<'a> Loop<'a> {
    fn new(body: &'a BodySpec, stats: &'a NormStats, cfg: &'a ControlConfig, action_dim: usize) -> Result<Self> {
        let layout = FrameLayout::new(body.joint_count(), cfg.extero, action_dim);
        if stats.dim() != layout.total() {
            return Err(Error::dim(
                "control",
                format!("normalization has {} dims, frame needs {}", stats.dim(), layout.total()),
            ));
        }
        if action_dim != body.dof_count() {
            return Err(Error::dim("control", format!("action dim {action_dim} vs {} dofs", body.dof_count())));
        }
        Ok(Self {
            body,
            stats,
            layout,
            cfg,
            indices: history_indices(cfg.history_len)?,
            fifo: [HistoryBuffer::new(cfg.history_len), HistoryBuffer::new(cfg.history_len)],
        })
    }

    fn push_states(&mut self, agents: &[AgentState; 2]) -> Result<()> {
        let enc = crate::representation::encode_pair(self.cfg.extero, agents, self.body)?;
        for (a, (xp, xe)) in enc.into_iter().enumerate() {
            let mut s = xp;
            s.extend(xe);
            let w = self.layout.state();
            for k in 0..w {
                s[k] = (s[k] - self.stats.mean[k]) / self.stats.std[k];
            }
            self.fifo[a].push(s);
        }
        Ok(())
    }

    fn contexts(&self) -> Result<[Tensor; 2]> {
        let c = [self.fifo[0].context(&self.indices)?, self.fifo[1].context(&self.indices)?];
        debug_assert_eq!(c[0].rows(), HISTORY_TOKENS);
        Ok(c)
    }

    fn spec(&self) -> SampleSpec {
        SampleSpec {
            rows: self.cfg.horizon,
            cols: self.layout.total(),
            guidance: self.cfg.guidance,
            sampler: self.cfg.sampler,
        }
    }

    /// Denormalized, limit-clamped action of window row `r`.
    fn action(&self, window: &Tensor, r: usize) -> Vec<f64> {
        let frame = self.stats.denormalized(window.row(r));
        let mut a = frame[self.layout.state()..].to_vec();
        let (lo, hi) = (self.body.lower_limits(), self.body.upper_limits());
        for (k, v) in a.iter_mut().enumerate() {
            *v = if k < ROOT_DRIVE_DOFS {
                v.clamp(-self.cfg.drive_limit, self.cfg.drive_limit)
            } else {
                v.clamp(lo[k - ROOT_DRIVE_DOFS], hi[k - ROOT_DRIVE_DOFS])
            };
        }
        a
    }

    fn frames_per_plan(&self, remaining: usize) -> usize {
        match self.cfg.mode {
            RolloutMode::ReplanEveryFrame => 1,
            RolloutMode::ExecuteHorizon => self.cfg.horizon,
        }
        .min(remaining)
    }
}

fn fault(frame: usize, e: Error) -> Error {
    match e {
        Error::SimFault(msg) => Error::SimFault(format!("rollout aborted at frame {frame}: {msg}")),
        other => other,
    }
}

/// Closed-loop control of both agents: sample a window from the FIFO
/// context, execute one or all `m` predicted actions, observe, repeat.
/// Exteroception always comes from the simulator state.
pub fn rollout<D: Denoiser + ?Sized>(
    den: &mut D,
    world: &mut SimWorld,
    stats: &NormStats,
    sched: &NoiseSchedule,
    cfg: &ControlConfig,
    command: &str,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<RolloutReport> {
    let body = world.body.clone();
    let mut lp = Loop::new(&body, stats, cfg, body.dof_count())?;
    let tokens = text_tokens(command, cfg.text_buckets);
    let mut traj = Trajectory::new(command);
    let mut calls = 0;
    lp.push_states(&world.state.agents)?;
    while traj.len() < steps {
        let ctx = lp.contexts()?;
        let window = sample(den, sched, &lp.spec(), &tokens, [&ctx[0], &ctx[1]], rng)?;
        calls += 1;
        for r in 0..lp.frames_per_plan(steps - traj.len()) {
            let acts = [lp.action(&window[0], r), lp.action(&window[1], r)];
            traj.record(cfg.extero, &world.state.agents, &body, [&acts[0], &acts[1]])?;
            let cmds = [ActuatorCmd(acts[0].clone()), ActuatorCmd(acts[1].clone())];
            world.advance([&cmds[0], &cmds[1]]).map_err(|e| fault(traj.len(), e))?;
            lp.push_states(&world.state.agents)?;
        }
    }
    traj.success = true;
    Ok(RolloutReport {
        trajectory: traj,
        sampler_calls: calls,
    })
}

/// Reactive control: agent 1 replays `fixed` (its recorded world states)
/// while agent 2 is driven by inpainted sampling that pins agent 1's
/// proprioception to the replay. Produces `min(steps, fixed.len())` frames;
/// agent 1's recorded proprioception is copied from `fixed` and its action
/// channel holds the model's own (never substituted) prediction.
pub fn react<D: Denoiser + ?Sized>(
    den: &mut D,
    world: &mut SimWorld,
    stats: &NormStats,
    sched: &NoiseSchedule,
    cfg: &ControlConfig,
    fixed: &Trajectory,
    command: &str,
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<RolloutReport> {
    let body = world.body.clone();
    let mut lp = Loop::new(&body, stats, cfg, body.dof_count())?;
    let steps = steps.min(fixed.len());
    let replay = &fixed.agents[0];
    if replay.world.len() != fixed.len() {
        return Err(Error::Data("fixed trajectory has no world states to replay".into()));
    }
    if steps == 0 {
        return Err(Error::Data("fixed trajectory is empty".into()));
    }
    let axes = body.axis_count();
    let replay_state = |n: usize| AgentState::from_flat(&replay.world[n].raw, axes);
    let p = lp.layout.proprio;
    let tokens = text_tokens(command, cfg.text_buckets);
    let mut traj = Trajectory::new(command);
    let mut calls = 0;
    world.state.agents[0] = replay_state(0)?;
    lp.push_states(&world.state.agents)?;
    while traj.len() < steps {
        let n = traj.len();
        let mut fixed_win = Tensor::zeros(&[cfg.horizon, p]);
        for r in 0..cfg.horizon {
            let src = &replay.proprio[(n + r).min(fixed.len() - 1)];
            if src.len() != p {
                return Err(Error::Data(format!("fixed proprio width {} vs {p}", src.len())));
            }
            for (k, v) in fixed_win.row_mut(r).iter_mut().enumerate() {
                *v = (src[k] - stats.mean[k]) / stats.std[k];
            }
        }
        let ctx = lp.contexts()?;
        let window = reactive_sample(den, sched, &lp.spec(), &fixed_win, &tokens, [&ctx[0], &ctx[1]], rng)?;
        calls += 1;
        for r in 0..lp.frames_per_plan(steps - traj.len()) {
            let k = traj.len();
            let acts = [lp.action(&window[0], r), lp.action(&window[1], r)];
            traj.record(cfg.extero, &world.state.agents, &body, [&acts[0], &acts[1]])?;
            traj.agents[0].proprio[k] = replay.proprio[k].clone();
            let hold = ActuatorCmd(acts[0].clone());
            let cmd = ActuatorCmd(acts[1].clone());
            world.advance([&hold, &cmd]).map_err(|e| fault(k + 1, e))?;
            if k + 1 < fixed.len() {
                world.state.agents[0] = replay_state(k + 1)?;
            }
            lp.push_states(&world.state.agents)?;
        }
    }
    traj.success = true;
    Ok(RolloutReport {
        trajectory: traj,
        sampler_calls: calls,
    })
}

/// Text of a null-conditioned command (used by callers that need a name).
pub fn null_command() -> String {
    String::new()
}
