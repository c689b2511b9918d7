//! Minibatch training of a [`DiffusionNet`] with AdamW, a cosine learning
//! rate and per-step random streams derived from `(seed, step)`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::WindowDataset;
use crate::diffusion::{training_loss, DiffusionNet, LossOptions, NoiseSchedule, TrainingSample};
use crate::numerics::Graph;
use crate::optim::{clip_global_norm, AdamW, AdamWConfig, CosineSchedule, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: CosineSchedule,
    pub adamw: AdamWConfig,
    pub clip: f64,
    pub loss: LossOptions,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: CosineSchedule {
                peak: 1e-3,
                floor: 1e-5,
                warmup: 50,
                total: 2000,
            },
            adamw: AdamWConfig::default(),
            clip: 1.0,
            loss: LossOptions::default(),
            seed: 0,
        }
    }
}

/// Random stream of optimizer step `step`; independent of every other step
/// so a resumed run draws the same batches and noise.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(step);
    r
}

/// Optimizer state that must survive a checkpoint for bitwise resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub opt: AdamW,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, params: &ParamStore) -> Self {
        let opt = AdamW::new(config.adamw, params);
        Self { config, opt }
    }

    /// Next 0-based step to run.
    pub fn step(&self) -> u64 {
        self.opt.step
    }

    pub fn done(&self) -> bool {
        self.opt.step >= self.config.steps
    }

    /// Loss of the batch step `step` would draw, without updating.
    pub fn evaluate<N: DiffusionNet>(&self, net: &N, data: &WindowDataset, sched: &NoiseSchedule, step: u64) -> Result<f64> {
        let mut rng = step_rng(self.config.seed, step);
        let batch = draw_batch(data, self.config.batch, &mut rng)?;
        let refs: Vec<&TrainingSample> = batch.iter().collect();
        let mut g = Graph::new();
        let b = net.params().bind_frozen(&mut g);
        let l = training_loss(net, &mut g, &b, &refs, sched, &self.config.loss, &mut rng)?;
        Ok(g.value(l).data()[0])
    }

    pub fn train_step<N: DiffusionNet>(
        &mut self,
        net: &mut N,
        data: &WindowDataset,
        sched: &NoiseSchedule,
    ) -> Result<StepReport> {
        let step = self.opt.step;
        let mut rng = step_rng(self.config.seed, step);
        let batch = draw_batch(data, self.config.batch, &mut rng)?;
        let refs: Vec<&TrainingSample> = batch.iter().collect();
        let mut g = Graph::new();
        let b = net.params().bind(&mut g);
        let l = training_loss(&*net, &mut g, &b, &refs, sched, &self.config.loss, &mut rng)?;
        let loss = g.value(l).data()[0];
        if !loss.is_finite() {
            return Err(Error::Degenerate(format!("non-finite loss at step {step}")));
        }
        let mut grads = g.backward(l)?;
        let mut gs = b.gradients(&mut grads);
        drop(g);
        let grad_norm = clip_global_norm(&mut gs, self.config.clip);
        let lr = self.config.lr.lr(step);
        self.opt.update(net.params_mut(), &gs, lr)?;
        Ok(StepReport { step, loss, lr, grad_norm })
    }
}

fn draw_batch(data: &WindowDataset, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingSample>> {
    if batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    (0..batch).map(|_| data.sample(rng.random_range(0..data.len()))).collect()
}
