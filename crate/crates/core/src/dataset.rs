//! Training windows cut from recorded two-agent trajectories.

use alloc::format;
use alloc::vec::Vec;

use crate::diffusion::{history_frame_index, TrainingSample};
use crate::interdit::{history_indices, text_tokens};
use crate::numerics::Tensor;
use crate::representation::{FrameLayout, NormStats};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

/// Per-dimension statistics over every frame of both agents.
pub fn fit_stats(trajs: &[Trajectory]) -> Result<NormStats> {
    let frames: Vec<Vec<f64>> = trajs
        .iter()
        .flat_map(|t| t.agents.iter().flat_map(|a| (0..a.len()).map(|n| a.frame(n))))
        .collect();
    if frames.is_empty() {
        return Err(Error::Data("no frames to fit normalization on".into()));
    }
    NormStats::fit(frames.iter().map(|f| f.as_slice()))
}

/// One episode with normalized frames and its command tokens.
#[derive(Clone, Debug)]
struct Episode {
    tokens: Vec<usize>,
    frames: [Vec<Vec<f64>>; 2],
}

/// Sliding windows of length `m` over normalized episodes, with the strided
/// history context of the window's first frame.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    episodes: Vec<Episode>,
    index: Vec<(usize, usize)>,
    layout: FrameLayout,
    horizon: usize,
    history_len: usize,
    history: Vec<usize>,
}

impl WindowDataset {
    pub fn new(
        trajs: &[Trajectory],
        stats: &NormStats,
        layout: FrameLayout,
        horizon: usize,
        history_len: usize,
        text_buckets: usize,
    ) -> Result<Self> {
        if stats.dim() != layout.total() {
            return Err(Error::dim("WindowDataset", format!("stats dim {} vs frame {}", stats.dim(), layout.total())));
        }
        let history = history_indices(history_len)?;
        let mut episodes = Vec::with_capacity(trajs.len());
        let mut index = Vec::new();
        for t in trajs {
            t.check_layout(&layout)?;
            if t.len() < horizon {
                continue;
            }
            let norm = |a: usize| (0..t.len()).map(|n| stats.normalized(&t.agents[a].frame(n))).collect();
            episodes.push(Episode {
                tokens: text_tokens(&t.command, text_buckets),
                frames: [norm(0), norm(1)],
            });
            let k = episodes.len() - 1;
            index.extend((0..=t.len() - horizon).map(|n| (k, n)));
        }
        if index.is_empty() {
            return Err(Error::Data(format!("no episode has at least {horizon} frames")));
        }
        Ok(Self {
            episodes,
            index,
            layout,
            horizon,
            history_len,
            history,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Episode and first-frame index of window `i`.
    pub fn location(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }

    pub fn sample(&self, i: usize) -> Result<TrainingSample> {
        let (e, n) = self.index[i];
        let ep = &self.episodes[e];
        let f = self.layout.total();
        let s = self.layout.state();
        let window = |a: usize| -> Result<Tensor> {
            let data = ep.frames[a][n..n + self.horizon].iter().flatten().copied().collect();
            Tensor::new(&[self.horizon, f], data)
        };
        let context = |a: usize| -> Result<Tensor> {
            let mut data = Vec::with_capacity(self.history.len() * s);
            for &v in &self.history {
                data.extend_from_slice(&ep.frames[a][history_frame_index(n, v, self.history_len)][..s]);
            }
            Tensor::new(&[self.history.len(), s], data)
        };
        Ok(TrainingSample {
            x0: [window(0)?, window(1)?],
            history: [context(0)?, context(1)?],
            tokens: ep.tokens.clone(),
        })
    }
}
