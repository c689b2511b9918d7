//! Twin weight-shared multi-stream diffusion transformer.
//!
//! Each agent's noisy window is split into proprioception, exteroception and
//! action streams. A block runs inter-stream fusion attention, then
//! conditioning cross-attention over the agent's own history and the other
//! agent's post-fusion features, then per-stream feed-forward layers; every
//! sublayer is wrapped in adaptive layer norm driven by `text + timestep`.
//! Both agents are processed by the same parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{
    self, AdaLnParams, AttnParams, Modulation, SparseConfig,
};
use crate::numerics::{Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::optim::{Bound, ParamId, ParamStore};
use crate::representation::{ExteroKind, FrameLayout};
use crate::{Error, Result};

/// Number of history tokens: 12 strided plus 4 most recent frames.
pub const HISTORY_TOKENS: usize = 16;
const HISTORY_STRIDED: usize = 12;
const HISTORY_RECENT: usize = 4;

/// Slots of a length-`h` history buffer fed to the network, oldest first.
/// For `h = 364` these are `0, 30, …, 330, 360, 361, 362, 363`.
pub fn history_indices(h: usize) -> Result<Vec<usize>> {
    let span = h.checked_sub(HISTORY_RECENT).filter(|s| *s >= HISTORY_STRIDED && s % HISTORY_STRIDED == 0);
    let span = span.ok_or_else(|| {
        Error::Config(format!(
            "history length {h} must be 4 plus a positive multiple of 12"
        ))
    })?;
    let stride = span / HISTORY_STRIDED;
    let mut idx: Vec<usize> = (0..HISTORY_STRIDED).map(|i| i * stride).collect();
    idx.extend(span..h);
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterDitConfig {
    pub joints: usize,
    pub extero: ExteroKind,
    pub action_dim: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Heads of the sparse interaction-graph attention.
    pub ig_heads: usize,
    /// Conditioning cross-attention layers per block; even layers attend to
    /// history, odd layers to the other agent.
    pub cond_layers: usize,
    pub ffn_mult: usize,
    /// Prediction horizon `m`.
    pub horizon: usize,
    /// Raw history length `h`.
    pub history_len: usize,
    pub diffusion_steps: usize,
    pub text_buckets: usize,
    pub sparse: SparseConfig,
}

impl InterDitConfig {
    pub fn desk() -> Self {
        Self {
            joints: 5,
            extero: ExteroKind::Sig,
            action_dim: 8,
            d_model: 64,
            blocks: 2,
            heads: 4,
            ig_heads: 4,
            cond_layers: 2,
            ffn_mult: 2,
            horizon: 4,
            history_len: 364,
            diffusion_steps: 50,
            text_buckets: 64,
            sparse: SparseConfig::default(),
        }
    }

    /// Published scale: 15 joints, 28 actuators, 4 blocks of width 768 with
    /// 5 conditioning layers each.
    pub fn full() -> Self {
        Self {
            joints: 15,
            action_dim: 28,
            d_model: 768,
            blocks: 4,
            heads: 12,
            ig_heads: 4,
            cond_layers: 5,
            ffn_mult: 4,
            ..Self::desk()
        }
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout::new(self.joints, self.extero, self.action_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.joints < 2 {
            return bad(format!("joints must be >= 2, got {}", self.joints));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.extero == ExteroKind::Sig && (self.ig_heads == 0 || !self.d_model.is_multiple_of(self.ig_heads)) {
            return bad(format!("d_model {} not divisible by ig_heads {}", self.d_model, self.ig_heads));
        }
        if self.blocks == 0 || self.horizon == 0 || self.ffn_mult == 0 || self.text_buckets == 0 {
            return bad("blocks, horizon, ffn_mult and text_buckets must be positive".into());
        }
        if self.diffusion_steps < 2 {
            return bad(format!("diffusion steps must be >= 2, got {}", self.diffusion_steps));
        }
        history_indices(self.history_len)?;
        self.sparse.validate()
    }
}

/// Layer counts of one block, independent of any allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockCensus {
    pub fusion_attention: usize,
    pub conditioning_attention: usize,
    pub post_fusion_projections: usize,
    pub feed_forward: usize,
}

pub fn block_census(cfg: &InterDitConfig) -> BlockCensus {
    BlockCensus {
        fusion_attention: 1,
        conditioning_attention: cfg.cond_layers,
        post_fusion_projections: 3,
        feed_forward: 3,
    }
}

/// Lowercased alphanumeric tokens hashed (FNV-1a) into `buckets` ids.
pub fn text_tokens(command: &str, buckets: usize) -> Vec<usize> {
    command
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in t.to_lowercase().bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            (h % buckets as u64) as usize
        })
        .collect()
}

/// Sinusoidal timestep features of width `d`.
pub fn timestep_features(t: usize, steps: usize, d: usize) -> Tensor {
    let half = d / 2;
    let pos = t as f64 * 1000.0 / steps as f64;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    Tensor::matrix(1, d, out)
}

#[derive(Clone, Copy, Debug)]
struct AttnIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    heads: usize,
}

impl AttnIds {
    fn bind(&self, b: &Bound) -> AttnParams {
        AttnParams {
            w_q: b.var(self.q),
            w_k: b.var(self.k),
            w_v: b.var(self.v),
            w_o: b.var(self.o),
            heads: self.heads,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct AdaIds {
    w: ParamId,
    b: ParamId,
}

impl AdaIds {
    fn bind(&self, b: &Bound) -> AdaLnParams {
        AdaLnParams {
            w: b.var(self.w),
            b: b.var(self.b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct CondLayerIds {
    ada: [AdaIds; 3],
    attn: AttnIds,
    proj: [ParamId; 3],
}

#[derive(Clone, Debug)]
struct BlockIds {
    fuse_ada: [AdaIds; 3],
    fuse_in: [ParamId; 3],
    fuse_attn: AttnIds,
    fuse_post: [ParamId; 3],
    cond: Vec<CondLayerIds>,
    ffn_ada: [AdaIds; 3],
    ffn_in: [Linear; 3],
    ffn_out: [Linear; 3],
}

#[derive(Clone, Debug)]
struct Ids {
    stream_in: [Linear; 3],
    stream_pos: [ParamId; 3],
    sparse: Option<AttnIds>,
    hist_in: Linear,
    hist_pos: ParamId,
    text_table: ParamId,
    time_1: Linear,
    time_2: Linear,
    blocks: Vec<BlockIds>,
    final_mod: [Linear; 3],
    head: [Linear; 3],
}

pub const STREAM_NAMES: [&str; 3] = ["proprio", "extero", "action"];

/// Network definition plus its parameters.
#[derive(Clone, Debug)]
pub struct InterDit {
    pub config: InterDitConfig,
    pub params: ParamStore,
    ids: Ids,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::new(shape, data).expect("shape matches data"))
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    /// Weight with std `gain/√fan_in` and zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        Linear {
            w: self.matrix(format!("{name}.w"), fan_in, fan_out, gain),
            b: self.zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    fn matrix(&mut self, name: String, fan_in: usize, fan_out: usize, gain: f64) -> ParamId {
        self.normal(name, &[fan_in, fan_out], gain / (fan_in as f64).sqrt())
    }

    fn attn(&mut self, name: &str, d_q: usize, d_kv: usize, d: usize, heads: usize) -> AttnIds {
        AttnIds {
            q: self.matrix(format!("{name}.wq"), d_q, d, 1.0),
            k: self.matrix(format!("{name}.wk"), d_kv, d, 1.0),
            v: self.matrix(format!("{name}.wv"), d_kv, d, 1.0),
            o: self.matrix(format!("{name}.wo"), d, d, 1.0),
            heads,
        }
    }

    fn ada(&mut self, name: &str, d: usize) -> AdaIds {
        AdaIds {
            w: self.zeros(format!("{name}.w"), &[d, 3 * d]),
            b: self.zeros(format!("{name}.b"), &[3 * d]),
        }
    }
}

/// Per-agent network inputs: the normalized noisy window `[m×F]` and the
/// normalized history tokens `[16×(P+E)]`.
#[derive(Clone, Copy, Debug)]
pub struct AgentInput<'a> {
    pub window: &'a Tensor,
    pub history: &'a Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Gumbel noise in the sparse interaction-graph attention.
    pub sparse_noise: bool,
    /// Skip the cross-attention layers that read the other agent.
    pub skip_other_context: bool,
}

/// Hidden features `[h_p, h_e, h_a]`, each `[m×d]`.
pub type Streams = [Var; 3];

impl InterDit {
    pub fn new(config: InterDitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = &config;
        let d = c.d_model;
        let lay = c.layout();
        let dims = [lay.proprio, lay.extero, lay.action];
        let stream_in = core::array::from_fn(|s| init.linear(&format!("in.{}", STREAM_NAMES[s]), dims[s], d, 1.0));
        let stream_pos = core::array::from_fn(|s| init.normal(format!("pos.{}", STREAM_NAMES[s]), &[c.horizon, d], 0.02));
        let sparse = (c.extero == ExteroKind::Sig).then(|| init.attn("ig", d, 3, d, c.ig_heads));
        let hist_in = init.linear("hist.in", lay.state(), d, 1.0);
        let hist_pos = init.normal("hist.pos".into(), &[HISTORY_TOKENS, d], 0.02);
        let text_table = init.normal("text.table".into(), &[c.text_buckets, d], 0.5);
        let time_1 = init.linear("time.l1", d, d, 1.0);
        let time_2 = init.linear("time.l2", d, d, 1.0);
        let mut blocks = Vec::with_capacity(c.blocks);
        for bi in 0..c.blocks {
            let p = format!("block{bi}");
            let s3 = |init: &mut Init, what: &str| -> [AdaIds; 3] {
                core::array::from_fn(|s| init.ada(&format!("{p}.{what}.{}", STREAM_NAMES[s]), d))
            };
            let fuse_ada = s3(&mut init, "fuse.ada");
            let fuse_in = core::array::from_fn(|s| init.matrix(format!("{p}.fuse.in.{}", STREAM_NAMES[s]), d, d, 1.0));
            let fuse_attn = init.attn(&format!("{p}.fuse.attn"), d, d, d, c.heads);
            let fuse_post = core::array::from_fn(|s| init.matrix(format!("{p}.fuse.post.{}", STREAM_NAMES[s]), d, d, 1.0));
            let cond = (0..c.cond_layers)
                .map(|l| CondLayerIds {
                    ada: s3(&mut init, &format!("cond{l}.ada")),
                    attn: init.attn(&format!("{p}.cond{l}.attn"), d, d, d, c.heads),
                    proj: core::array::from_fn(|s| init.matrix(format!("{p}.cond{l}.proj.{}", STREAM_NAMES[s]), d, d, 1.0)),
                })
                .collect();
            let ffn_ada = s3(&mut init, "ffn.ada");
            let hidden = d * c.ffn_mult;
            let ffn_in = core::array::from_fn(|s| init.linear(&format!("{p}.ffn.in.{}", STREAM_NAMES[s]), d, hidden, 1.0));
            let ffn_out = core::array::from_fn(|s| init.linear(&format!("{p}.ffn.out.{}", STREAM_NAMES[s]), hidden, d, 1.0));
            blocks.push(BlockIds {
                fuse_ada,
                fuse_in,
                fuse_attn,
                fuse_post,
                cond,
                ffn_ada,
                ffn_in,
                ffn_out,
            });
        }
        let final_mod = core::array::from_fn(|s| Linear {
            w: init.zeros(format!("final.mod.{}.w", STREAM_NAMES[s]), &[d, 2 * d]),
            b: init.zeros(format!("final.mod.{}.b", STREAM_NAMES[s]), &[2 * d]),
        });
        let head = core::array::from_fn(|s| init.linear(&format!("head.{}", STREAM_NAMES[s]), d, dims[s], 0.1));
        let ids = Ids {
            stream_in,
            stream_pos,
            sparse,
            hist_in,
            hist_pos,
            text_table,
            time_1,
            time_2,
            blocks,
            final_mod,
            head,
        };
        Ok(Self {
            config,
            params: store,
            ids,
        })
    }

    fn lin(g: &mut Graph, b: &Bound, l: &Linear, x: Var) -> Result<Var> {
        g.linear(x, b.var(l.w), b.var(l.b))
    }

    /// Mean of the hashed token embeddings; the zero row for an empty token
    /// list (the null condition).
    pub fn text_condition(&self, g: &mut Graph, b: &Bound, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Ok(g.constant(Tensor::zeros(&[1, self.config.d_model])));
        }
        let rows = g.gather_rows(b.var(self.ids.text_table), tokens)?;
        Ok(g.mean_rows(rows))
    }

    /// Text embedding of `command` outside any graph.
    pub fn text_embed(&self, command: &str) -> Tensor {
        let tokens = text_tokens(command, self.config.text_buckets);
        let d = self.config.d_model;
        let mut out = vec![0.0; d];
        if tokens.is_empty() {
            return Tensor::vector(out);
        }
        let table = self.params.get(self.ids.text_table);
        for t in &tokens {
            for (o, v) in out.iter_mut().zip(table.row(*t)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= tokens.len() as f64);
        Tensor::vector(out)
    }

    pub fn time_condition(&self, g: &mut Graph, b: &Bound, t: usize) -> Result<Var> {
        let feats = g.constant(timestep_features(t, self.config.diffusion_steps, self.config.d_model));
        let h = Self::lin(g, b, &self.ids.time_1, feats)?;
        let h = g.silu(h);
        Self::lin(g, b, &self.ids.time_2, h)
    }

    /// Per-stream input projections plus positional embeddings; in SIG mode
    /// the extero stream is refined by sparse edge attention over the
    /// window's interaction-graph edges.
    pub fn embed_streams(
        &self,
        g: &mut Graph,
        b: &Bound,
        window: &Tensor,
        opts: ForwardOptions,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Streams> {
        let c = &self.config;
        let lay = c.layout();
        if window.rows() != c.horizon || window.cols() != lay.total() {
            return Err(Error::Contract(format!(
                "window must be {}x{}, got {:?}",
                c.horizon,
                lay.total(),
                window.shape()
            )));
        }
        let offsets = [0, lay.proprio, lay.proprio + lay.extero];
        let widths = [lay.proprio, lay.extero, lay.action];
        let mut out = [Var::placeholder(); 3];
        for s in 0..3 {
            let x = g.constant(window.slice_cols(offsets[s], widths[s]));
            let h = Self::lin(g, b, &self.ids.stream_in[s], x)?;
            out[s] = g.add(h, b.var(self.ids.stream_pos[s]))?;
        }
        if let Some(ids) = &self.ids.sparse {
            let edges = window
                .slice_cols(offsets[1], widths[1])
                .reshape(&[c.horizon * c.joints * c.joints, 3])?;
            let edges = g.constant(edges);
            let cfg = SparseConfig {
                noise: opts.sparse_noise,
                ..c.sparse
            };
            let rng = if opts.sparse_noise { rng } else { None };
            let sa = attention::sparse_edge_attention(g, out[1], edges, &ids.bind(b), &cfg, c.joints, rng)?;
            out[1] = g.add(out[1], sa.out)?;
        }
        Ok(out)
    }

    pub fn embed_history(&self, g: &mut Graph, b: &Bound, history: &Tensor) -> Result<Var> {
        let lay = self.config.layout();
        if history.rows() != HISTORY_TOKENS || history.cols() != lay.state() {
            return Err(Error::Contract(format!(
                "history must be {}x{}, got {:?}",
                HISTORY_TOKENS,
                lay.state(),
                history.shape()
            )));
        }
        let x = g.constant(history.clone());
        let h = Self::lin(g, b, &self.ids.hist_in, x)?;
        g.add(h, b.var(self.ids.hist_pos))
    }

    fn modulations(&self, g: &mut Graph, b: &Bound, ada: &[AdaIds; 3], cond: Var) -> Result<[Modulation; 3]> {
        let m0 = attention::modulation(g, cond, &ada[0].bind(b))?;
        let m1 = attention::modulation(g, cond, &ada[1].bind(b))?;
        let m2 = attention::modulation(g, cond, &ada[2].bind(b))?;
        Ok([m0, m1, m2])
    }

    fn split(&self, g: &mut Graph, x: Var) -> Result<Streams> {
        let m = self.config.horizon;
        Ok([g.slice_rows(x, 0, m)?, g.slice_rows(x, m, m)?, g.slice_rows(x, 2 * m, m)?])
    }

    /// Inter-stream fusion: shared-space projections, joint self-attention
    /// over the `3m` concatenated tokens, per-stream post projections.
    pub fn fusion_stage(&self, g: &mut Graph, b: &Bound, block: usize, h: Streams, cond: Var) -> Result<Streams> {
        let blk = &self.ids.blocks[block];
        let mods = self.modulations(g, b, &blk.fuse_ada, cond)?;
        self.fusion_with(g, b, blk, h, &mods)
    }

    fn fusion_with(&self, g: &mut Graph, b: &Bound, blk: &BlockIds, h: Streams, mods: &[Modulation; 3]) -> Result<Streams> {
        let mut z = [Var::placeholder(); 3];
        for s in 0..3 {
            let y = attention::modulate(g, h[s], &mods[s])?;
            z[s] = g.matmul(y, b.var(blk.fuse_in[s]))?;
        }
        let cat = g.concat_rows(&z)?;
        let a = attention::multi_head_attention(g, cat, cat, &blk.fuse_attn.bind(b))?;
        let parts = self.split(g, a)?;
        let mut out = h;
        for s in 0..3 {
            let o = g.matmul(parts[s], b.var(blk.fuse_post[s]))?;
            out[s] = attention::gated_residual(g, h[s], o, &mods[s])?;
        }
        Ok(out)
    }

    /// Conditioning cross-attention: layer `l` reads the history tokens for
    /// even `l` and the other agent's concatenated features for odd `l`.
    pub fn conditioning_stage(
        &self,
        g: &mut Graph,
        b: &Bound,
        block: usize,
        h: Streams,
        history: Var,
        other: Streams,
        cond: Var,
        opts: ForwardOptions,
    ) -> Result<Streams> {
        let blk = &self.ids.blocks[block];
        let mods: Vec<[Modulation; 3]> = blk
            .cond
            .iter()
            .map(|l| self.modulations(g, b, &l.ada, cond))
            .collect::<Result<_>>()?;
        let other_cat = g.concat_rows(&other)?;
        self.conditioning_with(g, b, blk, h, history, other_cat, &mods, opts)
    }

    fn conditioning_with(
        &self,
        g: &mut Graph,
        b: &Bound,
        blk: &BlockIds,
        h: Streams,
        history: Var,
        other_cat: Var,
        mods: &[[Modulation; 3]],
        opts: ForwardOptions,
    ) -> Result<Streams> {
        let mut h = h;
        for (l, layer) in blk.cond.iter().enumerate() {
            let reads_other = l % 2 == 1;
            if reads_other && opts.skip_other_context {
                continue;
            }
            let kv = if reads_other { other_cat } else { history };
            let kv = g.normalize_rows(kv, LAYER_NORM_EPS);
            let mut y = [Var::placeholder(); 3];
            for s in 0..3 {
                y[s] = attention::modulate(g, h[s], &mods[l][s])?;
            }
            let q = g.concat_rows(&y)?;
            let a = attention::multi_head_attention(g, q, kv, &layer.attn.bind(b))?;
            let parts = self.split(g, a)?;
            for s in 0..3 {
                let o = g.matmul(parts[s], b.var(layer.proj[s]))?;
                h[s] = attention::gated_residual(g, h[s], o, &mods[l][s])?;
            }
        }
        Ok(h)
    }

    fn feed_forward(&self, g: &mut Graph, b: &Bound, blk: &BlockIds, h: Streams, mods: &[Modulation; 3]) -> Result<Streams> {
        let mut out = h;
        for s in 0..3 {
            let y = attention::modulate(g, h[s], &mods[s])?;
            let z = Self::lin(g, b, &blk.ffn_in[s], y)?;
            let z = g.silu(z);
            let z = Self::lin(g, b, &blk.ffn_out[s], z)?;
            out[s] = attention::gated_residual(g, h[s], z, &mods[s])?;
        }
        Ok(out)
    }

    fn output(&self, g: &mut Graph, b: &Bound, h: Streams, cond: Var) -> Result<Var> {
        let d = self.config.d_model;
        let c = g.silu(cond);
        let mut outs = [Var::placeholder(); 3];
        for s in 0..3 {
            let m = Self::lin(g, b, &self.ids.final_mod[s], c)?;
            let shift = g.slice_cols(m, 0, d)?;
            let scale = g.slice_cols(m, d, d)?;
            let md = Modulation { shift, scale, gate: shift };
            let y = attention::modulate(g, h[s], &md)?;
            outs[s] = Self::lin(g, b, &self.ids.head[s], y)?;
        }
        g.concat_cols(&outs)
    }

    /// `cond = text + time_mlp(sinusoid(t))`
    pub fn condition(&self, g: &mut Graph, b: &Bound, tokens: &[usize], t: usize) -> Result<Var> {
        let text = self.text_condition(g, b, tokens)?;
        let time = self.time_condition(g, b, t)?;
        g.add(text, time)
    }

    /// Predicts the clean windows `[m×F]` of both agents.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        inputs: [AgentInput<'_>; 2],
        t: usize,
        tokens: &[usize],
        opts: ForwardOptions,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<[Var; 2]> {
        if t > self.config.diffusion_steps {
            return Err(Error::Contract(format!(
                "timestep {t} outside 0..={}",
                self.config.diffusion_steps
            )));
        }
        let cond = self.condition(g, b, tokens, t)?;
        let mut h = [Var::placeholder(); 6];
        let mut hist = [Var::placeholder(); 2];
        for a in 0..2 {
            let r: Option<&mut dyn RngCore> = match rng {
                Some(ref mut r) => Some(&mut **r),
                None => None,
            };
            let s = self.embed_streams(g, b, inputs[a].window, opts, r)?;
            h[3 * a..3 * a + 3].copy_from_slice(&s);
            hist[a] = self.embed_history(g, b, inputs[a].history)?;
        }
        for blk in &self.ids.blocks {
            let fmods = self.modulations(g, b, &blk.fuse_ada, cond)?;
            let cmods: Vec<[Modulation; 3]> = blk
                .cond
                .iter()
                .map(|l| self.modulations(g, b, &l.ada, cond))
                .collect::<Result<_>>()?;
            let ffmods = self.modulations(g, b, &blk.ffn_ada, cond)?;
            let f1 = self.fusion_with(g, b, blk, [h[0], h[1], h[2]], &fmods)?;
            let f2 = self.fusion_with(g, b, blk, [h[3], h[4], h[5]], &fmods)?;
            let cat1 = g.concat_rows(&f1)?;
            let cat2 = g.concat_rows(&f2)?;
            let c1 = self.conditioning_with(g, b, blk, f1, hist[0], cat2, &cmods, opts)?;
            let c2 = self.conditioning_with(g, b, blk, f2, hist[1], cat1, &cmods, opts)?;
            let o1 = self.feed_forward(g, b, blk, c1, &ffmods)?;
            let o2 = self.feed_forward(g, b, blk, c2, &ffmods)?;
            h = [o1[0], o1[1], o1[2], o2[0], o2[1], o2[2]];
        }
        let y1 = self.output(g, b, [h[0], h[1], h[2]], cond)?;
        let y2 = self.output(g, b, [h[3], h[4], h[5]], cond)?;
        Ok([y1, y2])
    }

    /// Forward pass outside a caller-managed graph, with frozen parameters.
    pub fn predict(
        &self,
        inputs: [AgentInput<'_>; 2],
        t: usize,
        tokens: &[usize],
        opts: ForwardOptions,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<[Tensor; 2]> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let [y1, y2] = self.forward(&mut g, &b, inputs, t, tokens, opts, rng)?;
        Ok([g.value(y1).clone(), g.value(y2).clone()])
    }
}

/// Reusable inference context: parameters are bound once and the graph is
/// rewound after every prediction.
pub struct Predictor<'a> {
    pub model: &'a InterDit,
    graph: Graph,
    bound: Bound,
    base: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a InterDit) -> Self {
        let mut graph = Graph::new();
        let bound = model.params.bind_frozen(&mut graph);
        let base = graph.len();
        Self {
            model,
            graph,
            bound,
            base,
        }
    }

    pub fn predict(
        &mut self,
        inputs: [AgentInput<'_>; 2],
        t: usize,
        tokens: &[usize],
        opts: ForwardOptions,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<[Tensor; 2]> {
        self.graph.truncate(self.base);
        let res = self
            .model
            .forward(&mut self.graph, &self.bound, inputs, t, tokens, opts, rng)
            .map(|[a, b]| [self.graph.value(a).clone(), self.graph.value(b).clone()]);
        self.graph.truncate(self.base);
        res
    }
}
