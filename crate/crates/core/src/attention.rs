//! Attention primitives: multi-head attention, adaptive layer norm, and sparse
//! top-k attention over interaction-graph edges.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

#[allow(unused_imports)]
use num_traits::Float;
use rand::RngCore;
use rand_distr::{Distribution, Gumbel};

use crate::numerics::{Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::{Error, Result};

/// Projection weights of one attention layer. No biases.
#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub heads: usize,
}

fn head_dim(g: &Graph, q: Var, heads: usize, op: &'static str) -> Result<usize> {
    let d = g.value(q).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::dim(op, format!("model dim {d} not divisible by {heads} heads")));
    }
    Ok(d / heads)
}

/// Scaled dot-product attention per head, heads concatenated and projected.
pub fn multi_head_attention(g: &mut Graph, q_src: Var, kv_src: Var, p: &AttnParams) -> Result<Var> {
    let q = g.matmul(q_src, p.w_q)?;
    let k = g.matmul(kv_src, p.w_k)?;
    let v = g.matmul(kv_src, p.w_v)?;
    let dh = head_dim(g, q, p.heads, "multi_head_attention")?;
    if g.value(k).cols() != g.value(q).cols() || g.value(v).cols() != g.value(q).cols() {
        return Err(Error::dim("multi_head_attention", "query/key/value widths differ"));
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let logits = g.matmul_t(qh, kh)?;
        let logits = g.scale(logits, scale);
        let a = g.softmax(logits);
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, p.w_o)
}

/// Linear map from the condition embedding to `(shift, scale, gate)`.
#[derive(Clone, Copy, Debug)]
pub struct AdaLnParams {
    /// `[d_cond × 3d]`
    pub w: Var,
    /// `[3d]`
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Modulation {
    pub shift: Var,
    pub scale: Var,
    pub gate: Var,
}

pub fn modulation(g: &mut Graph, cond: Var, p: &AdaLnParams) -> Result<Modulation> {
    let c = g.silu(cond);
    let m = g.linear(c, p.w, p.b)?;
    let width = g.value(m).cols();
    if !width.is_multiple_of(3) {
        return Err(Error::dim("modulation", format!("width {width} is not 3·d")));
    }
    let d = width / 3;
    Ok(Modulation {
        shift: g.slice_cols(m, 0, d)?,
        scale: g.slice_cols(m, d, d)?,
        gate: g.slice_cols(m, 2 * d, d)?,
    })
}

/// `LN(x)·(1 + scale) + shift`
pub fn modulate(g: &mut Graph, x: Var, m: &Modulation) -> Result<Var> {
    let n = g.normalize_rows(x, LAYER_NORM_EPS);
    let s = g.add_scalar(m.scale, 1.0);
    let y = g.mul_row(n, s)?;
    g.add_row(y, m.shift)
}

/// `x + gate ⊙ s`
pub fn gated_residual(g: &mut Graph, x: Var, s: Var, m: &Modulation) -> Result<Var> {
    let gated = g.mul_row(s, m.gate)?;
    g.add(x, gated)
}

/// `y = x + α ⊙ sublayer(LN(x)·(1+γ) + β)` with `(β, γ, α)` from `cond`.
pub fn adaln<F>(g: &mut Graph, x: Var, cond: Var, p: &AdaLnParams, sublayer: F) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let m = modulation(g, cond, p)?;
    let y = modulate(g, x, &m)?;
    let s = sublayer(g, y)?;
    gated_residual(g, x, s, &m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparseMode {
    /// Each edge is a scoring unit.
    Edge,
    /// All edges incident to one joint within a frame form a unit.
    Joint,
}

/// Which endpoint defines a joint-mode group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointGrouping {
    /// Group by the other agent's joint index (outer edge index).
    Other,
    /// Group by the ego joint index (inner edge index).
    Ego,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseConfig {
    pub mode: SparseMode,
    /// Fraction ρ ∈ (0, 1] of units kept per head.
    pub ratio: f64,
    pub temperature: f64,
    /// Adds Gumbel(0, 1) noise to the logits.
    pub noise: bool,
    pub grouping: JointGrouping,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            mode: SparseMode::Edge,
            ratio: 0.5,
            temperature: 1.0,
            noise: false,
            grouping: JointGrouping::Other,
        }
    }
}

impl SparseConfig {
    pub fn dense() -> Self {
        Self {
            ratio: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("sparsity ratio must lie in (0, 1], got {}", self.ratio)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }

    /// `k = max(1, round(ρ·units))`.
    pub fn keep_count(&self, units: usize) -> usize {
        ((self.ratio * units as f64).round() as usize).clamp(1, units.max(1))
    }
}

/// Splits `total` edges into `heads` contiguous equal chunks after padding
/// the count up to a multiple of `heads`. Returns the padded count and the
/// per-head ranges.
pub fn partition_edges(total: usize, heads: usize) -> Result<(usize, Vec<Range<usize>>)> {
    if heads == 0 {
        return Err(Error::Config("edge partition needs at least one head".into()));
    }
    let per = total.div_ceil(heads);
    let padded = per * heads;
    Ok((padded, (0..heads).map(|h| h * per..(h + 1) * per).collect()))
}

/// Indices of the `k` largest entries of `row`, ties toward the lower index.
fn topk_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    // Stable sort keeps ascending index order among equal values.
    idx.sort_by(|&i, &j| row[j].total_cmp(&row[i]));
    idx.truncate(k);
    idx
}

/// Binary mask with exactly `k` ones per row at the row's largest entries.
pub fn topk_mask(a: &Tensor, k: usize) -> Result<Tensor> {
    let cols = a.cols();
    if k == 0 || k > cols {
        return Err(Error::Config(format!("top-k needs 1 <= k <= {cols}, got {k}")));
    }
    let mut m = Tensor::zeros(&[a.rows(), cols]);
    for r in 0..a.rows() {
        for c in topk_indices(a.row(r), k) {
            m.row_mut(r)[c] = 1.0;
        }
    }
    Ok(m)
}

/// Mask keeping the `k` groups with the largest summed scores per row.
/// `groups[c]` is the group id of column `c`; ids must be dense from 0 and
/// numbered in order of first appearance.
pub fn group_topk_mask(a: &Tensor, groups: &[usize], k: usize) -> Result<Tensor> {
    let cols = a.cols();
    if groups.len() != cols {
        return Err(Error::dim("group_topk_mask", format!("{} group ids for {cols} columns", groups.len())));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    if k == 0 || k > n_groups {
        return Err(Error::Config(format!("top-k needs 1 <= k <= {n_groups} groups, got {k}")));
    }
    let mut m = Tensor::zeros(&[a.rows(), cols]);
    let mut score = vec![0.0; n_groups];
    for r in 0..a.rows() {
        score.iter_mut().for_each(|s| *s = 0.0);
        for (c, v) in a.row(r).iter().enumerate() {
            score[groups[c]] += v;
        }
        let keep = topk_indices(&score, k);
        let mut kept = vec![false; n_groups];
        for g in keep {
            kept[g] = true;
        }
        for (c, out) in m.row_mut(r).iter_mut().enumerate() {
            if kept[groups[c]] {
                *out = 1.0;
            }
        }
    }
    Ok(m)
}

/// Group ids for the edges in `range` of a padded edge list whose first
/// `real` entries are `(frame, other joint i, ego joint j)` in row-major
/// order. Padding edges each form their own group.
pub fn edge_groups(range: Range<usize>, real: usize, joints: usize, grouping: JointGrouping) -> Vec<usize> {
    let jj = joints * joints;
    let mut keys: Vec<(bool, usize, usize)> = Vec::new();
    range
        .map(|e| {
            let key = if e >= real {
                (true, e, 0)
            } else {
                let (frame, r) = (e / jj, e % jj);
                let joint = match grouping {
                    JointGrouping::Other => r / joints,
                    JointGrouping::Ego => r % joints,
                };
                (false, frame, joint)
            };
            match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    keys.len() - 1
                }
            }
        })
        .collect()
}

/// `softmax((logits + G)/τ)` row-wise with `G` Gumbel(0, 1) noise when enabled.
pub fn gumbel_softmax(
    g: &mut Graph,
    logits: Var,
    cfg: &SparseConfig,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let mut x = logits;
    if cfg.noise {
        let rng = rng.ok_or_else(|| Error::Contract("Gumbel noise requested without a noise source".into()))?;
        let shape = g.value(logits).shape().to_vec();
        let dist = Gumbel::new(0.0, 1.0).expect("unit Gumbel parameters are valid");
        let n: usize = shape.iter().product();
        let noise: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        x = g.add_const(x, &Tensor::new(&shape, noise)?)?;
    }
    if cfg.temperature != 1.0 {
        x = g.scale(x, 1.0 / cfg.temperature);
    }
    Ok(g.softmax(x))
}

/// Attention map between per-head queries `q_h` and edge keys `k_h`, with
/// logits scaled by `1/√d_f`.
pub fn gumbel_attention_map(
    g: &mut Graph,
    q_h: Var,
    k_h: Var,
    d_f: usize,
    cfg: &SparseConfig,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let logits = g.matmul_t(q_h, k_h)?;
    let logits = g.scale(logits, 1.0 / (d_f as f64).sqrt());
    gumbel_softmax(g, logits, cfg, rng)
}

pub struct SparseAttention {
    pub out: Var,
    /// Per-head attention maps `A`.
    pub maps: Vec<Var>,
    /// Per-head binary masks `M` (constants in the graph).
    pub masks: Vec<Tensor>,
}

/// Sparse attention of feature tokens `f [l_f×d_f]` over interaction-graph
/// edges `[E×3]`. Edges are zero-padded to a multiple of the head count and
/// split contiguously across heads; each head keeps its top-k units and
/// computes `(M ∘ A)·V_h`. Head outputs are concatenated and projected.
pub fn sparse_edge_attention(
    g: &mut Graph,
    f: Var,
    edges: Var,
    p: &AttnParams,
    cfg: &SparseConfig,
    joints: usize,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<SparseAttention> {
    cfg.validate()?;
    let real = g.value(edges).rows();
    if g.value(edges).cols() != 3 {
        return Err(Error::dim("sparse_edge_attention", "edges must have 3 columns"));
    }
    if cfg.mode == SparseMode::Joint && (joints == 0 || !real.is_multiple_of(joints * joints)) {
        return Err(Error::dim(
            "sparse_edge_attention",
            format!("{real} edges is not a whole number of {joints}x{joints} graphs"),
        ));
    }
    let (padded, ranges) = partition_edges(real, p.heads)?;
    let edges = if padded > real {
        let pad = g.constant(Tensor::zeros(&[padded - real, 3]));
        g.concat_rows(&[edges, pad])?
    } else {
        edges
    };
    let q = g.matmul(f, p.w_q)?;
    let d_f = g.value(q).cols();
    let dh = head_dim(g, q, p.heads, "sparse_edge_attention")?;
    let k = g.matmul(edges, p.w_k)?;
    let v = g.matmul(edges, p.w_v)?;

    let mut outs = Vec::with_capacity(p.heads);
    let mut maps = Vec::with_capacity(p.heads);
    let mut masks = Vec::with_capacity(p.heads);
    for (h, range) in ranges.into_iter().enumerate() {
        let len = range.len();
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            let kr = g.slice_rows(k, range.start, len)?;
            let vr = g.slice_rows(v, range.start, len)?;
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(kr, h * dh, dh)?,
                g.slice_cols(vr, h * dh, dh)?,
            )
        };
        let noise: Option<&mut dyn RngCore> = match rng {
            Some(ref mut r) => Some(&mut **r),
            None => None,
        };
        let a = gumbel_attention_map(g, qh, kh, d_f, cfg, noise)?;
        let mask = match cfg.mode {
            SparseMode::Edge => topk_mask(g.value(a), cfg.keep_count(len))?,
            SparseMode::Joint => {
                let groups = edge_groups(range, real, joints, cfg.grouping);
                let n_groups = groups.iter().max().map_or(0, |x| x + 1);
                group_topk_mask(g.value(a), &groups, cfg.keep_count(n_groups))?
            }
        };
        let ma = g.mul_const(a, mask.clone())?;
        outs.push(g.matmul(ma, vh)?);
        maps.push(a);
        masks.push(mask);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let out = g.matmul(cat, p.w_o)?;
    Ok(SparseAttention { out, maps, masks })
}
