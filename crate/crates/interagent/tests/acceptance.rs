#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use interagent::config::Config;
use interagent::formats::TrajectoryFile;
use interagent::pipeline;
use interagent_core::attention::{
    adaln, gumbel_attention_map, group_topk_mask, multi_head_attention, sparse_edge_attention, topk_mask, AdaLnParams,
    AttnParams, SparseConfig, SparseMode,
};
use interagent_core::diffusion::{
    cfg_predict, make_schedule, reactive_sample, training_loss, Denoiser, DiffusionNet, LossOptions, NoiseDraw,
    NoiseSchedule, SampleSpec, SamplerKind, ScheduleKind, TrainingSample,
};
use interagent_core::evalphys::{evaluate, floating, jerk, skating};
use interagent_core::interdit::{AgentInput, ForwardOptions, InterDit, InterDitConfig, Streams, HISTORY_TOKENS};
use interagent_core::linalg::{axis_angle, Mat3, Vec3};
use interagent_core::numerics::{Graph, Tensor, Var};
use interagent_core::optim::{Bound, ParamStore};
use interagent_core::representation::{
    decode_rot6d, encode_proprio, encode_rot6d, fig_dim, proprio_dim, world_edges, ExteroKind,
};
use interagent_core::simworld::{AgentState, BodySpec, SimState, SimWorld};
use interagent_core::tracking::{
    collect_dataset, ig_reward, next_reference_index, tracking_policy, CollectConfig, PoseSample, RewardWeights,
};
use interagent_core::trajectory::{AgentTrack, WorldFrame};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- gradients

/// Largest relative error between reverse-mode gradients and central
/// differences over all inputs of a scalar graph function.
fn fd_rel_err<F>(build: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    const EPS: f64 = 1e-5;
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), false)).collect();
        let out = build(&mut g, &vs);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = build(&mut g, &vs);
    let grads = g.backward(out).expect("backward");
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let ad = grads.wrt(vs[i]);
        let mut xs = inputs.to_vec();
        let mut fd = vec![0.0; x.len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let orig = x.data()[k];
            xs[i].data_mut()[k] = orig + EPS;
            let plus = eval(&xs);
            xs[i].data_mut()[k] = orig - EPS;
            let minus = eval(&xs);
            xs[i].data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * EPS);
        }
        let diff: Vec<f64> = ad.data().iter().zip(&fd).map(|(a, n)| a - n).collect();
        let denom = norm(ad.data()).max(norm(&fd)).max(1e-12);
        worst = worst.max(norm(&diff) / denom);
    }
    worst
}

/// Weighted sum `Σ y ∘ w`, a generic scalar readout.
fn readout(g: &mut Graph, y: Var, w: &Tensor) -> Var {
    let z = g.mul_const(y, w.clone()).expect("readout shape");
    g.sum(z)
}

fn small_model_config(extero: ExteroKind) -> InterDitConfig {
    InterDitConfig {
        joints: 3,
        extero,
        action_dim: 4,
        d_model: 8,
        blocks: 2,
        heads: 2,
        ig_heads: 2,
        cond_layers: 2,
        ffn_mult: 2,
        horizon: 4,
        history_len: 364,
        diffusion_steps: 10,
        text_buckets: 16,
        sparse: SparseConfig::default(),
    }
}

/// Every parameter shifted by uniform noise so zero-initialized gates open.
fn perturbed(model: &InterDit, seed: u64, s: f64) -> InterDit {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        for v in m.params.get_mut(id).data_mut() {
            *v += rng.random_range(-s..s);
        }
    }
    m
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        let w = rand_t(&mut rng, 3, 5, 1.0);
        let ins = [rand_t(&mut rng, 3, 4, 1.0), rand_t(&mut rng, 4, 5, 1.0), rand_t(&mut rng, 1, 5, 1.0).reshape(&[5]).unwrap()];
        record("linear", fd_rel_err(|g, v| { let y = g.linear(v[0], v[1], v[2]).unwrap(); readout(g, y, &w) }, &ins));

        let w = rand_t(&mut rng, 3, 6, 1.0);
        let ins = [rand_t(&mut rng, 3, 6, 2.0)];
        record("softmax", fd_rel_err(|g, v| { let y = g.softmax(v[0]); readout(g, y, &w) }, &ins));

        let w = rand_t(&mut rng, 4, 6, 1.0);
        let ins = [
            rand_t(&mut rng, 4, 6, 2.0),
            Tensor::vector((0..6).map(|_| rng.random_range(0.5..1.5)).collect()),
            Tensor::vector((0..6).map(|_| rng.random_range(-0.5..0.5)).collect()),
        ];
        record("layer_norm", fd_rel_err(|g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(); readout(g, y, &w) }, &ins));

        let w = rand_t(&mut rng, 3, 4, 1.0);
        let ins = [
            rand_t(&mut rng, 3, 4, 1.0),
            rand_t(&mut rng, 5, 6, 1.0),
            rand_t(&mut rng, 4, 4, 0.7),
            rand_t(&mut rng, 6, 4, 0.7),
            rand_t(&mut rng, 6, 4, 0.7),
            rand_t(&mut rng, 4, 4, 0.7),
        ];
        record(
            "attention",
            fd_rel_err(
                |g, v| {
                    let p = AttnParams { w_q: v[2], w_k: v[3], w_v: v[4], w_o: v[5], heads: 2 };
                    let y = multi_head_attention(g, v[0], v[1], &p).unwrap();
                    readout(g, y, &w)
                },
                &ins,
            ),
        );

        let w = rand_t(&mut rng, 3, 4, 1.0);
        let ins = [
            rand_t(&mut rng, 3, 4, 1.0),
            rand_t(&mut rng, 1, 5, 1.0),
            rand_t(&mut rng, 5, 12, 0.5),
            rand_t(&mut rng, 1, 12, 0.5).reshape(&[12]).unwrap(),
            rand_t(&mut rng, 4, 4, 0.5),
        ];
        record(
            "adaln",
            fd_rel_err(
                |g, v| {
                    let p = AdaLnParams { w: v[2], b: v[3] };
                    let inner = v[4];
                    let y = adaln(g, v[0], v[1], &p, |g, h| {
                        let z = g.matmul(h, inner)?;
                        Ok(g.silu(z))
                    })
                    .unwrap();
                    readout(g, y, &w)
                },
                &ins,
            ),
        );

        let w = rand_t(&mut rng, 4, 9, 1.0);
        let ins = [rand_t(&mut rng, 4, 6, 1.0), rand_t(&mut rng, 9, 6, 1.0)];
        let cfg = SparseConfig { temperature: 0.7, ..SparseConfig::dense() };
        record(
            "gumbel_map",
            fd_rel_err(|g, v| { let a = gumbel_attention_map(g, v[0], v[1], 6, &cfg, None).unwrap(); readout(g, a, &w) }, &ins),
        );

        let w = rand_t(&mut rng, 3, 4, 1.0);
        let mode = if seed % 2 == 0 { SparseMode::Edge } else { SparseMode::Joint };
        let cfg = SparseConfig { mode, ratio: 0.5, ..SparseConfig::default() };
        let ins = [
            rand_t(&mut rng, 3, 4, 1.0),
            rand_t(&mut rng, 18, 3, 1.0),
            rand_t(&mut rng, 4, 4, 1.0),
            rand_t(&mut rng, 3, 4, 1.0),
            rand_t(&mut rng, 3, 4, 1.0),
            rand_t(&mut rng, 4, 4, 0.7),
        ];
        record(
            "sparse_attention",
            fd_rel_err(
                |g, v| {
                    let p = AttnParams { w_q: v[2], w_k: v[3], w_v: v[4], w_o: v[5], heads: 2 };
                    let out = sparse_edge_attention(g, v[0], v[1], &p, &cfg, 3, None).unwrap();
                    readout(g, out.out, &w)
                },
                &ins,
            ),
        );

        record("training_loss", training_loss_fd(seed));
    }
    let bad: Vec<String> = worst.iter().filter(|(_, e)| !(*e <= 1e-4)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    let secs = start.elapsed().as_secs_f64();
    let summary = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    if !bad.is_empty() {
        return Err(format!("rel err above 1e-4: {}", bad.join(", ")));
    }
    check(secs < 300.0, format!("took {secs:.0} s"))?;
    Ok(format!("10 seeds each, worst rel err: {summary}; {secs:.1} s"))
}

fn training_loss_fd(seed: u64) -> f64 {
    let cfg = small_model_config(ExteroKind::Sig);
    let model = perturbed(&InterDit::new(cfg.clone(), seed).unwrap(), seed + 50, 0.3);
    let lay = cfg.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 90);
    let batch: Vec<TrainingSample> = (0..2)
        .map(|_| TrainingSample {
            x0: [rand_t(&mut rng, cfg.horizon, lay.total(), 1.0), rand_t(&mut rng, cfg.horizon, lay.total(), 1.0)],
            history: [
                rand_t(&mut rng, HISTORY_TOKENS, lay.state(), 1.0),
                rand_t(&mut rng, HISTORY_TOKENS, lay.state(), 1.0),
            ],
            tokens: vec![1, 5],
        })
        .collect();
    let refs: Vec<&TrainingSample> = batch.iter().collect();
    let sched = make_schedule(cfg.diffusion_steps, ScheduleKind::Cosine).unwrap();
    let opts = LossOptions { cfg_mask_rate: 0.1, gumbel: false };
    let chosen = ["time.l2.b", "head.proprio.b", "block1.ffn.out.action.b", "block0.fuse.ada.extero.b"];
    let ids: Vec<_> = chosen.iter().map(|n| model.params.find(n).expect("named parameter")).collect();
    let inputs: Vec<Tensor> = ids.iter().map(|id| model.params.get(*id).clone()).collect();
    fd_rel_err(
        |g, v| {
            let vars: Vec<Var> = model
                .params
                .ids()
                .map(|id| match ids.iter().position(|c| *c == id) {
                    Some(k) => v[k],
                    None => g.constant(model.params.get(id).clone()),
                })
                .collect();
            let bound = Bound::from_vars(vars);
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            training_loss(&model, g, &bound, &refs, &sched, &opts, &mut r).unwrap()
        },
        &inputs,
    )
}

// ---------------------------------------------------------------- sparse attention

struct EdgeInstance {
    f: Tensor,
    edges: Tensor,
    w: [Tensor; 4],
}

fn edge_instance(rng: &mut ChaCha8Rng, lf: usize, n_edges: usize, d: usize) -> EdgeInstance {
    EdgeInstance {
        f: rand_t(rng, lf, d, 1.0),
        edges: rand_t(rng, n_edges, 3, 1.0),
        w: [rand_t(rng, d, d, 1.0), rand_t(rng, 3, d, 1.0), rand_t(rng, 3, d, 1.0), rand_t(rng, d, d, 0.7)],
    }
}

fn run_sparse(inst: &EdgeInstance, heads: usize, cfg: &SparseConfig, joints: usize) -> (Tensor, Vec<Tensor>) {
    let mut g = Graph::new();
    let p = AttnParams {
        w_q: g.constant(inst.w[0].clone()),
        w_k: g.constant(inst.w[1].clone()),
        w_v: g.constant(inst.w[2].clone()),
        w_o: g.constant(inst.w[3].clone()),
        heads,
    };
    let f = g.constant(inst.f.clone());
    let e = g.constant(inst.edges.clone());
    let out = sparse_edge_attention(&mut g, f, e, &p, cfg, joints, None).unwrap();
    (g.value(out.out).clone(), out.masks)
}

fn dot_col(row: &[f64], w: &Tensor, col: usize) -> f64 {
    row.iter().enumerate().map(|(r, x)| x * w.at(r, col)).sum()
}

/// Edge attention written out with loops. Edges are zero-padded to a
/// multiple of `heads` and split contiguously; `keep = Some(k)` retains the
/// `k` largest weights per row (ties to the lower index) by pairwise counting.
fn edge_attention_oracle(inst: &EdgeInstance, heads: usize, keep: Option<usize>) -> Tensor {
    let d = inst.f.cols();
    let dh = d / heads;
    let real = inst.edges.rows();
    let per = real.div_ceil(heads);
    let edge = |e: usize| if e < real { inst.edges.row(e).to_vec() } else { vec![0.0; 3] };
    let mut cat = vec![vec![0.0; d]; inst.f.rows()];
    for (i, out) in cat.iter_mut().enumerate() {
        let q: Vec<f64> = (0..d).map(|c| dot_col(inst.f.row(i), &inst.w[0], c)).collect();
        for h in 0..heads {
            let logits: Vec<f64> = (0..per)
                .map(|o| {
                    let e = edge(h * per + o);
                    (0..dh).map(|c| q[h * dh + c] * dot_col(&e, &inst.w[1], h * dh + c)).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            let a: Vec<f64> = ex.iter().map(|v| v / z).collect();
            let kept = |c: usize| match keep {
                None => true,
                Some(k) => (0..per).filter(|&o| a[o] > a[c] || (a[o] == a[c] && o < c)).count() < k,
            };
            for c in 0..dh {
                out[h * dh + c] = (0..per)
                    .filter(|&o| kept(o))
                    .map(|o| a[o] * dot_col(&edge(h * per + o), &inst.w[2], h * dh + c))
                    .sum();
            }
        }
    }
    let rows: Vec<&[f64]> = cat.iter().map(|r| r.as_slice()).collect();
    let cat = Tensor::from_rows(&rows);
    let mut out = Tensor::zeros(&[cat.rows(), d]);
    for i in 0..cat.rows() {
        for c in 0..d {
            out.row_mut(i)[c] = dot_col(cat.row(i), &inst.w[3], c);
        }
    }
    out
}

fn sparse_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..100 {
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..24));
        let a = Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(0..6) as f64 * 0.1).collect());
        let k = rng.random_range(1..=c);
        let m = topk_mask(&a, k).map_err(|e| e.to_string())?;
        for i in 0..r {
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&x, &y| a.at(i, y).partial_cmp(&a.at(i, x)).unwrap().then(x.cmp(&y)));
            let mut want = vec![0.0; c];
            order[..k].iter().for_each(|&j| want[j] = 1.0);
            check(m.row(i) == want.as_slice(), format!("top-k mismatch on matrix {n} row {i}"))?;
        }
    }

    let mut dense_err = 0.0f64;
    for heads in [1, 2, 3, 4] {
        for _ in 0..5 {
            let inst = edge_instance(&mut rng, 4, 2 * 9, 12);
            let (out, masks) = run_sparse(&inst, heads, &SparseConfig::dense(), 3);
            check(masks.iter().all(|m| m.data().iter().all(|v| *v == 1.0)), "rho = 1 dropped an edge")?;
            dense_err = dense_err.max(out.max_abs_diff(&edge_attention_oracle(&inst, heads, None)));
        }
    }
    check(dense_err <= 1e-10, format!("rho = 1 vs dense: {dense_err:.2e}"))?;

    let mut masked_err = 0.0f64;
    for _ in 0..50 {
        let inst = edge_instance(&mut rng, 3, 2 * 9, 4);
        for ratio in [0.125, 0.25, 0.5, 0.75] {
            let cfg = SparseConfig { ratio, ..SparseConfig::default() };
            let (out, _) = run_sparse(&inst, 1, &cfg, 3);
            let k = cfg.keep_count(18);
            masked_err = masked_err.max(out.max_abs_diff(&edge_attention_oracle(&inst, 1, Some(k))));
        }
    }
    check(masked_err <= 1e-10, format!("masked softmax vs brute force: {masked_err:.2e}"))?;

    let mut pairs = 0;
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..5), rng.random_range(2..30));
        let a = Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(0..8) as f64).collect());
        for k in 1..c {
            let (m1, m2) = (topk_mask(&a, k).unwrap(), topk_mask(&a, k + 1).unwrap());
            check(m1.data().iter().zip(m2.data()).all(|(x, y)| x <= y), format!("top-{k} not inside top-{}", k + 1))?;
            pairs += 1;
        }
        let groups: Vec<usize> = (0..c).map(|i| i / 2).collect();
        let n_groups = groups[c - 1] + 1;
        for k in 1..n_groups {
            let (m1, m2) = (group_topk_mask(&a, &groups, k).unwrap(), group_topk_mask(&a, &groups, k + 1).unwrap());
            check(m1.data().iter().zip(m2.data()).all(|(x, y)| x <= y), "group top-k not monotone")?;
            pairs += 1;
        }
    }
    Ok(format!(
        "top-k = sort oracle on 100 matrices; rho=1 err {dense_err:.1e}; brute-force err {masked_err:.1e}; {pairs} nested k/k+1 pairs"
    ))
}

// ---------------------------------------------------------------- architecture

fn model_inputs(cfg: &InterDitConfig, seed: u64) -> ([Tensor; 2], [Tensor; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = cfg.layout();
    (
        [rand_t(&mut rng, cfg.horizon, lay.total(), 1.0), rand_t(&mut rng, cfg.horizon, lay.total(), 1.0)],
        [
            rand_t(&mut rng, HISTORY_TOKENS, lay.state(), 1.0),
            rand_t(&mut rng, HISTORY_TOKENS, lay.state(), 1.0),
        ],
    )
}

fn predict(model: &InterDit, w: [&Tensor; 2], h: [&Tensor; 2], t: usize, tokens: &[usize]) -> [Tensor; 2] {
    model
        .predict(
            [AgentInput { window: w[0], history: h[0] }, AgentInput { window: w[1], history: h[1] }],
            t,
            tokens,
            ForwardOptions::default(),
            None,
        )
        .unwrap()
}

/// Clean-window prediction of a freshly initialized network, computed from
/// the named input and head parameters only.
fn io_path_oracle(model: &InterDit, window: &Tensor) -> Tensor {
    let lay = model.config.layout();
    let widths = [lay.proprio, lay.extero, lay.action];
    let names = ["proprio", "extero", "action"];
    let p = |n: String| model.params.get(model.params.find(&n).expect("named parameter")).clone();
    let mut out = Tensor::zeros(&[window.rows(), lay.total()]);
    let mut off = 0;
    for s in 0..3 {
        let (w_in, b_in, pos) = (p(format!("in.{}.w", names[s])), p(format!("in.{}.b", names[s])), p(format!("pos.{}", names[s])));
        let (w_h, b_h) = (p(format!("head.{}.w", names[s])), p(format!("head.{}.b", names[s])));
        let d = w_in.cols();
        for r in 0..window.rows() {
            let x = &window.row(r)[off..off + widths[s]];
            let e: Vec<f64> = (0..d).map(|c| dot_col(x, &w_in, c) + b_in.data()[c] + pos.at(r, c)).collect();
            let mean = e.iter().sum::<f64>() / d as f64;
            let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let n: Vec<f64> = e.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect();
            for c in 0..widths[s] {
                out.row_mut(r)[off + c] = dot_col(&n, &w_h, c) + b_h.data()[c];
            }
        }
        off += widths[s];
    }
    out
}

fn architecture_suite() -> Outcome {
    let mut swap_err = 0.0f64;
    for extero in [ExteroKind::Sig, ExteroKind::Fig, ExteroKind::Rs] {
        for seed in 0..3 {
            let cfg = small_model_config(extero);
            let model = perturbed(&InterDit::new(cfg.clone(), seed).unwrap(), seed + 10, 0.3);
            let (w, h) = model_inputs(&cfg, seed + 20);
            let a = predict(&model, [&w[0], &w[1]], [&h[0], &h[1]], 7, &[2, 3]);
            let b = predict(&model, [&w[1], &w[0]], [&h[1], &h[0]], 7, &[2, 3]);
            swap_err = swap_err.max(a[0].max_abs_diff(&b[1])).max(a[1].max_abs_diff(&b[0]));
        }
    }
    check(swap_err <= 1e-9, format!("swap equivariance error {swap_err:.2e}"))?;

    let mut gate_err = 0.0f64;
    for extero in [ExteroKind::Fig, ExteroKind::Rs] {
        let cfg = InterDitConfig { blocks: 3, ..small_model_config(extero) };
        let model = InterDit::new(cfg.clone(), 31).unwrap();
        let (w, h) = model_inputs(&cfg, 32);
        let (w2, h2) = model_inputs(&cfg, 33);
        let base = predict(&model, [&w[0], &w[1]], [&h[0], &h[1]], 3, &[1]);
        let moved = predict(&model, [&w[0], &w2[1]], [&h2[0], &h2[1]], 9, &[4, 5]);
        for a in 0..2 {
            gate_err = gate_err.max(base[a].max_abs_diff(&io_path_oracle(&model, &w[a])));
        }
        check(base[0] == moved[0], "initial output depends on history, time, text or the other agent")?;

        let mut g = Graph::new();
        let b = model.params.bind_frozen(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let hs: Streams = std::array::from_fn(|_| g.constant(rand_t(&mut rng, cfg.horizon, cfg.d_model, 1.0)));
        let other: Streams = std::array::from_fn(|_| g.constant(rand_t(&mut rng, cfg.horizon, cfg.d_model, 1.0)));
        let hist = g.constant(rand_t(&mut rng, HISTORY_TOKENS, cfg.d_model, 1.0));
        let cond = model.condition(&mut g, &b, &[2], 4).unwrap();
        for blk in 0..cfg.blocks {
            let f = model.fusion_stage(&mut g, &b, blk, hs, cond).unwrap();
            let c = model.conditioning_stage(&mut g, &b, blk, hs, hist, other, cond, ForwardOptions::default()).unwrap();
            for s in 0..3 {
                check(g.value(f[s]) == g.value(hs[s]), format!("fusion stage of block {blk} is not the identity"))?;
                check(g.value(c[s]) == g.value(hs[s]), format!("conditioning stage of block {blk} is not the identity"))?;
            }
        }
    }
    check(gate_err <= 1e-12, format!("initial network differs from the input/output path by {gate_err:.2e}"))?;

    let mut runs = 0;
    for ratio in [0.75, 0.5, 0.25, 0.125] {
        for mode in [SparseMode::Edge, SparseMode::Joint] {
            let cfg = InterDitConfig {
                sparse: SparseConfig { ratio, mode, ..SparseConfig::default() },
                ..InterDitConfig::desk()
            };
            let model = perturbed(&InterDit::new(cfg.clone(), 40).unwrap(), 41, 0.05);
            let (w, h) = model_inputs(&cfg, 42);
            let mut g = Graph::new();
            let b = model.params.bind(&mut g);
            let mut rng = ChaCha8Rng::seed_from_u64(43);
            let ys = model
                .forward(
                    &mut g,
                    &b,
                    [AgentInput { window: &w[0], history: &h[0] }, AgentInput { window: &w[1], history: &h[1] }],
                    20,
                    &[3],
                    ForwardOptions { sparse_noise: true, ..Default::default() },
                    Some(&mut rng),
                )
                .map_err(|e| format!("ratio {ratio} {mode:?}: {e}"))?;
            let s0 = g.sum(ys[0]);
            let s1 = g.sum(ys[1]);
            let s = g.concat_cols(&[s0, s1]).unwrap();
            let loss = g.sum(s);
            let mut grads = g.backward(loss).map_err(|e| e.to_string())?;
            let gs = b.gradients(&mut grads);
            check(g.value(loss).is_finite() && gs.iter().all(Tensor::is_finite), format!("ratio {ratio} {mode:?}: non-finite"))?;
            runs += 1;
        }
    }
    Ok(format!("swap err {swap_err:.1e}; init = io path (err {gate_err:.1e}), all stages identity; {runs} sparse-ratio fwd/bwd runs"))
}

// ---------------------------------------------------------------- representation

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-6);
    axis_angle([axis[0] / n, axis[1] / n, axis[2] / n], rng.random_range(-3.1..3.1))
}

fn representation_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = |rng: &mut ChaCha8Rng, j: usize| -> Vec<Vec3> {
        (0..j).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0)]).collect()
    };
    for j in 2..=15 {
        check(fig_dim(j) == 3 * j * j, format!("FIG width {} at J={j}", fig_dim(j)))?;
        let (a, b) = (pts(&mut rng, j), pts(&mut rng, j));
        let ab = world_edges(&a, &b);
        let ba = world_edges(&b, &a);
        check(ab.len() * 3 == 3 * j * j, format!("edge count {} at J={j}", ab.len()))?;
        for i in 0..j {
            for k in 0..j {
                let (e, r) = (ab[i * j + k], ba[k * j + i]);
                check((0..3).all(|c| e[c] == -r[c]), format!("edge ({i},{k}) not antisymmetric at J={j}"))?;
                check((0..3).all(|c| e[c] == b[i][c] - a[k][c]), "edge is not other minus ego")?;
            }
        }
    }
    let desk = BodySpec::desk();
    let s = [AgentState::standing(&desk, -0.5, 0.0, 0.0), AgentState::standing(&desk, 0.5, 0.0, 3.0)];
    let fig = interagent_core::representation::build_fig(&s[0], &s[1], &desk).map_err(|e| e.to_string())?;
    check(fig.len() == 75, format!("desk FIG width {}", fig.len()))?;

    let mut rot_err = 0.0f64;
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let back = decode_rot6d(&encode_rot6d(&r)).map_err(|e| e.to_string())?;
        for i in 0..3 {
            for c in 0..3 {
                rot_err = rot_err.max((back[i][c] - r[i][c]).abs());
            }
        }
    }
    check(rot_err <= 1e-10, format!("rot6d roundtrip error {rot_err:.2e}"))?;

    let full = BodySpec::full_scale();
    let st = AgentState::standing(&full, 0.0, 0.0, 0.0);
    let p = encode_proprio(&st, &full).map_err(|e| e.to_string())?;
    check(full.joint_count() == 15 && full.dof_count() == 28, "full-scale body is not 15 joints / 28 actuators")?;
    check(p.len() == 223 && proprio_dim(15) == 223, format!("proprio width {} at J=15", p.len()))?;
    Ok(format!("FIG 3J^2 for J=2..15, antisymmetric; rot6d err {rot_err:.1e}; proprio 223 at J=15"))
}

// ---------------------------------------------------------------- diffusion

/// Fixed affine response to the condition, different for each agent.
struct Probe;

impl Denoiser for Probe {
    fn denoise(&mut self, x: [&Tensor; 2], t: usize, tokens: &[usize], h: [&Tensor; 2]) -> interagent_core::Result<[Tensor; 2]> {
        let c = tokens.iter().map(|k| (*k as f64).sin()).sum::<f64>();
        Ok([
            x[0].map(|v| 0.7 * v + 0.02 * t as f64 + 0.4 * c + h[0].data()[0]),
            x[1].map(|v| -0.3 * v - 0.6 * c + h[1].data()[0]),
        ])
    }
}

/// Returns the clean window stored for a recognized history.
struct Lookup {
    table: Vec<(Tensor, [Tensor; 2])>,
    empty: ParamStore,
}

impl DiffusionNet for Lookup {
    fn params(&self) -> &ParamStore {
        &self.empty
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.empty
    }
    fn forward_graph(
        &self,
        g: &mut Graph,
        _: &Bound,
        _: [&Tensor; 2],
        _: usize,
        _: &[usize],
        history: [&Tensor; 2],
        _: Option<&mut dyn RngCore>,
    ) -> interagent_core::Result<[Var; 2]> {
        let (_, x0) = self.table.iter().find(|(h, _)| h == history[0]).expect("known history");
        Ok([g.constant(x0[0].clone()), g.constant(x0[1].clone())])
    }
}

fn diffusion_suite() -> Outcome {
    let mut sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
    sched.alpha_bar[4] = 0.64;
    let x = interagent_core::diffusion::q_sample(&[1.0], 4, &[0.5], &sched);
    check(x == vec![1.1], format!("q_sample gave {x:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs = [rand_t(&mut rng, 3, 4, 1.0), rand_t(&mut rng, 3, 4, 1.0)];
    let hs = [rand_t(&mut rng, 2, 2, 1.0), rand_t(&mut rng, 2, 2, 1.0)];
    let (xr, hr) = ([&xs[0], &xs[1]], [&hs[0], &hs[1]]);
    let tokens = [3, 11];
    let cond = Probe.denoise(xr, 6, &tokens, hr).unwrap();
    let null = Probe.denoise(xr, 6, &[], hr).unwrap();
    let mut affine_err = 0.0f64;
    for _ in 0..50 {
        let s: f64 = rng.random_range(0.0..8.0);
        let out = cfg_predict(&mut Probe, xr, 6, &tokens, hr, s).unwrap();
        for a in 0..2 {
            for k in 0..out[a].len() {
                let want = null[a].data()[k] + s * (cond[a].data()[k] - null[a].data()[k]);
                affine_err = affine_err.max((out[a].data()[k] - want).abs());
            }
        }
    }
    check(affine_err <= 1e-10, format!("CFG affinity error {affine_err:.2e}"))?;
    check(cfg_predict(&mut Probe, xr, 6, &tokens, hr, 1.0).unwrap() == cond, "s = 1 differs from the conditional prediction")?;

    let sched = make_schedule(20, ScheduleKind::Cosine).unwrap();
    let batch: Vec<TrainingSample> = (0..6)
        .map(|i| TrainingSample {
            x0: [rand_t(&mut rng, 3, 5, 2.0), rand_t(&mut rng, 3, 5, 2.0)],
            history: [Tensor::full(&[1, 1], i as f64), Tensor::full(&[1, 1], 0.0)],
            tokens: vec![1],
        })
        .collect();
    let lookup = Lookup {
        table: batch.iter().map(|s| (s.history[0].clone(), s.x0.clone())).collect(),
        empty: ParamStore::new(),
    };
    let refs: Vec<&TrainingSample> = batch.iter().collect();
    let mut g = Graph::new();
    let b = lookup.empty.bind(&mut g);
    let l = training_loss(&lookup, &mut g, &b, &refs, &sched, &LossOptions::default(), &mut rng).unwrap();
    check(g.value(l).data()[0] == 0.0, format!("oracle loss {}", g.value(l).data()[0]))?;

    let mut masked = 0;
    let mut draw_rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10_000 {
        if NoiseDraw::draw(&mut draw_rng, &sched, 4, LossOptions::default().cfg_mask_rate).masked {
            masked += 1;
        }
    }
    let rate = masked as f64 / 10_000.0;
    check((0.08..=0.12).contains(&rate), format!("mask rate {rate}"))?;
    Ok(format!("q_sample = 1.1; CFG affine err {affine_err:.1e}; s=1 exact; oracle loss 0; mask rate {rate:.4}"))
}

// ---------------------------------------------------------------- pipeline

struct PipelineRun {
    cfg: Config,
    dir: tempfile::TempDir,
}

impl PipelineRun {
    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
}

fn pipeline_suite(run: &mut Option<PipelineRun>) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = Config::desk();
    let (data, summary) = pipeline::collect(&cfg, true).map_err(|e| format!("{e:#}"))?;
    check(summary.per_scenario.len() == 4, "expected four scenarios")?;
    for (s, n) in &summary.per_scenario {
        check(*n == 8, format!("scenario {s} kept {n} episodes"))?;
    }
    check(cfg.sigma == 0.01, "collection noise is not 0.01")?;
    let dataset = dir.path().join("data.iads");
    data.save(&dataset).map_err(|e| format!("{e:#}"))?;
    let data = TrajectoryFile::load(&dataset, &cfg.body_spec()).map_err(|e| format!("{e:#}"))?;

    let ckpt = dir.path().join("model.idtc");
    let mut log = Vec::new();
    let summary = pipeline::train(&cfg, &data, &ckpt, false, None, &mut log).map_err(|e| format!("{e:#}"))?;
    check(summary.losses.len() == 2000, format!("{} training steps", summary.losses.len()))?;
    let initial = summary.initial().unwrap();
    let last = summary.tail_mean(100).unwrap();
    let ratio = last / initial;

    let out = pipeline::rollout(&cfg, &ckpt, "two people shake hands", 120).map_err(|e| format!("{e:#}"))?;
    let ep = &out.episodes[0];
    check(ep.len() == 120, format!("rollout has {} frames", ep.len()))?;
    check(out.meta("guidance") == Some("3.5"), "rollout guidance is not 3.5")?;
    let finite = ep.agents.iter().all(|a| {
        a.proprio.iter().chain(&a.extero).chain(&a.action).all(|r| r.iter().all(|v| v.is_finite()))
            && a.world.iter().all(|w| w.raw.iter().all(|v| v.is_finite()))
    });
    check(finite, "rollout contains non-finite values")?;
    let secs = start.elapsed().as_secs_f64();
    *run = Some(PipelineRun { cfg, dir });
    check(ratio <= 0.2, format!("final loss {last:.4} is {:.1}% of initial {initial:.4}", 100.0 * ratio))?;
    check(secs <= 1800.0, format!("wall time {secs:.0} s"))?;
    Ok(format!(
        "4x8 episodes; loss {initial:.3} -> {last:.3} ({:.1}% of initial, mean of last 100 steps); 120 finite frames at s=3.5; {secs:.0} s",
        100.0 * ratio
    ))
}

fn reactive_suite(run: &Option<PipelineRun>) -> Outcome {
    let run = run.as_ref().ok_or("pipeline run unavailable")?;
    let body = run.cfg.body_spec();
    let data = TrajectoryFile::load(&run.path("data.iads"), &body).map_err(|e| format!("{e:#}"))?;
    let mut fixed = data.clone();
    fixed.episodes.truncate(1);
    fixed.save(&run.path("fixed.iads")).map_err(|e| format!("{e:#}"))?;
    let fixed = TrajectoryFile::load(&run.path("fixed.iads"), &body).map_err(|e| format!("{e:#}"))?;
    let out = pipeline::react(&run.cfg, &run.path("model.idtc"), &fixed, "two people shake hands", 120)
        .map_err(|e| format!("{e:#}"))?;
    out.save(&run.path("react.iads")).map_err(|e| format!("{e:#}"))?;
    let out = TrajectoryFile::load(&run.path("react.iads"), &body).map_err(|e| format!("{e:#}"))?;
    let (got, want) = (&out.episodes[0].agents[0], &fixed.episodes[0].agents[0]);
    check(got.len() == 120, format!("react produced {} frames", got.len()))?;
    for k in 0..got.len() {
        let bits = |v: &[f64]| v.iter().map(|x| (*x as f32).to_bits()).collect::<Vec<_>>();
        check(bits(&got.proprio[k]) == bits(&want.proprio[k]), format!("fixed proprioception differs at frame {k}"))?;
    }
    let replaced = (0..got.len()).filter(|&k| got.action[k] == want.action[k]).count();
    check(replaced == 0, format!("{replaced} frames carry the replayed action"))?;

    // the inpainting step itself touches proprioception columns only
    let sched = make_schedule(8, ScheduleKind::Cosine).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fixed_win = rand_t(&mut rng, 3, 2, 1.0);
    let h = Tensor::zeros(&[1, 1]);
    for sampler in [SamplerKind::Ancestral, SamplerKind::Ddim] {
        let spec = SampleSpec { rows: 3, cols: 5, guidance: 2.0, sampler };
        let mut r1 = ChaCha8Rng::seed_from_u64(13);
        let x = reactive_sample(&mut Probe, &sched, &spec, &fixed_win, &[4], [&h, &h], &mut r1).unwrap();
        for r in 0..3 {
            check(&x[0].row(r)[..2] == fixed_win.row(r), "inpainted columns differ from the replay")?;
        }
        let mut r2 = ChaCha8Rng::seed_from_u64(13);
        let free = replay_free_columns(&sched, &spec, &fixed_win, &h, &mut r2);
        for r in 0..3 {
            check(x[0].row(r)[2..] == free.row(r)[2..], "non-proprio columns were substituted")?;
        }
    }
    Ok("fixed proprio bitwise equal over 120 frames; actions are the model's own".into())
}

/// The same sampler written out with the replacement restricted to the
/// first `P` columns, for comparison of the untouched columns.
fn replay_free_columns(sched: &NoiseSchedule, spec: &SampleSpec, fixed: &Tensor, h: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let n = spec.rows * spec.cols;
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
    let mut x = [Tensor::matrix(spec.rows, spec.cols, gauss(rng)), Tensor::matrix(spec.rows, spec.cols, gauss(rng))];
    for t in (1..=sched.steps()).rev() {
        let mut x0 = cfg_predict(&mut Probe, [&x[0], &x[1]], t, &[4], [h, h], spec.guidance).unwrap();
        for r in 0..spec.rows {
            x0[0].row_mut(r)[..fixed.cols()].copy_from_slice(fixed.row(r));
        }
        if t == 1 {
            return x0[0].clone();
        }
        for a in 0..2 {
            let (ab, abp, beta) = (sched.alpha_bar[t], sched.alpha_bar[t - 1], sched.betas[t]);
            let z = match spec.sampler {
                SamplerKind::Ancestral => gauss(rng),
                SamplerKind::Ddim => vec![0.0; n],
            };
            let v: Vec<f64> = (0..n)
                .map(|k| {
                    let (x0k, xtk) = (x0[a].data()[k], x[a].data()[k]);
                    match spec.sampler {
                        SamplerKind::Ancestral => {
                            let c0 = beta * abp.sqrt() / (1.0 - ab);
                            let ct = (1.0 - abp) * (1.0 - beta).sqrt() / (1.0 - ab);
                            c0 * x0k + ct * xtk + (beta * (1.0 - abp) / (1.0 - ab)).sqrt() * z[k]
                        }
                        SamplerKind::Ddim => abp.sqrt() * x0k + (1.0 - abp).sqrt() * (xtk - ab.sqrt() * x0k) / (1.0 - ab).sqrt(),
                    }
                })
                .collect();
            x[a] = Tensor::matrix(spec.rows, spec.cols, v);
        }
    }
    unreachable!()
}

// ---------------------------------------------------------------- metrics

fn metrics_suite() -> Outcome {
    let body = BodySpec::desk();
    let mut world = SimWorld::new(
        body.clone(),
        SimState {
            agents: [AgentState::standing(&body, -0.6, 0.0, 0.0), AgentState::standing(&body, 0.6, 0.0, std::f64::consts::PI)],
            time: 0.0,
        },
    );
    let mut track = AgentTrack::default();
    for _ in 0..60 {
        track.world.push(WorldFrame::capture(&world.state.agents[0], &body));
        let cmds = [world.hold_command(0), world.hold_command(1)];
        world.advance([&cmds[0], &cmds[1]]).map_err(|e| e.to_string())?;
    }
    let m = evaluate(&track).map_err(|e| e.to_string())?;
    check(m.floating < 1.0, format!("grounded clip floats {} mm", m.floating))?;

    let frames: Vec<Vec<Vec3>> = (0..12)
        .map(|t| {
            let t = t as f64;
            vec![[0.25 * t, -0.5 * t, 1.0 + 0.125 * t], [2.0 - 0.75 * t, 0.5, 0.0625 * t]]
        })
        .collect();
    let j = jerk(&frames).map_err(|e| e.to_string())?;
    check(j == 0.0, format!("constant-velocity jerk {j}"))?;

    let slide: Vec<Vec<Vec3>> = (0..40).map(|t| vec![[0.001 * t as f64, 0.3, 0.0]]).collect();
    let contacts = vec![vec![true]; 40];
    let s = skating(&slide, &contacts).map_err(|e| e.to_string())?;
    check((s - 1.0).abs() <= 1e-9, format!("1 mm/frame slide gives skating {s}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, p) = (rng.random_range(4..30), rng.random_range(1..6));
        let clip: Vec<Vec<Vec3>> = (0..n)
            .map(|_| (0..p).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.05..0.5)]).collect())
            .collect();
        let flags: Vec<Vec<bool>> = clip.iter().map(|f| f.iter().map(|q| q[2] <= 0.005).collect()).collect();
        let mut jsum = 0.0;
        for t in 3..n {
            for k in 0..p {
                let d: Vec<f64> = (0..3).map(|c| clip[t][k][c] - 3.0 * clip[t - 1][k][c] + 3.0 * clip[t - 2][k][c] - clip[t - 3][k][c]).collect();
                jsum += norm(&d);
            }
        }
        let want_j = 1000.0 * jsum / ((n - 3) * p) as f64;
        let (mut ssum, mut cnt) = (0.0, 0);
        for t in 1..n {
            for k in 0..p {
                if flags[t][k] && flags[t - 1][k] {
                    ssum += ((clip[t][k][0] - clip[t - 1][k][0]).powi(2) + (clip[t][k][1] - clip[t - 1][k][1]).powi(2)).sqrt();
                    cnt += 1;
                }
            }
        }
        let want_s = if cnt == 0 { 0.0 } else { 1000.0 * ssum / cnt as f64 };
        let want_f = 1000.0 * clip.iter().map(|f| f.iter().map(|q| q[2]).fold(f64::INFINITY, f64::min).max(0.0)).sum::<f64>() / n as f64;
        worst = worst
            .max((jerk(&clip).unwrap() - want_j).abs())
            .max((skating(&clip, &flags).unwrap() - want_s).abs())
            .max((floating(&clip).unwrap() - want_f).abs());
    }
    check(worst <= 1e-12, format!("metric oracles differ by {worst:.2e}"))?;
    Ok(format!("grounded floating {:.3} mm; jerk 0; skating {s:.12}; oracle err {worst:.1e}", m.floating))
}

// ---------------------------------------------------------------- collection

/// Interaction-graph reward recomputed from its definition.
fn reward_oracle(sim: [&PoseSample; 2], rf: [&PoseSample; 2], w: &RewardWeights) -> f64 {
    let edges = |a: &[Vec3], b: &[Vec3]| -> Vec<Vec3> {
        b.iter().flat_map(|p| a.iter().map(move |q| [p[0] - q[0], p[1] - q[1], p[2] - q[2]])).collect()
    };
    let len = |v: &Vec3| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dist = |a: &Vec3, b: &Vec3| len(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
    let (pr, ps) = (edges(&rf[0].joints, &rf[1].joints), edges(&sim[0].joints, &sim[1].joints));
    let (vr, vs) = (edges(&rf[0].joint_vel, &rf[1].joint_vel), edges(&sim[0].joint_vel, &sim[1].joint_vel));
    let lmin = pr.iter().map(len).fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = pr.iter().map(|e| (lmin - len(e)).exp()).collect();
    let z: f64 = raw.iter().sum();
    let (mut dp, mut dv) = (0.0, 0.0);
    for k in 0..pr.len() {
        dp += raw[k] / z * dist(&pr[k], &ps[k]);
        dv += raw[k] / z * dist(&vr[k], &vs[k]);
    }
    let wrap = |a: f64| a.sin().atan2(a.cos());
    let root: f64 = (0..2)
        .map(|a| {
            dist(&rf[a].root_pos, &sim[a].root_pos)
                + dist(&rf[a].root_vel, &sim[a].root_vel)
                + wrap(rf[a].yaw - sim[a].yaw).abs()
                + (rf[a].yaw_rate - sim[a].yaw_rate).abs()
        })
        .sum();
    (-w.pos * dp - w.vel * dv).exp() * (-w.root * root).exp()
}

fn collection_suite() -> Outcome {
    let cfg = Config::desk();
    let body = cfg.body_spec();
    let motions = pipeline::references(&cfg).map_err(|e| format!("{e:#}"))?;
    let ccfg: CollectConfig = cfg.collect();
    check(ccfg.sigma == 0.01, "sigma is not 0.01")?;
    let out = collect_dataset(&body, &motions, &ccfg, 21).map_err(|e| e.to_string())?;
    let axes = body.axis_count();
    let mut deltas = Vec::new();
    let mut checked = 0usize;
    let mut reward_err = 0.0f64;
    for (m, c) in motions.iter().zip(&out) {
        check(c.kept.len() == ccfg.keep, format!("{} kept {} episodes", m.scenario.name(), c.kept.len()))?;
        for ep in &c.kept {
            for a in 0..2 {
                let track = &ep.trajectory.agents[a];
                for t in 0..track.len() {
                    let s = AgentState::from_flat(&track.world[t].raw, axes).map_err(|e| e.to_string())?;
                    let want = tracking_policy(&body, &s, &m.frames[a][next_reference_index(t, m.len())], &ccfg.gains);
                    let same = want.0.len() == track.action[t].len()
                        && want.0.iter().zip(&track.action[t]).all(|(x, y)| x.to_bits() == y.to_bits());
                    check(same, format!("stored action differs from re-evaluation at agent {a} frame {t}"))?;
                    checked += 1;
                    deltas.extend(ep.executed[a][t].iter().zip(&track.action[t]).map(|(x, y)| x - y));
                }
            }
            for t in (0..m.len()).step_by(7) {
                let sim: Vec<PoseSample> = (0..2)
                    .map(|a| PoseSample::from_sim(&AgentState::from_flat(&ep.trajectory.agents[a].world[t].raw, axes).unwrap(), &body))
                    .collect();
                let rf: Vec<PoseSample> = (0..2).map(|a| PoseSample::from_reference(m, a, t, &body)).collect();
                let got = ig_reward([&sim[0], &sim[1]], [&rf[0], &rf[1]], &ccfg.weights).map_err(|e| e.to_string())?;
                reward_err = reward_err.max((got.r - reward_oracle([&sim[0], &sim[1]], [&rf[0], &rf[1]], &ccfg.weights)).abs());
                reward_err = reward_err.max((got.r - got.r_ig * got.r_root).abs());
                let perfect = ig_reward([&rf[0], &rf[1]], [&rf[0], &rf[1]], &ccfg.weights).unwrap();
                check(perfect.r == 1.0, format!("perfect tracking reward {}", perfect.r))?;
            }
        }
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let std = (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    check((0.008..=0.012).contains(&std), format!("executed-vs-stored noise std {std}"))?;
    check(reward_err <= 1e-12, format!("reward differs from recomputation by {reward_err:.2e}"))?;
    Ok(format!("{checked} stored actions re-evaluated bitwise; noise std {std:.5}; perfect reward 1; reward err {reward_err:.1e}"))
}

// ---------------------------------------------------------------- determinism

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_interagent"))
        .current_dir(dir)
        .args(["--deterministic", "--seed", "5", "--set", "train_steps=6", "--set", "checkpoint_every=3", "--set", "warmup=2"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn determinism_suite() -> Outcome {
    let files = ["data.iads", "model.idtc", "model.idtc.state", "loss.tsv", "rollout.iads", "react.iads"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = dir.path();
        cli(p, &["collect", "--out", "data.iads"])?;
        cli(p, &["train", "--dataset", "data.iads", "--checkpoint", "model.idtc", "--log", "loss.tsv"])?;
        cli(p, &["rollout", "--checkpoint", "model.idtc", "--text", "walk in a circle", "--steps", "8", "--out", "rollout.iads"])?;
        cli(p, &["react", "--checkpoint", "model.idtc", "--fixed", "data.iads", "--text", "push", "--steps", "8", "--out", "react.iads"])?;
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(p.join(f))).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        runs.push(bytes);
    }
    for (k, f) in files.iter().enumerate() {
        check(runs[0][k] == runs[1][k], format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

fn main() -> ExitCode {
    let mut pipeline_run = None;
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let line = match &outcome {
            Ok(msg) => format!("PASS {name}: {msg}"),
            Err(msg) => format!("FAIL {name}: {msg}"),
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        results.push((name, outcome));
    };
    run("gradient suite", &mut gradient_suite);
    run("sparse-attention oracle suite", &mut sparse_suite);
    run("architecture invariants", &mut architecture_suite);
    run("representation suite", &mut representation_suite);
    run("diffusion suite", &mut diffusion_suite);
    run("pipeline run", &mut || pipeline_suite(&mut pipeline_run));
    run("reactive control", &mut || reactive_suite(&pipeline_run));
    run("physical metrics", &mut metrics_suite);
    run("data-collection contract", &mut collection_suite);
    run("determinism", &mut determinism_suite);
    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
