//! Procedural two-agent reference motions, a scripted PD tracking expert,
//! the interaction-graph tracking reward, and noisy-state / clean-action
//! data collection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::{self, Vec3};
use crate::representation::{world_edges, ExteroKind};
use crate::simworld::{
    kinematics, site_positions, ActuatorCmd, AgentState, BodySpec, SimState, SimWorld, DEFAULT_DT, ROOT_DRIVE_DOFS,
};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Approach,
    Handshake,
    Circle,
    Push,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Approach, Scenario::Handshake, Scenario::Circle, Scenario::Push];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Approach => "approach",
            Scenario::Handshake => "handshake",
            Scenario::Circle => "circle",
            Scenario::Push => "push",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }

    /// Text commands a motion of this scenario may be labelled with.
    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            Scenario::Approach => &[
                "two people walk toward each other",
                "the two approach each other and stop",
            ],
            Scenario::Handshake => &[
                "two people walk up and shake hands",
                "they meet and shake right hands",
            ],
            Scenario::Circle => &[
                "two people circle around each other",
                "the two walk in a circle facing each other",
            ],
            Scenario::Push => &[
                "one person pushes the other backward",
                "the first person shoves the second away",
            ],
        }
    }
}

/// Two-agent reference poses sampled at the simulator rate. Velocities are
/// central differences of the poses.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMotion {
    pub scenario: Scenario,
    pub command: String,
    pub frames: [Vec<AgentState>; 2],
    pub dt: f64,
}

impl ReferenceMotion {
    pub fn len(&self) -> usize {
        self.frames[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames[0].is_empty()
    }

    pub fn pair(&self, t: usize) -> [AgentState; 2] {
        [self.frames[0][t].clone(), self.frames[1][t].clone()]
    }
}

pub const MIN_REFERENCE_FRAMES: usize = 30;

/// `3u² − 2u³` on `[0, 1]`, clamped outside; C¹ with zero end slopes.
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn ramp(t: f64, start: f64, end: f64) -> f64 {
    smoothstep((t - start) / (end - start))
}

/// Root placement and joint angles of one agent at one instant.
#[derive(Clone, Debug)]
struct Pose {
    x: f64,
    y: f64,
    yaw: f64,
    q: Vec<f64>,
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a + w * (b - a)).collect()
}

/// Index of the first axis of `joint` in the flat `q` vector.
fn axis_offset(body: &BodySpec, joint: usize) -> usize {
    body.joints[..joint].iter().map(|j| j.axes.len()).sum()
}

fn joint_index(body: &BodySpec, name: &str) -> Result<usize> {
    body.joints
        .iter()
        .position(|j| j.name == name)
        .ok_or_else(|| Error::Config(format!("body has no joint '{name}'")))
}

fn site_index(body: &BodySpec, name: &str) -> Result<usize> {
    body.sites
        .iter()
        .position(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("body has no site '{name}'")))
}

/// Damped Gauss-Newton on the axes of `joints` so that `site` reaches
/// `target`, respecting joint limits. Returns the full joint vector.
pub fn solve_reach(
    body: &BodySpec,
    agent: &AgentState,
    site: usize,
    joints: &[usize],
    target: Vec3,
) -> Result<Vec<f64>> {
    let dofs: Vec<usize> = joints
        .iter()
        .flat_map(|&j| {
            let o = axis_offset(body, j);
            o..o + body.joints[j].axes.len()
        })
        .collect();
    let (lo, hi) = (body.lower_limits(), body.upper_limits());
    let mut state = agent.clone();
    let reach = |s: &AgentState| site_positions(&kinematics(s, body), body)[site];
    for _ in 0..200 {
        let err = linalg::sub(target, reach(&state));
        if linalg::norm(err) < 1e-6 {
            break;
        }
        let h = 1e-6;
        let cols: Vec<Vec3> = dofs
            .iter()
            .map(|&k| {
                let mut p = state.clone();
                p.q[k] += h;
                let mut m = state.clone();
                m.q[k] -= h;
                linalg::scale(linalg::sub(reach(&p), reach(&m)), 0.5 / h)
            })
            .collect();
        // (JᵀJ + λI) δ = Jᵀe
        let n = dofs.len();
        let lambda = 1e-3;
        let mut a = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        for r in 0..n {
            rhs[r] = linalg::dot(cols[r], err);
            for c in 0..n {
                a[r * n + c] = linalg::dot(cols[r], cols[c]) + if r == c { lambda } else { 0.0 };
            }
        }
        let delta = solve_dense(&mut a, &mut rhs, n)?;
        for (i, &k) in dofs.iter().enumerate() {
            state.q[k] = (state.q[k] + delta[i].clamp(-0.3, 0.3)).clamp(lo[k], hi[k]);
        }
    }
    let residual = linalg::norm(linalg::sub(target, reach(&state)));
    if residual > 0.02 {
        return Err(Error::Config(format!("reach target unreachable (residual {residual:.3} m)")));
    }
    Ok(state.q)
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
            .expect("non-empty");
        if a[p * n + c].abs() < 1e-14 {
            return Err(Error::Degenerate("singular normal equations".into()));
        }
        for k in 0..n {
            a.swap(c * n + k, p * n + k);
        }
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(x)
}

/// Pose builder shared by the scenario generators.
struct Builder<'a> {
    body: &'a BodySpec,
    rest: Vec<f64>,
    height: f64,
}

impl<'a> Builder<'a> {
    fn new(body: &'a BodySpec) -> Self {
        let rest = AgentState::standing(body, 0.0, 0.0, 0.0);
        Self {
            body,
            height: rest.root_pos[2],
            rest: rest.q,
        }
    }

    fn state(&self, p: &Pose) -> AgentState {
        let mut s = AgentState::standing(self.body, p.x, p.y, p.yaw);
        s.root_pos[2] = self.height;
        s.q = p.q.clone();
        s
    }

    /// Right-arm angles placing the right hand at `target` for an agent at
    /// root `(x, y, yaw)`.
    fn right_reach(&self, x: f64, y: f64, yaw: f64, target: Vec3) -> Result<Vec<f64>> {
        let shoulder = joint_index(self.body, "right_shoulder")?;
        let elbow = joint_index(self.body, "right_elbow")?;
        let hand = site_index(self.body, "right_hand")?;
        let mut start = self.state(&Pose { x, y, yaw, q: self.rest.clone() });
        // bent elbow avoids the straight-arm singularity
        start.q[axis_offset(self.body, elbow)] = 0.8;
        start.q[axis_offset(self.body, shoulder) + 1] = 0.6;
        solve_reach(self.body, &start, hand, &[shoulder, elbow], target)
    }

    /// Shoulder-pitch indices of both arms.
    fn shoulder_pitches(&self) -> Result<[usize; 2]> {
        let l = axis_offset(self.body, joint_index(self.body, "left_shoulder")?) + 1;
        let r = axis_offset(self.body, joint_index(self.body, "right_shoulder")?) + 1;
        Ok([l, r])
    }

    fn finish(&self, poses: [Vec<Pose>; 2], dt: f64) -> [Vec<AgentState>; 2] {
        let build = |seq: &Vec<Pose>| -> Vec<AgentState> {
            let mut states: Vec<AgentState> = seq.iter().map(|p| self.state(p)).collect();
            let n = states.len();
            for t in 0..n {
                let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
                let span = (b - a) as f64 * dt;
                let (pa, pb) = (&seq[a], &seq[b]);
                states[t].root_vel = [(pb.x - pa.x) / span, (pb.y - pa.y) / span, 0.0];
                states[t].yaw_rate = linalg::wrap_angle(pb.yaw - pa.yaw) / span;
                states[t].qd = pa.q.iter().zip(&pb.q).map(|(a, b)| (b - a) / span).collect();
            }
            states
        };
        [build(&poses[0]), build(&poses[1])]
    }
}

/// Generates a two-agent reference of `length` frames for `scenario`.
pub fn gen_reference(body: &BodySpec, scenario: Scenario, length: usize, seed: u64) -> Result<ReferenceMotion> {
    if length < MIN_REFERENCE_FRAMES {
        return Err(Error::Config(format!(
            "reference needs at least {MIN_REFERENCE_FRAMES} frames, got {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ ((scenario as u64) << 40));
    let b = Builder::new(body);
    let n = length as f64;
    let rest = b.rest.clone();
    let [lp, rp] = b.shoulder_pitches()?;
    let mut poses: [Vec<Pose>; 2] = [Vec::with_capacity(length), Vec::with_capacity(length)];

    match scenario {
        Scenario::Approach => {
            let d0 = rng.random_range(2.5..3.5);
            let d1 = rng.random_range(0.9..1.2);
            let lat = rng.random_range(-0.2..0.2);
            let (t0, t1) = (rng.random_range(0.05..0.2) * n, rng.random_range(0.7..0.85) * n);
            let swing = rng.random_range(-0.15..0.15);
            for f in 0..length {
                let w = ramp(f as f64, t0, t1);
                let d = d0 + (d1 - d0) * w;
                let mut q = rest.clone();
                q[lp] -= swing * (PI * w).sin();
                q[rp] += swing * (PI * w).sin();
                poses[0].push(Pose { x: -d / 2.0, y: 0.0, yaw: 0.0, q: q.clone() });
                poses[1].push(Pose { x: d / 2.0, y: lat, yaw: PI, q });
            }
        }
        Scenario::Handshake => {
            let d0 = rng.random_range(2.0..2.8);
            let d1 = rng.random_range(0.75..0.85);
            let dz = rng.random_range(-0.3..-0.15);
            let (t0, t1) = (rng.random_range(0.03..0.08) * n, rng.random_range(0.4..0.5) * n);
            let (t2, t3) = (rng.random_range(0.5..0.55) * n, rng.random_range(0.75..0.85) * n);
            let shoulder_h = b.height + body.joints[joint_index(body, "right_shoulder")?].offset[2];
            // The pair is point-symmetric about the origin, so one solve
            // serves both agents.
            let shake = b.right_reach(-d1 / 2.0, 0.0, 0.0, [0.0, 0.0, shoulder_h + dz])?;
            for f in 0..length {
                let d = d0 + (d1 - d0) * ramp(f as f64, t0, t1);
                let q = lerp(&rest, &shake, ramp(f as f64, t2, t3));
                poses[0].push(Pose { x: -d / 2.0, y: 0.0, yaw: 0.0, q: q.clone() });
                poses[1].push(Pose { x: d / 2.0, y: 0.0, yaw: PI, q });
            }
        }
        Scenario::Circle => {
            let r = rng.random_range(0.8..1.2);
            let theta0 = rng.random_range(-PI..PI);
            let sweep = rng.random_range(FRAC_PI_2..PI);
            let (t0, t1) = (rng.random_range(0.05..0.15) * n, rng.random_range(0.85..0.95) * n);
            let lift = rng.random_range(0.3..0.8);
            for f in 0..length {
                let w = ramp(f as f64, t0, t1);
                let th = theta0 + sweep * w;
                let (s, c) = th.sin_cos();
                let mut q = rest.clone();
                q[lp] -= lift * (PI * w).sin();
                poses[0].push(Pose { x: r * c, y: r * s, yaw: linalg::wrap_angle(th + FRAC_PI_2), q: q.clone() });
                poses[1].push(Pose { x: -r * c, y: -r * s, yaw: linalg::wrap_angle(th - FRAC_PI_2), q });
            }
        }
        Scenario::Push => {
            let d0 = rng.random_range(1.8..2.4);
            let d1 = rng.random_range(0.68..0.75);
            let shove = rng.random_range(0.4..0.7);
            let (t0, t1) = (rng.random_range(0.03..0.08) * n, rng.random_range(0.4..0.45) * n);
            let (t2, t3) = (rng.random_range(0.5..0.55) * n, rng.random_range(0.8..0.9) * n);
            let mut reach = rest.clone();
            reach[lp] = 0.0;
            reach[rp] = 0.0;
            let mut recoil = rest.clone();
            recoil[lp] -= 0.4;
            recoil[rp] -= 0.4;
            for f in 0..length {
                let t = f as f64;
                let d = d0 + (d1 - d0) * ramp(t, t0, t1);
                let back = shove * ramp(t, t2, t3);
                let qa = lerp(&rest, &reach, ramp(t, 0.25 * n, t1));
                let qb = lerp(&rest, &recoil, ramp(t, t2, t3));
                poses[0].push(Pose { x: -d / 2.0 + back, y: 0.0, yaw: 0.0, q: qa });
                poses[1].push(Pose { x: d / 2.0 + back, y: 0.0, yaw: PI, q: qb });
            }
        }
    }

    let vocab = scenario.vocabulary();
    let command = vocab[rng.random_range(0..vocab.len())].to_string();
    Ok(ReferenceMotion {
        scenario,
        command,
        frames: b.finish(poses, DEFAULT_DT),
        dt: DEFAULT_DT,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingGains {
    /// Proportional correction on the joint-angle error.
    pub joint: f64,
    /// Forward-speed correction per metre of along-heading error.
    pub along: f64,
    /// Yaw-rate correction per metre of cross-track error.
    pub lateral: f64,
    /// Yaw-rate correction per radian of heading error.
    pub heading: f64,
    pub drive_limit: f64,
    /// Lookahead used to predict the root pose at the reference frame.
    pub dt: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            joint: 0.1,
            along: 2.0,
            lateral: 1.0,
            heading: 2.0,
            drive_limit: 3.0,
            dt: DEFAULT_DT,
        }
    }
}

/// Scripted expert: the next reference joint angles plus a proportional
/// correction of the current error, clamped to joint limits, and a root
/// drive of reference velocity plus feedback on the error between the
/// reference and the root pose extrapolated one frame ahead.
pub fn tracking_policy(body: &BodySpec, s: &AgentState, next_ref: &AgentState, gains: &TrackingGains) -> ActuatorCmd {
    let (lo, hi) = (body.lower_limits(), body.upper_limits());
    let (sh, ch) = next_ref.yaw.sin_cos();
    let v_ref = next_ref.root_vel[0] * ch + next_ref.root_vel[1] * sh;
    let ahead = [s.root_pos[0] + s.root_vel[0] * gains.dt, s.root_pos[1] + s.root_vel[1] * gains.dt];
    let err = [next_ref.root_pos[0] - ahead[0], next_ref.root_pos[1] - ahead[1]];
    let (ss, cs) = s.yaw.sin_cos();
    let along = err[0] * cs + err[1] * ss;
    let cross = -err[0] * ss + err[1] * cs;
    let speed = v_ref + gains.along * along;
    let direction = if v_ref < 0.0 { -1.0 } else { 1.0 };
    let turn = next_ref.yaw_rate
        + gains.heading * linalg::wrap_angle(next_ref.yaw - (s.yaw + s.yaw_rate * gains.dt))
        + gains.lateral * cross * direction;
    let mut cmd = Vec::with_capacity(ROOT_DRIVE_DOFS + s.q.len());
    cmd.push(speed.clamp(-gains.drive_limit, gains.drive_limit));
    cmd.push(turn.clamp(-gains.drive_limit, gains.drive_limit));
    for k in 0..s.q.len() {
        let r = next_ref.q[k];
        cmd.push((r + gains.joint * (r - s.q[k])).clamp(lo[k], hi[k]));
    }
    ActuatorCmd(cmd)
}

/// Joint positions/velocities and root state used by the reward.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub joints: Vec<Vec3>,
    pub joint_vel: Vec<Vec3>,
    pub root_pos: Vec3,
    pub root_vel: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl PoseSample {
    /// Simulated pose with analytic joint velocities.
    pub fn from_sim(agent: &AgentState, body: &BodySpec) -> Self {
        let kin = kinematics(agent, body);
        Self {
            joints: kin.pos,
            joint_vel: kin.lin_vel,
            root_pos: agent.root_pos,
            root_vel: agent.root_vel,
            yaw: agent.yaw,
            yaw_rate: agent.yaw_rate,
        }
    }

    /// Reference pose at frame `t`; velocities are backward differences of
    /// reference positions (zero at `t = 0`).
    pub fn from_reference(motion: &ReferenceMotion, agent: usize, t: usize, body: &BodySpec) -> Self {
        let cur = &motion.frames[agent][t];
        let pos = kinematics(cur, body).pos;
        let (joint_vel, root_vel, yaw_rate) = if t == 0 {
            (vec![[0.0; 3]; pos.len()], [0.0; 3], 0.0)
        } else {
            let prev = &motion.frames[agent][t - 1];
            let pp = kinematics(prev, body).pos;
            let inv = 1.0 / motion.dt;
            (
                pos.iter().zip(&pp).map(|(a, b)| linalg::scale(linalg::sub(*a, *b), inv)).collect(),
                linalg::scale(linalg::sub(cur.root_pos, prev.root_pos), inv),
                linalg::wrap_angle(cur.yaw - prev.yaw) * inv,
            )
        };
        Self {
            joints: pos,
            joint_vel,
            root_pos: cur.root_pos,
            root_vel,
            yaw: cur.yaw,
            yaw_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub pos: f64,
    pub vel: f64,
    pub root: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            pos: 2.0,
            vel: 0.1,
            root: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    pub d_pos: f64,
    pub d_vel: f64,
    pub r_ig: f64,
    pub root_error: f64,
    pub r_root: f64,
    pub r: f64,
}

/// Softmin weights over reference edge lengths; sums to 1.
pub fn edge_weights(ref_edges: &[Vec3]) -> Vec<f64> {
    let len: Vec<f64> = ref_edges.iter().map(|e| linalg::norm(*e)).collect();
    let lo = len.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = len.iter().map(|l| (-(l - lo)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Interaction-graph tracking reward `r = r_ig · r_root`.
pub fn ig_reward(sim: [&PoseSample; 2], reference: [&PoseSample; 2], weights: &RewardWeights) -> Result<RewardTerms> {
    let j = sim[0].joints.len();
    if [sim[1], reference[0], reference[1]].iter().any(|p| p.joints.len() != j) {
        return Err(Error::dim("ig_reward", "joint counts differ"));
    }
    let p_ref = world_edges(&reference[0].joints, &reference[1].joints);
    let p_sim = world_edges(&sim[0].joints, &sim[1].joints);
    let v_ref = world_edges(&reference[0].joint_vel, &reference[1].joint_vel);
    let v_sim = world_edges(&sim[0].joint_vel, &sim[1].joint_vel);
    let w = edge_weights(&p_ref);
    let mut d_pos = 0.0;
    let mut d_vel = 0.0;
    for e in 0..w.len() {
        d_pos += w[e] * linalg::norm(linalg::sub(p_ref[e], p_sim[e]));
        d_vel += w[e] * linalg::norm(linalg::sub(v_ref[e], v_sim[e]));
    }
    let r_ig = (-weights.pos * d_pos - weights.vel * d_vel).exp();
    let mut root_error = 0.0;
    for a in 0..2 {
        let (s, r) = (sim[a], reference[a]);
        root_error += linalg::norm(linalg::sub(r.root_pos, s.root_pos))
            + linalg::norm(linalg::sub(r.root_vel, s.root_vel))
            + linalg::wrap_angle(r.yaw - s.yaw).abs()
            + (r.yaw_rate - s.yaw_rate).abs();
    }
    let r_root = (-weights.root * root_error).exp();
    Ok(RewardTerms {
        d_pos,
        d_vel,
        r_ig,
        root_error,
        r_root,
        r: r_ig * r_root,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
    pub sigma: f64,
    pub rollouts_per_motion: usize,
    pub keep: usize,
    pub threshold: f64,
    pub gains: TrackingGains,
    pub weights: RewardWeights,
    pub extero: ExteroKind,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            rollouts_per_motion: 16,
            keep: 8,
            threshold: 0.5,
            gains: TrackingGains::default(),
            weights: RewardWeights::default(),
            extero: ExteroKind::Sig,
        }
    }
}

/// One tracked rollout. `trajectory` holds visited states and clean expert
/// actions; `executed` holds the noise-perturbed commands actually applied.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub trajectory: Trajectory,
    pub executed: [Vec<Vec<f64>>; 2],
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    pub success: bool,
}

/// Reference frame the expert is driven toward at frame `t`.
pub fn next_reference_index(t: usize, len: usize) -> usize {
    (t + 1).min(len - 1)
}

/// Rolls the expert along `motion` once with action noise of std `sigma`.
pub fn track_episode(
    body: &BodySpec,
    motion: &ReferenceMotion,
    cfg: &CollectConfig,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord> {
    if !(cfg.sigma >= 0.0) {
        return Err(Error::Config(format!("action noise std must be >= 0, got {}", cfg.sigma)));
    }
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Config(format!("{e}")))?;
    let len = motion.len();
    let mut world = SimWorld::new(body.clone(), SimState { agents: motion.pair(0), time: 0.0 });
    world.dt = motion.dt;
    let mut traj = Trajectory::new(motion.command.clone());
    let mut executed = [Vec::with_capacity(len), Vec::with_capacity(len)];
    let mut rewards = Vec::with_capacity(len);
    for t in 0..len {
        let sim = [PoseSample::from_sim(&world.state.agents[0], body), PoseSample::from_sim(&world.state.agents[1], body)];
        let refs = [PoseSample::from_reference(motion, 0, t, body), PoseSample::from_reference(motion, 1, t, body)];
        rewards.push(ig_reward([&sim[0], &sim[1]], [&refs[0], &refs[1]], &cfg.weights)?.r);

        let target = next_reference_index(t, len);
        let clean: Vec<ActuatorCmd> = (0..2)
            .map(|a| tracking_policy(body, &world.state.agents[a], &motion.frames[a][target], &cfg.gains))
            .collect();
        traj.record(cfg.extero, &world.state.agents, body, [&clean[0].0, &clean[1].0])?;
        let noisy: Vec<ActuatorCmd> = clean
            .iter()
            .map(|c| ActuatorCmd(c.0.iter().map(|v| v + noise.sample(&mut *rng)).collect()))
            .collect();
        world.advance([&noisy[0], &noisy[1]])?;
        executed[0].push(noisy[0].0.clone());
        executed[1].push(noisy[1].0.clone());
    }
    let mean_reward = rewards.iter().sum::<f64>() / len as f64;
    let success = mean_reward >= cfg.threshold;
    traj.success = success;
    Ok(EpisodeRecord {
        trajectory: traj,
        executed,
        rewards,
        mean_reward,
        success,
    })
}

/// Outcome of collecting one motion.
#[derive(Clone, Debug)]
pub struct MotionCollection {
    pub kept: Vec<EpisodeRecord>,
    pub attempts: usize,
    /// Set when fewer than `keep` successes were found; the motion is skipped.
    pub warning: Option<String>,
}

/// Noise stream for motion `index` of a collection seeded with `seed`.
pub fn motion_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64 + 1);
    r
}

/// Attempts up to `rollouts_per_motion` rollouts, keeping the first `keep`
/// successes.
pub fn collect_motion(body: &BodySpec, motion: &ReferenceMotion, cfg: &CollectConfig, rng: &mut dyn RngCore) -> Result<MotionCollection> {
    let mut kept = Vec::with_capacity(cfg.keep);
    let mut attempts = 0;
    while kept.len() < cfg.keep && attempts < cfg.rollouts_per_motion {
        attempts += 1;
        let ep = track_episode(body, motion, cfg, rng)?;
        if ep.success {
            kept.push(ep);
        }
    }
    if kept.len() < cfg.keep {
        let warning = format!(
            "{} '{}': {} of {} required successes after {attempts} rollouts; motion skipped",
            motion.scenario.name(),
            motion.command,
            kept.len(),
            cfg.keep
        );
        return Ok(MotionCollection { kept: Vec::new(), attempts, warning: Some(warning) });
    }
    Ok(MotionCollection { kept, attempts, warning: None })
}

/// Sequential collection over all motions, each with its own noise stream.
pub fn collect_dataset(body: &BodySpec, motions: &[ReferenceMotion], cfg: &CollectConfig, seed: u64) -> Result<Vec<MotionCollection>> {
    motions
        .iter()
        .enumerate()
        .map(|(i, m)| collect_motion(body, m, cfg, &mut motion_rng(seed, i)))
        .collect()
}

/// Re-evaluates the expert on every stored state and reference and checks
/// the stored action bitwise. Returns the first mismatching `(agent, frame)`.
pub fn verify_clean_actions(
    body: &BodySpec,
    motion: &ReferenceMotion,
    record: &EpisodeRecord,
    gains: &TrackingGains,
) -> Result<Option<(usize, usize)>> {
    let axes = body.axis_count();
    for a in 0..2 {
        let track = &record.trajectory.agents[a];
        for t in 0..track.len() {
            let s = AgentState::from_flat(&track.world[t].raw, axes)?;
            let want = tracking_policy(body, &s, &motion.frames[a][next_reference_index(t, motion.len())], gains);
            let same = want.0.len() == track.action[t].len()
                && want.0.iter().zip(&track.action[t]).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                return Ok(Some((a, t)));
            }
        }
    }
    Ok(None)
}
