//! Behavior representation: proprioception, exteroception and normalization.
//!
//! All per-agent quantities are expressed in the agent's heading frame: the
//! rotation about world z by the root yaw, with origin at the root position.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{self, Mat3, Vec3};
use crate::simworld::{kinematics, AgentState, BodySpec, Kinematics};
use crate::{Error, Result};

/// Exteroception variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExteroKind {
    /// Relative state: the other agent's proprioception layout in the ego frame.
    Rs,
    /// Fully connected interaction graph of joint-to-joint edges.
    Fig,
    /// FIG edges consumed by the network through sparse edge attention.
    Sig,
}

impl ExteroKind {
    pub fn code(self) -> u8 {
        match self {
            ExteroKind::Rs => 0,
            ExteroKind::Fig => 1,
            ExteroKind::Sig => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ExteroKind::Rs),
            1 => Some(ExteroKind::Fig),
            2 => Some(ExteroKind::Sig),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExteroKind::Rs => "rs",
            ExteroKind::Fig => "fig",
            ExteroKind::Sig => "sig",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Some(ExteroKind::Rs),
            "fig" => Some(ExteroKind::Fig),
            "sig" => Some(ExteroKind::Sig),
            _ => None,
        }
    }

    /// Edges are the exteroception payload for both graph variants.
    pub fn is_graph(self) -> bool {
        !matches!(self, ExteroKind::Rs)
    }

    pub fn dim(self, joints: usize) -> usize {
        match self {
            ExteroKind::Rs => proprio_dim(joints),
            _ => fig_dim(joints),
        }
    }
}

/// `1 + 3(J−1) + 6J + 3J + 3J`.
pub fn proprio_dim(joints: usize) -> usize {
    1 + 3 * (joints - 1) + 12 * joints
}

pub fn fig_dim(joints: usize) -> usize {
    3 * joints * joints
}

/// Layout of one frame `[x_p, x_e, x_a]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameLayout {
    pub proprio: usize,
    pub extero: usize,
    pub action: usize,
}

impl FrameLayout {
    pub fn new(joints: usize, kind: ExteroKind, action: usize) -> Self {
        Self {
            proprio: proprio_dim(joints),
            extero: kind.dim(joints),
            action,
        }
    }

    pub fn total(&self) -> usize {
        self.proprio + self.extero + self.action
    }

    /// Width of a history token `[x_p, x_e]`.
    pub fn state(&self) -> usize {
        self.proprio + self.extero
    }
}

pub fn encode_rot6d(r: &Mat3) -> [f64; 6] {
    [r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]]
}

/// Gram-Schmidt on the two stored columns, third column by cross product.
pub fn decode_rot6d(v: &[f64; 6]) -> Result<Mat3> {
    let a: Vec3 = [v[0], v[1], v[2]];
    let b: Vec3 = [v[3], v[4], v[5]];
    let na = linalg::norm(a);
    if !(na > 1e-12) {
        return Err(Error::Degenerate("rot6d first column has zero length".into()));
    }
    let c0 = linalg::scale(a, 1.0 / na);
    let b_perp = linalg::sub(b, linalg::scale(c0, linalg::dot(c0, b)));
    let nb = linalg::norm(b_perp);
    if !(nb > 1e-12 * linalg::norm(b).max(1.0)) {
        return Err(Error::Degenerate("rot6d columns are parallel".into()));
    }
    let c1 = linalg::scale(b_perp, 1.0 / nb);
    let c2 = linalg::cross(c0, c1);
    Ok(linalg::from_columns(c0, c1, c2))
}

fn require_joints(body: &BodySpec) -> Result<usize> {
    let j = body.joint_count();
    if j < 2 {
        return Err(Error::Config(format!("behavior encoding needs J >= 2, got {j}")));
    }
    Ok(j)
}

fn heading(agent: &AgentState) -> Mat3 {
    linalg::rot_z(agent.yaw)
}

fn push3(out: &mut Vec<f64>, v: Vec3) {
    out.extend_from_slice(&v);
}

/// Proprioception-layout encoding of `kin` observed from a frame with
/// rotation `frame` and origin `origin`. `root_rot` is the root rotation
/// relative to that frame.
fn proprio_layout(
    kin: &Kinematics,
    height: f64,
    frame: &Mat3,
    origin: Vec3,
    root_rot: &Mat3,
    out: &mut Vec<f64>,
) {
    out.push(height);
    for p in &kin.pos[1..] {
        push3(out, linalg::mat_t_vec(frame, linalg::sub(*p, origin)));
    }
    out.extend_from_slice(&encode_rot6d(root_rot));
    for r in &kin.local_rot[1..] {
        out.extend_from_slice(&encode_rot6d(r));
    }
    for v in &kin.lin_vel {
        push3(out, linalg::mat_t_vec(frame, *v));
    }
    for w in &kin.ang_vel {
        push3(out, linalg::mat_t_vec(frame, *w));
    }
}

/// Root height, non-root joint positions, per-joint local 6D rotations and
/// joint linear/angular velocities, all in the agent's heading frame.
pub fn encode_proprio(agent: &AgentState, body: &BodySpec) -> Result<Vec<f64>> {
    let j = require_joints(body)?;
    let kin = kinematics(agent, body);
    let h = heading(agent);
    let mut out = Vec::with_capacity(proprio_dim(j));
    let root_rel = kin.local_rot[0];
    proprio_layout(&kin, agent.root_pos[2], &h, agent.root_pos, &root_rel, &mut out);
    Ok(out)
}

/// Edges `e_ij = p_i(other) − p_j(ego)` in world coordinates, `i` outer.
pub fn world_edges(ego: &[Vec3], other: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(ego.len() * other.len());
    for pi in other {
        for pj in ego {
            out.push(linalg::sub(*pi, *pj));
        }
    }
    out
}

/// FIG exteroception: world edges rotated into the ego heading frame.
pub fn build_fig(ego: &AgentState, other: &AgentState, body: &BodySpec) -> Result<Vec<f64>> {
    let j = require_joints(body)?;
    let pe = kinematics(ego, body).pos;
    let po = kinematics(other, body).pos;
    Ok(fig_from_positions(&pe, &po, ego.yaw, j))
}

pub(crate) fn fig_from_positions(ego: &[Vec3], other: &[Vec3], ego_yaw: f64, joints: usize) -> Vec<f64> {
    let h = linalg::rot_z(ego_yaw);
    let mut out = Vec::with_capacity(fig_dim(joints));
    for e in world_edges(ego, other) {
        push3(&mut out, linalg::mat_t_vec(&h, e));
    }
    out
}

/// RS exteroception: the other agent's proprioception layout re-expressed in
/// the ego heading frame (positions relative to the ego root, root rotation
/// relative to the ego heading, velocities rotated into the ego frame).
pub fn build_rs(ego: &AgentState, other: &AgentState, body: &BodySpec) -> Result<Vec<f64>> {
    let j = require_joints(body)?;
    let kin = kinematics(other, body);
    let h = heading(ego);
    let root_rel = linalg::mat_mul(&linalg::transpose(&h), &kin.rot[0]);
    let mut out = Vec::with_capacity(proprio_dim(j));
    proprio_layout(&kin, other.root_pos[2], &h, ego.root_pos, &root_rel, &mut out);
    Ok(out)
}

pub fn build_extero(
    kind: ExteroKind,
    ego: &AgentState,
    other: &AgentState,
    body: &BodySpec,
) -> Result<Vec<f64>> {
    match kind {
        ExteroKind::Rs => build_rs(ego, other, body),
        ExteroKind::Fig | ExteroKind::Sig => build_fig(ego, other, body),
    }
}

/// `[x_p, x_e]` of each agent for a two-agent state.
pub fn encode_pair(
    kind: ExteroKind,
    agents: &[AgentState; 2],
    body: &BodySpec,
) -> Result<[(Vec<f64>, Vec<f64>); 2]> {
    let a = (encode_proprio(&agents[0], body)?, build_extero(kind, &agents[0], &agents[1], body)?);
    let b = (encode_proprio(&agents[1], body)?, build_extero(kind, &agents[1], &agents[0], body)?);
    Ok([a, b])
}

pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension mean and floored standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; dim],
            std: alloc::vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Two-pass population statistics over `rows`.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        for row in rows.clone() {
            if count == 0 {
                sum = alloc::vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::Data(format!(
                    "row width {} differs from {}",
                    row.len(),
                    sum.len()
                )));
            }
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("cannot fit normalization on an empty dataset".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = alloc::vec![0.0; mean.len()];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn denormalize(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    pub fn normalized(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        self.normalize(&mut v);
        v
    }

    pub fn denormalized(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        self.denormalize(&mut v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::forward_kinematics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let axis = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64),
        ];
        let n = linalg::norm(axis).max(1e-3);
        linalg::axis_angle(linalg::scale(axis, 1.0 / n), rng.random_range(-3.1..3.1))
    }

    fn random_agent(rng: &mut ChaCha8Rng, body: &BodySpec) -> AgentState {
        let n = body.axis_count();
        AgentState {
            root_pos: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..1.5)],
            yaw: rng.random_range(-3.0..3.0),
            yaw_rate: rng.random_range(-1.0..1.0),
            root_vel: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            q: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            qd: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    fn transform(agent: &AgentState, yaw: f64, shift: Vec3) -> AgentState {
        let r = linalg::rot_z(yaw);
        let mut out = agent.clone();
        out.root_pos = linalg::add(linalg::mat_vec(&r, agent.root_pos), shift);
        out.root_vel = linalg::mat_vec(&r, agent.root_vel);
        out.yaw = agent.yaw + yaw;
        out
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rot6d_examples() {
        assert_eq!(encode_rot6d(&linalg::IDENTITY), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(decode_rot6d(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap(), linalg::IDENTITY);
        assert!(matches!(decode_rot6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(decode_rot6d(&[0.0; 6]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rot6d_roundtrip_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let back = decode_rot6d(&encode_rot6d(&r)).unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    assert!((back[i][k] - r[i][k]).abs() <= 1e-10);
                }
            }
            let v: [f64; 6] = core::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let m = decode_rot6d(&v).unwrap();
            let mtm = linalg::mat_mul(&linalg::transpose(&m), &m);
            for i in 0..3 {
                for k in 0..3 {
                    let want = if i == k { 1.0 } else { 0.0 };
                    assert!((mtm[i][k] - want).abs() <= 1e-9);
                }
            }
            assert!((linalg::det(&m) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn proprio_lengths_and_static_state() {
        let full = BodySpec::full_scale();
        let agent = AgentState::standing(&full, 0.0, 0.0, 0.0);
        assert_eq!(encode_proprio(&agent, &full).unwrap().len(), 223);

        let desk = BodySpec::desk();
        let mut agent = AgentState::standing(&desk, 0.3, -0.2, 0.4);
        agent.root_pos[2] = 0.9;
        let x = encode_proprio(&agent, &desk).unwrap();
        assert_eq!(x.len(), proprio_dim(5));
        assert_eq!(x[0], 0.9);
        let vel_start = 1 + 3 * 4 + 6 * 5;
        assert!(x[vel_start..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encodings_reject_single_joint_bodies() {
        let mut body = BodySpec::desk();
        body.joints.truncate(1);
        body.sites.truncate(1);
        let agent = AgentState::standing(&body, 0.0, 0.0, 0.0);
        assert!(matches!(encode_proprio(&agent, &body), Err(Error::Config(_))));
    }

    #[test]
    fn fig_length_for_all_joint_counts() {
        for j in 2..=15 {
            let ego: Vec<Vec3> = (0..j).map(|k| [k as f64, 0.0, 1.0]).collect();
            let other: Vec<Vec3> = (0..j).map(|k| [0.0, k as f64, 1.0]).collect();
            assert_eq!(fig_from_positions(&ego, &other, 0.3, j).len(), 3 * j * j);
        }
        let full = BodySpec::full_scale();
        let a = AgentState::standing(&full, 0.0, 0.0, 0.0);
        let fig = build_fig(&a, &a, &full).unwrap();
        assert_eq!(fig.len(), 675);
        // overlapped identical skeletons: diagonal edges vanish
        for j in 0..15 {
            let e = &fig[3 * (j * 15 + j)..3 * (j * 15 + j) + 3];
            assert!(e.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn edge_antisymmetry_and_norm_symmetry() {
        let body = BodySpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_agent(&mut rng, &body);
            let b = random_agent(&mut rng, &body);
            let (pa, pb) = (forward_kinematics(&a, &body), forward_kinematics(&b, &body));
            let e1 = world_edges(&pa, &pb);
            let e2 = world_edges(&pb, &pa);
            let j = body.joint_count();
            for i in 0..j {
                for k in 0..j {
                    let x = e1[i * j + k];
                    let y = e2[k * j + i];
                    assert_eq!(x, [-y[0], -y[1], -y[2]]);
                }
            }
            let f1 = build_fig(&a, &b, &body).unwrap();
            let f2 = build_fig(&b, &a, &body).unwrap();
            for i in 0..j {
                for k in 0..j {
                    let n1 = linalg::norm([f1[3 * (i * j + k)], f1[3 * (i * j + k) + 1], f1[3 * (i * j + k) + 2]]);
                    let n2 = linalg::norm([f2[3 * (k * j + i)], f2[3 * (k * j + i) + 1], f2[3 * (k * j + i) + 2]]);
                    assert!((n1 - n2).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rs_identity_frame_matches_world_offsets() {
        let body = BodySpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ego = random_agent(&mut rng, &body);
        ego.yaw = 0.0;
        let other = random_agent(&mut rng, &body);
        let rs = build_rs(&ego, &other, &body).unwrap();
        assert_eq!(rs.len(), proprio_dim(body.joint_count()));
        let world = forward_kinematics(&other, &body);
        for (k, p) in world[1..].iter().enumerate() {
            for c in 0..3 {
                assert!((rs[1 + 3 * k + c] - (p[c] - ego.root_pos[c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encodings_are_heading_frame_invariant() {
        let body = BodySpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let a = random_agent(&mut rng, &body);
            let b = random_agent(&mut rng, &body);
            let yaw = if trial == 0 { 37f64.to_radians() } else { rng.random_range(-3.0..3.0) };
            let shift = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0];
            let (ta, tb) = (transform(&a, yaw, shift), transform(&b, yaw, shift));
            assert!(max_diff(&encode_proprio(&a, &body).unwrap(), &encode_proprio(&ta, &body).unwrap()) <= 1e-9);
            assert!(max_diff(&build_fig(&a, &b, &body).unwrap(), &build_fig(&ta, &tb, &body).unwrap()) <= 1e-9);
            assert!(max_diff(&build_rs(&a, &b, &body).unwrap(), &build_rs(&ta, &tb, &body).unwrap()) <= 1e-9);
        }
    }

    #[test]
    fn norm_stats_roundtrip_floor_and_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(-3.0..7.0), 4.25, rng.random_range(0.0..0.01)])
            .collect();
        let stats = NormStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(stats.std[1], STD_FLOOR);
        let normed: Vec<Vec<f64>> = rows.iter().map(|r| stats.normalized(r)).collect();
        for (r, n) in rows.iter().zip(&normed) {
            assert!(n.iter().all(|v| v.is_finite()));
            assert_eq!(n[1], 0.0);
            assert!(max_diff(&stats.denormalized(n), r) <= 1e-10);
        }
        let refit = NormStats::fit(normed.iter().map(|r| r.as_slice())).unwrap();
        for d in [0, 2] {
            assert!(refit.mean[d].abs() < 1e-6);
            assert!((0.99..=1.01).contains(&refit.std[d]));
        }
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(NormStats::fit(empty.iter().map(|r| r.as_slice())), Err(Error::Data(_))));
    }
}
