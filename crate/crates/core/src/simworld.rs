//! Deterministic toy physics for two articulated humanoids.
//!
//! This is deliberately not articulated-body dynamics. Every actuated joint
//! axis is an independent unit-inertia rotational degree of freedom driven by
//! a PD servo; the root is a point mass with gravity and ground support,
//! moved horizontally by a velocity servo ("root drive") and turned by a yaw
//! rate servo. The state/action/PD interface is what the controller sees, and
//! that is all this simulator tries to preserve.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{self, Mat3, Vec3};
use crate::{Error, Result};

pub const GRAVITY: f64 = 9.81;
pub const DEFAULT_DT: f64 = 1.0 / 30.0;
/// Height below which an end-effector counts as touching the ground.
pub const CONTACT_THRESHOLD: f64 = 0.005;
/// Number of leading actuator entries that command the root drive
/// (forward speed, yaw rate) rather than a joint axis.
pub const ROOT_DRIVE_DOFS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_lowercase() {
            'x' => Some(Axis::X),
            'y' => Some(Axis::Y),
            'z' => Some(Axis::Z),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent: Option<usize>,
    /// Position of this joint in the parent joint's frame.
    pub offset: Vec3,
    /// Rotation axes, applied in order.
    pub axes: Vec<Axis>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mass: f64,
}

/// A point rigidly attached to a joint (hands, the virtual foot).
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSpec {
    pub name: String,
    pub joint: usize,
    pub offset: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodySpec {
    pub joints: Vec<JointSpec>,
    /// End-effector sites used for ground contact and physical metrics.
    pub sites: Vec<SiteSpec>,
    pub kp: f64,
    pub kd: f64,
    /// Passive viscous damping on every joint axis.
    pub damping: f64,
    pub torque_limit: f64,
    /// Gain of the horizontal root velocity servo (1/s).
    pub drive_gain: f64,
    /// Gain of the yaw-rate servo (1/s).
    pub turn_gain: f64,
    pub yaw_inertia: f64,
}

impl BodySpec {
    /// Desk-scale humanoid: pelvis root on a virtual leg, two 2-link arms
    /// (2-dof shoulder, 1-dof elbow). J = 5, 8 actuated dofs.
    pub fn desk() -> Self {
        let arm = |side: f64, tag: &str| -> [JointSpec; 2] {
            [
                JointSpec {
                    name: format!("{tag}_shoulder"),
                    parent: Some(0),
                    offset: [0.0, 0.2 * side, 0.45],
                    axes: vec![Axis::Z, Axis::Y],
                    lower: vec![-1.6, -1.2],
                    upper: vec![1.6, 2.0],
                    mass: 2.0,
                },
                JointSpec {
                    name: format!("{tag}_elbow"),
                    parent: None,
                    offset: [0.3, 0.0, 0.0],
                    axes: vec![Axis::Y],
                    lower: vec![0.0],
                    upper: vec![2.5],
                    mass: 1.5,
                },
            ]
        };
        let mut joints = vec![JointSpec {
            name: "root".to_string(),
            parent: None,
            offset: [0.0; 3],
            axes: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            mass: 40.0,
        }];
        for (side, tag) in [(1.0, "left"), (-1.0, "right")] {
            let [shoulder, mut elbow] = arm(side, tag);
            joints.push(shoulder);
            elbow.parent = Some(joints.len() - 1);
            joints.push(elbow);
        }
        let sites = vec![
            SiteSpec {
                name: "foot".to_string(),
                joint: 0,
                offset: [0.0, 0.0, -DESK_STANCE_HEIGHT],
            },
            SiteSpec {
                name: "left_hand".to_string(),
                joint: 2,
                offset: [0.3, 0.0, 0.0],
            },
            SiteSpec {
                name: "right_hand".to_string(),
                joint: 4,
                offset: [0.3, 0.0, 0.0],
            },
        ];
        Self {
            joints,
            sites,
            kp: 100.0,
            kd: 20.0,
            damping: 0.5,
            torque_limit: 200.0,
            drive_gain: 20.0,
            turn_gain: 20.0,
            yaw_inertia: 2.0,
        }
    }

    /// Full-scale skeleton: 15 joints and 28 actuated dofs (26 joint axes
    /// plus the 2 root-drive entries).
    pub fn full_scale() -> Self {
        use Axis::*;
        // (name, parent, offset, axes)
        let table: [(&str, Option<usize>, Vec3, &[Axis]); 15] = [
            ("pelvis", None, [0.0, 0.0, 0.0], &[]),
            ("chest", Some(0), [0.0, 0.0, 0.25], &[X, Y, Z]),
            ("head", Some(1), [0.0, 0.0, 0.3], &[X, Y, Z]),
            ("left_shoulder", Some(1), [0.0, 0.2, 0.2], &[Z, Y, X]),
            ("left_elbow", Some(3), [0.3, 0.0, 0.0], &[Y]),
            ("left_hand", Some(4), [0.25, 0.0, 0.0], &[Y]),
            ("right_shoulder", Some(1), [0.0, -0.2, 0.2], &[Z, Y, X]),
            ("right_elbow", Some(6), [0.3, 0.0, 0.0], &[Y]),
            ("right_hand", Some(7), [0.25, 0.0, 0.0], &[Y]),
            ("left_hip", Some(0), [0.0, 0.1, -0.05], &[X, Y, Z]),
            ("left_knee", Some(9), [0.0, 0.0, -0.42], &[Y]),
            ("left_foot", Some(10), [0.0, 0.0, -0.41], &[Y]),
            ("right_hip", Some(0), [0.0, -0.1, -0.05], &[X, Y, Z]),
            ("right_knee", Some(12), [0.0, 0.0, -0.42], &[Y]),
            ("right_foot", Some(13), [0.0, 0.0, -0.41], &[Y]),
        ];
        let joints = table
            .iter()
            .map(|(name, parent, offset, axes)| JointSpec {
                name: name.to_string(),
                parent: *parent,
                offset: *offset,
                axes: axes.to_vec(),
                lower: vec![-2.5; axes.len()],
                upper: vec![2.5; axes.len()],
                mass: 4.0,
            })
            .collect();
        let sites = vec![
            SiteSpec {
                name: "left_foot".to_string(),
                joint: 11,
                offset: [0.0; 3],
            },
            SiteSpec {
                name: "right_foot".to_string(),
                joint: 14,
                offset: [0.0; 3],
            },
        ];
        Self {
            joints,
            sites,
            ..Self::desk()
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Number of joint axes (length of `q`).
    pub fn axis_count(&self) -> usize {
        self.joints.iter().map(|j| j.axes.len()).sum()
    }

    /// Actuator command length: root drive plus every joint axis.
    pub fn dof_count(&self) -> usize {
        ROOT_DRIVE_DOFS + self.axis_count()
    }

    pub fn total_mass(&self) -> f64 {
        self.joints.iter().map(|j| j.mass).sum()
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| j.lower.iter().copied()).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| j.upper.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() || self.joints[0].parent.is_some() {
            return Err(Error::Config("joint 0 must be the parentless root".into()));
        }
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::Config(format!(
                        "joint {i} ({}) must have a parent with a smaller index",
                        j.name
                    )))
                }
            }
        }
        for j in &self.joints {
            if j.lower.len() != j.axes.len() || j.upper.len() != j.axes.len() {
                return Err(Error::Config(format!("joint {} limit count", j.name)));
            }
            if j.lower.iter().zip(&j.upper).any(|(lo, hi)| lo > hi) {
                return Err(Error::Config(format!("joint {} has lower > upper", j.name)));
            }
        }
        if let Some(s) = self.sites.iter().find(|s| s.joint >= self.joints.len()) {
            return Err(Error::Config(format!("site {} references a missing joint", s.name)));
        }
        Ok(())
    }
}

/// Root height at which the desk humanoid's virtual foot touches the ground.
pub const DESK_STANCE_HEIGHT: f64 = 0.9;

/// Generalized coordinates of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub root_pos: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub root_vel: Vec3,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl AgentState {
    pub fn standing(body: &BodySpec, x: f64, y: f64, yaw: f64) -> Self {
        let n = body.axis_count();
        let mut q = vec![0.0; n];
        // Arms hang down: shoulder pitch of +π/2 maps the forward arm axis to −z.
        let mut k = 0;
        for j in &body.joints {
            for (a, axis) in j.axes.iter().enumerate() {
                if j.name.ends_with("shoulder") && *axis == Axis::Y {
                    q[k] = (core::f64::consts::FRAC_PI_2).clamp(j.lower[a], j.upper[a]);
                }
                k += 1;
            }
        }
        Self {
            root_pos: [x, y, stance_height(body)],
            yaw,
            yaw_rate: 0.0,
            root_vel: [0.0; 3],
            q,
            qd: vec![0.0; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.root_pos.iter().chain(&self.root_vel).all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
            && self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }

    /// Flat layout: root_pos(3), yaw, yaw_rate, root_vel(3), q, qd.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(8 + 2 * self.q.len());
        v.extend_from_slice(&self.root_pos);
        v.push(self.yaw);
        v.push(self.yaw_rate);
        v.extend_from_slice(&self.root_vel);
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.qd);
        v
    }

    pub fn from_flat(flat: &[f64], axes: usize) -> Result<Self> {
        if flat.len() != 8 + 2 * axes {
            return Err(Error::Data(format!(
                "flat agent state needs {} values, got {}",
                8 + 2 * axes,
                flat.len()
            )));
        }
        Ok(Self {
            root_pos: [flat[0], flat[1], flat[2]],
            yaw: flat[3],
            yaw_rate: flat[4],
            root_vel: [flat[5], flat[6], flat[7]],
            q: flat[8..8 + axes].to_vec(),
            qd: flat[8 + axes..].to_vec(),
        })
    }

    pub fn flat_len(axes: usize) -> usize {
        8 + 2 * axes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub agents: [AgentState; 2],
    pub time: f64,
}

/// Target per actuated dof: `[forward speed, yaw rate, joint angles...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorCmd(pub Vec<f64>);

/// Height of the root above its lowest site when all joints are at zero and
/// the site is attached to the root; for bodies without a root-attached site
/// the desk stance height is used.
pub fn stance_height(body: &BodySpec) -> f64 {
    body.sites
        .iter()
        .filter(|s| s.joint == 0)
        .map(|s| -s.offset[2])
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .unwrap_or(DESK_STANCE_HEIGHT)
}

/// `τ = kp·(a − q) − kd·q̇`, clamped to `±limit`.
pub fn pd_torque(q: &[f64], qd: &[f64], a: &[f64], kp: f64, kd: f64, limit: f64) -> Vec<f64> {
    assert!(q.len() == qd.len() && q.len() == a.len(), "pd_torque length mismatch");
    q.iter()
        .zip(qd)
        .zip(a)
        .map(|((&q, &qd), &a)| (kp * (a - q) - kd * qd).clamp(-limit, limit))
        .collect()
}

/// World-frame kinematic quantities of every joint.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub pos: Vec<Vec3>,
    pub rot: Vec<Mat3>,
    /// Rotation of each joint relative to its parent (root: relative to the
    /// heading frame).
    pub local_rot: Vec<Mat3>,
    pub lin_vel: Vec<Vec3>,
    pub ang_vel: Vec<Vec3>,
}

/// Full forward kinematics including joint velocities.
pub fn kinematics(agent: &AgentState, body: &BodySpec) -> Kinematics {
    let n = body.joints.len();
    let mut kin = Kinematics {
        pos: Vec::with_capacity(n),
        rot: Vec::with_capacity(n),
        local_rot: Vec::with_capacity(n),
        lin_vel: Vec::with_capacity(n),
        ang_vel: Vec::with_capacity(n),
    };
    let heading = linalg::rot_z(agent.yaw);
    let mut k = 0;
    for joint in &body.joints {
        // Local rotation and the relative angular velocity it induces,
        // expressed in the parent frame.
        let mut local = linalg::IDENTITY;
        let mut omega_rel = [0.0; 3];
        for axis in &joint.axes {
            let u = axis.unit();
            omega_rel = linalg::add(omega_rel, linalg::scale(linalg::mat_vec(&local, u), agent.qd[k]));
            local = linalg::mat_mul(&local, &linalg::axis_angle(u, agent.q[k]));
            k += 1;
        }
        let (p, r, v, w) = match joint.parent {
            None => (
                linalg::add(agent.root_pos, linalg::mat_vec(&heading, joint.offset)),
                linalg::mat_mul(&heading, &local),
                agent.root_vel,
                linalg::add(
                    [0.0, 0.0, agent.yaw_rate],
                    linalg::mat_vec(&heading, omega_rel),
                ),
            ),
            Some(par) => {
                let (pp, pr, pv, pw) = (kin.pos[par], kin.rot[par], kin.lin_vel[par], kin.ang_vel[par]);
                let p = linalg::add(pp, linalg::mat_vec(&pr, joint.offset));
                let v = linalg::add(pv, linalg::cross(pw, linalg::sub(p, pp)));
                let w = linalg::add(pw, linalg::mat_vec(&pr, omega_rel));
                (p, linalg::mat_mul(&pr, &local), v, w)
            }
        };
        kin.pos.push(p);
        kin.rot.push(r);
        kin.local_rot.push(local);
        kin.lin_vel.push(v);
        kin.ang_vel.push(w);
    }
    kin
}

/// World joint positions `[J×3]`.
pub fn forward_kinematics(agent: &AgentState, body: &BodySpec) -> Vec<Vec3> {
    kinematics(agent, body).pos
}

pub fn site_positions(kin: &Kinematics, body: &BodySpec) -> Vec<Vec3> {
    body.sites
        .iter()
        .map(|s| linalg::add(kin.pos[s.joint], linalg::mat_vec(&kin.rot[s.joint], s.offset)))
        .collect()
}

/// Lifts the root so that no end-effector site is below the ground, zeroing
/// downward root velocity when a clamp happens. Returns the contact flag of
/// every site (height ≤ 5 mm).
pub fn ground_contact(agent: &AgentState, body: &BodySpec) -> (AgentState, Vec<bool>) {
    let mut out = agent.clone();
    let kin = kinematics(agent, body);
    let sites = site_positions(&kin, body);
    let min_z = sites.iter().map(|s| s[2]).fold(f64::INFINITY, f64::min);
    let mut heights: Vec<f64> = sites.iter().map(|s| s[2]).collect();
    if min_z < 0.0 {
        out.root_pos[2] -= min_z;
        if out.root_vel[2] < 0.0 {
            out.root_vel[2] = 0.0;
        }
        for h in heights.iter_mut() {
            *h -= min_z;
        }
    }
    let flags = heights.iter().map(|&h| h <= CONTACT_THRESHOLD).collect();
    (out, flags)
}

fn step_agent(
    body: &BodySpec,
    agent: &AgentState,
    cmd: &ActuatorCmd,
    dt: f64,
    gravity: f64,
) -> Result<AgentState> {
    let n = body.axis_count();
    if cmd.0.len() != ROOT_DRIVE_DOFS + n {
        return Err(Error::dim(
            "step",
            format!("command has {} entries, body needs {}", cmd.0.len(), ROOT_DRIVE_DOFS + n),
        ));
    }
    let mut next = agent.clone();

    let targets = &cmd.0[ROOT_DRIVE_DOFS..];
    let tau = pd_torque(&agent.q, &agent.qd, targets, body.kp, body.kd, body.torque_limit);
    let (lower, upper) = (body.lower_limits(), body.upper_limits());
    for i in 0..n {
        let acc = tau[i] - body.damping * agent.qd[i];
        next.qd[i] = agent.qd[i] + acc * dt;
        next.q[i] = agent.q[i] + next.qd[i] * dt;
        if next.q[i] < lower[i] {
            next.q[i] = lower[i];
            next.qd[i] = next.qd[i].max(0.0);
        } else if next.q[i] > upper[i] {
            next.q[i] = upper[i];
            next.qd[i] = next.qd[i].min(0.0);
        }
    }

    let (s, c) = agent.yaw.sin_cos();
    let desired = [c * cmd.0[0], s * cmd.0[0]];
    for (axis, want) in desired.iter().enumerate() {
        next.root_vel[axis] = agent.root_vel[axis] + body.drive_gain * (want - agent.root_vel[axis]) * dt;
        next.root_pos[axis] = agent.root_pos[axis] + next.root_vel[axis] * dt;
    }
    next.yaw_rate = agent.yaw_rate + body.turn_gain * (cmd.0[1] - agent.yaw_rate) * dt;
    next.yaw = agent.yaw + next.yaw_rate * dt;

    // Constant-acceleration update is exact for ballistic flight.
    next.root_pos[2] = agent.root_pos[2] + agent.root_vel[2] * dt - 0.5 * gravity * dt * dt;
    next.root_vel[2] = agent.root_vel[2] - gravity * dt;

    let (next, _) = ground_contact(&next, body);
    if !next.is_finite() {
        return Err(Error::SimFault(format!(
            "non-finite agent state after step: {:?}",
            next.to_flat()
        )));
    }
    Ok(next)
}

/// Advances both agents by `dt`.
pub fn step(
    body: &BodySpec,
    state: &SimState,
    cmds: [&ActuatorCmd; 2],
    dt: f64,
    gravity: f64,
) -> Result<SimState> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::Contract(format!("dt must be positive, got {dt}")));
    }
    Ok(SimState {
        agents: [
            step_agent(body, &state.agents[0], cmds[0], dt, gravity)?,
            step_agent(body, &state.agents[1], cmds[1], dt, gravity)?,
        ],
        time: state.time + dt,
    })
}

/// Kinetic plus gravitational potential energy of one agent (unit-inertia
/// joint axes, point-mass root).
pub fn mechanical_energy(agent: &AgentState, body: &BodySpec, gravity: f64) -> f64 {
    let m = body.total_mass();
    let joint_ke: f64 = agent.qd.iter().map(|v| 0.5 * v * v).sum();
    let root_ke = 0.5 * m * linalg::dot(agent.root_vel, agent.root_vel);
    let yaw_ke = 0.5 * body.yaw_inertia * agent.yaw_rate * agent.yaw_rate;
    joint_ke + root_ke + yaw_ke + m * gravity * agent.root_pos[2]
}

/// Simulator bundling a body, timestep and gravity.
#[derive(Clone, Debug)]
pub struct SimWorld {
    pub body: BodySpec,
    pub dt: f64,
    pub gravity: f64,
    pub state: SimState,
}

impl SimWorld {
    pub fn new(body: BodySpec, state: SimState) -> Self {
        Self {
            body,
            dt: DEFAULT_DT,
            gravity: GRAVITY,
            state,
        }
    }

    pub fn advance(&mut self, cmds: [&ActuatorCmd; 2]) -> Result<()> {
        self.state = step(&self.body, &self.state, cmds, self.dt, self.gravity)?;
        Ok(())
    }

    pub fn hold_command(&self, agent: usize) -> ActuatorCmd {
        let mut v = vec![0.0; ROOT_DRIVE_DOFS];
        v.extend_from_slice(&self.state.agents[agent].q);
        ActuatorCmd(v)
    }
}
