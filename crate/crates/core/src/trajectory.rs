//! Recorded two-agent trajectories in behavior-frame layout.

use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::Vec3;
use crate::representation::{encode_pair, ExteroKind, FrameLayout};
use crate::simworld::{kinematics, site_positions, AgentState, BodySpec, CONTACT_THRESHOLD};
use crate::{Error, Result};

/// World-space snapshot of one agent at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldFrame {
    /// Flat [`AgentState`] (see [`AgentState::to_flat`]).
    pub raw: Vec<f64>,
    pub joints: Vec<Vec3>,
    pub sites: Vec<Vec3>,
}

impl WorldFrame {
    pub fn capture(agent: &AgentState, body: &BodySpec) -> Self {
        let kin = kinematics(agent, body);
        Self {
            raw: agent.to_flat(),
            sites: site_positions(&kin, body),
            joints: kin.pos,
        }
    }

    pub fn contacts(&self) -> Vec<bool> {
        self.sites.iter().map(|s| s[2] <= CONTACT_THRESHOLD).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentTrack {
    pub proprio: Vec<Vec<f64>>,
    pub extero: Vec<Vec<f64>>,
    pub action: Vec<Vec<f64>>,
    pub world: Vec<WorldFrame>,
}

impl AgentTrack {
    pub fn len(&self) -> usize {
        self.proprio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proprio.is_empty()
    }

    /// `[x_p, x_e, x_a]` of frame `n`.
    pub fn frame(&self, n: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.proprio[n].len() + self.extero[n].len() + self.action[n].len());
        v.extend_from_slice(&self.proprio[n]);
        v.extend_from_slice(&self.extero[n]);
        v.extend_from_slice(&self.action[n]);
        v
    }

    pub fn joint_positions(&self) -> Vec<Vec<Vec3>> {
        self.world.iter().map(|w| w.joints.clone()).collect()
    }

    pub fn site_positions(&self) -> Vec<Vec<Vec3>> {
        self.world.iter().map(|w| w.sites.clone()).collect()
    }

    pub fn contact_flags(&self) -> Vec<Vec<bool>> {
        self.world.iter().map(WorldFrame::contacts).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub command: String,
    pub success: bool,
    pub agents: [AgentTrack; 2],
}

impl Trajectory {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.agents[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents[0].is_empty()
    }

    /// Encodes both agents' current state and appends a frame with the given
    /// actions.
    pub fn record(
        &mut self,
        kind: ExteroKind,
        agents: &[AgentState; 2],
        body: &BodySpec,
        actions: [&[f64]; 2],
    ) -> Result<()> {
        let enc = encode_pair(kind, agents, body)?;
        for (a, (xp, xe)) in enc.into_iter().enumerate() {
            let track = &mut self.agents[a];
            track.proprio.push(xp);
            track.extero.push(xe);
            track.action.push(actions[a].to_vec());
            track.world.push(WorldFrame::capture(&agents[a], body));
        }
        Ok(())
    }

    pub fn check_layout(&self, layout: &FrameLayout) -> Result<()> {
        for track in &self.agents {
            if track.len() != self.len() || track.extero.len() != track.len() || track.action.len() != track.len() {
                return Err(Error::Data("agent tracks differ in length".into()));
            }
            for n in 0..track.len() {
                if track.proprio[n].len() != layout.proprio
                    || track.extero[n].len() != layout.extero
                    || track.action[n].len() != layout.action
                {
                    return Err(Error::Data(alloc::format!("frame {n} does not match the layout")));
                }
            }
        }
        Ok(())
    }
}
