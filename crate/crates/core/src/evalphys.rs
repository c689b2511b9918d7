//! Physical plausibility metrics over recorded trajectories, reported in
//! millimetres at the fixed frame interval.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{self, Vec3};
use crate::trajectory::AgentTrack;
use crate::{Error, Result};

const MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajMetrics {
    /// Mean lowest end-effector clearance, mm.
    pub floating: f64,
    /// Mean horizontal end-effector slide while in contact, mm/frame.
    pub skating: f64,
    /// Mean third-difference magnitude of joint positions, mm/frame³.
    pub jerk: f64,
}

/// Mean over frames of the lowest end-effector height, clamped at zero.
/// Contact frames enter with their (at most threshold-sized) clearance.
pub fn floating(sites: &[Vec<Vec3>]) -> Result<f64> {
    if sites.is_empty() {
        return Err(Error::Data("floating needs at least one frame".into()));
    }
    let total: f64 = sites
        .iter()
        .map(|f| f.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min).max(0.0))
        .sum();
    Ok(MM * total / sites.len() as f64)
}

/// Mean horizontal displacement of each end-effector between consecutive
/// frames in which it is in contact at both ends. Zero if no such pair.
pub fn skating(sites: &[Vec<Vec3>], contacts: &[Vec<bool>]) -> Result<f64> {
    if sites.len() < 2 || contacts.len() != sites.len() {
        return Err(Error::Data(format!(
            "skating needs >= 2 frames with matching contact flags ({} frames, {} flag rows)",
            sites.len(),
            contacts.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..sites.len() - 1 {
        for (s, (a, b)) in sites[t].iter().zip(&sites[t + 1]).enumerate() {
            if contacts[t][s] && contacts[t + 1][s] {
                sum += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { MM * sum / count as f64 })
}

/// Mean over joints and frames of `‖p[t+3] − 3p[t+2] + 3p[t+1] − p[t]‖`.
pub fn jerk(joints: &[Vec<Vec3>]) -> Result<f64> {
    if joints.len() < 4 {
        return Err(Error::Data(format!("jerk needs >= 4 frames, got {}", joints.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in joints.windows(4) {
        for j in 0..w[0].len() {
            let d = linalg::sub(
                linalg::add(w[3][j], linalg::scale(w[1][j], 3.0)),
                linalg::add(w[0][j], linalg::scale(w[2][j], 3.0)),
            );
            sum += linalg::norm(d);
            count += 1;
        }
    }
    Ok(MM * sum / count as f64)
}

/// All three metrics of one agent's recorded world frames.
pub fn evaluate(track: &AgentTrack) -> Result<TrajMetrics> {
    let sites = track.site_positions();
    Ok(TrajMetrics {
        floating: floating(&sites)?,
        skating: skating(&sites, &track.contact_flags())?,
        jerk: jerk(&track.joint_positions())?,
    })
}

/// Frame-weighted mean of per-agent metrics.
pub fn combine(parts: &[TrajMetrics]) -> TrajMetrics {
    let n = parts.len().max(1) as f64;
    TrajMetrics {
        floating: parts.iter().map(|m| m.floating).sum::<f64>() / n,
        skating: parts.iter().map(|m| m.skating).sum::<f64>() / n,
        jerk: parts.iter().map(|m| m.jerk).sum::<f64>() / n,
    }
}
