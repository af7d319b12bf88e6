//! Closed-loop evaluation world: social-force pedestrians that also react to
//! the robot, constant-velocity forecasting, scenario generation and episodes.

mod episode;
mod scenario;

use serde::{Deserialize, Serialize};

pub use episode::{
    run_episode, AgentRecord, ClosedLoop, EpisodeHeader, EpisodeLog, EpisodeSummary, LogLine, SimConfig, StepRecord,
};
pub use scenario::{generate_scenarios, scenario_at, GeneratorConfig, ReplayTrack, Scenario};

use crate::dynamics::Vec2;
use crate::error::Result;
use crate::rewards::{AgentForecast, ForecastModel, ObstacleForecast};
use crate::rng::mix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub goal: Vec2,
    pub desired_speed: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmParams {
    /// Relaxation time of the driving force (s).
    pub tau_relax: f64,
    /// Repulsion strength (m/s^2).
    pub a: f64,
    /// Repulsion range (m).
    pub b: f64,
    /// Speed cap as a multiple of the desired speed.
    pub max_speed_factor: f64,
    pub robot_radius: f64,
    /// Within this distance of its goal an agent's desired velocity is zero.
    pub arrival_radius: f64,
    /// Seed for the coincident-position tie-break.
    pub tie_seed: u64,
}

impl Default for SfmParams {
    fn default() -> Self {
        Self {
            tau_relax: 0.5,
            a: 2.0,
            b: 0.3,
            max_speed_factor: 1.3,
            robot_radius: 0.3,
            arrival_radius: 0.3,
            tie_seed: 0,
        }
    }
}

/// Unit vector pointing from `j` to `i` when the two coincide: an angle
/// hashed from the unordered pair, flipped for the second member so the pair
/// pushes apart.
fn tie_break(seed: u64, i: usize, j: usize) -> Vec2 {
    let (lo, hi) = (i.min(j) as u64, i.max(j) as u64);
    let h = mix(mix(seed, lo), hi);
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    let n = Vec2::new(angle.cos(), angle.sin());
    if i < j {
        n
    } else {
        -n
    }
}

fn repulsion(pi: Vec2, pj: Vec2, r_sum: f64, i: usize, j: usize, p: &SfmParams) -> Vec2 {
    let diff = pi - pj;
    let d = diff.norm();
    let n = if d > 1e-12 {
        diff / d
    } else {
        tie_break(p.tie_seed, i, j)
    };
    p.a * ((r_sum - d) / p.b).exp() * n
}

/// Total social force on agent `i`.
pub fn sfm_force(agents: &[AgentState], i: usize, robot: Option<Vec2>, p: &SfmParams) -> Vec2 {
    let a = &agents[i];
    let to_goal = a.goal - a.position;
    let dist = to_goal.norm();
    let desired = if dist > p.arrival_radius {
        a.desired_speed / dist * to_goal
    } else {
        Vec2::zeros()
    };
    let mut f = (desired - a.velocity) / p.tau_relax;
    for (j, b) in agents.iter().enumerate() {
        if j != i {
            f += repulsion(a.position, b.position, a.radius + b.radius, i, j, p);
        }
    }
    if let Some(r) = robot {
        f += repulsion(a.position, r, a.radius + p.robot_radius, i, agents.len(), p);
    }
    f
}

/// One explicit step: velocities from the forces at the current
/// configuration, speed-capped, then positions advance with the new velocity.
pub fn sfm_step(agents: &[AgentState], robot: Option<Vec2>, dt: f64, p: &SfmParams) -> Vec<AgentState> {
    (0..agents.len())
        .map(|i| {
            let a = agents[i];
            let mut v = a.velocity + dt * sfm_force(agents, i, robot, p);
            let cap = p.max_speed_factor * a.desired_speed;
            let s = v.norm();
            if s > cap {
                v *= cap / s;
            }
            AgentState {
                position: a.position + dt * v,
                velocity: v,
                ..a
            }
        })
        .collect()
}

/// Positions `p + k dt v` for `k = 0..=T`.
pub fn forecast_constant_velocity(agents: &[AgentState], horizon: usize, dt: f64) -> Result<ObstacleForecast> {
    let f = agents
        .iter()
        .map(|a| AgentForecast {
            positions: (0..=horizon)
                .map(|k| a.position + (k as f64 * dt) * a.velocity)
                .collect(),
            velocity: a.velocity,
        })
        .collect();
    ObstacleForecast::new(horizon, dt, ForecastModel::ConstantVelocity, f)
}
