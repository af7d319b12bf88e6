use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::AgentState;
use crate::dynamics::{RobotState, Vec2};
use crate::error::{Error, Result};
use crate::rng::{self, mix};

/// Recorded agent positions, one per simulation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTrack {
    pub positions: Vec<Vec2>,
}

impl ReplayTrack {
    /// Position and finite-difference velocity at step `k`; holds still past the end.
    pub fn state_at(&self, k: usize, dt: f64) -> (Vec2, Vec2) {
        let n = self.positions.len();
        if k + 1 < n {
            let p = self.positions[k];
            (p, (self.positions[k + 1] - p) / dt)
        } else {
            (self.positions[n - 1], Vec2::zeros())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub agents: Vec<AgentState>,
    pub robot_start: RobotState,
    pub robot_goal: Vec2,
    pub dt: f64,
    pub max_steps: usize,
    /// When set, agent `i` follows `replay[i]` instead of the social force model.
    pub replay: Option<Vec<ReplayTrack>>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.max_steps == 0 {
            return Err(Error::Config("scenario dt and max_steps must be positive".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.desired_speed > 0.0 && a.radius > 0.0) {
                return Err(Error::Config(format!(
                    "agent {i}: desired speed and radius must be positive"
                )));
            }
            for b in &self.agents[i + 1..] {
                if (a.position - b.position).norm() < a.radius + b.radius {
                    return Err(Error::Placement(format!("agent {i} overlaps another agent")));
                }
            }
        }
        if let Some(tracks) = &self.replay {
            if tracks.len() != self.agents.len() || tracks.iter().any(|t| t.positions.is_empty()) {
                return Err(Error::Config("replay needs one non-empty track per agent".into()));
            }
        }
        if !(self.robot_start.is_finite() && self.robot_goal.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("robot start/goal".into()));
        }
        Ok(())
    }

    /// Agent states at step `k` of a replay scenario.
    pub fn replay_agents(&self, k: usize) -> Option<Vec<AgentState>> {
        let tracks = self.replay.as_ref()?;
        Some(
            self.agents
                .iter()
                .zip(tracks)
                .map(|(a, t)| {
                    let (position, velocity) = t.state_at(k, self.dt);
                    AgentState {
                        position,
                        velocity,
                        ..*a
                    }
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub agents: usize,
    /// Side of the square arena centred on the origin (m).
    pub arena: f64,
    pub agent_radius: f64,
    /// Extra gap between agent disks at placement (m).
    pub min_gap: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Robot start and goal lie on a circle of this radius, diametrically
    /// opposite, so the robot crosses the crowd.
    pub robot_radius_path: f64,
    /// Agents keep this clearance from the robot's start and goal (m).
    pub robot_clearance: f64,
    /// Agent goals are the start mirrored through the arena centre, offset
    /// by up to this much per axis (m).
    pub goal_jitter: f64,
    pub dt: f64,
    pub max_time: f64,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            agents: 20,
            arena: 12.0,
            agent_radius: 0.3,
            min_gap: 0.2,
            speed_min: 0.8,
            speed_max: 1.4,
            robot_radius_path: 5.0,
            robot_clearance: 1.5,
            goal_jitter: 2.0,
            dt: 0.1,
            max_time: 12.0,
            max_attempts: 100_000,
        }
    }
}

fn place(cfg: &GeneratorConfig, seed: u64) -> Result<Scenario> {
    let mut r = rng::rng(seed);
    let theta = r.random_range(0.0..std::f64::consts::TAU);
    let dir = Vec2::new(theta.cos(), theta.sin());
    let start = -cfg.robot_radius_path * dir;
    let goal = cfg.robot_radius_path * dir;
    let half = cfg.arena / 2.0 - cfg.agent_radius;
    let sep = 2.0 * cfg.agent_radius + cfg.min_gap;

    let mut agents: Vec<AgentState> = Vec::with_capacity(cfg.agents);
    let mut attempts = 0;
    while agents.len() < cfg.agents {
        attempts += 1;
        if attempts > cfg.max_attempts {
            return Err(Error::Placement(format!(
                "placed {} of {} agents after {} attempts (seed {seed})",
                agents.len(),
                cfg.agents,
                cfg.max_attempts
            )));
        }
        let p = Vec2::new(r.random_range(-half..half), r.random_range(-half..half));
        let jitter = if cfg.goal_jitter > 0.0 {
            Vec2::new(
                r.random_range(-cfg.goal_jitter..cfg.goal_jitter),
                r.random_range(-cfg.goal_jitter..cfg.goal_jitter),
            )
        } else {
            Vec2::zeros()
        };
        let g = -p + jitter;
        let g = Vec2::new(g.x.clamp(-half, half), g.y.clamp(-half, half));
        let clear = |q: Vec2| (q - start).norm() >= cfg.robot_clearance && (q - goal).norm() >= cfg.robot_clearance;
        if !(clear(p) && clear(g))
            || agents
                .iter()
                .any(|a| (a.position - p).norm() < sep || (a.goal - g).norm() < sep)
        {
            continue;
        }
        agents.push(AgentState {
            position: p,
            velocity: Vec2::zeros(),
            goal: g,
            desired_speed: r.random_range(cfg.speed_min..cfg.speed_max),
            radius: cfg.agent_radius,
        });
    }
    let s = Scenario {
        seed,
        agents,
        robot_start: RobotState::new(start.x, start.y, theta),
        robot_goal: goal,
        dt: cfg.dt,
        max_steps: (cfg.max_time / cfg.dt).round() as usize,
        replay: None,
    };
    s.validate()?;
    Ok(s)
}

fn check_generator(cfg: &GeneratorConfig) -> Result<()> {
    if !(cfg.speed_min > 0.0 && cfg.speed_max > cfg.speed_min && cfg.agent_radius > 0.0 && cfg.dt > 0.0) {
        return Err(Error::Config("invalid scenario generator settings".into()));
    }
    Ok(())
}

/// `count` scenarios; scenario `i` is seeded with `mix(master_seed, i)`.
pub fn generate_scenarios(count: usize, cfg: &GeneratorConfig, master_seed: u64) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(Error::Config("scenario count must be positive".into()));
    }
    check_generator(cfg)?;
    (0..count).map(|i| place(cfg, mix(master_seed, i as u64))).collect()
}

/// Scenario `index` of the list `generate_scenarios` would produce.
pub fn scenario_at(cfg: &GeneratorConfig, master_seed: u64, index: usize) -> Result<Scenario> {
    check_generator(cfg)?;
    place(cfg, mix(master_seed, index as u64))
}
