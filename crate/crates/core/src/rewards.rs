//! Control-barrier-function safety reward, goal reward and their analytic
//! gradient with respect to a cartesian control sequence.
//!
//! For a robot position `x` and an agent position `p` the barrier is
//! `h = |x - p|^2 - r^2`. The discrete CBF condition at step `t` is
//! `(h_{t+1} - h_t) / dt + alpha * h_t >= 0`; the per-step reward is the
//! markup-weighted violation `markup^t * min(0, ...)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_positions, ControlSequence, Frame, StateSequence, Vec2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastModel {
    ConstantVelocity,
    Recorded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentForecast {
    /// `T + 1` predicted positions, index 0 is the current position.
    pub positions: Vec<Vec2>,
    pub velocity: Vec2,
}

/// Predicted agent motion over the planning horizon. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleForecast {
    horizon: usize,
    dt: f64,
    model: ForecastModel,
    agents: Vec<AgentForecast>,
}

impl ObstacleForecast {
    pub fn new(horizon: usize, dt: f64, model: ForecastModel, agents: Vec<AgentForecast>) -> Result<Self> {
        for (i, a) in agents.iter().enumerate() {
            if a.positions.len() != horizon + 1 {
                return Err(Error::HorizonMismatch {
                    expected: horizon + 1,
                    found: a.positions.len(),
                });
            }
            if a.positions.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
                return Err(Error::NonFinite(format!("forecast of agent {i}")));
            }
        }
        Ok(Self {
            horizon,
            dt,
            model,
            agents,
        })
    }

    pub fn empty(horizon: usize, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            model: ForecastModel::ConstantVelocity,
            agents: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> ForecastModel {
        self.model
    }

    pub fn agents(&self) -> &[AgentForecast] {
        &self.agents
    }

    /// Agent positions at horizon step `t`.
    pub fn snapshot(&self, t: usize) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.positions[t]).collect()
    }
}

/// How violations from several agents combine within one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AgentAggregation {
    #[default]
    Sum,
    /// Worst violator only.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_cbf: f64,
    pub w_goal: f64,
    /// Collision radius `r` inside the barrier.
    pub radius: f64,
    /// Markup base; step `t` is weighted by `markup^t`.
    pub markup: f64,
    /// Linear class-K coefficient.
    pub alpha: f64,
    pub aggregation: AgentAggregation,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_cbf: 10.0,
            w_goal: 1.0,
            radius: 0.7,
            markup: 1.01,
            alpha: 1.0,
            aggregation: AgentAggregation::Sum,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!(
                "collision radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.markup >= 1.0) {
            return Err(Error::Config(format!("markup must be >= 1, got {}", self.markup)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.w_cbf >= 0.0 && self.w_goal >= 0.0) {
            return Err(Error::Config("reward weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_w_cbf(mut self, w_cbf: f64) -> Self {
        self.w_cbf = w_cbf;
        self
    }
}

pub fn barrier_value(robot: Vec2, human: Vec2, r: f64) -> f64 {
    (robot - human).norm_squared() - r * r
}

/// `dh/dt + alpha * h` for one agent with a forward-difference derivative.
fn cbf_argument(x_t: Vec2, x_next: Vec2, p_t: Vec2, p_next: Vec2, dt: f64, cfg: &RewardConfig) -> f64 {
    let h = barrier_value(x_t, p_t, cfg.radius);
    let h_next = barrier_value(x_next, p_next, cfg.radius);
    (h_next - h) / dt + cfg.alpha * h
}

fn aggregate(args: impl Iterator<Item = f64>, how: AgentAggregation) -> f64 {
    match how {
        AgentAggregation::Sum => args.map(|a| a.min(0.0)).sum(),
        AgentAggregation::Min => args.fold(0.0, |m: f64, a| m.min(a)),
    }
}

/// Unweighted (no `w_cbf`) CBF reward of step `t`; always `<= 0`.
pub fn cbf_reward_step(
    x_t: Vec2,
    x_next: Vec2,
    agents_t: &[Vec2],
    agents_next: &[Vec2],
    t: usize,
    dt: f64,
    cfg: &RewardConfig,
) -> Result<f64> {
    if agents_t.len() != agents_next.len() {
        return Err(Error::HorizonMismatch {
            expected: agents_t.len(),
            found: agents_next.len(),
        });
    }
    let args = agents_t
        .iter()
        .zip(agents_next)
        .map(|(p, q)| cbf_argument(x_t, x_next, *p, *q, dt, cfg));
    Ok(cfg.markup.powi(t as i32) * aggregate(args, cfg.aggregation))
}

pub fn goal_reward(x_final: Vec2, goal: Vec2) -> f64 {
    -(x_final - goal).norm_squared()
}

/// Whether a single control step keeps every agent's discrete CBF condition.
/// `agents` holds (position, velocity) pairs; agents move at constant velocity.
pub fn cbf_admissible(x: Vec2, u_step: Vec2, agents: &[(Vec2, Vec2)], dt: f64, cfg: &RewardConfig) -> bool {
    let x_next = x + dt * u_step;
    agents
        .iter()
        .all(|(p, v)| cbf_argument(x, x_next, *p, p + dt * v, dt, cfg) >= 0.0)
}

/// Composite reward of a robot position sequence (`T + 1` points).
pub fn reward_on_positions(
    positions: &[Vec2],
    forecast: &ObstacleForecast,
    goal: Vec2,
    cfg: &RewardConfig,
) -> Result<f64> {
    let horizon = positions.len().saturating_sub(1);
    if horizon != forecast.horizon() {
        return Err(Error::HorizonMismatch {
            expected: forecast.horizon(),
            found: horizon,
        });
    }
    let dt = forecast.dt();
    let mut total = 0.0;
    if cfg.w_cbf != 0.0 && !forecast.agents().is_empty() {
        let mut gamma = 1.0;
        for t in 0..horizon {
            let args = forecast.agents().iter().map(|a| {
                cbf_argument(
                    positions[t],
                    positions[t + 1],
                    a.positions[t],
                    a.positions[t + 1],
                    dt,
                    cfg,
                )
            });
            total += cfg.w_cbf * gamma * aggregate(args, cfg.aggregation);
            gamma *= cfg.markup;
        }
    }
    Ok(total + cfg.w_goal * goal_reward(positions[horizon], goal))
}

pub fn composite_reward(
    u: &ControlSequence,
    x: &StateSequence,
    forecast: &ObstacleForecast,
    goal: Vec2,
    cfg: &RewardConfig,
) -> Result<f64> {
    if u.horizon() + 1 != x.len() {
        return Err(Error::HorizonMismatch {
            expected: u.horizon() + 1,
            found: x.len(),
        });
    }
    reward_on_positions(&x.positions(), forecast, goal, cfg)
}

/// Reward of a cartesian control sequence rolled through single-integrator
/// dynamics from `start`, together with its exact gradient with respect to
/// every control entry.
///
/// Reverse accumulation: barrier terms give `dR/dx_t`, the rollout
/// `x_{t+1} = x_t + dt u_t` turns that into `dR/du_t = dt * sum_{s>t} dR/dx_s`.
/// The `min(0, .)` kink uses the one-sided derivative (zero when inactive).
pub fn reward_gradient(
    u: &ControlSequence,
    start: Vec2,
    forecast: &ObstacleForecast,
    goal: Vec2,
    cfg: &RewardConfig,
) -> Result<(f64, Vec<Vec2>)> {
    u.expect_frame(Frame::Cartesian)?;
    reward_gradient_raw(u.values(), u.dt(), start, forecast, goal, cfg)
}

pub(crate) fn reward_gradient_raw(
    controls: &[Vec2],
    dt: f64,
    start: Vec2,
    forecast: &ObstacleForecast,
    goal: Vec2,
    cfg: &RewardConfig,
) -> Result<(f64, Vec<Vec2>)> {
    let horizon = controls.len();
    if horizon != forecast.horizon() {
        return Err(Error::HorizonMismatch {
            expected: forecast.horizon(),
            found: horizon,
        });
    }
    let xs = integrate_positions(start, controls, dt);
    let mut dx = vec![Vec2::zeros(); horizon + 1];
    let mut total = 0.0;

    if cfg.w_cbf != 0.0 && !forecast.agents().is_empty() {
        let mut gamma = 1.0;
        let inv_dt = 1.0 / dt;
        for t in 0..horizon {
            let scale = cfg.w_cbf * gamma;
            let mut worst: Option<(f64, usize)> = None;
            for (j, a) in forecast.agents().iter().enumerate() {
                let arg = cbf_argument(xs[t], xs[t + 1], a.positions[t], a.positions[t + 1], dt, cfg);
                match cfg.aggregation {
                    AgentAggregation::Sum => {
                        if arg < 0.0 {
                            total += scale * arg;
                            accumulate_cbf_grad(&mut dx, &xs, a, t, scale, inv_dt, cfg.alpha);
                        }
                    }
                    AgentAggregation::Min => {
                        if arg < worst.map_or(0.0, |w| w.0) {
                            worst = Some((arg, j));
                        }
                    }
                }
            }
            if let Some((arg, j)) = worst {
                total += scale * arg;
                accumulate_cbf_grad(&mut dx, &xs, &forecast.agents()[j], t, scale, inv_dt, cfg.alpha);
            }
            gamma *= cfg.markup;
        }
    }

    let err = xs[horizon] - goal;
    total += -cfg.w_goal * err.norm_squared();
    dx[horizon] += -2.0 * cfg.w_goal * err;

    // x_0 is fixed; u_t moves every x_s with s > t by dt.
    let mut grad = vec![Vec2::zeros(); horizon];
    let mut acc = Vec2::zeros();
    for t in (0..horizon).rev() {
        acc += dx[t + 1];
        grad[t] = dt * acc;
    }
    Ok((total, grad))
}

fn accumulate_cbf_grad(dx: &mut [Vec2], xs: &[Vec2], a: &AgentForecast, t: usize, scale: f64, inv_dt: f64, alpha: f64) {
    // arg = (h_{t+1} - h_t)/dt + alpha h_t;  dh_t/dx_t = 2 (x_t - p_t)
    dx[t] += scale * (alpha - inv_dt) * 2.0 * (xs[t] - a.positions[t]);
    dx[t + 1] += scale * inv_dt * 2.0 * (xs[t + 1] - a.positions[t + 1]);
}
