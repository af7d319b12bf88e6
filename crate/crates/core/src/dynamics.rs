//! Robot and pedestrian motion models.
//!
//! Pedestrians (and the flow model's output frame) follow single-integrator
//! dynamics; the robot is a unicycle. Both are integrated with explicit Euler.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Speed below which a cartesian velocity has no usable heading.
pub const HEADING_EPS: f64 = 1e-3;

/// Default control period in seconds.
pub const DEFAULT_DT: f64 = 0.1;

/// Default horizon length in steps (4 s at 0.1 s).
pub const DEFAULT_HORIZON: usize = 40;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub t: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            t: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.t.is_finite()
    }

    /// One explicit-Euler unicycle update.
    pub fn step_unicycle(&self, v: f64, omega: f64, dt: f64) -> Self {
        Self {
            x: self.x + dt * v * self.theta.cos(),
            y: self.y + dt * v * self.theta.sin(),
            theta: wrap_angle(self.theta + dt * omega),
            t: self.t + dt,
        }
    }
}

/// Interpretation of the two components of each control entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// (vx, vy) in m/s.
    Cartesian,
    /// (v, ω) in m/s and rad/s.
    Unicycle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    frame: Frame,
    dt: f64,
    values: Vec<Vec2>,
}

impl ControlSequence {
    pub fn new(frame: Frame, dt: f64, values: Vec<Vec2>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::Config("control sequence needs at least one step".into()));
        }
        if let Some(i) = values.iter().position(|u| !(u.x.is_finite() && u.y.is_finite())) {
            return Err(Error::NonFinite(format!("control step {i}")));
        }
        Ok(Self { frame, dt, values })
    }

    pub fn zeros(frame: Frame, horizon: usize, dt: f64) -> Self {
        Self::new(frame, dt, vec![Vec2::zeros(); horizon.max(1)]).expect("zero controls are valid")
    }

    /// Builds a sequence from interleaved `[a0, b0, a1, b1, ...]` values.
    pub fn from_flat(frame: Frame, dt: f64, flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Config(format!("odd flat control length {}", flat.len())));
        }
        let values = flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect();
        Self::new(frame, dt, values)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|u| [u.x, u.y]).collect()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Vec2] {
        &self.values
    }

    pub fn expect_frame(&self, expected: Frame) -> Result<()> {
        if self.frame != expected {
            return Err(Error::FrameMismatch {
                expected,
                found: self.frame,
            });
        }
        Ok(())
    }

    /// Receding-horizon shift: drops the executed first step and repeats the last.
    pub fn shifted(&self) -> Self {
        let mut values = self.values[1..].to_vec();
        values.push(*self.values.last().expect("non-empty"));
        Self {
            frame: self.frame,
            dt: self.dt,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    dt: f64,
    states: Vec<RobotState>,
}

impl StateSequence {
    pub fn states(&self) -> &[RobotState] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.states.iter().map(RobotState::position).collect()
    }

    pub fn last(&self) -> &RobotState {
        self.states.last().expect("rollouts are never empty")
    }
}

/// Explicit-Euler positions of a single integrator: `T + 1` points.
pub fn integrate_positions(start: Vec2, controls: &[Vec2], dt: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    let mut p = start;
    out.push(p);
    for u in controls {
        p += dt * u;
        out.push(p);
    }
    out
}

pub fn rollout_single_integrator(start: Vec2, u: &ControlSequence) -> Result<StateSequence> {
    u.expect_frame(Frame::Cartesian)?;
    if !(start.x.is_finite() && start.y.is_finite()) {
        return Err(Error::NonFinite("rollout start".into()));
    }
    let dt = u.dt();
    let mut theta = 0.0;
    let states = integrate_positions(start, u.values(), dt)
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            if k > 0 {
                let v = u.values()[k - 1];
                if v.norm() >= HEADING_EPS {
                    theta = v.y.atan2(v.x);
                }
            }
            RobotState {
                x: p.x,
                y: p.y,
                theta: wrap_angle(theta),
                t: k as f64 * dt,
            }
        })
        .collect();
    Ok(StateSequence { dt, states })
}

pub fn rollout_unicycle(start: RobotState, u: &ControlSequence) -> Result<StateSequence> {
    u.expect_frame(Frame::Unicycle)?;
    if !start.is_finite() {
        return Err(Error::NonFinite("rollout start".into()));
    }
    let dt = u.dt();
    let mut states = Vec::with_capacity(u.horizon() + 1);
    let mut s = start;
    states.push(s);
    for c in u.values() {
        s = s.step_unicycle(c.x, c.y, dt);
        // keep timestamps an exact multiple of dt from the start
        s.t = start.t + states.len() as f64 * dt;
        states.push(s);
    }
    Ok(StateSequence { dt, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleLimits {
    pub v_max: f64,
    pub omega_max: f64,
}

impl Default for UnicycleLimits {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            omega_max: PI,
        }
    }
}

/// Converts desired cartesian velocities into clamped heading-tracking unicycle
/// controls, advancing the heading with the clamped turn rate.
pub fn cartesian_to_unicycle(
    start: RobotState,
    u: &ControlSequence,
    limits: UnicycleLimits,
) -> Result<ControlSequence> {
    u.expect_frame(Frame::Cartesian)?;
    if !(limits.v_max > 0.0 && limits.omega_max > 0.0) {
        return Err(Error::Config("unicycle limits must be positive".into()));
    }
    let dt = u.dt();
    let mut theta = start.theta;
    let mut out = Vec::with_capacity(u.horizon());
    for c in u.values() {
        let speed = c.norm();
        let (v, omega) = if speed < HEADING_EPS {
            (0.0, 0.0)
        } else {
            let turn = wrap_angle(c.y.atan2(c.x) - theta) / dt;
            (speed.min(limits.v_max), turn.clamp(-limits.omega_max, limits.omega_max))
        };
        theta = wrap_angle(theta + dt * omega);
        out.push(Vec2::new(v, omega));
    }
    ControlSequence::new(Frame::Unicycle, dt, out)
}
