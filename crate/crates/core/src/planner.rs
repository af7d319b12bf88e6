//! Receding-horizon planner tying the guided sampler and MPPI together.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{cartesian_to_unicycle, integrate_positions, ControlSequence, Frame, RobotState, Vec2};
use crate::error::{Error, Result};
use crate::flow::{Condition, FlowModel};
use crate::guidance::{generate_batch, GuidanceConfig, GuidanceContext};
use crate::mppi::{gaussian_prior_batch, mppi_update, trajectory_cost, MppiConfig, PlanResult};
use crate::rewards::{reward_on_positions, ObstacleForecast};
use crate::rng::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerMode {
    /// Gaussian-prior MPPI around the shifted previous solution.
    Mppi,
    /// Highest-reward guided sample, executed directly.
    Cfm,
    /// Guided samples (warm-started from the previous solution) refined by MPPI.
    CfmMppi,
}

impl PlannerMode {
    pub const ALL: [PlannerMode; 3] = [PlannerMode::Mppi, PlannerMode::Cfm, PlannerMode::CfmMppi];

    pub fn name(self) -> &'static str {
        match self {
            PlannerMode::Mppi => "mppi",
            PlannerMode::Cfm => "cfm",
            PlannerMode::CfmMppi => "cfm-mppi",
        }
    }

    pub fn needs_model(self) -> bool {
        self != PlannerMode::Mppi
    }
}

impl fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown planner mode '{s}' (expected mppi, cfm or cfm-mppi)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub mode: PlannerMode,
    pub horizon: usize,
    pub dt: f64,
    /// Samples per step in `mppi` mode; the guided modes use the guidance batch size.
    pub samples: usize,
    pub seed: u64,
    /// Goal offsets in the model condition are clipped to this radius (meters).
    pub goal_clip: f64,
    /// Re-noise the previous solution in `cfm-mppi` mode.
    pub warm_start: bool,
    /// Measure wall-clock planning time (disable for byte-reproducible logs).
    pub record_timing: bool,
    pub guidance: GuidanceConfig,
    pub mppi: MppiConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mode: PlannerMode::CfmMppi,
            horizon: crate::dynamics::DEFAULT_HORIZON,
            dt: crate::dynamics::DEFAULT_DT,
            samples: 200,
            seed: 0,
            goal_clip: 4.8,
            warm_start: true,
            record_timing: true,
            guidance: GuidanceConfig::default(),
            mppi: MppiConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("horizon and dt must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if !(self.goal_clip > 0.0) {
            return Err(Error::Config("goal_clip must be positive".into()));
        }
        self.guidance.validate()?;
        self.mppi.validate()
    }
}

/// What the planner observes at one step.
#[derive(Debug, Clone)]
pub struct WorldSnapshot {
    pub robot: RobotState,
    pub goal: Vec2,
    pub forecast: ObstacleForecast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub result: PlanResult,
    /// First unicycle control `(v, omega)` of the transformed solution.
    pub control: Vec2,
}

pub struct Planner {
    cfg: PlannerConfig,
    model: Option<FlowModel<f32>>,
    nominal: Option<ControlSequence>,
    history: VecDeque<Vec2>,
    step: u64,
}

impl Planner {
    pub fn new(cfg: PlannerConfig, model: Option<FlowModel<f32>>) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode.needs_model() {
            let m = model
                .as_ref()
                .ok_or_else(|| Error::Config(format!("mode {} needs a flow model checkpoint", cfg.mode)))?;
            if m.desc.horizon != cfg.horizon || (m.desc.dt - cfg.dt).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "model horizon/dt ({}, {}) differ from planner ({}, {})",
                    m.desc.horizon, m.desc.dt, cfg.horizon, cfg.dt
                )));
            }
        }
        Ok(Self {
            cfg,
            model,
            nominal: None,
            history: VecDeque::new(),
            step: 0,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    /// Executed cartesian controls, oldest first.
    pub fn history(&self) -> Vec<Vec2> {
        self.history.iter().copied().collect()
    }

    /// Shifted previous solution used as the next nominal / warm start.
    pub fn nominal(&self) -> Option<&ControlSequence> {
        self.nominal.as_ref()
    }

    pub fn reset(&mut self) {
        self.nominal = None;
        self.history.clear();
        self.step = 0;
    }

    /// Model conditioning for `world`: ego-frame goal offset and executed history.
    pub fn condition(&self, world: &WorldSnapshot) -> Condition {
        let h = self.model.as_ref().map_or(0, |m| m.desc.history);
        let mut g = world.goal - world.robot.position();
        let n = g.norm();
        if n > self.cfg.goal_clip {
            g *= self.cfg.goal_clip / n;
        }
        let past: Vec<Vec2> = self.history.iter().copied().collect();
        Condition::new(Vec2::zeros(), g, &past, h)
    }

    pub fn plan_step(&mut self, world: &WorldSnapshot) -> Result<PlanOutput> {
        let start = Instant::now();
        if world.forecast.horizon() != self.cfg.horizon {
            return Err(Error::HorizonMismatch {
                expected: self.cfg.horizon,
                found: world.forecast.horizon(),
            });
        }
        let seed = mix(self.cfg.seed, self.step);
        let robot = world.robot;
        let mcfg = &self.cfg.mppi;
        let cost = |u: &ControlSequence| trajectory_cost(u, robot, &world.forecast, world.goal, mcfg);

        let mut result = match self.cfg.mode {
            PlannerMode::Mppi => {
                let nominal = self
                    .nominal
                    .clone()
                    .unwrap_or_else(|| ControlSequence::zeros(Frame::Cartesian, self.cfg.horizon, self.cfg.dt));
                let samples = gaussian_prior_batch(&nominal, mcfg.sigma, self.cfg.samples, seed)?;
                let costs = samples.iter().map(cost).collect::<Result<Vec<_>>>()?;
                mppi_update(&samples, &costs, mcfg.lambda)?
            }
            PlannerMode::Cfm | PlannerMode::CfmMppi => {
                let model = self.model.as_ref().expect("checked in new");
                let ctx = GuidanceContext {
                    condition: self.condition(world),
                    start: robot.position(),
                    goal: world.goal,
                    forecast: world.forecast.clone(),
                };
                let warm = match self.cfg.mode {
                    PlannerMode::CfmMppi if self.cfg.warm_start => self.nominal.as_ref(),
                    _ => None,
                };
                let batch = generate_batch(model, &ctx, &self.cfg.guidance, &mcfg.reward, seed, warm)?;
                let samples: Vec<ControlSequence> = batch.controls().cloned().collect();
                let costs = samples.iter().map(cost).collect::<Result<Vec<_>>>()?;
                if self.cfg.mode == PlannerMode::CfmMppi {
                    mppi_update(&samples, &costs, mcfg.lambda)?
                } else {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (k, u) in samples.iter().enumerate() {
                        let xs = integrate_positions(robot.position(), u.values(), self.cfg.dt);
                        let r = reward_on_positions(&xs, &world.forecast, world.goal, &mcfg.reward)?;
                        if r > best.0 {
                            best = (r, k);
                        }
                    }
                    let mut weights = vec![0.0; samples.len()];
                    weights[best.1] = 1.0;
                    PlanResult {
                        u_star: samples[best.1].clone(),
                        costs,
                        weights,
                        planning_time_s: 0.0,
                    }
                }
            }
        };

        let uni = cartesian_to_unicycle(robot, &result.u_star, mcfg.limits)?;
        let control = uni.values()[0];
        if !(control.x.is_finite() && control.y.is_finite()) {
            return Err(Error::NonFinite("planned control".into()));
        }
        let executed = control.x * Vec2::new(robot.theta.cos(), robot.theta.sin());
        self.history.push_back(executed);
        let h = self.model.as_ref().map_or(0, |m| m.desc.history);
        while self.history.len() > h {
            self.history.pop_front();
        }
        self.nominal = Some(result.u_star.shifted());
        self.step += 1;
        if self.cfg.record_timing {
            result.planning_time_s = start.elapsed().as_secs_f64();
        }
        Ok(PlanOutput { result, control })
    }
}
