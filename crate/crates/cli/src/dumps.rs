//! Plot-ready JSON layouts for sample batches, plans and trajectories.

use serde::Serialize;

use flowmppi_core::dynamics::{integrate_positions, ControlSequence, Frame, RobotState, Vec2};
use flowmppi_core::flow::FlowModel;
use flowmppi_core::guidance::{generate_batch, GuidanceConfig, GuidanceContext, SampleBatch};
use flowmppi_core::mppi::{gaussian_prior_batch, trajectory_cost, MppiConfig};
use flowmppi_core::planner::{PlanOutput, PlannerConfig, PlannerMode, WorldSnapshot};
use flowmppi_core::rewards::reward_on_positions;
use flowmppi_core::sim::{ClosedLoop, EpisodeLog};
use flowmppi_core::Result;

#[derive(Serialize)]
pub struct SampleDump {
    pub w_cbf: Option<f64>,
    pub warm_started: bool,
    pub reward: f64,
    pub controls: Vec<Vec2>,
    /// Single-integrator rollout from the robot position, `T + 1` points.
    pub positions: Vec<Vec2>,
}

#[derive(Serialize)]
pub struct BatchDump {
    pub label: String,
    pub step: usize,
    pub robot: RobotState,
    pub goal: Vec2,
    /// Forecast positions per agent, `T + 1` each.
    pub agents: Vec<Vec<Vec2>>,
    /// Solution the batch was warm-started from.
    pub previous: Option<Vec<Vec2>>,
    pub samples: Vec<SampleDump>,
}

pub fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("dump serializes")
}

fn context(l: &ClosedLoop, world: &WorldSnapshot) -> GuidanceContext {
    GuidanceContext {
        condition: l.planner().condition(world),
        start: world.robot.position(),
        goal: world.goal,
        forecast: world.forecast.clone(),
    }
}

fn header(l: &ClosedLoop, world: &WorldSnapshot, label: &str) -> BatchDump {
    BatchDump {
        label: label.to_string(),
        step: l.step_index(),
        robot: world.robot,
        goal: world.goal,
        agents: world.forecast.agents().iter().map(|a| a.positions.clone()).collect(),
        previous: None,
        samples: Vec::new(),
    }
}

fn from_batch(mut d: BatchDump, b: &SampleBatch, dt: f64) -> BatchDump {
    let start = d.robot.position();
    d.samples = b
        .samples
        .iter()
        .map(|s| SampleDump {
            w_cbf: Some(s.w_cbf),
            warm_started: s.warm_started,
            reward: s.reward,
            controls: s.controls.values().to_vec(),
            positions: integrate_positions(start, s.controls.values(), dt),
        })
        .collect();
    d
}

fn batch(
    l: &ClosedLoop,
    model: &FlowModel<f32>,
    pc: &PlannerConfig,
    g: &GuidanceConfig,
    seed: u64,
    warm: Option<&ControlSequence>,
    label: &str,
) -> Result<BatchDump> {
    let world = l.world()?;
    let b = generate_batch(model, &context(l, &world), g, &pc.mppi.reward, seed, warm)?;
    let mut d = from_batch(header(l, &world, label), &b, pc.dt);
    d.previous = warm.map(|u| u.values().to_vec());
    Ok(d)
}

/// Cold guided batch with the configured weights.
pub fn guided(l: &ClosedLoop, model: &FlowModel<f32>, pc: &PlannerConfig, seed: u64) -> Result<BatchDump> {
    batch(l, model, pc, &pc.guidance, seed, None, "cfm-guided")
}

/// Same noise, guidance off.
pub fn unguided(l: &ClosedLoop, model: &FlowModel<f32>, pc: &PlannerConfig, seed: u64) -> Result<BatchDump> {
    let g = GuidanceConfig {
        lambda_guide: 0.0,
        ..pc.guidance.clone()
    };
    batch(l, model, pc, &g, seed, None, "cfm-unguided")
}

/// Gaussian MPPI prior around the planner's nominal (zeros before the
/// first step), scored with the MPPI reward.
pub fn gaussian(l: &ClosedLoop, pc: &PlannerConfig, seed: u64) -> Result<BatchDump> {
    let world = l.world()?;
    let nominal = l
        .planner()
        .nominal()
        .cloned()
        .unwrap_or_else(|| ControlSequence::zeros(Frame::Cartesian, pc.horizon, pc.dt));
    let samples = gaussian_prior_batch(&nominal, pc.mppi.sigma, pc.guidance.batch_size(), seed)?;
    let mut d = header(l, &world, "gaussian");
    let start = world.robot.position();
    d.samples = samples
        .iter()
        .map(|u| {
            let xs = integrate_positions(start, u.values(), pc.dt);
            let reward = reward_on_positions(&xs, &world.forecast, world.goal, &pc.mppi.reward)?;
            Ok(SampleDump {
                w_cbf: None,
                warm_started: false,
                reward,
                controls: u.values().to_vec(),
                positions: xs,
            })
        })
        .collect::<Result<_>>()?;
    d.previous = Some(nominal.values().to_vec());
    Ok(d)
}

/// One batch per configured `w_CBF`, `samples_per_weight` samples each.
pub fn wcbf_sweep(
    l: &ClosedLoop,
    model: &FlowModel<f32>,
    pc: &PlannerConfig,
    seed: u64,
) -> Result<Vec<(f64, BatchDump)>> {
    pc.guidance
        .w_cbf_set
        .iter()
        .map(|w| {
            let g = GuidanceConfig {
                w_cbf_set: vec![*w],
                ..pc.guidance.clone()
            };
            Ok((*w, batch(l, model, pc, &g, seed, None, &format!("w_cbf={w}"))?))
        })
        .collect()
}

pub const WARM_SWEEP: [f64; 4] = [0.0, 0.3, 0.6, 0.9];

/// Warm starts from the planner's current nominal at each `WARM_SWEEP` tau.
pub fn warm_sweep(
    l: &ClosedLoop,
    model: &FlowModel<f32>,
    pc: &PlannerConfig,
    seed: u64,
) -> Result<Vec<(f64, BatchDump)>> {
    let nominal = l
        .planner()
        .nominal()
        .cloned()
        .ok_or_else(|| flowmppi_core::Error::Config("warm sweep needs --at-step >= 1".into()))?;
    WARM_SWEEP
        .iter()
        .map(|tau| {
            let g = GuidanceConfig {
                tau_ws: *tau,
                ..pc.guidance.clone()
            };
            Ok((
                *tau,
                batch(l, model, pc, &g, seed, Some(&nominal), &format!("tau_ws={tau}"))?,
            ))
        })
        .collect()
}

#[derive(Serialize)]
pub struct PlanDump {
    pub robot: RobotState,
    pub goal: Vec2,
    pub control: Vec2,
    pub u_star: Vec<Vec2>,
    pub u_star_cost: f64,
    pub costs: Vec<f64>,
    pub weights: Vec<f64>,
    pub effective_sample_size: f64,
    pub planning_time_s: f64,
}

pub fn plan(world: &WorldSnapshot, out: &PlanOutput, mppi: &MppiConfig) -> Result<PlanDump> {
    let r = &out.result;
    Ok(PlanDump {
        robot: world.robot,
        goal: world.goal,
        control: out.control,
        u_star: r.u_star.values().to_vec(),
        u_star_cost: trajectory_cost(&r.u_star, world.robot, &world.forecast, world.goal, mppi)?,
        costs: r.costs.clone(),
        weights: r.weights.clone(),
        effective_sample_size: r.effective_sample_size(),
        planning_time_s: r.planning_time_s,
    })
}

#[derive(Serialize)]
pub struct TrajectoryDump {
    pub method: PlannerMode,
    pub goal: Vec2,
    pub robot: Vec<Vec2>,
    /// Per step, every agent position.
    pub agents: Vec<Vec<Vec2>>,
    pub reached: bool,
}

pub fn trajectories(runs: &[(PlannerMode, EpisodeLog)]) -> Vec<TrajectoryDump> {
    runs.iter()
        .map(|(m, log)| TrajectoryDump {
            method: *m,
            goal: log.header.goal,
            robot: log.steps.iter().map(|s| s.robot.position()).collect(),
            agents: log
                .steps
                .iter()
                .map(|s| s.agents.iter().map(|a| a.p).collect())
                .collect(),
            reached: log.summary.reached,
        })
        .collect()
}
