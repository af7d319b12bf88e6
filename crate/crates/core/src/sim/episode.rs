use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{forecast_constant_velocity, sfm_step, AgentState, Scenario, SfmParams};
use crate::dynamics::{RobotState, Vec2};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::planner::{PlanOutput, Planner, PlannerConfig, PlannerMode, WorldSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub sfm: SfmParams,
    /// Episode ends once the robot is this close to its goal (m).
    pub goal_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sfm: SfmParams::default(),
            goal_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub scenario_seed: u64,
    pub mode: PlannerMode,
    pub planner_seed: u64,
    pub dt: f64,
    pub horizon: usize,
    pub robot_start: RobotState,
    pub goal: Vec2,
    pub agents: usize,
    pub replay: bool,
    pub goal_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub p: Vec2,
    pub v: Vec2,
}

/// World state at one step and the control applied from it. The terminal
/// record carries no control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub robot: RobotState,
    pub agents: Vec<AgentRecord>,
    /// Executed unicycle control `(v, omega)`.
    pub control: Option<Vec2>,
    pub plan_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub reached: bool,
    pub final_distance: f64,
    /// Planner error that aborted the episode.
    pub failure: Option<String>,
}

/// One JSON object per line: a header, one record per step, a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Header(EpisodeHeader),
    Step(StepRecord),
    Summary(EpisodeSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

impl EpisodeLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &LogLine::Header(self.header.clone()))?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, &LogLine::Step(s.clone()))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &LogLine::Summary(self.summary.clone()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(Error::TruncatedLog("records after the summary".into()));
            }
            match serde_json::from_str(&line)? {
                LogLine::Header(h) if header.is_none() => header = Some(h),
                LogLine::Header(_) => return Err(Error::TruncatedLog("duplicate header".into())),
                LogLine::Step(s) => steps.push(s),
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| Error::TruncatedLog("missing header".into()))?;
        let summary = summary.ok_or_else(|| Error::TruncatedLog("missing summary".into()))?;
        Ok(Self { header, steps, summary })
    }
}

fn record(step: usize, t: f64, robot: RobotState, agents: &[AgentState]) -> StepRecord {
    StepRecord {
        step,
        t,
        robot,
        agents: agents
            .iter()
            .map(|a| AgentRecord {
                p: a.position,
                v: a.velocity,
            })
            .collect(),
        control: None,
        plan_time_s: None,
    }
}

/// Stepwise closed loop over one scenario: observe, forecast, plan, move
/// the robot, move the agents.
pub struct ClosedLoop<'a> {
    scenario: &'a Scenario,
    sim: SimConfig,
    planner: Planner,
    robot: RobotState,
    agents: Vec<AgentState>,
    k: usize,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(
        scenario: &'a Scenario,
        planner_cfg: &PlannerConfig,
        model: Option<&FlowModel<f32>>,
        sim: &SimConfig,
    ) -> Result<Self> {
        scenario.validate()?;
        Ok(Self {
            scenario,
            sim: *sim,
            planner: Planner::new(planner_cfg.clone(), model.cloned())?,
            robot: scenario.robot_start,
            agents: scenario.replay_agents(0).unwrap_or_else(|| scenario.agents.clone()),
            k: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn robot(&self) -> RobotState {
        self.robot
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn goal_distance(&self) -> f64 {
        (self.robot.position() - self.scenario.robot_goal).norm()
    }

    /// Goal reached or step limit hit.
    pub fn finished(&self) -> bool {
        self.k >= self.scenario.max_steps || self.goal_distance() < self.sim.goal_tolerance
    }

    /// What the planner sees now: exact robot state, goal and a
    /// constant-velocity forecast of the agents.
    pub fn world(&self) -> Result<WorldSnapshot> {
        let cfg = self.planner.config();
        Ok(WorldSnapshot {
            robot: self.robot,
            goal: self.scenario.robot_goal,
            forecast: forecast_constant_velocity(&self.agents, cfg.horizon, cfg.dt)?,
        })
    }

    /// Current state as a log record, without control.
    pub fn record(&self) -> StepRecord {
        record(self.k, self.robot.t, self.robot, &self.agents)
    }

    /// Plans from the current state, applies the first control and advances
    /// the world by one step. Returns the record of the state planned from.
    pub fn step(&mut self) -> Result<(StepRecord, PlanOutput)> {
        let world = self.world()?;
        let out = self.planner.plan_step(&world)?;
        let mut rec = self.record();
        rec.control = Some(out.control);
        rec.plan_time_s = Some(out.result.planning_time_s);

        let robot_pos = self.robot.position();
        self.robot = self.robot.step_unicycle(out.control.x, out.control.y, self.scenario.dt);
        self.agents = match self.scenario.replay_agents(self.k + 1) {
            Some(a) => a,
            None => sfm_step(&self.agents, Some(robot_pos), self.scenario.dt, &self.sim.sfm),
        };
        self.k += 1;
        Ok((rec, out))
    }
}

/// Runs a [`ClosedLoop`] until the goal tolerance or the step limit. A
/// planner error ends the episode with the message in the summary.
pub fn run_episode(
    scenario: &Scenario,
    planner_cfg: &PlannerConfig,
    model: Option<&FlowModel<f32>>,
    sim: &SimConfig,
) -> Result<EpisodeLog> {
    let mut sim_loop = ClosedLoop::new(scenario, planner_cfg, model, sim)?;
    let header = EpisodeHeader {
        scenario_seed: scenario.seed,
        mode: planner_cfg.mode,
        planner_seed: planner_cfg.seed,
        dt: scenario.dt,
        horizon: planner_cfg.horizon,
        robot_start: scenario.robot_start,
        goal: scenario.robot_goal,
        agents: scenario.agents.len(),
        replay: scenario.replay.is_some(),
        goal_tolerance: sim.goal_tolerance,
    };
    let mut steps = Vec::new();
    let mut failure = None;
    while !sim_loop.finished() {
        match sim_loop.step() {
            Ok((rec, _)) => steps.push(rec),
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    steps.push(sim_loop.record());
    let final_distance = sim_loop.goal_distance();
    Ok(EpisodeLog {
        header,
        steps,
        summary: EpisodeSummary {
            steps: sim_loop.step_index(),
            reached: final_distance < sim.goal_tolerance,
            final_distance,
            failure,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scenarios, GeneratorConfig};

    fn mppi_cfg() -> PlannerConfig {
        PlannerConfig {
            mode: PlannerMode::Mppi,
            samples: 64,
            record_timing: false,
            ..Default::default()
        }
    }

    #[test]
    fn empty_world_makes_progress() {
        let g = GeneratorConfig {
            agents: 0,
            ..Default::default()
        };
        let s = &generate_scenarios(1, &g, 3).unwrap()[0];
        let log = run_episode(s, &mppi_cfg(), None, &SimConfig::default()).unwrap();
        let d: Vec<f64> = log
            .steps
            .iter()
            .map(|r| (r.robot.position() - s.robot_goal).norm())
            .collect();
        assert!(d[20] < d[0] - 2.0, "{d:?}");
        assert!(log.summary.failure.is_none());
    }

    #[test]
    fn replay_follows_tracks() {
        let g = GeneratorConfig {
            agents: 2,
            max_time: 1.0,
            ..Default::default()
        };
        let mut s = generate_scenarios(1, &g, 9).unwrap().remove(0);
        let tracks: Vec<_> = s
            .agents
            .iter()
            .map(|a| crate::sim::ReplayTrack {
                positions: (0..6).map(|k| a.position + Vec2::new(0.07 * k as f64, 0.0)).collect(),
            })
            .collect();
        s.replay = Some(tracks.clone());
        let log = run_episode(&s, &mppi_cfg(), None, &SimConfig::default()).unwrap();
        for r in &log.steps {
            for (a, t) in r.agents.iter().zip(&tracks) {
                assert_eq!(a.p, t.positions[r.step.min(5)]);
            }
        }
    }

    #[test]
    fn jsonl_round_trip_and_truncation() {
        let g = GeneratorConfig {
            agents: 3,
            max_time: 0.5,
            ..Default::default()
        };
        let s = &generate_scenarios(1, &g, 1).unwrap()[0];
        let log = run_episode(s, &mppi_cfg(), None, &SimConfig::default()).unwrap();
        let text = log.to_jsonl();
        assert_eq!(EpisodeLog::read_jsonl(text.as_bytes()).unwrap(), log);
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            EpisodeLog::read_jsonl(cut.as_bytes()),
            Err(Error::TruncatedLog(_))
        ));
    }
}
