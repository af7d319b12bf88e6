//! Per-episode metrics and their aggregation into one row per method.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EpisodeLog;

/// Center distance below which a step counts as a collision (m).
pub const COLLISION_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub collision: bool,
    /// Smallest robot-agent center distance over the episode (infinite when empty).
    pub min_distance: f64,
    /// Distance from the final robot position to the goal (m).
    pub reach: f64,
    /// Mean `|v_k - v_{k-1}| / dt` over executed controls (m/s^2).
    pub lin_acc: f64,
    /// Mean `|omega_k - omega_{k-1}| / dt` (rad/s^2).
    pub ang_acc: f64,
    /// Mean planner wall-clock per step (s).
    pub plan_time: f64,
    pub steps: usize,
    pub reached: bool,
}

fn mean_abs_diff(xs: &[f64], dt: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let s: f64 = xs.windows(2).map(|w| (w[1] - w[0]).abs() / dt).sum();
    s / (xs.len() - 1) as f64
}

pub fn compute_metrics(log: &EpisodeLog) -> Result<EpisodeMetrics> {
    compute_metrics_with(log, COLLISION_DISTANCE)
}

pub fn compute_metrics_with(log: &EpisodeLog, collision_distance: f64) -> Result<EpisodeMetrics> {
    let (last, body) = log
        .steps
        .split_last()
        .ok_or_else(|| Error::TruncatedLog("no step records".into()))?;
    if body.iter().any(|s| s.control.is_none()) || last.control.is_some() {
        return Err(Error::TruncatedLog("missing terminal record or controls".into()));
    }
    if body.len() != log.summary.steps {
        return Err(Error::TruncatedLog(format!(
            "summary reports {} steps, log holds {}",
            log.summary.steps,
            body.len()
        )));
    }
    let mut min_distance = f64::INFINITY;
    for s in &log.steps {
        let p = s.robot.position();
        for a in &s.agents {
            min_distance = min_distance.min((p - a.p).norm());
        }
    }
    let v: Vec<f64> = body.iter().map(|s| s.control.expect("checked").x).collect();
    let w: Vec<f64> = body.iter().map(|s| s.control.expect("checked").y).collect();
    let dt = log.header.dt;
    let plan_time = if body.is_empty() {
        0.0
    } else {
        body.iter().map(|s| s.plan_time_s.unwrap_or(0.0)).sum::<f64>() / body.len() as f64
    };
    Ok(EpisodeMetrics {
        collision: min_distance < collision_distance,
        min_distance,
        reach: (last.robot.position() - log.header.goal).norm(),
        lin_acc: mean_abs_diff(&v, dt),
        ang_acc: mean_abs_diff(&w, dt),
        plan_time,
        steps: body.len(),
        reached: log.summary.reached,
    })
}

/// One Table-1-style row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub collision_pct: f64,
    pub reach_mean: f64,
    pub reach_std: f64,
    pub lin_acc_mean: f64,
    pub lin_acc_std: f64,
    pub ang_acc_mean: f64,
    pub ang_acc_std: f64,
    pub time_mean: f64,
    pub episodes: usize,
}

pub const CSV_HEADER: &str =
    "method,collision_pct,reach_mean,reach_std,lin_acc_mean,lin_acc_std,ang_acc_mean,ang_acc_std,time_mean,episodes";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.collision_pct,
            self.reach_mean,
            self.reach_std,
            self.lin_acc_mean,
            self.lin_acc_std,
            self.ang_acc_mean,
            self.ang_acc_std,
            self.time_mean,
            self.episodes
        )
    }
}

/// Mean and sample standard deviation, accumulated relative to the first
/// value so identical inputs give exactly zero spread.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let Some(&x0) = xs.first() else {
        return (f64::NAN, f64::NAN);
    };
    let n = xs.len() as f64;
    let mut shift = 0.0;
    for x in xs {
        shift += x - x0;
    }
    let mean = x0 + shift / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for x in xs {
        ss += (x - mean) * (x - mean);
    }
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn aggregate(method: &str, episodes: &[EpisodeMetrics]) -> Result<MetricsRow> {
    if episodes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let col = |f: fn(&EpisodeMetrics) -> f64| mean_std(&episodes.iter().map(f).collect::<Vec<_>>());
    let collisions = episodes.iter().filter(|e| e.collision).count();
    let (reach_mean, reach_std) = col(|e| e.reach);
    let (lin_acc_mean, lin_acc_std) = col(|e| e.lin_acc);
    let (ang_acc_mean, ang_acc_std) = col(|e| e.ang_acc);
    let (time_mean, _) = col(|e| e.plan_time);
    Ok(MetricsRow {
        method: method.to_string(),
        collision_pct: 100.0 * collisions as f64 / episodes.len() as f64,
        reach_mean,
        reach_std,
        lin_acc_mean,
        lin_acc_std,
        ang_acc_mean,
        ang_acc_std,
        time_mean,
        episodes: episodes.len(),
    })
}

/// Fixed-precision text table for terminal output.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>15} {:>15} {:>15} {:>8}",
        "method", "coll%", "reach (m)", "acc (m/s2)", "acc (rad/s2)", "time (s)"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>8.2} {:>7.2} ± {:<5.2} {:>7.2} ± {:<5.2} {:>7.2} ± {:<5.2} {:>8.3}",
            r.method,
            r.collision_pct,
            r.reach_mean,
            r.reach_std,
            r.lin_acc_mean,
            r.lin_acc_std,
            r.ang_acc_mean,
            r.ang_acc_std,
            r.time_mean
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{RobotState, Vec2};
    use crate::planner::PlannerMode;
    use crate::sim::{AgentRecord, EpisodeHeader, EpisodeSummary, StepRecord};

    fn log(path: &[(f64, f64)], controls: &[(f64, f64)], agent: Option<Vec2>, goal: Vec2) -> EpisodeLog {
        let steps = path
            .iter()
            .enumerate()
            .map(|(k, p)| StepRecord {
                step: k,
                t: k as f64 * 0.1,
                robot: RobotState::new(p.0, p.1, 0.0),
                agents: agent
                    .map(|a| AgentRecord { p: a, v: Vec2::zeros() })
                    .into_iter()
                    .collect(),
                control: controls.get(k).map(|c| Vec2::new(c.0, c.1)),
                plan_time_s: controls.get(k).map(|_| 0.01),
            })
            .collect();
        EpisodeLog {
            header: EpisodeHeader {
                scenario_seed: 0,
                mode: PlannerMode::Mppi,
                planner_seed: 0,
                dt: 0.1,
                horizon: 40,
                robot_start: RobotState::new(path[0].0, path[0].1, 0.0),
                goal,
                agents: agent.iter().count(),
                replay: false,
                goal_tolerance: 0.2,
            },
            steps,
            summary: EpisodeSummary {
                steps: controls.len(),
                reached: false,
                final_distance: 0.0,
                failure: None,
            },
        }
    }

    #[test]
    fn stationary_at_goal() {
        let l = log(
            &[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)],
            &[(0.0, 0.0), (0.0, 0.0)],
            None,
            Vec2::new(1.0, 1.0),
        );
        let m = compute_metrics(&l).unwrap();
        assert!(!m.collision);
        assert_eq!((m.reach, m.lin_acc, m.ang_acc), (0.0, 0.0, 0.0));
    }

    #[test]
    fn near_pass_is_collision() {
        let l = log(
            &[(0.0, 0.0), (0.1, 0.0)],
            &[(1.0, 0.0)],
            Some(Vec2::new(0.1, 0.49)),
            Vec2::zeros(),
        );
        assert!(compute_metrics(&l).unwrap().collision);
        let l = log(
            &[(0.0, 0.0), (0.1, 0.0)],
            &[(1.0, 0.0)],
            Some(Vec2::new(0.1, 0.51)),
            Vec2::zeros(),
        );
        assert!(!compute_metrics(&l).unwrap().collision);
    }

    #[test]
    fn accelerations() {
        let l = log(
            &[(0.0, 0.0); 4],
            &[(1.0, 0.5), (1.0, 0.5), (1.0, 0.5)],
            None,
            Vec2::zeros(),
        );
        let m = compute_metrics(&l).unwrap();
        assert_eq!((m.lin_acc, m.ang_acc), (0.0, 0.0));
        let l = log(&[(0.0, 0.0); 3], &[(1.0, 0.0), (1.5, -1.0)], None, Vec2::zeros());
        let m = compute_metrics(&l).unwrap();
        assert!((m.lin_acc - 5.0).abs() < 1e-12 && (m.ang_acc - 10.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_log_rejected() {
        let mut l = log(&[(0.0, 0.0), (0.0, 0.0)], &[(0.0, 0.0)], None, Vec2::zeros());
        l.steps.pop();
        assert!(compute_metrics(&l).is_err());
    }

    #[test]
    fn aggregate_rounding_and_identical() {
        let e = EpisodeMetrics {
            collision: false,
            min_distance: 1.0,
            reach: 0.1,
            lin_acc: 2.3,
            ang_acc: 0.7,
            plan_time: 0.01,
            steps: 10,
            reached: true,
        };
        let mut eps = vec![e; 300];
        let r = aggregate("m", &eps).unwrap();
        assert_eq!((r.reach_std, r.lin_acc_std, r.ang_acc_std), (0.0, 0.0, 0.0));
        assert_eq!(r.reach_mean, 0.1);
        eps[7].collision = true;
        let r = aggregate("m", &eps).unwrap();
        assert_eq!(format!("{:.2}", r.collision_pct), "0.33");
        assert_eq!(CSV_HEADER.split(',').count(), r.csv_line().split(',').count());
    }
}
