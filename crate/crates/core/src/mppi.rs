//! Path-integral refinement: softmin-weighted averaging of candidate control
//! sequences by trajectory cost, evaluated on the executed unicycle dynamics.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    cartesian_to_unicycle, rollout_unicycle, ControlSequence, Frame, RobotState, UnicycleLimits, Vec2,
};
use crate::error::{Error, Result};
use crate::rewards::{reward_on_positions, ObstacleForecast, RewardConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    /// Temperature.
    pub lambda: f64,
    /// Per-channel perturbation std of the Gaussian prior.
    pub sigma: [f64; 2],
    pub reward: RewardConfig,
    pub collision_cost: f64,
    pub collision_distance: f64,
    pub w_smooth: f64,
    pub limits: UnicycleLimits,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: [1.0, 1.0],
            reward: RewardConfig::default(),
            collision_cost: 1e6,
            collision_distance: 0.5,
            w_smooth: 0.0,
            limits: UnicycleLimits::default(),
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.sigma[0] >= 0.0 && self.sigma[1] >= 0.0) {
            return Err(Error::Config(format!(
                "sigma must be nonnegative, got {:?}",
                self.sigma
            )));
        }
        if !(self.collision_cost >= 0.0 && self.w_smooth >= 0.0 && self.collision_distance >= 0.0) {
            return Err(Error::Config("cost weights must be nonnegative".into()));
        }
        self.reward.validate()
    }
}

/// `-R` on the unicycle rollout of the transformed controls, plus the
/// collision indicator and the smoothness penalty on the cartesian sequence.
pub fn trajectory_cost(
    u: &ControlSequence,
    start: RobotState,
    forecast: &ObstacleForecast,
    goal: Vec2,
    cfg: &MppiConfig,
) -> Result<f64> {
    let uni = cartesian_to_unicycle(start, u, cfg.limits)?;
    let xs = rollout_unicycle(start, &uni)?.positions();
    let reward = reward_on_positions(&xs, forecast, goal, &cfg.reward)?;
    let d2 = cfg.collision_distance * cfg.collision_distance;
    let hit = forecast
        .agents()
        .iter()
        .any(|a| xs.iter().zip(&a.positions).any(|(x, p)| (x - p).norm_squared() < d2));
    let smooth: f64 = u.values().windows(2).map(|w| (w[1] - w[0]).norm_squared()).sum();
    Ok(-reward + if hit { cfg.collision_cost } else { 0.0 } + cfg.w_smooth * smooth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub u_star: ControlSequence,
    pub costs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Wall-clock seconds; zero when timing is disabled.
    pub planning_time_s: f64,
}

impl PlanResult {
    /// `1 / sum w^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Normalized softmin weights `exp(-(S - min S) / lambda)`.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if costs.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return Err(Error::NonFinite("MPPI costs".into()));
    }
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(Error::NoFeasibleSample);
    }
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - min) / lambda).exp()).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    Ok(w)
}

pub fn mppi_update(samples: &[ControlSequence], costs: &[f64], lambda: f64) -> Result<PlanResult> {
    if samples.len() != costs.len() {
        return Err(Error::Shape {
            op: "mppi_update",
            lhs: vec![samples.len()],
            rhs: vec![costs.len()],
        });
    }
    let weights = mppi_weights(costs, lambda)?;
    let first = &samples[0];
    first.expect_frame(Frame::Cartesian)?;
    let mut acc = vec![Vec2::zeros(); first.horizon()];
    for (s, w) in samples.iter().zip(&weights) {
        if s.horizon() != first.horizon() {
            return Err(Error::HorizonMismatch {
                expected: first.horizon(),
                found: s.horizon(),
            });
        }
        for (a, v) in acc.iter_mut().zip(s.values()) {
            *a += *w * v;
        }
    }
    Ok(PlanResult {
        u_star: ControlSequence::new(Frame::Cartesian, first.dt(), acc)?,
        costs: costs.to_vec(),
        weights,
        planning_time_s: 0.0,
    })
}

/// `k` perturbations `u_prev + eps`, `eps_t ~ N(0, diag(sigma^2))`; sample
/// `i` uses stream `i` of `seed`.
pub fn gaussian_prior_batch(
    u_prev: &ControlSequence,
    sigma: [f64; 2],
    k: usize,
    seed: u64,
) -> Result<Vec<ControlSequence>> {
    u_prev.expect_frame(Frame::Cartesian)?;
    (0..k)
        .map(|i| {
            let mut r = rng::rng_stream(seed, i as u64);
            let eps = rng::standard_normals(&mut r, 2 * u_prev.horizon());
            let values = u_prev
                .values()
                .iter()
                .zip(eps.chunks_exact(2))
                .map(|(u, e)| Vec2::new(u.x + sigma[0] * e[0], u.y + sigma[1] * e[1]))
                .collect();
            ControlSequence::new(Frame::Cartesian, u_prev.dt(), values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::{AgentForecast, ForecastModel};

    #[test]
    fn softmin_example() {
        let w = mppi_weights(&[0.0, 1.0, 2.0], 1.0).unwrap();
        let e = [1.0, (-1.0f64).exp(), (-2.0f64).exp()];
        let z: f64 = e.iter().sum();
        for (a, b) in w.iter().zip(e) {
            assert!((a - b / z).abs() < 1e-15);
        }
        assert!((w[0] - 0.665).abs() < 1e-3 && (w[1] - 0.245).abs() < 1e-3 && (w[2] - 0.090).abs() < 1e-3);
    }

    #[test]
    fn equal_costs_give_mean() {
        let a = ControlSequence::new(Frame::Cartesian, 0.1, vec![Vec2::new(1.0, 0.0)]).unwrap();
        let b = ControlSequence::new(Frame::Cartesian, 0.1, vec![Vec2::new(0.0, 1.0)]).unwrap();
        let r = mppi_update(&[a, b], &[3.0, 3.0], 1.0).unwrap();
        assert_eq!(r.weights, [0.5, 0.5]);
        assert_eq!(r.u_star.values()[0], Vec2::new(0.5, 0.5));
    }

    #[test]
    fn large_gap_is_one_hot() {
        let w = mppi_weights(&[0.0, 41.0, 100.0], 1.0).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_and_invalid_batches() {
        assert!(matches!(
            mppi_weights(&[f64::INFINITY; 3], 1.0),
            Err(Error::NoFeasibleSample)
        ));
        assert!(matches!(mppi_weights(&[], 1.0), Err(Error::EmptyBatch)));
        assert!(mppi_weights(&[0.0, f64::NAN], 1.0).is_err());
        let w = mppi_weights(&[f64::INFINITY, 2.0], 1.0).unwrap();
        assert_eq!(w, [0.0, 1.0]);
    }

    #[test]
    fn empty_world_at_goal_costs_zero() {
        let u = ControlSequence::new(Frame::Cartesian, 0.1, vec![Vec2::new(1.0, 0.0); 10]).unwrap();
        let f = ObstacleForecast::empty(10, 0.1);
        let c = trajectory_cost(
            &u,
            RobotState::new(0.0, 0.0, 0.0),
            &f,
            Vec2::new(1.0, 0.0),
            &MppiConfig::default(),
        )
        .unwrap();
        assert!(c.abs() < 1e-12);
    }

    #[test]
    fn driving_through_agent_pays_penalty() {
        let u = ControlSequence::new(Frame::Cartesian, 0.1, vec![Vec2::new(1.0, 0.0); 10]).unwrap();
        let agent = AgentForecast {
            positions: vec![Vec2::new(0.5, 0.0); 11],
            velocity: Vec2::zeros(),
        };
        let f = ObstacleForecast::new(10, 0.1, ForecastModel::ConstantVelocity, vec![agent]).unwrap();
        let c = trajectory_cost(
            &u,
            RobotState::new(0.0, 0.0, 0.0),
            &f,
            Vec2::new(1.0, 0.0),
            &MppiConfig::default(),
        )
        .unwrap();
        assert!(c >= 1e6);
    }

    #[test]
    fn zero_sigma_reproduces_nominal() {
        let u = ControlSequence::new(Frame::Cartesian, 0.1, vec![Vec2::new(0.3, -0.2); 4]).unwrap();
        let batch = gaussian_prior_batch(&u, [0.0, 0.0], 5, 1).unwrap();
        assert!(batch.iter().all(|s| *s == u));
    }
}
