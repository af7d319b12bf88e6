//! Reward-guided generation: the learned field is nudged at every knot by
//! the reward gradient of its one-step prediction of the clean sample.
//!
//! ```text
//! for each knot tau_i:
//!     v     = v_theta(z, c, tau_i)
//!     u_hat = z + (1 - tau_i) v
//!     g     = clip(grad_u R(denorm(u_hat)))
//!     z    += (v + lambda_guide g) (tau_{i+1} - tau_i)
//! ```
//!
//! Warm starts re-noise a previous solution to `tau_ws` and run the tail of
//! the schedule from there.

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::dynamics::{integrate_positions, ControlSequence, Frame, Vec2};
use crate::error::{Error, Result};
use crate::flow::{Condition, FlowModel, Normalization, OdeSchedule};
use crate::rewards::{reward_gradient_raw, reward_on_positions, ObstacleForecast, RewardConfig};
use crate::rng::{self, Rng};

/// Knots listed for guided sampling (a cold start prepends `tau = 0`).
pub const DEFAULT_KNOTS: [f64; 9] = [0.8, 0.85, 0.9, 0.92, 0.94, 0.96, 0.98, 0.99, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColdStart {
    /// Noise at `tau = 0`, one Euler step to the first knot, then the knots.
    #[default]
    PrependZero,
    /// Noise placed directly at the first knot.
    ScheduleOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub lambda_guide: f64,
    pub knots: Vec<f64>,
    pub cold_start: ColdStart,
    pub w_cbf_set: Vec<f64>,
    pub samples_per_weight: usize,
    pub tau_ws: f64,
    /// Elementwise clip on the reward gradient before it is added to the
    /// velocity field.
    pub grad_clip: f64,
    /// Multiply guidance by `(1 - tau) / max(tau, 0.05)^2`.
    pub tau_scaling: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_guide: 0.1,
            knots: DEFAULT_KNOTS.to_vec(),
            cold_start: ColdStart::PrependZero,
            w_cbf_set: vec![5.0, 10.0, 15.0, 20.0],
            samples_per_weight: 50,
            tau_ws: 0.8,
            grad_clip: 1000.0,
            tau_scaling: false,
        }
    }
}

impl GuidanceConfig {
    pub fn batch_size(&self) -> usize {
        self.w_cbf_set.len() * self.samples_per_weight
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_guide >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_guide must be >= 0, got {}",
                self.lambda_guide
            )));
        }
        OdeSchedule::new(self.knots.clone())?;
        if self.batch_size() == 0 {
            return Err(Error::Config(
                "w_cbf_set and samples_per_weight must be non-empty".into(),
            ));
        }
        if self.w_cbf_set.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!(
                "w_cbf values must be >= 0: {:?}",
                self.w_cbf_set
            )));
        }
        if !(0.0..1.0).contains(&self.tau_ws) {
            return Err(Error::Config(format!("tau_ws must lie in [0, 1), got {}", self.tau_ws)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    /// Schedule for sampling from pure noise.
    pub fn cold_schedule(&self) -> Result<OdeSchedule> {
        match self.cold_start {
            ColdStart::PrependZero if self.knots[0] > 0.0 => {
                let mut k = vec![0.0];
                k.extend_from_slice(&self.knots);
                OdeSchedule::new(k)
            }
            _ => OdeSchedule::new(self.knots.clone()),
        }
    }

    /// Schedule for a sample re-noised to `tau_ws`.
    pub fn warm_schedule(&self) -> Result<OdeSchedule> {
        self.cold_schedule()?.starting_at(self.tau_ws)
    }

    fn scale_at(&self, tau: f64) -> f64 {
        if self.tau_scaling {
            self.lambda_guide * (1.0 - tau) / tau.max(0.05).powi(2)
        } else {
            self.lambda_guide
        }
    }
}

/// Everything the reward needs besides the controls: the robot's world
/// position, the world-frame goal and the agent forecast. The model's
/// condition is carried alongside.
#[derive(Debug, Clone)]
pub struct GuidanceContext {
    pub condition: Condition,
    pub start: Vec2,
    pub goal: Vec2,
    pub forecast: ObstacleForecast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleInfo {
    pub controls: ControlSequence,
    pub w_cbf: f64,
    pub warm_started: bool,
    /// Composite reward under the sample's own `w_cbf`.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<SampleInfo>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn controls(&self) -> impl Iterator<Item = &ControlSequence> {
        self.samples.iter().map(|s| &s.controls)
    }
}

/// Reward of the de-normalized sample `z` and its gradient with respect to
/// the controls `u = denorm(z)`, flattened and unclipped. The sampler adds
/// this to the normalized velocity as is.
pub fn guidance_gradient(
    norm: &Normalization,
    z: &[f64],
    dt: f64,
    ctx: &GuidanceContext,
    cfg: &RewardConfig,
) -> Result<(f64, Vec<f64>)> {
    let u = norm.denormalize_controls(z);
    let (r, g) = reward_gradient_raw(&u, dt, ctx.start, &ctx.forecast, ctx.goal, cfg)?;
    Ok((r, g.iter().flat_map(|gi| [gi.x, gi.y]).collect()))
}

/// Integrates `K` rows of normalized state in lockstep along `schedule`,
/// row `k` guided under `rewards[k]`.
fn integrate_rows<T: Scalar>(
    model: &FlowModel<T>,
    ctx: &GuidanceContext,
    cfg: &GuidanceConfig,
    rewards: &[RewardConfig],
    schedule: &OdeSchedule,
    z: &mut [f64],
) -> Result<()> {
    let d = model.desc.output_dim();
    let cond = model.norm.normalize_condition(&ctx.condition);
    for (step, w) in schedule.knots().windows(2).enumerate() {
        let tau = w[0];
        let mut v = model.velocity_batch(z, &cond, tau)?;
        let lambda = cfg.scale_at(tau);
        if lambda != 0.0 {
            for (k, (zr, vr)) in z.chunks(d).zip(v.chunks_mut(d)).enumerate() {
                let u_hat: Vec<f64> = zr.iter().zip(vr.iter()).map(|(a, b)| a + (1.0 - tau) * b).collect();
                let (_, g) = guidance_gradient(&model.norm, &u_hat, model.desc.dt, ctx, &rewards[k])?;
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::GuidanceNonFinite { step, tau });
                }
                for (vi, gi) in vr.iter_mut().zip(&g) {
                    *vi += lambda * gi.clamp(-cfg.grad_clip, cfg.grad_clip);
                }
            }
        }
        let dtau = w[1] - w[0];
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi += vi * dtau;
        }
    }
    Ok(())
}

fn check<T: Scalar>(model: &FlowModel<T>, ctx: &GuidanceContext) -> Result<()> {
    if ctx.forecast.horizon() != model.desc.horizon {
        return Err(Error::HorizonMismatch {
            expected: model.desc.horizon,
            found: ctx.forecast.horizon(),
        });
    }
    Ok(())
}

/// One guided sample from the normalized initial state `z_start` placed at
/// the first knot of `schedule`.
pub fn guided_sample<T: Scalar>(
    model: &FlowModel<T>,
    ctx: &GuidanceContext,
    cfg: &GuidanceConfig,
    reward: &RewardConfig,
    schedule: &OdeSchedule,
    z_start: &[f64],
) -> Result<ControlSequence> {
    check(model, ctx)?;
    if z_start.len() != model.desc.output_dim() {
        return Err(Error::Shape {
            op: "guided_sample",
            lhs: vec![z_start.len()],
            rhs: vec![model.desc.output_dim()],
        });
    }
    let mut z = z_start.to_vec();
    integrate_rows(model, ctx, cfg, std::slice::from_ref(reward), schedule, &mut z)?;
    ControlSequence::new(Frame::Cartesian, model.desc.dt, model.norm.denormalize_controls(&z))
}

/// `z_tau = tau z1 + (1 - tau) eps` with `z1` the normalized `u_prev`.
pub fn warm_start_state(
    norm: &Normalization,
    u_prev: &ControlSequence,
    tau_ws: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    u_prev.expect_frame(Frame::Cartesian)?;
    if !(0.0..1.0).contains(&tau_ws) {
        return Err(Error::Config(format!(
            "warm-start tau must lie in [0, 1), got {tau_ws}"
        )));
    }
    let z1 = norm.normalize_controls(u_prev.values());
    let eps = rng::standard_normals(rng, z1.len());
    Ok(z1
        .iter()
        .zip(&eps)
        .map(|(a, e)| tau_ws * a + (1.0 - tau_ws) * e)
        .collect())
}

/// `|w_cbf_set| * samples_per_weight` guided samples. Sample `k` draws its
/// noise from stream `k` of `seed`; with `warm` given, every sample is
/// re-noised from it at `cfg.tau_ws`.
pub fn generate_batch<T: Scalar>(
    model: &FlowModel<T>,
    ctx: &GuidanceContext,
    cfg: &GuidanceConfig,
    reward: &RewardConfig,
    seed: u64,
    warm: Option<&ControlSequence>,
) -> Result<SampleBatch> {
    cfg.validate()?;
    check(model, ctx)?;
    let d = model.desc.output_dim();
    let k_total = cfg.batch_size();
    let schedule = if warm.is_some() {
        cfg.warm_schedule()?
    } else {
        cfg.cold_schedule()?
    };

    let mut rewards = Vec::with_capacity(k_total);
    let mut z = Vec::with_capacity(k_total * d);
    for (k, w) in cfg
        .w_cbf_set
        .iter()
        .flat_map(|w| std::iter::repeat_n(*w, cfg.samples_per_weight))
        .enumerate()
    {
        rewards.push(reward.with_w_cbf(w));
        let mut r = rng::rng_stream(seed, k as u64);
        match warm {
            Some(u) => z.extend(warm_start_state(&model.norm, u, cfg.tau_ws, &mut r)?),
            None => z.extend(rng::standard_normals(&mut r, d)),
        }
    }
    integrate_rows(model, ctx, cfg, &rewards, &schedule, &mut z)?;

    let samples = z
        .chunks(d)
        .zip(&rewards)
        .map(|(row, rc)| {
            let u = model.norm.denormalize_controls(row);
            let xs = integrate_positions(ctx.start, &u, model.desc.dt);
            let reward = reward_on_positions(&xs, &ctx.forecast, ctx.goal, rc)?;
            Ok(SampleInfo {
                controls: ControlSequence::new(Frame::Cartesian, model.desc.dt, u)?,
                w_cbf: rc.w_cbf,
                warm_started: warm.is_some(),
                reward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleBatch { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{sample_uncond, ArchDescriptor};
    use crate::rewards::{AgentForecast, ForecastModel};

    fn model() -> FlowModel<f64> {
        let d = ArchDescriptor {
            horizon: 5,
            history: 2,
            width: 16,
            depth: 2,
            tau_embed: 4,
            dt: 0.1,
        };
        let mut norm = Normalization::identity(&d);
        norm.control_std = [0.5, 0.8];
        norm.control_mean = [0.3, 0.0];
        FlowModel::new(d, norm, 4).unwrap()
    }

    fn ctx(agent: bool) -> GuidanceContext {
        let agents = if agent {
            let p = Vec2::new(0.2, 0.05);
            vec![AgentForecast {
                positions: vec![p; 6],
                velocity: Vec2::zeros(),
            }]
        } else {
            vec![]
        };
        GuidanceContext {
            condition: Condition::new(Vec2::zeros(), Vec2::new(0.5, 0.0), &[], 2),
            start: Vec2::zeros(),
            goal: Vec2::new(0.5, 0.0),
            forecast: ObstacleForecast::new(5, 0.1, ForecastModel::ConstantVelocity, agents).unwrap(),
        }
    }

    #[test]
    fn default_batch_is_200() {
        let c = GuidanceConfig::default();
        assert_eq!(c.batch_size(), 200);
        assert_eq!(c.cold_schedule().unwrap().knots()[..2], [0.0, 0.8]);
        assert_eq!(c.warm_schedule().unwrap().knots(), &DEFAULT_KNOTS);
    }

    #[test]
    fn guidance_off_matches_unguided() {
        let m = model();
        let cfg = GuidanceConfig {
            lambda_guide: 0.0,
            ..Default::default()
        };
        let sched = cfg.cold_schedule().unwrap();
        let z0 = rng::standard_normals(&mut rng::rng(3), 10);
        let c = ctx(true);
        let a = guided_sample(&m, &c, &cfg, &RewardConfig::default(), &sched, &z0).unwrap();
        let b = sample_uncond(&m, &c.condition, &sched, &z0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warm_start_rejects_tau_one() {
        let m = model();
        let u = ControlSequence::zeros(Frame::Cartesian, 5, 0.1);
        assert!(warm_start_state(&m.norm, &u, 1.0, &mut rng::rng(0)).is_err());
        let z = warm_start_state(&m.norm, &u, 0.999_999, &mut rng::rng(0)).unwrap();
        let z1 = m.norm.normalize_controls(u.values());
        assert!(z.iter().zip(&z1).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn guidance_gradient_matches_fd_in_control_units() {
        let m = model();
        let c = ctx(true);
        let rc = RewardConfig::default();
        let z = rng::standard_normals(&mut rng::rng(11), 10);
        let (_, g) = guidance_gradient(&m.norm, &z, 0.1, &c, &rc).unwrap();
        let u = m.norm.denormalize_controls(&z);
        let reward = |u: &[Vec2]| {
            guidance_gradient(&m.norm, &m.norm.normalize_controls(u), 0.1, &c, &rc)
                .unwrap()
                .0
        };
        let h = 1e-6;
        for i in 0..z.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i / 2][i % 2] += h;
            um[i / 2][i % 2] -= h;
            let fd = (reward(&up) - reward(&um)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-3),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn batch_is_deterministic_and_tagged() {
        let m = model();
        let cfg = GuidanceConfig {
            samples_per_weight: 2,
            ..Default::default()
        };
        let c = ctx(true);
        let a = generate_batch(&m, &c, &cfg, &RewardConfig::default(), 5, None).unwrap();
        let b = generate_batch(&m, &c, &cfg, &RewardConfig::default(), 5, None).unwrap();
        assert_eq!(a, b);
        let tags: Vec<f64> = a.samples.iter().map(|s| s.w_cbf).collect();
        assert_eq!(tags, [5.0, 5.0, 10.0, 10.0, 15.0, 15.0, 20.0, 20.0]);
        assert!(a.samples.iter().all(|s| s.reward <= 0.0 && !s.warm_started));
    }

    #[test]
    fn goal_guidance_ascends_with_zero_field() {
        let mut m = model();
        m.net.zero_output_head();
        let c = ctx(false);
        let rc = RewardConfig::default();
        let z = rng::standard_normals(&mut rng::rng(2), 10);
        let r0 = guidance_gradient(&m.norm, &z, 0.1, &c, &rc).unwrap().0;
        let cfg = GuidanceConfig {
            lambda_guide: 0.05,
            ..Default::default()
        };
        let sched = OdeSchedule::new(vec![0.5, 1.0]).unwrap();
        let u = guided_sample(&m, &c, &cfg, &rc, &sched, &z).unwrap();
        let z1 = m.norm.normalize_controls(u.values());
        let r1 = guidance_gradient(&m.norm, &z1, 0.1, &c, &rc).unwrap().0;
        assert!(r1 > r0);
    }
}
