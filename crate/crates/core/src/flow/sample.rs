use super::{Condition, FlowModel};
use crate::autodiff::Scalar;
use crate::dynamics::{ControlSequence, Frame};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Strictly increasing flow-time knots ending at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSchedule {
    knots: Vec<f64>,
}

impl OdeSchedule {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("ODE schedule needs at least two knots".into()));
        }
        if knots.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(Error::Config(format!(
                "ODE schedule knots must lie in [0, 1]: {knots:?}"
            )));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "ODE schedule must be strictly increasing: {knots:?}"
            )));
        }
        if *knots.last().unwrap() != 1.0 {
            return Err(Error::Config(format!("ODE schedule must end at 1.0: {knots:?}")));
        }
        Ok(Self { knots })
    }

    /// `n` equal steps from 0 to 1.
    pub fn uniform(n: usize) -> Result<Self> {
        let n = n.max(1);
        let mut knots: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        knots.push(1.0);
        Self::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// `tau` followed by every knot strictly after it.
    pub fn starting_at(&self, tau: f64) -> Result<Self> {
        let mut knots = vec![tau];
        knots.extend(self.knots.iter().copied().filter(|k| *k > tau));
        Self::new(knots)
    }
}

/// Point on the straight conditional path and its time derivative.
/// Exact at both endpoints.
pub fn sample_path_point(z0: &[f64], z1: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(z0.len(), z1.len(), "path endpoints must have equal shape");
    let target = z1.iter().zip(z0).map(|(a, b)| a - b).collect();
    let z_tau = if tau == 0.0 {
        z0.to_vec()
    } else if tau == 1.0 {
        z1.to_vec()
    } else {
        z0.iter().zip(z1).map(|(a, b)| (1.0 - tau) * a + tau * b).collect()
    };
    (z_tau, target)
}

/// Euler integration of the learned field from `tau = 0` starting at the
/// normalized noise `z0`; returns de-normalized cartesian controls.
pub fn sample_uncond<T: Scalar>(
    model: &FlowModel<T>,
    c: &Condition,
    schedule: &OdeSchedule,
    z0: &[f64],
) -> Result<ControlSequence> {
    if schedule.start() != 0.0 {
        return Err(Error::Config("unconditional sampling starts at tau = 0".into()));
    }
    model.check_condition(c)?;
    if z0.len() != model.desc.output_dim() {
        return Err(Error::Shape {
            op: "sample_uncond",
            lhs: vec![z0.len()],
            rhs: vec![model.desc.output_dim()],
        });
    }
    let cond = model.norm.normalize_condition(c);
    let mut z = z0.to_vec();
    for w in schedule.knots().windows(2) {
        let v = model.velocity_batch(&z, &cond, w[0])?;
        let step = w[1] - w[0];
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi += vi * step;
        }
    }
    ControlSequence::new(Frame::Cartesian, model.desc.dt, model.norm.denormalize_controls(&z))
}

pub fn sample_uncond_seeded<T: Scalar>(
    model: &FlowModel<T>,
    c: &Condition,
    schedule: &OdeSchedule,
    rng: &mut Rng,
) -> Result<ControlSequence> {
    let z0 = rng::standard_normals(rng, model.desc.output_dim());
    sample_uncond(model, c, schedule, &z0)
}
