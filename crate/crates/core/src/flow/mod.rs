//! Conditional flow-matching model over control sequences.
//!
//! The model regresses a velocity field `v(z_tau, c, tau)` whose ODE carries
//! Gaussian noise at `tau = 0` to a normalized cartesian control sequence at
//! `tau = 1`, conditioned on the robot's ego-frame goal and its recent
//! executed controls.

mod network;
mod sample;
mod train;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use network::Network;
pub use sample::{sample_path_point, sample_uncond, sample_uncond_seeded, OdeSchedule};
pub use train::{cfm_goal_loss, train, CfmDraws, LossPoint, LossReport, TrainConfig, TrainReport};

use crate::autodiff::checkpoint::{Container, NamedTensor, TensorData};
use crate::autodiff::{DType, Scalar, Tensor};
use crate::dynamics::Vec2;
use crate::error::{Error, Result};
use crate::rng::PRNG_ID;

/// Conditioning vector: ego-frame robot position and goal plus the `H` most
/// recent executed cartesian controls (oldest first), zero-padded and masked
/// when fewer exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub robot_pos: Vec2,
    pub goal: Vec2,
    pub history: Vec<Vec2>,
    pub mask: Vec<bool>,
}

impl Condition {
    /// Builds a condition from up to `h` past controls (oldest first);
    /// missing leading entries are padded.
    pub fn new(robot_pos: Vec2, goal: Vec2, past: &[Vec2], h: usize) -> Self {
        let take = past.len().min(h);
        let pad = h - take;
        let mut history = vec![Vec2::zeros(); pad];
        history.extend_from_slice(&past[past.len() - take..]);
        let mut mask = vec![false; pad];
        mask.extend(std::iter::repeat_n(true, take));
        Self {
            robot_pos,
            goal,
            history,
            mask,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Raw feature vector `[pos, goal, history..., mask...]`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = vec![self.robot_pos.x, self.robot_pos.y, self.goal.x, self.goal.y];
        for h in &self.history {
            f.push(h.x);
            f.push(h.y);
        }
        f.extend(self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        f
    }
}

/// One supervised example: a target control window and its condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub controls: Vec<Vec2>,
    pub condition: Condition,
}

/// Static shape of a flow model. Fully determines parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchDescriptor {
    /// Control steps `T`.
    pub horizon: usize,
    /// Past controls `H` in the condition.
    pub history: usize,
    pub width: usize,
    pub depth: usize,
    /// Sinusoidal flow-time embedding size (even).
    pub tau_embed: usize,
    pub dt: f64,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        Self {
            horizon: 40,
            history: 4,
            width: 128,
            depth: 3,
            tau_embed: 16,
            dt: 0.1,
        }
    }
}

impl ArchDescriptor {
    pub fn condition_dim(&self) -> usize {
        4 + 3 * self.history
    }

    pub fn output_dim(&self) -> usize {
        2 * self.horizon
    }

    pub fn input_dim(&self) -> usize {
        self.output_dim() + self.condition_dim() + self.tau_embed
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.width == 0 || self.tau_embed % 2 != 0 || !(self.dt > 0.0) {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }

    fn to_metadata(self, m: &mut BTreeMap<String, String>) {
        m.insert("arch.backbone".into(), "residual-mlp".into());
        m.insert("arch.horizon".into(), self.horizon.to_string());
        m.insert("arch.history".into(), self.history.to_string());
        m.insert("arch.width".into(), self.width.to_string());
        m.insert("arch.depth".into(), self.depth.to_string());
        m.insert("arch.tau_embed".into(), self.tau_embed.to_string());
        m.insert("arch.dt".into(), format!("{:?}", self.dt));
    }

    fn from_metadata(c: &Container) -> Result<Self> {
        fn get<V: std::str::FromStr>(c: &Container, k: &str) -> Result<V> {
            c.meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for {k}")))
        }
        if c.meta("arch.backbone")? != "residual-mlp" {
            return Err(Error::Checkpoint("unsupported backbone".into()));
        }
        Ok(Self {
            horizon: get(c, "arch.horizon")?,
            history: get(c, "arch.history")?,
            width: get(c, "arch.width")?,
            depth: get(c, "arch.depth")?,
            tau_embed: get(c, "arch.tau_embed")?,
            dt: get(c, "arch.dt")?,
        })
    }
}

/// Sinusoidal features of flow time.
pub fn tau_embedding(tau: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = PI * f64::from(1u32 << k.min(20));
        out.push((w * tau).sin());
        out.push((w * tau).cos());
    }
    out
}

/// Zero-mean unit-variance statistics, frozen with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Per-channel (x, y) control mean and std, shared across time steps.
    pub control_mean: [f64; 2],
    pub control_std: [f64; 2],
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
}

const MIN_STD: f64 = 1e-6;

impl Normalization {
    pub fn identity(desc: &ArchDescriptor) -> Self {
        Self {
            control_mean: [0.0; 2],
            control_std: [1.0; 2],
            cond_mean: vec![0.0; desc.condition_dim()],
            cond_std: vec![1.0; desc.condition_dim()],
        }
    }

    pub fn fit(pairs: &[TrainingPair]) -> Result<Self> {
        let first = pairs.first().ok_or(Error::EmptyBatch)?;
        let dim = first.condition.features().len();
        let (mut cs, mut cq, mut cn) = ([0.0; 2], [0.0; 2], 0.0);
        let mut fs = vec![0.0; dim];
        let mut fq = vec![0.0; dim];
        for p in pairs {
            for u in &p.controls {
                cs[0] += u.x;
                cs[1] += u.y;
                cq[0] += u.x * u.x;
                cq[1] += u.y * u.y;
                cn += 1.0;
            }
            for (i, f) in p.condition.features().iter().enumerate() {
                fs[i] += f;
                fq[i] += f * f;
            }
        }
        let stat = |s: f64, q: f64, n: f64| {
            let m = s / n;
            let sd = (q / n - m * m).max(0.0).sqrt();
            (m, if sd < MIN_STD { 1.0 } else { sd })
        };
        let n = pairs.len() as f64;
        let (m0, s0) = stat(cs[0], cq[0], cn);
        let (m1, s1) = stat(cs[1], cq[1], cn);
        let (cond_mean, cond_std) = fs.iter().zip(&fq).map(|(s, q)| stat(*s, *q, n)).unzip();
        Ok(Self {
            control_mean: [m0, m1],
            control_std: [s0, s1],
            cond_mean,
            cond_std,
        })
    }

    pub fn normalize_controls(&self, u: &[Vec2]) -> Vec<f64> {
        u.iter()
            .flat_map(|v| {
                [
                    (v.x - self.control_mean[0]) / self.control_std[0],
                    (v.y - self.control_mean[1]) / self.control_std[1],
                ]
            })
            .collect()
    }

    pub fn denormalize_controls(&self, z: &[f64]) -> Vec<Vec2> {
        z.chunks_exact(2)
            .map(|c| {
                Vec2::new(
                    c[0] * self.control_std[0] + self.control_mean[0],
                    c[1] * self.control_std[1] + self.control_mean[1],
                )
            })
            .collect()
    }

    pub fn normalize_condition(&self, c: &Condition) -> Vec<f64> {
        c.features()
            .iter()
            .zip(&self.cond_mean)
            .zip(&self.cond_std)
            .map(|((f, m), s)| (f - m) / s)
            .collect()
    }
}

/// Velocity-field network plus everything needed to interpret its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<T = f32> {
    pub desc: ArchDescriptor,
    pub norm: Normalization,
    pub net: Network<T>,
}

impl<T: Scalar> FlowModel<T> {
    pub fn new(desc: ArchDescriptor, norm: Normalization, seed: u64) -> Result<Self> {
        desc.validate()?;
        if norm.cond_mean.len() != desc.condition_dim() {
            return Err(Error::Config(format!(
                "normalization has {} condition features, descriptor expects {}",
                norm.cond_mean.len(),
                desc.condition_dim()
            )));
        }
        Ok(Self {
            desc,
            norm,
            net: Network::new(&desc, seed),
        })
    }

    pub fn cast<U: Scalar>(&self) -> FlowModel<U> {
        FlowModel {
            desc: self.desc,
            norm: self.norm.clone(),
            net: self.net.cast(),
        }
    }

    pub(crate) fn check_condition(&self, c: &Condition) -> Result<()> {
        if c.history.len() != self.desc.history || c.mask.len() != self.desc.history {
            return Err(Error::Shape {
                op: "condition history",
                lhs: vec![c.history.len()],
                rhs: vec![self.desc.history],
            });
        }
        Ok(())
    }

    /// Network input rows for a batch of normalized samples sharing one
    /// normalized condition and flow time.
    pub(crate) fn build_input(&self, z: &[f64], cond: &[f64], tau: f64) -> Result<Tensor<T>> {
        let d = self.desc.output_dim();
        if z.is_empty() || z.len() % d != 0 {
            return Err(Error::Shape {
                op: "velocity field input",
                lhs: vec![z.len()],
                rhs: vec![d],
            });
        }
        let emb = tau_embedding(tau, self.desc.tau_embed);
        let rows = z.len() / d;
        let mut data = Vec::with_capacity(rows * self.desc.input_dim());
        for row in z.chunks_exact(d) {
            data.extend(row.iter().chain(cond).chain(&emb).map(|v| T::from_f64(*v)));
        }
        Tensor::matrix(rows, self.desc.input_dim(), data)
    }

    /// Velocity for a batch of normalized samples (`rows x 2T`, row-major).
    pub fn velocity_batch(&self, z: &[f64], cond: &[f64], tau: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("flow time {tau} outside [0, 1]")));
        }
        let input = self.build_input(z, cond, tau)?;
        let out = self.net.forward(&input)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("velocity field output".into()));
        }
        Ok(out.to_f64_vec())
    }

    /// `v(z_tau, c, tau)` for one normalized `T x 2` sample.
    pub fn velocity_field(&self, z: &[f64], c: &Condition, tau: f64) -> Result<Vec<f64>> {
        self.check_condition(c)?;
        if z.len() != self.desc.output_dim() {
            return Err(Error::Shape {
                op: "velocity_field",
                lhs: vec![z.len()],
                rhs: vec![self.desc.output_dim()],
            });
        }
        self.velocity_batch(z, &self.norm.normalize_condition(c), tau)
    }

    pub fn to_container(&self) -> Container {
        let mut metadata = BTreeMap::new();
        self.desc.to_metadata(&mut metadata);
        metadata.insert("prng".into(), PRNG_ID.into());
        metadata.insert("dtype".into(), format!("{:?}", T::DTYPE).to_lowercase());
        let mut tensors = vec![
            f64_tensor("norm.control_mean", self.norm.control_mean.to_vec()),
            f64_tensor("norm.control_std", self.norm.control_std.to_vec()),
            f64_tensor("norm.cond_mean", self.norm.cond_mean.clone()),
            f64_tensor("norm.cond_std", self.norm.cond_std.clone()),
        ];
        for (i, p) in self.net.params().iter().enumerate() {
            let data = match T::DTYPE {
                DType::F32 => TensorData::F32(p.data().iter().map(|v| v.to_f64() as f32).collect()),
                DType::F64 => TensorData::F64(p.to_f64_vec()),
            };
            tensors.push(NamedTensor {
                name: format!("param.{i}"),
                shape: p.shape().to_vec(),
                data,
            });
        }
        Container { metadata, tensors }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let desc = ArchDescriptor::from_metadata(c)?;
        desc.validate()?;
        let norm = Normalization {
            control_mean: two(read_f64(c, "norm.control_mean")?)?,
            control_std: two(read_f64(c, "norm.control_std")?)?,
            cond_mean: read_f64(c, "norm.cond_mean")?,
            cond_std: read_f64(c, "norm.cond_std")?,
        };
        let mut model = Self::new(desc, norm, 0)?;
        for (i, p) in model.net.params_mut().iter_mut().enumerate() {
            let t = c.tensor(&format!("param.{i}"))?;
            if t.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "param.{i} has shape {:?}, descriptor implies {:?}",
                    t.shape,
                    p.shape()
                )));
            }
            let values: Vec<T> = match &t.data {
                TensorData::F32(v) => v.iter().map(|x| T::from_f64(f64::from(*x))).collect(),
                TensorData::F64(v) => v.iter().map(|x| T::from_f64(*x)).collect(),
            };
            p.data_mut().copy_from_slice(&values);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_container().write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_container(&Container::read_from(std::io::BufReader::new(file))?)
    }
}

fn f64_tensor(name: &str, v: Vec<f64>) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        shape: vec![v.len()],
        data: TensorData::F64(v),
    }
}

fn read_f64(c: &Container, name: &str) -> Result<Vec<f64>> {
    match &c.tensor(name)?.data {
        TensorData::F64(v) => Ok(v.clone()),
        TensorData::F32(_) => Err(Error::Checkpoint(format!("{name} must be f64"))),
    }
}

fn two(v: Vec<f64>) -> Result<[f64; 2]> {
    v.try_into()
        .map_err(|_| Error::Checkpoint("expected two channel statistics".into()))
}
