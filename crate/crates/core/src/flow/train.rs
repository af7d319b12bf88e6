//! Flow-matching objective with an auxiliary terminal-goal term.
//!
//! For each pair, with `tau ~ U(0,1)` and `z0 ~ N(0, I)`:
//!
//! ```text
//! z_tau  = (1 - tau) z0 + tau z1
//! L_cfm  = |v(z_tau, c, tau) - (z1 - z0)|^2
//! u_hat  = z_tau + (1 - tau) v(z_tau, c, tau)       one Euler step to tau = 1
//! x_T    = p0 + dt * sum_t denorm(u_hat)_t           single-integrator endpoint
//! L_goal = |goal - x_T|^2
//! L      = mean(L_cfm) + lambda_goal * mean(L_goal)
//! ```

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{FlowModel, TrainingPair};
use crate::autodiff::{Adam, AdamConfig, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Random draws for one batch: a flow time and a noise sample per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmDraws {
    pub tau: Vec<f64>,
    pub z0: Vec<Vec<f64>>,
}

impl CfmDraws {
    pub fn sample(rng: &mut Rng, batch: usize, dim: usize) -> Self {
        let tau = (0..batch).map(|_| rng.random::<f64>()).collect();
        let z0 = (0..batch).map(|_| rng::standard_normals(rng, dim)).collect();
        Self { tau, z0 }
    }
}

#[derive(Debug, Clone)]
pub struct LossReport<T> {
    pub total: f64,
    pub cfm: f64,
    pub goal: f64,
    /// One gradient per network parameter tensor.
    pub grads: Vec<Tensor<T>>,
}

pub fn cfm_goal_loss<T: Scalar>(
    model: &FlowModel<T>,
    batch: &[&TrainingPair],
    draws: &CfmDraws,
    lambda_goal: f64,
) -> Result<LossReport<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(lambda_goal >= 0.0) {
        return Err(Error::Config(format!("lambda_goal must be >= 0, got {lambda_goal}")));
    }
    let desc = &model.desc;
    let (b, d) = (batch.len(), desc.output_dim());
    let width = desc.input_dim();

    let mut input = Vec::with_capacity(b * width);
    let mut target = Vec::with_capacity(b * d);
    let mut z_tau_all = Vec::with_capacity(b * d);
    let mut one_minus_tau = Vec::with_capacity(b * d);
    let mut goal_rel = Vec::with_capacity(b * 2);
    for (k, pair) in batch.iter().enumerate() {
        if pair.controls.len() != desc.horizon {
            return Err(Error::HorizonMismatch {
                expected: desc.horizon,
                found: pair.controls.len(),
            });
        }
        model.check_condition(&pair.condition)?;
        let tau = draws.tau[k];
        let z1 = model.norm.normalize_controls(&pair.controls);
        let (z_tau, tgt) = super::sample_path_point(&draws.z0[k], &z1, tau);
        let cond = model.norm.normalize_condition(&pair.condition);
        let row = model.build_input(&z_tau, &cond, tau)?;
        input.extend_from_slice(row.data());
        target.extend(tgt.iter().map(|v| T::from_f64(*v)));
        z_tau_all.extend(z_tau.iter().map(|v| T::from_f64(*v)));
        one_minus_tau.extend(std::iter::repeat_n(T::from_f64(1.0 - tau), d));
        let g = pair.condition.goal - pair.condition.robot_pos;
        goal_rel.push(T::from_f64(g.x));
        goal_rel.push(T::from_f64(g.y));
    }

    let mut tape = Tape::new();
    let params: Vec<_> = model.net.params().iter().map(|p| tape.leaf(p.clone())).collect();
    let x = tape.leaf(Tensor::matrix(b, width, input)?);
    let v = model.net.forward_tape(&mut tape, x, &params)?;

    let tgt = tape.leaf(Tensor::matrix(b, d, target)?);
    let diff = tape.sub(v, tgt)?;
    let cfm_sum = tape.squared_norm(diff);
    let inv_b = T::from_f64(1.0 / b as f64);
    let cfm = tape.scale(cfm_sum, inv_b);

    let loss = if lambda_goal > 0.0 {
        let omt = tape.leaf(Tensor::matrix(b, d, one_minus_tau)?);
        let step = tape.mul(v, omt)?;
        let zt = tape.leaf(Tensor::matrix(b, d, z_tau_all)?);
        let u_hat = tape.add(zt, step)?;
        let (std, mean) = (model.norm.control_std, model.norm.control_mean);
        let std_tile: Vec<T> = (0..b * d).map(|i| T::from_f64(std[i % 2])).collect();
        let mean_tile: Vec<T> = (0..b * d).map(|i| T::from_f64(mean[i % 2])).collect();
        let st = tape.leaf(Tensor::matrix(b, d, std_tile)?);
        let scaled = tape.mul(u_hat, st)?;
        let mt = tape.leaf(Tensor::matrix(b, d, mean_tile)?);
        let phys = tape.add(scaled, mt)?;
        // summing matrix: endpoint offset = dt * sum over time, per channel
        let mut s = vec![T::ZERO; d * 2];
        for t in 0..desc.horizon {
            s[(2 * t) * 2] = T::from_f64(desc.dt);
            s[(2 * t + 1) * 2 + 1] = T::from_f64(desc.dt);
        }
        let sv = tape.leaf(Tensor::matrix(d, 2, s)?);
        let end = tape.matmul(phys, sv)?;
        let gv = tape.leaf(Tensor::matrix(b, 2, goal_rel)?);
        let err = tape.sub(end, gv)?;
        let goal_sum = tape.squared_norm(err);
        let goal = tape.scale(goal_sum, inv_b);
        let weighted = tape.scale(goal, T::from_f64(lambda_goal));
        let total = tape.add(cfm, weighted)?;
        (total, Some(goal))
    } else {
        (cfm, None)
    };
    let (loss_var, goal_var) = loss;

    let mut grads = tape.backward(loss_var)?;
    Ok(LossReport {
        total: tape.value(loss_var).data()[0].to_f64(),
        cfm: tape.value(cfm).data()[0].to_f64(),
        goal: goal_var.map_or(0.0, |g| tape.value(g).data()[0].to_f64()),
        grads: params.iter().map(|p| grads.take(*p)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lambda_goal: f64,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub lr_min_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Optional wall-clock limit in seconds; training stops early when hit.
    pub time_budget_s: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 128,
            lambda_goal: 0.1,
            lr: 2e-3,
            lr_min_ratio: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            time_budget_s: None,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub total: f64,
    pub cfm: f64,
    pub goal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss averaged over each `log_every` window.
    pub curve: Vec<LossPoint>,
    pub steps_run: usize,
    pub elapsed_s: f64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,total,cfm,goal\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{},{}\n", p.step, p.total, p.cfm, p.goal));
        }
        s
    }
}

/// Minibatch Adam on [`cfm_goal_loss`]. Single-threaded and deterministic
/// for a given seed (unless a time budget cuts it short).
pub fn train(model: &mut FlowModel<f32>, data: &[TrainingPair], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let start = Instant::now();
    let mut r = rng::rng(cfg.seed);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let mut opt = Adam::new(adam_cfg, model.net.params());
    let log_every = cfg.log_every.max(1);
    let mut curve = Vec::new();
    let mut acc = (0.0, 0.0, 0.0, 0usize);
    let mut steps_run = 0;

    for step in 0..cfg.steps {
        if let Some(budget) = cfg.time_budget_s {
            if start.elapsed().as_secs_f64() > budget {
                break;
            }
        }
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.set_lr(cfg.lr * (cfg.lr_min_ratio + (1.0 - cfg.lr_min_ratio) * cos));

        let batch: Vec<&TrainingPair> = (0..cfg.batch_size)
            .map(|_| &data[r.random_range(0..data.len())])
            .collect();
        let draws = CfmDraws::sample(&mut r, batch.len(), model.desc.output_dim());
        let report = cfm_goal_loss(model, &batch, &draws, cfg.lambda_goal)?;
        if !report.total.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: report.total,
            });
        }
        opt.step(model.net.params_mut(), &report.grads);
        steps_run = step + 1;

        acc = (acc.0 + report.total, acc.1 + report.cfm, acc.2 + report.goal, acc.3 + 1);
        if acc.3 == log_every || step + 1 == cfg.steps {
            let n = acc.3 as f64;
            curve.push(LossPoint {
                step: step + 1,
                total: acc.0 / n,
                cfm: acc.1 / n,
                goal: acc.2 / n,
            });
            acc = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(TrainReport {
        curve,
        steps_run,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
