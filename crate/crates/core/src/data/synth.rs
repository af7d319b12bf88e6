//! Procedural control datasets with known statistics.
//!
//! - `straight`: constant velocity `s (cos phi, sin phi)`; history repeats it.
//! - `arc`: constant speed, heading turning at a constant rate `kappa`; the
//!   history continues the arc backwards.
//! - `two-mode-dodge`: forward speed `s` plus a lateral bump
//!   `+/- A sin(2 pi t / T)` that returns to the original line, sign drawn
//!   50/50. Both modes share the same goal, so the conditional law is bimodal.
//!   History is straight.
//! - `speed-change`: straight at speed `s`, then a smoothstep ramp to a new
//!   speed drawn from `[0, speed_max]` starting at a random step (slowing,
//!   stopping or speeding up). History is at `s`.
//!
//! With probability `history_drop` a pair keeps only some of its history,
//! like windows at the start of a recorded track.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_positions, Vec2};
use crate::error::{Error, Result};
use crate::flow::{Condition, TrainingPair};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Straight,
    Arc,
    TwoModeDodge,
    SpeedChange,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Self::Straight),
            "arc" => Ok(Self::Arc),
            "two-mode-dodge" => Ok(Self::TwoModeDodge),
            "speed-change" => Ok(Self::SpeedChange),
            _ => Err(Error::Config(format!("unknown synthetic kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub horizon: usize,
    pub history: usize,
    pub dt: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Draw the base heading uniformly; otherwise it is zero.
    pub random_heading: bool,
    /// Largest turn rate for `arc` (rad/s).
    pub turn_max: f64,
    /// Peak lateral speed of the dodge (m/s).
    pub dodge_amplitude: f64,
    /// Duration of the `speed-change` ramp (s).
    pub ramp_time: f64,
    /// Probability that a pair keeps only a random number (0..H) of its
    /// most recent history entries, the rest masked.
    pub history_drop: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            history: 4,
            dt: 0.1,
            speed_min: 0.1,
            speed_max: 1.5,
            random_heading: true,
            turn_max: 0.6,
            dodge_amplitude: 0.8,
            ramp_time: 1.0,
            history_drop: 0.2,
        }
    }
}

fn rot(phi: f64, v: Vec2) -> Vec2 {
    let (s, c) = phi.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Deterministic per `(seed, index)`.
pub fn synth_dataset(kind: SynthKind, count: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<TrainingPair>> {
    if count == 0 {
        return Err(Error::Config("synthetic dataset count must be positive".into()));
    }
    if !(cfg.speed_min >= 0.0 && cfg.speed_max >= cfg.speed_min && cfg.dt > 0.0 && cfg.horizon > 0)
        || !(0.0..=1.0).contains(&cfg.history_drop)
    {
        return Err(Error::Config("invalid synthetic dataset settings".into()));
    }
    let (t_len, h) = (cfg.horizon, cfg.history);
    let pairs = (0..count)
        .map(|i| {
            let mut r = rng::rng_stream(seed, i as u64);
            let phi = if cfg.random_heading {
                r.random_range(-PI..PI)
            } else {
                0.0
            };
            let s = if cfg.speed_max > cfg.speed_min {
                r.random_range(cfg.speed_min..cfg.speed_max)
            } else {
                cfg.speed_min
            };
            let (controls, past): (Vec<Vec2>, Vec<Vec2>) = match kind {
                SynthKind::Straight => {
                    let v = rot(phi, Vec2::new(s, 0.0));
                    (vec![v; t_len], vec![v; h])
                }
                SynthKind::Arc => {
                    let kappa = if cfg.turn_max > 0.0 {
                        r.random_range(-cfg.turn_max..cfg.turn_max)
                    } else {
                        0.0
                    };
                    let at = |k: f64| rot(phi + kappa * k * cfg.dt, Vec2::new(s, 0.0));
                    (
                        (0..t_len).map(|t| at(t as f64)).collect(),
                        (1..=h).rev().map(|k| at(-(k as f64))).collect(),
                    )
                }
                SynthKind::TwoModeDodge => {
                    let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                    let a = cfg.dodge_amplitude;
                    (
                        (0..t_len)
                            .map(|t| rot(phi, Vec2::new(s, sign * a * (TAU * t as f64 / t_len as f64).sin())))
                            .collect(),
                        vec![rot(phi, Vec2::new(s, 0.0)); h],
                    )
                }
                SynthKind::SpeedChange => {
                    let s1 = r.random_range(0.0..=cfg.speed_max);
                    let t0 = r.random_range(0..t_len) as f64 * cfg.dt;
                    let ramp = cfg.ramp_time.max(cfg.dt);
                    let speed = |t: f64| {
                        let x = ((t - t0) / ramp).clamp(0.0, 1.0);
                        s + (s1 - s) * x * x * (3.0 - 2.0 * x)
                    };
                    (
                        (0..t_len)
                            .map(|t| rot(phi, Vec2::new(speed(t as f64 * cfg.dt), 0.0)))
                            .collect(),
                        vec![rot(phi, Vec2::new(s, 0.0)); h],
                    )
                }
            };
            let keep = if h > 0 && r.random_bool(cfg.history_drop) {
                r.random_range(0..h)
            } else {
                h
            };
            let goal = *integrate_positions(Vec2::zeros(), &controls, cfg.dt)
                .last()
                .expect("non-empty");
            TrainingPair {
                controls,
                condition: Condition::new(Vec2::zeros(), goal, &past[h - keep..], h),
            }
        })
        .collect();
    Ok(pairs)
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::Straight,
        SynthKind::Arc,
        SynthKind::TwoModeDodge,
        SynthKind::SpeedChange,
    ];
}

/// `per_kind` pairs of every kind, kind `i` drawn with seed `mix(seed, i)`.
pub fn synth_mix(per_kind: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::with_capacity(per_kind * SynthKind::ALL.len());
    for (i, kind) in SynthKind::ALL.into_iter().enumerate() {
        out.extend(synth_dataset(kind, per_kind, rng::mix(seed, i as u64), cfg)?);
    }
    Ok(out)
}
