//! Trajectory ingestion, training-pair extraction and synthetic datasets.
//!
//! Input text files carry one observation per line, whitespace separated,
//! with at least the columns `frame agent x y` (positions given by the
//! manifest). Lines starting with `#` are ignored.

mod shards;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use shards::{read_pairs, write_pairs, PAIRS_MAGIC, PAIRS_VERSION};
pub use synth::{synth_dataset, synth_mix, SynthConfig, SynthKind};

use crate::dynamics::{integrate_positions, Vec2};
use crate::error::{Error, Result};
use crate::flow::{Condition, TrainingPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

/// Zero-based column positions in the raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    pub frame: usize,
    pub agent: usize,
    pub x: usize,
    pub y: usize,
}

impl Default for Columns {
    fn default() -> Self {
        Self {
            frame: 0,
            agent: 1,
            x: 2,
            y: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub sources: Vec<PathBuf>,
    /// Seconds per frame id.
    pub frame_interval: f64,
    /// Raw units to meters.
    #[serde(default = "one")]
    pub scale: f64,
    /// Frame ids between consecutive samples of one agent; inferred as the
    /// smallest gap in the file when absent.
    #[serde(default)]
    pub frame_stride: Option<u64>,
    #[serde(default)]
    pub columns: Columns,
    #[serde(default)]
    pub split: Split,
}

fn one() -> f64 {
    1.0
}

impl DatasetManifest {
    pub fn new(frame_interval: f64) -> Self {
        Self {
            sources: Vec::new(),
            frame_interval,
            scale: 1.0,
            frame_stride: None,
            columns: Columns::default(),
            split: Split::Train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_interval > 0.0) {
            return Err(Error::Config("frame_interval must be positive".into()));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config("scale must be positive".into()));
        }
        if self.frame_stride == Some(0) {
            return Err(Error::Config("frame_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut m: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.sources {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// One agent's uniformly sampled track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub agent_id: i64,
    pub times: Vec<f64>,
    pub positions: Vec<Vec2>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Sampling interval (seconds).
    pub fn interval(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

fn integral(v: f64, what: &str, path: &Path, line: usize) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{what} must be an integer, got {v}"),
        });
    }
    Ok(v as i64)
}

pub fn parse_trajectory_text(text: &str, path: &Path, manifest: &DatasetManifest) -> Result<Vec<TrajectoryRecord>> {
    manifest.validate()?;
    let c = manifest.columns;
    let need = c.frame.max(c.agent).max(c.x).max(c.y) + 1;
    let mut by_agent: BTreeMap<i64, Vec<(i64, Vec2, usize)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < need {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected at least {need} columns, found {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = fields[k].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {k}: '{}' is not a number", fields[k]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("column {k} is not finite"),
                })
            }
        };
        let frame = integral(num(c.frame)?, "frame id", path, line)?;
        let agent = integral(num(c.agent)?, "agent id", path, line)?;
        let p = Vec2::new(num(c.x)? * manifest.scale, num(c.y)? * manifest.scale);
        by_agent.entry(agent).or_default().push((frame, p, line));
    }

    for obs in by_agent.values_mut() {
        obs.sort_by_key(|o| o.0);
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: w[1].2,
                msg: format!("duplicate frame {} for one agent", w[1].0),
            });
        }
    }
    let stride = match manifest.frame_stride {
        Some(s) => s as i64,
        None => match by_agent
            .values()
            .flat_map(|o| o.windows(2).map(|w| w[1].0 - w[0].0))
            .min()
        {
            Some(s) => s,
            None => 1,
        },
    };

    let mut out = Vec::new();
    for (id, obs) in by_agent {
        let mut cur: Vec<(i64, Vec2)> = Vec::new();
        let mut flush = |cur: &mut Vec<(i64, Vec2)>| {
            if cur.len() >= 2 {
                out.push(TrajectoryRecord {
                    agent_id: id,
                    times: cur.iter().map(|(f, _)| *f as f64 * manifest.frame_interval).collect(),
                    positions: cur.iter().map(|(_, p)| *p).collect(),
                });
            }
            cur.clear();
        };
        for (frame, p, line) in obs {
            if let Some((last, _)) = cur.last() {
                let gap = frame - last;
                if gap % stride != 0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("agent {id}: frame gap {gap} is not a multiple of the stride {stride}"),
                    });
                }
                if gap != stride {
                    flush(&mut cur);
                }
            }
            cur.push((frame, p));
        }
        flush(&mut cur);
    }
    Ok(out)
}

/// Records grouped by agent and split wherever frames are missing; single
/// observations are dropped.
pub fn parse_trajectory_file(path: &Path, manifest: &DatasetManifest) -> Result<Vec<TrajectoryRecord>> {
    let text = fs::read_to_string(path)?;
    parse_trajectory_text(&text, path, manifest)
}

/// Linear interpolation onto a grid of step `dt` starting at the first sample.
pub fn resample(record: &TrajectoryRecord, dt: f64) -> Result<TrajectoryRecord> {
    if !(dt > 0.0) || record.len() < 2 {
        return Err(Error::Config("resampling needs dt > 0 and at least two samples".into()));
    }
    let t0 = record.times[0];
    let span = record.times[record.len() - 1] - t0;
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let mut times = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while seg + 2 < record.len() && record.times[seg + 1] <= t {
            seg += 1;
        }
        let (ta, tb) = (record.times[seg], record.times[seg + 1]);
        let (pa, pb) = (record.positions[seg], record.positions[seg + 1]);
        let s = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        times.push(t);
        positions.push(pa + s * (pb - pa));
    }
    Ok(TrajectoryRecord {
        agent_id: record.agent_id,
        times,
        positions,
    })
}

/// Sliding windows of `horizon` finite-difference controls (step `stride`),
/// each conditioned on the `history` controls before it. Positions are
/// relative to the window's first point and the goal is the window's
/// single-integrator endpoint. Records are resampled to `dt` when needed.
/// Returns the pairs and the number of records too short for one window.
pub fn extract_training_pairs(
    records: &[TrajectoryRecord],
    horizon: usize,
    history: usize,
    dt: f64,
    stride: usize,
) -> Result<(Vec<TrainingPair>, usize)> {
    if horizon == 0 || stride == 0 || !(dt > 0.0) {
        return Err(Error::Config("horizon, stride and dt must be positive".into()));
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for rec in records {
        let rec = if rec.len() >= 2 && (rec.interval() - dt).abs() > 1e-9 {
            resample(rec, dt)?
        } else {
            rec.clone()
        };
        if rec.len() < horizon + 1 {
            skipped += 1;
            continue;
        }
        let u: Vec<Vec2> = rec.positions.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
        let mut s = 0;
        while s + horizon <= u.len() {
            let controls = u[s..s + horizon].to_vec();
            let goal = *integrate_positions(Vec2::zeros(), &controls, dt)
                .last()
                .expect("non-empty");
            let past = &u[s.saturating_sub(history)..s];
            pairs.push(TrainingPair {
                controls,
                condition: Condition::new(Vec2::zeros(), goal, past, history),
            });
            s += stride;
        }
    }
    Ok((pairs, skipped))
}
