//! TOML configuration files. Every table is optional and every key has a
//! default; unknown keys are rejected.
//!
//! ```toml
//! [arch]      # model shape: horizon, history, width, depth, tau_embed, dt
//! [train]     # steps, batch_size, lambda_goal, lr, ...
//! [planner]   # mode, samples, seed, goal_clip, warm_start, record_timing
//! [planner.guidance]  # lambda_guide, knots, w_cbf_set, samples_per_weight, tau_ws, ...
//! [planner.mppi]      # lambda, sigma, collision_cost, w_smooth, ...
//! [planner.mppi.reward]  # w_cbf, w_goal, radius, markup, alpha, aggregation
//! [sim]       # goal_tolerance and [sim.sfm]
//! [generator] # agents, arena, speed range, ...
//! [synth]     # synthetic dataset settings
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::flow::{ArchDescriptor, TrainConfig};
use crate::planner::PlannerConfig;
use crate::sim::{GeneratorConfig, SimConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub arch: ArchDescriptor,
    pub train: TrainConfig,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub generator: GeneratorConfig,
    pub synth: SynthConfig,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every table and that the model shape, planner and synthetic
    /// data agree on horizon, history and dt.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.planner.validate()?;
        let (a, p, s) = (&self.arch, &self.planner, &self.synth);
        if a.horizon != p.horizon || a.horizon != s.horizon {
            return Err(Error::Config(format!(
                "horizon differs: arch {}, planner {}, synth {}",
                a.horizon, p.horizon, s.horizon
            )));
        }
        if a.history != s.history {
            return Err(Error::Config(format!(
                "history differs: arch {}, synth {}",
                a.history, s.history
            )));
        }
        if a.dt != p.dt || a.dt != s.dt || a.dt != self.generator.dt {
            return Err(Error::Config(format!(
                "dt differs: arch {}, planner {}, synth {}, generator {}",
                a.dt, p.dt, s.dt, self.generator.dt
            )));
        }
        Ok(())
    }
}
