//! Reward-guided conditional flow matching fused with MPPI for crowd
//! navigation, plus the simulator, data pipeline and metrics used to
//! evaluate it.

pub mod autodiff;
pub mod bench;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod guidance;
pub mod metrics;
pub mod mppi;
pub mod planner;
pub mod rewards;
pub mod rng;
pub mod sim;

pub use dynamics::{ControlSequence, Frame, RobotState, StateSequence, UnicycleLimits, Vec2};
pub use error::{Error, Result};
pub use flow::{Condition, FlowModel, TrainingPair};
pub use guidance::{GuidanceConfig, GuidanceContext, SampleBatch};
pub use mppi::{MppiConfig, PlanResult};
pub use planner::{PlanOutput, Planner, PlannerConfig, PlannerMode, WorldSnapshot};
pub use rewards::{ObstacleForecast, RewardConfig};
