//! Fixtures shared by the criterion benches.

use flowmppi_core::flow::{ArchDescriptor, Normalization};
use flowmppi_core::guidance::GuidanceContext;
use flowmppi_core::sim::{scenario_at, GeneratorConfig, Scenario};
use flowmppi_core::{FlowModel, Planner, PlannerConfig, PlannerMode, Result, WorldSnapshot};

/// Default-size untrained network. Timing does not depend on the weights.
pub fn model(seed: u64) -> Result<FlowModel<f32>> {
    let desc = ArchDescriptor::default();
    let norm = Normalization::identity(&desc);
    Ok(FlowModel::<f64>::new(desc, norm, seed)?.cast())
}

/// First scenario of the default crowd generator.
pub fn crowd(seed: u64) -> Result<Scenario> {
    scenario_at(&GeneratorConfig::default(), seed, 0)
}

pub fn guidance_context(world: &WorldSnapshot, cfg: &PlannerConfig) -> GuidanceContext {
    let cfg = PlannerConfig {
        mode: PlannerMode::Mppi,
        ..cfg.clone()
    };
    let planner = Planner::new(cfg, None).expect("valid planner config");
    GuidanceContext {
        condition: planner.condition(world),
        start: world.robot.position(),
        goal: world.goal,
        forecast: world.forecast.clone(),
    }
}
