use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use flowmppi_bench::{crowd, guidance_context, model};
use flowmppi_core::guidance::guidance_gradient;
use flowmppi_core::sim::{ClosedLoop, SimConfig};
use flowmppi_core::{Planner, PlannerConfig, PlannerMode};

fn velocity_field(c: &mut Criterion) {
    let m = model(0).unwrap();
    let d = m.desc;
    let rows = 200;
    let z = vec![0.1; rows * d.output_dim()];
    let cond = vec![0.2; d.condition_dim()];
    c.bench_function("velocity_field/200x80", |b| {
        b.iter(|| m.velocity_batch(black_box(&z), black_box(&cond), 0.5).unwrap())
    });
}

fn reward_gradient(c: &mut Criterion) {
    let scenario = crowd(0).unwrap();
    let cfg = PlannerConfig::default();
    let l = ClosedLoop::new(
        &scenario,
        &PlannerConfig {
            mode: PlannerMode::Mppi,
            ..cfg.clone()
        },
        None,
        &SimConfig::default(),
    )
    .unwrap();
    let world = l.world().unwrap();
    let ctx = guidance_context(&world, &cfg);
    let m = model(0).unwrap();
    let z = vec![0.3; m.desc.output_dim()];
    c.bench_function("guidance_gradient/20_agents", |b| {
        b.iter(|| guidance_gradient(&m.norm, black_box(&z), cfg.dt, &ctx, &cfg.mppi.reward).unwrap())
    });
}

fn plan_step(c: &mut Criterion) {
    let scenario = crowd(0).unwrap();
    let m = model(0).unwrap();
    let mut g = c.benchmark_group("plan_step");
    g.sample_size(20);
    for mode in PlannerMode::ALL {
        let cfg = PlannerConfig {
            mode,
            record_timing: false,
            ..PlannerConfig::default()
        };
        let l = ClosedLoop::new(
            &scenario,
            &PlannerConfig {
                mode: PlannerMode::Mppi,
                ..cfg.clone()
            },
            None,
            &SimConfig::default(),
        )
        .unwrap();
        let world = l.world().unwrap();
        let mut p = Planner::new(cfg, mode.needs_model().then(|| m.clone())).unwrap();
        p.plan_step(&world).unwrap();
        g.bench_function(mode.name(), |b| b.iter(|| p.plan_step(black_box(&world)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, velocity_field, reward_gradient, plan_step);
criterion_main!(benches);
