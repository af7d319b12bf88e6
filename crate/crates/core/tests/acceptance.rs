//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Trains its own models; takes roughly a quarter of an
//! hour on one core, most of it in the 50-scenario crowd benchmark.

mod common;

use std::fs;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal};

use flowmppi_core::bench::{run_bench, BenchConfig, BenchReport};
use flowmppi_core::data::{synth_dataset, synth_mix, SynthConfig, SynthKind};
use flowmppi_core::dynamics::integrate_positions;
use flowmppi_core::flow::{sample_path_point, sample_uncond, train, ArchDescriptor, Normalization, TrainConfig};
use flowmppi_core::guidance::{generate_batch, guided_sample, warm_start_state};
use flowmppi_core::metrics::format_table;
use flowmppi_core::mppi::mppi_weights;
use flowmppi_core::rewards::{AgentForecast, ForecastModel};
use flowmppi_core::rng::{self, mix};
use flowmppi_core::sim::{generate_scenarios, ClosedLoop, GeneratorConfig, SimConfig};
use flowmppi_core::{
    Condition, ControlSequence, FlowModel, Frame, GuidanceConfig, GuidanceContext, ObstacleForecast, PlannerConfig,
    PlannerMode, RewardConfig, Vec2,
};

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("{} {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn main_model() -> FlowModel<f32> {
    let data = synth_mix(2000, 0, &SynthConfig::default()).unwrap();
    let mut m = FlowModel::<f32>::new(ArchDescriptor::default(), Normalization::fit(&data).unwrap(), 0).unwrap();
    let t = Instant::now();
    let rep = train(
        &mut m,
        &data,
        &TrainConfig {
            steps: 3000,
            log_every: 500,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let last = rep.curve.last().unwrap();
    println!(
        "# main model: {} pairs, {} steps, loss {:.3} -> {:.3}, {:.1} s",
        data.len(),
        rep.steps_run,
        rep.curve[0].total,
        last.total,
        t.elapsed().as_secs_f64()
    );
    m
}

fn c1(r: &mut Report) {
    let t = Instant::now();
    let reward = common::reward_gradcheck(100, 11);
    let training = common::training_gradcheck(100, 12);
    let secs = t.elapsed().as_secs_f64();
    r.check(
        1,
        "gradient correctness",
        reward < 1e-4 && training < 1e-4 && secs < 60.0,
        format!("max rel err reward {reward:.2e}, training {training:.2e} (< 1e-4), {secs:.1} s (< 60 s)"),
    );
}

fn crowd_context(model: &FlowModel<f32>) -> GuidanceContext {
    let agents = [(Vec2::new(1.5, 0.2), Vec2::new(-0.8, 0.0)), (Vec2::new(2.5, -1.0), Vec2::new(0.0, 0.6))];
    let forecast = ObstacleForecast::new(
        model.desc.horizon,
        model.desc.dt,
        ForecastModel::ConstantVelocity,
        agents
            .iter()
            .map(|(p, v)| AgentForecast {
                positions: (0..=model.desc.horizon).map(|k| p + (k as f64 * model.desc.dt) * v).collect(),
                velocity: *v,
            })
            .collect(),
    )
    .unwrap();
    GuidanceContext {
        condition: Condition::new(Vec2::zeros(), Vec2::new(4.0, 0.0), &[Vec2::new(1.0, 0.0); 4], model.desc.history),
        start: Vec2::zeros(),
        goal: Vec2::new(4.0, 0.0),
        forecast,
    }
}

fn c2(r: &mut Report, model: &FlowModel<f32>) {
    let cfg = GuidanceConfig {
        lambda_guide: 0.0,
        ..GuidanceConfig::default()
    };
    let ctx = crowd_context(model);
    let sched = cfg.cold_schedule().unwrap();
    let n = 50;
    let same = (0..n)
        .filter(|&s| {
            let z0 = rng::standard_normals(&mut rng::rng(s), model.desc.output_dim());
            let a = guided_sample(model, &ctx, &cfg, &RewardConfig::default(), &sched, &z0).unwrap();
            let b = sample_uncond(model, &ctx.condition, &sched, &z0).unwrap();
            a.to_flat().iter().zip(b.to_flat()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
        .count();
    r.check(
        2,
        "guidance-off equivalence",
        same == n as usize,
        format!("{same}/{n} seeds bitwise identical"),
    );
}

fn c3(r: &mut Report, model: &FlowModel<f32>) {
    let d = model.desc.output_dim();
    let mut g = rng::rng(31);
    let endpoints_exact = (0..1000).all(|_| {
        let z0 = rng::standard_normals(&mut g, d);
        let z1 = rng::standard_normals(&mut g, d);
        sample_path_point(&z0, &z1, 0.0).0 == z0 && sample_path_point(&z0, &z1, 1.0).0 == z1
    });

    let u_prev = ControlSequence::new(
        Frame::Cartesian,
        model.desc.dt,
        (0..model.desc.horizon).map(|t| Vec2::new(1.0, 0.3 * (t as f64 * 0.2).sin())).collect(),
    )
    .unwrap();
    let z1 = model.norm.normalize_controls(u_prev.values());
    let n = 10_000;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, tau) in [0.8, 0.5].into_iter().enumerate() {
        let mut g = rng::rng_stream(32, i as u64);
        let sd = 1.0 - tau;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = warm_start_state(&model.norm, &u_prev, tau, &mut g).unwrap();
            for (zi, ai) in z.iter().zip(&z1) {
                let e = (zi - tau * ai) / sd;
                s1 += e;
                s2 += e * e;
            }
        }
        let m = (n * d) as f64;
        let z_mean = (s1 / m) * m.sqrt();
        let z_var = (s2 / m - 1.0) / (2.0 / m).sqrt();
        worst = worst.max(z_mean.abs()).max(z_var.abs());
        parts.push(format!("tau {tau}: mean z {z_mean:+.2}, var z {z_var:+.2}"));
    }
    r.check(
        3,
        "flow endpoint identities",
        endpoints_exact && worst < 3.0,
        format!(
            "path endpoints exact: {endpoints_exact}; warm-start law over {n} draws x {d} dims, {} (|z| < 3)",
            parts.join("; ")
        ),
    );
}

fn c4(r: &mut Report) {
    let synth = SynthConfig {
        random_heading: false,
        ..SynthConfig::default()
    };
    let data = synth_dataset(SynthKind::TwoModeDodge, 2000, 40, &synth).unwrap();
    let mut model = FlowModel::<f32>::new(ArchDescriptor::default(), Normalization::fit(&data).unwrap(), 4).unwrap();
    let rep = train(
        &mut model,
        &data,
        &TrainConfig {
            steps: 2000,
            time_budget_s: Some(600.0),
            log_every: 500,
            ..TrainConfig::default()
        },
    )
    .unwrap();

    let cond = Condition::new(Vec2::zeros(), Vec2::new(4.0, 0.0), &[Vec2::new(1.0, 0.0); 4], model.desc.history);
    let sched = GuidanceConfig::default().cold_schedule().unwrap();
    let mut g = rng::rng(41);
    let n = 400;
    let mut left = 0;
    for _ in 0..n {
        let z0 = rng::standard_normals(&mut g, model.desc.output_dim());
        let u = sample_uncond(&model, &cond, &sched, &z0).unwrap();
        let half = model.desc.horizon / 2;
        if u.values()[..half].iter().map(|v| v.y).sum::<f64>() > 0.0 {
            left += 1;
        }
    }
    let (fl, fr) = (left as f64 / n as f64, (n - left) as f64 / n as f64);
    r.check(
        4,
        "toy two-mode learning",
        fl >= 0.25 && fr >= 0.25,
        format!(
            "{} steps in {:.1} s; left {:.1}%, right {:.1}% of {n} unguided samples (each >= 25%)",
            rep.steps_run,
            rep.elapsed_s,
            100.0 * fl,
            100.0 * fr
        ),
    );
}

/// Page's L statistic for increasing trend across columns, normal
/// approximation; returns (L, one-sided p).
fn page_test(blocks: &[Vec<f64>]) -> (f64, f64) {
    let k = blocks[0].len();
    let n = blocks.len() as f64;
    let mut rank_sums = vec![0.0; k];
    for b in blocks {
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
        let mut pos = 0;
        while pos < k {
            let mut end = pos;
            while end + 1 < k && b[idx[end + 1]] == b[idx[pos]] {
                end += 1;
            }
            let rank = (pos + end) as f64 / 2.0 + 1.0;
            for &i in &idx[pos..=end] {
                rank_sums[i] += rank;
            }
            pos = end + 1;
        }
    }
    let l: f64 = rank_sums.iter().enumerate().map(|(j, s)| (j + 1) as f64 * s).sum();
    let kf = k as f64;
    let mean = n * kf * (kf + 1.0).powi(2) / 4.0;
    let var = n * kf * kf * (kf + 1.0) * (kf * kf - 1.0) / 144.0;
    let z = (l - mean) / var.sqrt();
    (l, 1.0 - Normal::standard().cdf(z))
}

fn c5(r: &mut Report, model: &FlowModel<f32>) {
    let weights = [0.0, 5.0, 10.0, 15.0, 20.0];
    let samples = 40;
    let (h, dt) = (model.desc.horizon, model.desc.dt);
    let mut blocks = Vec::new();
    let mut entries = [0usize; 5];
    for i in 0..20u64 {
        let mut g = rng::rng(mix(50, i));
        use rand::Rng as _;
        let speed = g.random_range(0.8..1.2);
        let goal = Vec2::new(g.random_range(3.5..4.5), 0.0);
        let agent = Vec2::new(g.random_range(1.5..2.5), g.random_range(-0.1..0.1));
        let forecast = ObstacleForecast::new(
            h,
            dt,
            ForecastModel::ConstantVelocity,
            vec![AgentForecast {
                positions: vec![agent; h + 1],
                velocity: Vec2::zeros(),
            }],
        )
        .unwrap();
        let ctx = GuidanceContext {
            condition: Condition::new(Vec2::zeros(), goal, &[Vec2::new(speed, 0.0); 4], model.desc.history),
            start: Vec2::zeros(),
            goal,
            forecast,
        };
        let mut row = Vec::new();
        for (wi, w) in weights.iter().enumerate() {
            let cfg = GuidanceConfig {
                w_cbf_set: vec![*w],
                samples_per_weight: samples,
                ..GuidanceConfig::default()
            };
            let batch = generate_batch(model, &ctx, &cfg, &RewardConfig::default(), mix(51, i), None).unwrap();
            let mut dsum = 0.0;
            for s in &batch.samples {
                let md = integrate_positions(Vec2::zeros(), s.controls.values(), dt)
                    .iter()
                    .map(|x| (x - agent).norm())
                    .fold(f64::INFINITY, f64::min);
                dsum += md;
                if md < 0.7 {
                    entries[wi] += 1;
                }
            }
            row.push(dsum / samples as f64);
        }
        blocks.push(row);
    }
    let means: Vec<f64> = (0..5).map(|j| blocks.iter().map(|b| b[j]).sum::<f64>() / 20.0).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let total = 20 * samples;
    let (f0, f20) = (entries[0] as f64 / total as f64, entries[4] as f64 / total as f64);
    let reduced = f20 <= 0.5 * f0 && f0 > 0.0;
    let (l, p) = page_test(&blocks);
    r.check(
        5,
        "safety-guidance effect",
        reduced && monotone && p < 0.05,
        format!(
            "disk entries w=0 {:.1}% -> w=20 {:.1}% (needs >= 50% reduction); mean min distance {:?} (monotone: {monotone}); Page L {l:.0}, p {p:.2e} (< 0.05)",
            100.0 * f0,
            100.0 * f20,
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

fn c6(r: &mut Report) {
    let mut g = rng::rng(61);
    use rand::Rng as _;
    let mut worst_sum: f64 = 0.0;
    let mut shift_exact = true;
    for _ in 0..1000 {
        let n = g.random_range(1..300);
        let lambda = g.random_range(0.01..100.0);
        let costs: Vec<f64> = (0..n).map(|_| g.random_range(-1000..1000) as f64).collect();
        let w = mppi_weights(&costs, lambda).unwrap();
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let k = g.random_range(-1000..1000) as f64;
        let shifted: Vec<f64> = costs.iter().map(|c| c + k).collect();
        shift_exact &= mppi_weights(&shifted, lambda).unwrap() == w;
    }
    let ex = mppi_weights(&[0.0, 1.0, 2.0], 1.0).unwrap();
    let example = ex.iter().zip([0.665, 0.245, 0.090]).all(|(a, b)| (a - b).abs() <= 1e-3);
    r.check(
        6,
        "MPPI properties",
        worst_sum <= 1e-12 && shift_exact && example,
        format!(
            "max |sum w - 1| {worst_sum:.1e} (<= 1e-12); integer cost shifts exact: {shift_exact}; softmin {{0,1,2}} -> ({:.4}, {:.4}, {:.4})",
            ex[0], ex[1], ex[2]
        ),
    );
}

fn c7_c8(r: &mut Report, model: &FlowModel<f32>) {
    let cfg = BenchConfig::default();
    let t = Instant::now();
    let rep = run_bench(&cfg, Some(model), None).unwrap();
    println!(
        "# crowd benchmark: {} scenarios x {} agents, {:.0} s",
        cfg.scenarios,
        cfg.generator.agents,
        t.elapsed().as_secs_f64()
    );
    for line in format_table(&rep.rows).lines() {
        println!("# {line}");
    }
    let failures = rep.episodes.iter().filter(|e| e.failure.is_some()).count();
    let row = |m| rep.row(m).unwrap();
    let (mp, cf, cm) = (row(PlannerMode::Mppi), row(PlannerMode::Cfm), row(PlannerMode::CfmMppi));
    let checks = [
        ("coll(cfm-mppi) <= coll(mppi)", cm.collision_pct <= mp.collision_pct),
        ("coll(mppi) < coll(cfm)", mp.collision_pct < cf.collision_pct),
        (
            "lin acc cfm-mppi lowest",
            cm.lin_acc_mean < mp.lin_acc_mean && cm.lin_acc_mean < cf.lin_acc_mean,
        ),
        (
            "ang acc cfm-mppi lowest",
            cm.ang_acc_mean < mp.ang_acc_mean && cm.ang_acc_mean < cf.ang_acc_mean,
        ),
        (
            "reach cfm-mppi lowest",
            cm.reach_mean < mp.reach_mean && cm.reach_mean < cf.reach_mean,
        ),
        ("no aborted episodes", failures == 0),
    ];
    let detail: Vec<String> = checks
        .iter()
        .map(|(n, ok)| format!("{n}: {}", if *ok { "yes" } else { "no" }))
        .collect();
    r.check(
        7,
        "crowd benchmark ordering",
        checks.iter().all(|c| c.1),
        format!(
            "coll% {:.2}/{:.2}/{:.2}, reach {:.2}/{:.2}/{:.2}, lin acc {:.2}/{:.2}/{:.2}, ang acc {:.2}/{:.2}/{:.2} (mppi/cfm/cfm-mppi); {}",
            mp.collision_pct,
            cf.collision_pct,
            cm.collision_pct,
            mp.reach_mean,
            cf.reach_mean,
            cm.reach_mean,
            mp.lin_acc_mean,
            cf.lin_acc_mean,
            cm.lin_acc_mean,
            mp.ang_acc_mean,
            cf.ang_acc_mean,
            cm.ang_acc_mean,
            detail.join(", ")
        ),
    );
    r.check(
        8,
        "planning time",
        cm.time_mean > 0.0 && cm.time_mean < 0.5,
        format!(
            "cfm-mppi mean plan_step {:.4} s at K = {}, T = {} (< 0.5 s; reference 0.076 s)",
            cm.time_mean,
            cfg.planner.guidance.batch_size(),
            cfg.planner.horizon
        ),
    );
}

fn c9(r: &mut Report, model: &FlowModel<f32>) {
    let gen = GeneratorConfig::default();
    let scenarios = generate_scenarios(20, &gen, 9).unwrap();
    let steps = 40;
    let mut means = Vec::new();
    for tau in [0.9, 0.0] {
        let (mut sum, mut count) = (0.0, 0);
        for (i, sc) in scenarios.iter().enumerate() {
            let mut cfg = PlannerConfig {
                mode: PlannerMode::CfmMppi,
                seed: mix(90, i as u64),
                record_timing: false,
                ..PlannerConfig::default()
            };
            cfg.guidance.tau_ws = tau;
            let mut l = ClosedLoop::new(sc, &cfg, Some(model), &SimConfig::default()).unwrap();
            let mut prev: Option<ControlSequence> = None;
            while !l.finished() && l.step_index() < steps {
                let (_, out) = l.step().unwrap();
                let u = out.result.u_star;
                if let Some(p) = &prev {
                    let d: f64 = u
                        .values()
                        .iter()
                        .zip(p.shifted().values())
                        .map(|(a, b)| (a - b).norm_squared())
                        .sum();
                    sum += d.sqrt();
                    count += 1;
                }
                prev = Some(u);
            }
        }
        means.push(sum / count as f64);
    }
    r.check(
        9,
        "warm-start continuity",
        means[0] < means[1],
        format!(
            "mean |u*_k - shift(u*_k-1)| over 20 episodes: tau_ws 0.9 -> {:.3}, tau_ws 0 -> {:.3}",
            means[0], means[1]
        ),
    );
}

fn c10(r: &mut Report, model: &FlowModel<f32>) {
    let mut cfg = BenchConfig {
        scenarios: 3,
        ..BenchConfig::default()
    };
    cfg.generator.max_time = 5.0;
    cfg.planner.record_timing = false;
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> (BenchReport, Vec<(String, Vec<u8>)>) {
        let d = dir.path().join(name);
        let rep = run_bench(&cfg, Some(model), Some(&d)).unwrap();
        let mut logs: Vec<(String, Vec<u8>)> = fs::read_dir(&d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        logs.sort();
        (rep, logs)
    };
    let (a, la) = run("a");
    let (b, lb) = run("b");
    let csv_same = a.to_csv() == b.to_csv();
    let logs_same = la == lb;
    r.check(
        10,
        "determinism",
        csv_same && logs_same && !la.is_empty(),
        format!("CSV identical: {csv_same}; {} episode logs identical: {logs_same}", la.len()),
    );
}

fn c11(r: &mut Report) {
    let cost_bad = common::cost_oracle_mismatches(1000, 21);
    let (agg_bad, agg_dev, zero_std) = common::aggregate_oracle(1000, 22);
    r.check(
        11,
        "dual-implementation oracles",
        cost_bad == 0 && agg_bad == 0 && agg_dev < 1e-12 && zero_std,
        format!(
            "trajectory_cost bitwise mismatches {cost_bad}/1000; aggregate count/percentage mismatches {agg_bad}/1000, mean/std max rel dev {agg_dev:.1e} (< 1e-12), identical inputs give zero std: {zero_std}"
        ),
    );
}

fn main() {
    let start = Instant::now();
    let mut r = Report { failed: 0 };
    c1(&mut r);
    c6(&mut r);
    c11(&mut r);
    c4(&mut r);
    let model = main_model();
    c2(&mut r, &model);
    c3(&mut r, &model);
    c5(&mut r, &model);
    c9(&mut r, &model);
    c10(&mut r, &model);
    c7_c8(&mut r, &model);
    println!(
        "# {} of 11 criteria failed, {:.0} s total",
        r.failed,
        start.elapsed().as_secs_f64()
    );
    if r.failed > 0 {
        std::process::exit(1);
    }
}
