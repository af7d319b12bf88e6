#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowmppi_core::flow::{cfm_goal_loss, ArchDescriptor, CfmDraws, Normalization};
use flowmppi_core::metrics::{aggregate, EpisodeMetrics};
use flowmppi_core::mppi::trajectory_cost;
use flowmppi_core::rewards::{reward_gradient, AgentForecast, ForecastModel};
use flowmppi_core::{
    Condition, ControlSequence, FlowModel, Frame, MppiConfig, ObstacleForecast, RewardConfig, RobotState,
    TrainingPair, Vec2,
};

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

fn v2(r: &mut ChaCha8Rng, s: f64) -> Vec2 {
    Vec2::new(r.random_range(-s..s), r.random_range(-s..s))
}

/// Largest relative error of `reward_gradient` against central differences
/// over `n` random crowd instances.
pub fn reward_gradcheck(n: usize, seed: u64) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let dt = 0.1;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let t = r.random_range(3..=40);
        let u: Vec<Vec2> = (0..t).map(|_| v2(&mut r, 1.5)).collect();
        let start = v2(&mut r, 1.0);
        let agents = (0..r.random_range(1..=5))
            .map(|_| {
                let p0 = start + v2(&mut r, 2.0);
                let vel = v2(&mut r, 1.0);
                AgentForecast {
                    positions: (0..=t).map(|k| p0 + (k as f64 * dt) * vel).collect(),
                    velocity: vel,
                }
            })
            .collect();
        let forecast = ObstacleForecast::new(t, dt, ForecastModel::ConstantVelocity, agents).unwrap();
        let cfg = RewardConfig {
            w_cbf: r.random_range(0.0..20.0),
            w_goal: r.random_range(0.0..2.0),
            markup: r.random_range(1.0..1.05),
            ..RewardConfig::default()
        };
        let goal = v2(&mut r, 5.0);
        let u = ControlSequence::new(Frame::Cartesian, dt, u).unwrap();

        let (_, g) = reward_gradient(&u, start, &forecast, goal, &cfg).unwrap();
        let analytic: Vec<f64> = g.iter().flat_map(|v| [v.x, v.y]).collect();
        let flat = u.to_flat();
        let eval = |x: &[f64]| {
            let s = ControlSequence::from_flat(Frame::Cartesian, dt, x).unwrap();
            reward_gradient(&s, start, &forecast, goal, &cfg).unwrap().0
        };
        let fd: Vec<f64> = (0..flat.len())
            .map(|i| {
                let (mut p, mut m) = (flat.clone(), flat.clone());
                p[i] += h;
                m[i] -= h;
                (eval(&p) - eval(&m)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &fd));
    }
    worst
}

/// Largest relative error of the CFM + goal loss parameter gradients
/// against central differences, f64 model, `n` random instances.
pub fn training_gradcheck(n: usize, seed: u64) -> f64 {
    let desc = ArchDescriptor {
        horizon: 5,
        history: 2,
        width: 8,
        depth: 2,
        tau_embed: 4,
        dt: 0.1,
    };
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..n as u64 {
        let pairs: Vec<TrainingPair> = (0..3)
            .map(|_| {
                let past: Vec<Vec2> = (0..r.random_range(0..=desc.history)).map(|_| v2(&mut r, 1.0)).collect();
                TrainingPair {
                    controls: (0..desc.horizon).map(|_| v2(&mut r, 1.5)).collect(),
                    condition: Condition::new(Vec2::zeros(), v2(&mut r, 4.0), &past, desc.history),
                }
            })
            .collect();
        let norm = Normalization::fit(&pairs).unwrap();
        let mut model = FlowModel::<f64>::new(desc, norm, case).unwrap();
        let batch: Vec<&TrainingPair> = pairs.iter().collect();
        let draws = CfmDraws::sample(&mut flowmppi_core::rng::rng(case), batch.len(), desc.output_dim());
        let lambda_goal = if case % 2 == 0 { 0.1 } else { 0.0 };

        let report = cfm_goal_loss(&model, &batch, &draws, lambda_goal).unwrap();
        let analytic: Vec<f64> = report.grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let mut fd = Vec::with_capacity(analytic.len());
        for p in 0..model.net.params().len() {
            for j in 0..model.net.params()[p].data().len() {
                let x0 = model.net.params()[p].data()[j];
                model.net.params_mut()[p].data_mut()[j] = x0 + h;
                let lp = cfm_goal_loss(&model, &batch, &draws, lambda_goal).unwrap().total;
                model.net.params_mut()[p].data_mut()[j] = x0 - h;
                let lm = cfm_goal_loss(&model, &batch, &draws, lambda_goal).unwrap().total;
                model.net.params_mut()[p].data_mut()[j] = x0;
                fd.push((lp - lm) / (2.0 * h));
            }
        }
        worst = worst.max(rel_err(&analytic, &fd));
    }
    worst
}

// Naive re-implementations with plain tuples and loops.

pub type P = (f64, f64);

fn wrap(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut r = (a + pi).rem_euclid(2.0 * pi) - pi;
    if r <= -pi {
        r += 2.0 * pi;
    }
    r
}

fn sq(a: P, b: P) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

pub fn naive_cost(u: &[P], start: (f64, f64, f64), agents: &[Vec<P>], goal: P, cfg: &MppiConfig, dt: f64) -> f64 {
    let (mut x, mut y, mut th) = start;
    let mut xs = vec![(x, y)];
    for c in u {
        let speed = (c.0 * c.0 + c.1 * c.1).sqrt();
        let (v, om) = if speed < 1e-3 {
            (0.0, 0.0)
        } else {
            let turn = wrap(c.1.atan2(c.0) - th) / dt;
            (speed.min(cfg.limits.v_max), turn.clamp(-cfg.limits.omega_max, cfg.limits.omega_max))
        };
        x += dt * v * th.cos();
        y += dt * v * th.sin();
        th = wrap(th + dt * om);
        xs.push((x, y));
    }

    let rc = &cfg.reward;
    let mut reward = 0.0;
    if rc.w_cbf != 0.0 && !agents.is_empty() {
        let mut gamma = 1.0;
        for t in 0..u.len() {
            let mut step = 0.0;
            for a in agents {
                let h = sq(xs[t], a[t]) - rc.radius * rc.radius;
                let hn = sq(xs[t + 1], a[t + 1]) - rc.radius * rc.radius;
                let arg: f64 = (hn - h) / dt + rc.alpha * h;
                step += arg.min(0.0);
            }
            reward += rc.w_cbf * gamma * step;
            gamma *= rc.markup;
        }
    }
    reward += rc.w_goal * -sq(xs[u.len()], goal);

    let d2 = cfg.collision_distance * cfg.collision_distance;
    let mut hit = false;
    for a in agents {
        for (p, q) in xs.iter().zip(a) {
            if sq(*p, *q) < d2 {
                hit = true;
            }
        }
    }
    let mut smooth = 0.0;
    for k in 1..u.len() {
        smooth += sq(u[k], u[k - 1]);
    }
    -reward + if hit { cfg.collision_cost } else { 0.0 } + cfg.w_smooth * smooth
}

/// Number of random instances on which `trajectory_cost` and the naive
/// oracle disagree in any bit.
pub fn cost_oracle_mismatches(n: usize, seed: u64) -> usize {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.1;
    let mut bad = 0;
    for case in 0..n {
        let t = r.random_range(1..=40);
        let mut pt = || (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let u: Vec<P> = (0..t).map(|_| pt()).collect();
        let start = (pt().0, pt().1, pt().0);
        let goal = pt();
        let n_agents = r.random_range(0..6);
        let agents: Vec<Vec<P>> = (0..n_agents)
            .map(|_| {
                let p0 = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
                let v = (r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
                (0..=t).map(|k| (p0.0 + k as f64 * dt * v.0, p0.1 + k as f64 * dt * v.1)).collect()
            })
            .collect();
        let cfg = MppiConfig {
            w_smooth: if case % 3 == 0 { 0.0 } else { r.random_range(0.0..2.0) },
            reward: RewardConfig {
                w_cbf: if case % 5 == 0 { 0.0 } else { r.random_range(0.0..20.0) },
                w_goal: r.random_range(0.0..2.0),
                ..RewardConfig::default()
            },
            ..MppiConfig::default()
        };

        let seq = ControlSequence::new(Frame::Cartesian, dt, u.iter().map(|c| Vec2::new(c.0, c.1)).collect()).unwrap();
        let forecast = ObstacleForecast::new(
            t,
            dt,
            ForecastModel::ConstantVelocity,
            agents
                .iter()
                .map(|a| AgentForecast {
                    positions: a.iter().map(|p| Vec2::new(p.0, p.1)).collect(),
                    velocity: Vec2::zeros(),
                })
                .collect(),
        )
        .unwrap();
        let robot = RobotState::new(start.0, start.1, start.2);
        let got = trajectory_cost(&seq, robot, &forecast, Vec2::new(goal.0, goal.1), &cfg).unwrap();
        let want = naive_cost(&u, (robot.x, robot.y, robot.theta), &agents, goal, &cfg, dt);
        if got.to_bits() != want.to_bits() {
            bad += 1;
        }
    }
    bad
}

fn naive_mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Over `n` random episode sets: (instances where counts or collision
/// percentage differ in any bit, largest relative deviation of the
/// mean/std columns, whether identical inputs always gave exactly zero std).
pub fn aggregate_oracle(n: usize, seed: u64) -> (usize, f64, bool) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (mut exact_bad, mut worst, mut zero_ok) = (0, 0.0f64, true);
    for _ in 0..n {
        let k = r.random_range(1..60);
        let eps: Vec<EpisodeMetrics> = (0..k)
            .map(|_| EpisodeMetrics {
                collision: r.random_bool(0.2),
                min_distance: r.random_range(0.0..5.0),
                reach: r.random_range(0.0..12.0),
                lin_acc: r.random_range(0.0..10.0),
                ang_acc: r.random_range(0.0..40.0),
                plan_time: r.random_range(0.0..0.1),
                steps: 100,
                reached: false,
            })
            .collect();
        let row = aggregate("m", &eps).unwrap();
        let mut hits = 0;
        for e in &eps {
            if e.collision {
                hits += 1;
            }
        }
        if row.collision_pct.to_bits() != (100.0 * hits as f64 / k as f64).to_bits() || row.episodes != k {
            exact_bad += 1;
        }
        let cols: [(Vec<f64>, f64, f64); 3] = [
            (eps.iter().map(|e| e.reach).collect(), row.reach_mean, row.reach_std),
            (eps.iter().map(|e| e.lin_acc).collect(), row.lin_acc_mean, row.lin_acc_std),
            (eps.iter().map(|e| e.ang_acc).collect(), row.ang_acc_mean, row.ang_acc_std),
        ];
        for (f, m, s) in cols {
            let (nm, ns) = naive_mean_std(&f);
            worst = worst.max((m - nm).abs() / (1.0 + nm.abs()));
            worst = worst.max((s - ns).abs() / (1.0 + ns.abs()));
        }
        let same = aggregate("m", &vec![eps[0]; k]).unwrap();
        zero_ok &= same.reach_mean == eps[0].reach && same.reach_std == 0.0;
    }
    (exact_bad, worst, zero_ok)
}
