//! Acceptance suite. Every criterion prints one PASS or FAIL line; the process
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p navgym --test acceptance`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use navgym::bench::{
    aggregate_report, compute_metrics, run_evaluation, write_traces, EpisodeTrace, MetricsRow, TraceRecord,
};
use navgym::config::Parameters;
use navgym::drl::{
    epsilon_schedule, train, write_training_log, Agent, Mode, NStepBuffer, Policy, PolicyFile, PrioritizedBuffer,
    TrainingConfig, Transition,
};
use navgym::env::{CurriculumStage, NavEnv, Outcome};
use navgym::geometry::{Point, Pose2D, Rect};
use navgym::nn::{Activation, Architecture, ConvSpec, ImageShape, Init, Network, NetworkSpec, OutputHead};
use navgym::robot::{Limits, VelocityCommand};
use navgym::sensors::raycast;
use navgym::world::{Footprint, FootprintShape, Obstacle, ObstacleShape, Region, World};

type Verdict = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

struct Suite {
    failed: usize,
    total: usize,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Verdict) {
        let t0 = Instant::now();
        let verdict = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = t0.elapsed().as_secs_f64();
        self.total += 1;
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                self.failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0, total: 0 };
    let smoke = smoke_run();

    suite.run("report format", || report_format(&smoke));
    suite.run("gradient oracle", gradient_oracle);
    suite.run("raycast oracle", raycast_oracle);
    suite.run("collision oracle", collision_oracle);
    suite.run("metric oracle", metric_oracle);
    suite.run("reward telescoping", reward_telescoping);
    suite.run("n-step replay", nstep_replay);
    suite.run("prioritized sampling", prioritized_sampling);
    suite.run("exploration schedule", exploration_schedule);
    suite.run("exploration frequency", exploration_frequency);
    suite.run("learning smoke test", || learning_smoke(&smoke));
    suite.run("curriculum switch", curriculum_switch);
    suite.run("determinism", || determinism(&smoke));
    suite.run("checkpoint round-trip", || checkpoint_round_trip(&smoke));

    println!("{} of {} criteria passed", suite.total - suite.failed, suite.total);
    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// trained agent shared by several criteria

struct Smoke {
    params: Parameters,
    outcome: std::result::Result<(navgym::drl::TrainingOutcome, f64), String>,
}

fn smoke_config() -> PathBuf {
    repo("configs/empty_room_td3.yaml")
}

fn smoke_run() -> Smoke {
    let params = Parameters::load(smoke_config()).expect("smoke config loads");
    let t0 = Instant::now();
    let outcome = params
        .build_env()
        .and_then(|mut env| train(&mut env, &params.training))
        .map(|o| (o, t0.elapsed().as_secs_f64()))
        .map_err(|e| e.to_string());
    Smoke { params, outcome }
}

fn trained(smoke: &Smoke) -> std::result::Result<(&Agent, &navgym::drl::TrainingOutcome, f64), String> {
    match &smoke.outcome {
        Ok((o, secs)) => Ok((o.trainer.agent(), o, *secs)),
        Err(e) => Err(format!("training failed: {e}")),
    }
}

// ---------------------------------------------------------------------------

const TABLE_COLUMNS: [&str; 11] = [
    "success",
    "time",
    "cum. heading",
    "path",
    "dist/path",
    "v_mean",
    "omega std.dev.",
    "max linear acceleration",
    "max yaw acceleration",
    "min obstacle distance",
    "mean obstacle distance",
];

fn report_format(smoke: &Smoke) -> Verdict {
    let (agent, _, _) = trained(smoke)?;
    let mut env = smoke.params.build_env().map_err(|e| e.to_string())?;
    let spec = smoke.params.benchmark(&env).map_err(|e| e.to_string())?.clone();
    ensure(spec.couples.len() == 5, || format!("{} couples", spec.couples.len()))?;
    let traces = run_evaluation(&mut env, agent, &spec).map_err(|e| e.to_string())?;
    ensure(traces.len() == 5, || format!("{} traces", traces.len()))?;
    let rows: Vec<MetricsRow> = traces.iter().map(|t| compute_metrics(t, env.world()).unwrap()).collect();
    let report = aggregate_report(rows.iter().map(|r| (spec.label.as_str(), r)));
    let csv_text = report.to_csv().map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    ensure(header.len() == 12 && header[0] == "agent", || format!("header {header:?}"))?;
    for (col, name) in header[1..].iter().zip(TABLE_COLUMNS) {
        ensure(col.starts_with(name) && col.ends_with(']'), || {
            format!("column `{col}` should be `{name}` with a unit")
        })?;
    }
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    ensure(records.len() == 1 && records[0].len() == 12, || "expected one 12-field row".into())?;
    let success = &records[0][1];
    ensure(success.ends_with("/5"), || format!("success `{success}`"))?;
    for field in records[0].iter().skip(2) {
        ensure(field.parse::<f64>().is_ok(), || format!("non-numeric `{field}`"))?;
    }
    let text = report.to_text();
    ensure(text.lines().count() == 3, || format!("text table:\n{text}"))?;
    Ok(format!("11 columns in order, success {success}"))
}

// ---------------------------------------------------------------------------

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn loss(net: &Network, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (net.predict(x.view()).unwrap() * w).sum()
}

/// Worst elementwise relative error between analytic and central-difference
/// gradients over every parameter and input entry.
fn worst_gradient_error(mut net: Network, batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_matrix(batch, net.spec().input_dim, &mut rng);
    let w = random_matrix(batch, net.raw_output_dim(), &mut rng);
    let pass = net.forward(x.view()).unwrap();
    let (grads, dx) = net.backward(&pass, w.view());
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
    let mut worst = 0.0f64;
    for t in 0..net.params().tensors.len() {
        let (rows, cols) = net.params().tensors[t].value.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = net.params().tensors[t].value[[i, j]];
                net.params_mut().tensors[t].value[[i, j]] = orig + h;
                let up = loss(&net, &x, &w);
                net.params_mut().tensors[t].value[[i, j]] = orig - h;
                let down = loss(&net, &x, &w);
                net.params_mut().tensors[t].value[[i, j]] = orig;
                worst = worst.max(rel(grads.tensors[t].value[[i, j]], (up - down) / (2.0 * h)));
            }
        }
    }
    let mut xp = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = x[[i, j]];
            xp[[i, j]] = orig + h;
            let up = loss(&net, &xp, &w);
            xp[[i, j]] = orig - h;
            let down = loss(&net, &xp, &w);
            xp[[i, j]] = orig;
            worst = worst.max(rel(dx[[i, j]], (up - down) / (2.0 * h)));
        }
    }
    worst
}

fn gradient_oracle() -> Verdict {
    let t0 = Instant::now();
    let dense = |activation, head, out| NetworkSpec {
        activation,
        seed: 3,
        ..NetworkSpec::dense(6, vec![8, 5], out, head)
    };
    let multi = |activation| NetworkSpec {
        input_dim: 2 * 7 * 6 + 4,
        architecture: Architecture::MultiInput {
            image: ImageShape {
                channels: 2,
                height: 7,
                width: 6,
            },
            conv: vec![
                ConvSpec {
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                },
                ConvSpec {
                    out_channels: 2,
                    kernel: 2,
                    stride: 2,
                },
            ],
            state_hidden: vec![5],
            fusion_hidden: vec![6],
        },
        activation,
        output_dim: 2,
        head: OutputHead::Linear,
        init: Init::HeUniform,
        final_layer_scale: None,
        seed: 8,
    };
    let tanh_head = OutputHead::TanhScaled {
        limits: vec![Limits::new(0.0, 0.5), Limits::new(-1.5, 1.5)],
    };
    let cases = [
        ("dense tanh", dense(Activation::Tanh, tanh_head.clone(), 2)),
        ("dense relu", dense(Activation::Relu, OutputHead::Linear, 3)),
        ("dense gaussian", dense(Activation::Tanh, OutputHead::GaussianHead, 2)),
        ("multi-input tanh", multi(Activation::Tanh)),
        ("multi-input relu", multi(Activation::Relu)),
    ];
    let mut details = Vec::new();
    for (k, (name, spec)) in cases.into_iter().enumerate() {
        let worst = worst_gradient_error(Network::new(spec).map_err(|e| e.to_string())?, 3, 100 + k as u64);
        ensure(worst < 1e-4, || format!("{name}: relative error {worst:.2e}"))?;
        details.push(format!("{name} {worst:.1e}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max relative error < 1e-4 ({})", details.join(", ")))
}

// ---------------------------------------------------------------------------
// geometry oracles: point-membership tests written independently of the library

fn random_scene(rng: &mut ChaCha8Rng) -> World {
    loop {
        let half = rng.random_range(3.0..8.0);
        let bounds = Rect::new(Point::new(-half, -half), Point::new(half, half));
        let count = rng.random_range(1..=6);
        let mut obstacles = Vec::new();
        for _ in 0..count {
            let c = Point::new(rng.random_range(-half + 1.0..half - 1.0), rng.random_range(-half + 1.0..half - 1.0));
            let shape = match rng.random_range(0..3) {
                0 => ObstacleShape::Circle {
                    center: c,
                    radius: rng.random_range(0.1..1.0),
                },
                1 => {
                    let (hx, hy) = (rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
                    ObstacleShape::Rectangle {
                        min: Point::new(c.x - hx, c.y - hy),
                        max: Point::new(c.x + hx, c.y + hy),
                    }
                }
                _ => {
                    let a = rng.random_range(-PI..PI);
                    let l = rng.random_range(0.2..1.0);
                    ObstacleShape::Segment {
                        p1: Point::new(c.x - l * a.cos(), c.y - l * a.sin()),
                        p2: Point::new(c.x + l * a.cos(), c.y + l * a.sin()),
                    }
                }
            };
            obstacles.push(Obstacle {
                shape,
                height: rng.random_range(0.2..2.0),
            });
        }
        let all = vec![Region {
            name: "all".into(),
            min: bounds.min,
            max: bounds.max,
        }];
        if let Ok(w) = World::new(bounds, 2.0, obstacles, all.clone(), all) {
            return w;
        }
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn crosses(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Whether `p` lies in a solid obstacle or outside the walls.
fn solid_at(world: &World, p: Point) -> bool {
    let b = &world.bounds;
    if p.x <= b.min.x || p.x >= b.max.x || p.y <= b.min.y || p.y >= b.max.y {
        return true;
    }
    world.obstacles.iter().any(|o| match o.shape {
        ObstacleShape::Circle { center, radius } => (p.x - center.x).hypot(p.y - center.y) <= radius,
        ObstacleShape::Rectangle { min, max } => p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y,
        ObstacleShape::Segment { .. } => false,
    })
}

/// Whether the straight move from `a` to `b` touches solid space.
fn step_hits(world: &World, a: Point, b: Point) -> bool {
    solid_at(world, b)
        || world.obstacles.iter().any(|o| match o.shape {
            ObstacleShape::Segment { p1, p2 } => crosses(a, b, p1, p2),
            _ => false,
        })
}

fn raycast_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let step: f64 = 1e-3;
    let mut worst = 0.0f64;
    let mut hits = 0;
    for scene in 0..500 {
        let world = random_scene(&mut rng);
        let h = world.bounds.max.x;
        let origin = loop {
            let p = Point::new(rng.random_range(-h..h), rng.random_range(-h..h));
            if !solid_at(&world, p) {
                break p;
            }
        };
        let angle = rng.random_range(-PI..PI);
        let max_d = rng.random_range(1.0..15.0);
        let (c, s) = (angle.cos(), angle.sin());
        let mut expected = max_d;
        let mut prev = origin;
        let n = (max_d / step).ceil() as usize;
        for k in 1..=n {
            let t = (k as f64 * step).min(max_d);
            let p = Point::new(origin.x + t * c, origin.y + t * s);
            if step_hits(&world, prev, p) {
                expected = t;
                hits += 1;
                break;
            }
            prev = p;
        }
        let got = raycast(&world, origin, angle, max_d);
        let err = (got - expected).abs();
        ensure(err <= 1e-3, || format!("scene {scene}: raycast {got}, marching {expected}"))?;
        worst = worst.max(err);
    }
    Ok(format!("500 scenes ({hits} hits), max error {worst:.2e} m"))
}

/// Closed boundary of the footprint grown by `inflation` (shrunk when
/// negative), sampled every `spacing` meters, in world coordinates.
fn footprint_boundary(pose: &Pose2D, shape: FootprintShape, inflation: f64, spacing: f64) -> Vec<Point> {
    let mut local = Vec::new();
    match shape {
        FootprintShape::Circle { radius } => {
            let r = radius + inflation;
            let n = ((2.0 * PI * r / spacing).ceil() as usize).max(16);
            for i in 0..n {
                let a = 2.0 * PI * i as f64 / n as f64;
                local.push(Point::new(r * a.cos(), r * a.sin()));
            }
        }
        FootprintShape::Rectangle { length, width } => {
            let (shrink, round) = if inflation < 0.0 { (-inflation, 0.0) } else { (0.0, inflation) };
            let (hx, hy) = (length / 2.0 - shrink, width / 2.0 - shrink);
            // corners counterclockwise, each followed by its edge
            let corners = [(hx, hy, 0.0), (-hx, hy, FRAC_PI_2), (-hx, -hy, PI), (hx, -hy, 1.5 * PI)];
            for (i, &(cx, cy, a0)) in corners.iter().enumerate() {
                let arc = ((FRAC_PI_2 * round / spacing).ceil() as usize).max(1);
                for j in 0..=arc {
                    let a = a0 + FRAC_PI_2 * j as f64 / arc as f64;
                    local.push(Point::new(cx + round * a.cos(), cy + round * a.sin()));
                }
                let (nx, ny, _) = corners[(i + 1) % 4];
                let a1 = a0 + FRAC_PI_2;
                let from = Point::new(cx + round * a1.cos(), cy + round * a1.sin());
                let to = Point::new(nx + round * a1.cos(), ny + round * a1.sin());
                let len = (to.x - from.x).hypot(to.y - from.y);
                let m = ((len / spacing).ceil() as usize).max(1);
                for j in 1..m {
                    let f = j as f64 / m as f64;
                    local.push(Point::new(from.x + f * (to.x - from.x), from.y + f * (to.y - from.y)));
                }
            }
        }
    }
    let (c, s) = (pose.theta.cos(), pose.theta.sin());
    local
        .into_iter()
        .map(|p| Point::new(pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y))
        .collect()
}

/// Whether a world point lies inside the inflated footprint.
fn footprint_contains(pose: &Pose2D, shape: FootprintShape, inflation: f64, p: Point) -> bool {
    let (dx, dy) = (p.x - pose.x, p.y - pose.y);
    let (c, s) = (pose.theta.cos(), pose.theta.sin());
    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
    match shape {
        FootprintShape::Circle { radius } => u.hypot(v) <= radius + inflation,
        FootprintShape::Rectangle { length, width } => {
            let shrink = (-inflation).max(0.0);
            let ox = (u.abs() - (length / 2.0 - shrink)).max(0.0);
            let oy = (v.abs() - (width / 2.0 - shrink)).max(0.0);
            ox.hypot(oy) <= inflation.max(0.0)
        }
    }
}

fn oracle_collides(world: &World, pose: &Pose2D, shape: FootprintShape, inflation: f64) -> bool {
    let boundary = footprint_boundary(pose, shape, inflation, 2e-4);
    for i in 0..boundary.len() {
        let (a, b) = (boundary[i], boundary[(i + 1) % boundary.len()]);
        if step_hits(world, a, b) {
            return true;
        }
    }
    // an obstacle swallowed whole by the footprint never touches its boundary
    world.obstacles.iter().any(|o| {
        let inside = match o.shape {
            ObstacleShape::Circle { center, .. } => center,
            ObstacleShape::Rectangle { min, max } => Point::new(0.5 * (min.x + max.x), 0.5 * (min.y + max.y)),
            ObstacleShape::Segment { p1, .. } => p1,
        };
        footprint_contains(pose, shape, inflation, inside)
    })
}

fn collision_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let band = 1e-3;
    let (mut colliding, mut free, mut skipped) = (0, 0, 0);
    for instance in 0..1000 {
        let world = random_scene(&mut rng);
        let h = world.bounds.max.x;
        let tol = rng.random_range(0.0..0.05);
        let footprint = if rng.random_bool(0.5) {
            Footprint::circle(rng.random_range(0.1..0.5), tol)
        } else {
            Footprint::rectangle(rng.random_range(0.2..1.0), rng.random_range(0.2..0.8), tol)
        };
        // half the poses are placed near an obstacle to exercise contact
        let near = rng.random_bool(0.5);
        let (x, y) = if near {
            let o = &world.obstacles[rng.random_range(0..world.obstacles.len())];
            let c = match o.shape {
                ObstacleShape::Circle { center, .. } => center,
                ObstacleShape::Rectangle { min, max } => Point::new(0.5 * (min.x + max.x), 0.5 * (min.y + max.y)),
                ObstacleShape::Segment { p1, p2 } => Point::new(0.5 * (p1.x + p2.x), 0.5 * (p1.y + p2.y)),
            };
            (c.x + rng.random_range(-1.5..1.5), c.y + rng.random_range(-1.5..1.5))
        } else {
            (rng.random_range(-h..h), rng.random_range(-h..h))
        };
        let pose = Pose2D::new(x, y, rng.random_range(-PI..PI));
        let got = world.check_collision(&pose, &footprint);
        let certain_hit = oracle_collides(&world, &pose, footprint.shape, tol - band);
        let possible_hit = oracle_collides(&world, &pose, footprint.shape, tol + band);
        if certain_hit {
            ensure(got, || format!("instance {instance}: oracle collides, check_collision does not ({pose:?})"))?;
            colliding += 1;
        } else if !possible_hit {
            ensure(!got, || format!("instance {instance}: check_collision collides, oracle does not ({pose:?})"))?;
            free += 1;
        } else {
            skipped += 1;
        }
    }
    Ok(format!(
        "1000 instances: {colliding} colliding, {free} free, {skipped} inside the ±1 mm band, 0 disagreements"
    ))
}

// ---------------------------------------------------------------------------

fn trace(poses: &[Pose2D], velocities: &[VelocityCommand], dt: f64) -> EpisodeTrace {
    let records = poses
        .iter()
        .zip(velocities)
        .enumerate()
        .map(|(k, (&pose, &velocity))| TraceRecord {
            t: k as f64 * dt,
            pose,
            velocity,
            linear_acceleration: 0.0,
            yaw_acceleration: 0.0,
            min_range: f64::NAN,
        })
        .collect();
    EpisodeTrace {
        couple: 0,
        episode: 0,
        start: poses[0],
        goal: poses[poses.len() - 1].position(),
        dt,
        outcome: Outcome::GoalReached,
        records,
    }
}

fn open_world(obstacles: Vec<Obstacle>) -> World {
    let bounds = Rect::new(Point::new(-10.0, -10.0), Point::new(10.0, 10.0));
    let all = vec![Region {
        name: "all".into(),
        min: bounds.min,
        max: bounds.max,
    }];
    World::new(bounds, 2.0, obstacles, all.clone(), all).unwrap()
}

fn wall_clearance(p: Point) -> f64 {
    (p.x + 10.0).min(10.0 - p.x).min(p.y + 10.0).min(10.0 - p.y)
}

fn close(name: &str, got: f64, want: f64) -> std::result::Result<(), String> {
    ensure((got - want).abs() <= 1e-9, || format!("{name}: got {got}, expected {want}"))
}

fn metric_oracle() -> Verdict {
    // straight line at heading 0.3 rad
    let (v, dt, n) = (0.5, 0.1, 40);
    let (x0, y0, th): (f64, f64, f64) = (1.0, 2.0, 0.3);
    let poses: Vec<Pose2D> = (0..=n)
        .map(|k| {
            let s = k as f64 * v * dt;
            Pose2D::new(x0 + s * th.cos(), y0 + s * th.sin(), th)
        })
        .collect();
    let mut vel = vec![VelocityCommand::new(v, 0.0, 0.0); n + 1];
    vel[0] = VelocityCommand::default();
    let world = open_world(vec![]);
    let m = compute_metrics(&trace(&poses, &vel, dt), &world).map_err(|e| e.to_string())?;
    close("line time", m.time, n as f64 * dt)?;
    close("line path", m.path, n as f64 * v * dt)?;
    close("line dist/path", m.dist_path_ratio, 1.0)?;
    close("line heading", m.cumulative_heading, 0.0)?;
    close("line v_mean", m.v_mean, v)?;
    close("line omega std", m.omega_std, 0.0)?;
    close("line max lin acc", m.max_linear_acceleration, v / dt)?;
    close("line max yaw acc", m.max_yaw_acceleration, 0.0)?;
    let clear: Vec<f64> = poses.iter().map(|p| wall_clearance(p.position())).collect();
    close("line min clearance", m.min_obstacle_distance, clear.iter().copied().fold(f64::INFINITY, f64::min))?;
    close("line mean clearance", m.mean_obstacle_distance, clear.iter().sum::<f64>() / clear.len() as f64)?;
    ensure(m.success, || "line success".into())?;

    // circular arc of radius 2 turning left at 0.4 rad/s, crossing heading ±π
    let (r, w, dt, n) = (2.0, 0.4, 0.1, 50);
    let phi0 = 0.1;
    let poses: Vec<Pose2D> = (0..=n)
        .map(|k| {
            let phi = phi0 + k as f64 * w * dt;
            Pose2D::new(r * phi.cos(), r * phi.sin(), navgym::wrap_angle(phi + FRAC_PI_2))
        })
        .collect();
    let mut vel = vec![VelocityCommand::new(r * w, 0.0, w); n + 1];
    vel[0] = VelocityCommand::default();
    let m = compute_metrics(&trace(&poses, &vel, dt), &world).map_err(|e| e.to_string())?;
    let chord = 2.0 * r * (w * dt / 2.0).sin();
    let span = 2.0 * r * (n as f64 * w * dt / 2.0).sin();
    close("arc time", m.time, n as f64 * dt)?;
    close("arc path", m.path, n as f64 * chord)?;
    close("arc dist/path", m.dist_path_ratio, span / (n as f64 * chord))?;
    close("arc heading", m.cumulative_heading, w * dt)?;
    close("arc v_mean", m.v_mean, r * w)?;
    close("arc omega std", m.omega_std, 0.0)?;
    close("arc max lin acc", m.max_linear_acceleration, r * w / dt)?;
    close("arc max yaw acc", m.max_yaw_acceleration, w / dt)?;

    // L-shape (0,0) -> (3,0) -> (3,4) at 1 m/s with a circular pillar at (1,2)
    let dt = 0.1;
    let mut poses: Vec<Pose2D> = (0..=30).map(|k| Pose2D::new(0.1 * k as f64, 0.0, 0.0)).collect();
    poses.extend((1..=40).map(|k| Pose2D::new(3.0, 0.1 * k as f64, FRAC_PI_2)));
    let turn_rate = FRAC_PI_2 / dt;
    let mut vel = vec![VelocityCommand::new(1.0, 0.0, 0.0); poses.len()];
    vel[0] = VelocityCommand::default();
    vel[31].omega = turn_rate;
    let pillar = Point::new(1.0, 2.0);
    let world = open_world(vec![Obstacle {
        shape: ObstacleShape::Circle {
            center: pillar,
            radius: 0.5,
        },
        height: 1.0,
    }]);
    let m = compute_metrics(&trace(&poses, &vel, dt), &world).map_err(|e| e.to_string())?;
    let steps = (poses.len() - 1) as f64;
    close("L path", m.path, 7.0)?;
    close("L dist/path", m.dist_path_ratio, 5.0 / 7.0)?;
    close("L heading", m.cumulative_heading, FRAC_PI_2 / steps)?;
    close("L v_mean", m.v_mean, 1.0)?;
    close("L omega std", m.omega_std, turn_rate * (steps - 1.0).sqrt() / steps)?;
    close("L max lin acc", m.max_linear_acceleration, 1.0 / dt)?;
    close("L max yaw acc", m.max_yaw_acceleration, turn_rate / dt)?;
    // nearest approach is 2 m from the pillar centre, at (1,0) and (3,2)
    close("L min clearance", m.min_obstacle_distance, 1.5)?;
    let mean = poses
        .iter()
        .map(|p| ((p.x - pillar.x).hypot(p.y - pillar.y) - 0.5).min(wall_clearance(p.position())))
        .sum::<f64>()
        / poses.len() as f64;
    close("L mean clearance", m.mean_obstacle_distance, mean)?;

    // three-point fixture
    let poses = [Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(3.0, 0.0, 0.0), Pose2D::new(3.0, 4.0, FRAC_PI_2)];
    let vel = [VelocityCommand::default(); 3];
    let m = compute_metrics(&trace(&poses, &vel, 1.0), &open_world(vec![])).map_err(|e| e.to_string())?;
    close("fixture path", m.path, 7.0)?;
    close("fixture dist/path", m.dist_path_ratio, 5.0 / 7.0)?;
    Ok(format!("line, arc and L-shape within 1e-9; dist/path {:.6} = 5/7", m.dist_path_ratio))
}

// ---------------------------------------------------------------------------

fn goal_distance(env: &NavEnv) -> f64 {
    let p = env.state().pose;
    let g = env.goal();
    (g.x - p.x).hypot(g.y - p.y)
}

fn reward_telescoping() -> Verdict {
    let mut params = Parameters::load(repo("configs/cluttered_sac.yaml")).map_err(|e| e.to_string())?;
    // short episodes so that random driving often survives to the time limit
    params.episode.max_steps = 25;
    ensure(params.reward.progress == 1.0, || "progress coefficient must be 1".into())?;
    let (r_goal, r_collision) = (params.reward.goal, params.reward.collision);
    ensure(r_goal == 1000.0 && r_collision == -150.0, || "terminal rewards differ from +1000/-150".into())?;
    let mut env = params.build_env().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let limits = env.action_limits();
    let (mut timeouts, mut goals, mut collisions) = (0, 0, 0);
    let mut worst = 0.0f64;
    let mut episode = 0u64;
    while timeouts < 100 || goals < 5 || collisions < 5 {
        ensure(episode < 5000, || format!("only {timeouts} timeouts, {goals} goals, {collisions} collisions"))?;
        env.reset(episode).map_err(|e| e.to_string())?;
        // alternate random driving with noisy goal seeking
        let seek = episode % 2 == 1;
        episode += 1;
        let d0 = goal_distance(&env);
        let mut dense_sum = 0.0;
        loop {
            let action: Vec<f64> = if seek {
                let p = env.state().pose;
                let g = env.goal();
                let bearing = navgym::wrap_angle((g.y - p.y).atan2(g.x - p.x) - p.theta);
                vec![limits[0].max, limits[1].clamp(2.0 * bearing + rng.random_range(-0.5..0.5))]
            } else {
                limits.iter().map(|l| rng.random_range(l.min..=l.max)).collect()
            };
            let d_prev = goal_distance(&env);
            let step = env.step_action(&action).map_err(|e| e.to_string())?;
            let d_now = goal_distance(&env);
            match step.outcome {
                Outcome::Running => dense_sum += step.reward,
                Outcome::Timeout => {
                    dense_sum += step.reward;
                    let err = (dense_sum - (d0 - d_now)).abs();
                    ensure(err <= 1e-9, || format!("episode {episode}: sum {dense_sum} vs {}", d0 - d_now))?;
                    worst = worst.max(err);
                    timeouts += 1;
                    break;
                }
                Outcome::GoalReached | Outcome::Collision => {
                    let bonus = if step.outcome == Outcome::GoalReached { r_goal } else { r_collision };
                    let extra = step.reward - (d_prev - d_now);
                    ensure((extra - bonus).abs() <= 1e-9, || format!("terminal step added {extra}, expected {bonus}"))?;
                    if step.outcome == Outcome::GoalReached {
                        goals += 1;
                    } else {
                        collisions += 1;
                    }
                    break;
                }
            }
        }
    }
    Ok(format!(
        "{timeouts} non-terminal rollouts, max telescoping error {worst:.1e}; {goals} goal and {collisions} collision terminals exact"
    ))
}

// ---------------------------------------------------------------------------

fn nstep_replay() -> Verdict {
    let (n, gamma) = (3usize, 0.9f64);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut buffer = NStepBuffer::new(100_000, n, gamma);
    let mut expected = Vec::new();
    for ep in 0..50 {
        let len = rng.random_range(1..=25);
        let states: Vec<Vec<f64>> = (0..=len).map(|t| vec![ep as f64, t as f64, rng.random()]).collect();
        let actions: Vec<Vec<f64>> = (0..len).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let terminal = rng.random_bool(0.5);
        for t in 0..len {
            let last = t + 1 == len;
            buffer.push(Transition::single(
                states[t].clone(),
                actions[t].clone(),
                rewards[t],
                states[t + 1].clone(),
                last,
                last && terminal,
            ));
        }
        // brute force: every start index, window cut at the episode end
        for t in 0..len {
            let w = n.min(len - t);
            let mut ret = 0.0;
            for k in 0..w {
                ret += gamma.powi(k as i32) * rewards[t + k];
            }
            let end = t + w;
            expected.push(Transition {
                state: states[t].clone(),
                action: actions[t].clone(),
                reward: ret,
                next_state: states[end].clone(),
                done: end == len,
                terminal: end == len && terminal,
                bootstrap_steps: w as u32,
            });
        }
    }
    let stored: Vec<&Transition> = buffer.storage().iter().collect();
    ensure(stored.len() == expected.len(), || format!("{} stored, {} expected", stored.len(), expected.len()))?;
    for (i, (s, e)) in stored.iter().zip(&expected).enumerate() {
        ensure(*s == e, || format!("entry {i}: stored {s:?}, expected {e:?}"))?;
    }
    Ok(format!("{} transitions from 50 episodes identical to brute force", expected.len()))
}

fn prioritized_sampling() -> Verdict {
    let alpha = 0.6;
    let slots = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut buffer = PrioritizedBuffer::new(slots, alpha, 0.4, 1.0, 1000);
    let mut priorities = Vec::new();
    for i in 0..slots {
        let slot = buffer.push(Transition::single(vec![i as f64], vec![0.0], 0.0, vec![0.0], false, false));
        let p = rng.random_range(0.05..5.0);
        buffer.set_priority(slot, p);
        priorities.push(p);
    }
    let draws = 100_000;
    let mut counts = vec![0usize; slots];
    for _ in 0..draws / slots {
        let batch = buffer.sample(slots, &mut rng).map_err(|e| e.to_string())?;
        for i in batch.indices {
            counts[i] += 1;
        }
    }
    let mass: Vec<f64> = priorities.iter().map(|p| p.powf(alpha)).collect();
    let total: f64 = mass.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(&mass)
        .map(|(&o, m)| {
            let e = draws as f64 * m / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // upper 1% point of the chi-square distribution with 19 degrees of freedom
    let critical = 36.191;
    ensure(chi2 < critical, || format!("chi-square {chi2:.2} >= {critical}"))?;
    Ok(format!("chi-square {chi2:.2} < {critical} (19 dof, 99%) over {draws} draws"))
}

fn exploration_schedule() -> Verdict {
    let (e0, emin, decay) = (0.5, 0.05, 0.999);
    ensure(epsilon_schedule(0, e0, emin, decay) == e0, || "epsilon(0) != epsilon_0".into())?;
    let times = [0u64, 1, 10, 1_000, 100_000, 10_000_000, u64::MAX];
    for t in times {
        ensure(epsilon_schedule(t, e0, emin, 1.0) == e0, || format!("decay 1 not constant at t={t}"))?;
    }
    let mut prev = f64::INFINITY;
    for t in (0..200_000u64).step_by(7) {
        let e = epsilon_schedule(t, e0, emin, decay);
        ensure(e >= emin, || format!("epsilon({t}) = {e} below the floor"))?;
        ensure(e <= prev, || format!("epsilon increased at t={t}"))?;
        prev = e;
    }
    for t in times {
        let e = epsilon_schedule(t, e0, emin, decay);
        ensure(e >= emin, || format!("epsilon({t}) = {e} below the floor"))?;
    }
    Ok("epsilon(0) = epsilon_0, constant for decay 1, never below epsilon_min".into())
}

fn exploration_frequency() -> Verdict {
    let mut cfg = TrainingConfig::default();
    cfg.network.hidden = vec![8];
    let limits = vec![Limits::new(0.0, 0.5), Limits::new(-1.5, 1.5)];
    let agent = Agent::new(cfg, 4, None, limits).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (n, p) = (20_000usize, 0.2);
    let mut random = 0usize;
    for _ in 0..n {
        let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        if agent.select_action(&obs, Mode::Train, p, &mut rng).map_err(|e| e.to_string())?.random {
            random += 1;
        }
    }
    let mean = n as f64 * p;
    let half_width = 2.5758 * (n as f64 * p * (1.0 - p)).sqrt();
    ensure((random as f64 - mean).abs() <= half_width, || {
        format!("{random} random actions, expected {mean} ± {half_width:.1}")
    })?;
    Ok(format!("{random}/{n} random at epsilon 0.2, inside the 99% binomial interval"))
}

// ---------------------------------------------------------------------------

fn mean_return(log: &[navgym::drl::EpisodeRecord]) -> f64 {
    log.iter().map(|r| r.episode_return).sum::<f64>() / log.len() as f64
}

fn learning_smoke(smoke: &Smoke) -> Verdict {
    let (agent, outcome, secs) = trained(smoke)?;
    let log = &outcome.log;
    ensure(log.len() <= 2000, || format!("{} episodes", log.len()))?;
    ensure(log.len() >= 200, || format!("only {} episodes", log.len()))?;
    let first = mean_return(&log[..100]);
    let last = mean_return(&log[log.len() - 100..]);
    let mut env = smoke.params.build_env().map_err(|e| e.to_string())?;
    let mut successes = 0;
    for k in 0..50u64 {
        let mut obs = env.reset(1_000_000 + k).map_err(|e| e.to_string())?.to_vec();
        loop {
            let action = agent.act(&obs).map_err(|e| e.to_string())?;
            let step = env.step_action(&action).map_err(|e| e.to_string())?;
            obs = step.observation.to_vec();
            if step.done {
                successes += usize::from(step.outcome == Outcome::GoalReached);
                break;
            }
        }
    }
    ensure(successes >= 40, || format!("held-out success {successes}/50"))?;
    ensure(last > first, || format!("moving average fell: first {first:.1}, last {last:.1}"))?;
    ensure(secs <= 1800.0, || format!("training took {secs:.0} s"))?;
    Ok(format!(
        "{} episodes in {secs:.0} s; held-out success {successes}/50; 100-episode mean return {first:.1} -> {last:.1}",
        log.len()
    ))
}

fn curriculum_switch() -> Verdict {
    let mut params = Parameters::load(smoke_config()).map_err(|e| e.to_string())?;
    params.episode.curriculum_stage_episodes = 300;
    params.episode.stages = vec![
        CurriculumStage {
            spawn_region: "central".into(),
            goal_region: "central".into(),
        },
        CurriculumStage {
            spawn_region: "north".into(),
            goal_region: "south".into(),
        },
    ];
    let world = params.load_world().map_err(|e| e.to_string())?;
    let rect = |name: &str, spawn: bool| {
        if spawn {
            world.spawn_region(name).unwrap().rect()
        } else {
            world.goal_region(name).unwrap().rect()
        }
    };
    let (central, north, south) = (rect("central", true), rect("north", true), rect("south", false));
    for seed in 0..10 {
        params.episode.seed = seed;
        let mut env = params.build_env().map_err(|e| e.to_string())?;
        env.reset(299).map_err(|e| e.to_string())?;
        let (s, g) = (env.start().position(), env.goal());
        ensure(central.contains(s) && central.contains(g) && !north.contains(s), || {
            format!("seed {seed}: episode 299 spawned at {s:?} with goal {g:?}")
        })?;
        env.reset(300).map_err(|e| e.to_string())?;
        let (s, g) = (env.start().position(), env.goal());
        ensure(north.contains(s) && south.contains(g) && !central.contains(s), || {
            format!("seed {seed}: episode 300 spawned at {s:?} with goal {g:?}")
        })?;
    }
    Ok("episode 299 in stage 0 and episode 300 in stage 1 for 10 seeds".into())
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism(smoke: &Smoke) -> Verdict {
    let (_, first, _) = trained(smoke)?;
    let mut env = smoke.params.build_env().map_err(|e| e.to_string())?;
    let second = train(&mut env, &smoke.params.training).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_training_log(&a, &first.log).map_err(|e| e.to_string())?;
    write_training_log(&b, &second.log).map_err(|e| e.to_string())?;
    ensure(fs::read(&a).unwrap() == fs::read(&b).unwrap(), || "training logs differ".into())?;
    ensure(first.trainer.checkpoint() == second.trainer.checkpoint(), || "final checkpoints differ".into())?;

    let mut traces = Vec::new();
    for name in ["ta", "tb"] {
        let mut env = smoke.params.build_env().map_err(|e| e.to_string())?;
        let spec = smoke.params.benchmark(&env).map_err(|e| e.to_string())?.clone();
        let recorded = run_evaluation(&mut env, second.trainer.agent(), &spec).map_err(|e| e.to_string())?;
        let out = dir.path().join(name);
        write_traces(&out, &spec.label, None, &recorded).map_err(|e| e.to_string())?;
        traces.push(dir_bytes(&out));
    }
    ensure(traces[0] == traces[1], || "test traces differ".into())?;
    Ok(format!(
        "{} training-log rows and {} trace files bitwise identical",
        first.log.len(),
        traces[0].len()
    ))
}

fn checkpoint_round_trip(smoke: &Smoke) -> Verdict {
    let (agent, outcome, _) = trained(smoke)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("agent.json");
    PolicyFile::Agent(Box::new(outcome.trainer.checkpoint()))
        .save(&path)
        .map_err(|e| e.to_string())?;
    let loaded = PolicyFile::load(&path)
        .and_then(|p| p.into_policy(agent.observation_dim(), agent.action_limits()))
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for i in 0..100 {
        let obs: Vec<f64> = (0..agent.observation_dim()).map(|_| rng.random_range(0.0..1.0)).collect();
        let (a, b) = (agent.act(&obs).unwrap(), loaded.act(&obs).unwrap());
        ensure(a == b, || format!("observation {i}: {a:?} vs {b:?}"))?;
    }
    Ok("100 evaluation actions bitwise identical after save and load".into())
}
