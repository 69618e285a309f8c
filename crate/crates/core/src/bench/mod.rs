//! Evaluation harness: fixed start-goal episodes, recorded paths, navigation
//! metrics and benchmark reports.

mod io;
mod metrics;
mod report;

pub use io::{read_traces, write_traces, TraceManifest, TraceManifestEntry, MANIFEST_FILE};
pub use metrics::{compute_metrics, MetricsRow};
pub use report::{aggregate_report, AgentSummary, BenchmarkReport, REPORT_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::drl::Policy;
use crate::env::{NavEnv, Outcome};
use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2D};
use crate::robot::VelocityCommand;

/// One state sample along an evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Seconds since episode start.
    pub t: f64,
    pub pose: Pose2D,
    /// Realized velocity during the step that ended at `t`; zero at `t = 0`.
    pub velocity: VelocityCommand,
    pub linear_acceleration: f64,
    pub yaw_acceleration: f64,
    /// Smallest sensor range at this pose, meters (NaN without sensors).
    pub min_range: f64,
}

/// The full traveled path of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub couple: usize,
    pub episode: u64,
    pub start: Pose2D,
    pub goal: Point,
    pub dt: f64,
    pub outcome: Outcome,
    pub records: Vec<TraceRecord>,
}

impl EpisodeTrace {
    /// Checks `len ≥ 1`, `t_0 = 0` and uniform spacing `t_k = k·dt`.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::validation("trace.records", "a trace needs at least one record"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("trace.dt", "must be positive"));
        }
        for (k, r) in self.records.iter().enumerate() {
            let expected = k as f64 * self.dt;
            if (r.t - expected).abs() > 1e-9 * (1.0 + expected) {
                return Err(Error::validation(
                    format!("trace.records[{k}].t"),
                    format!("expected {expected}, found {}", r.t),
                ));
            }
        }
        Ok(())
    }
}

/// Start pose given as `[x, y]` or `[x, y, heading]`, goal as `[x, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartGoal {
    pub start: Vec<f64>,
    pub goal: Point,
}

impl StartGoal {
    pub fn new(start: Pose2D, goal: Point) -> Self {
        Self {
            start: vec![start.x, start.y, start.theta],
            goal,
        }
    }

    pub fn start_pose(&self) -> Result<Pose2D> {
        match self.start.as_slice() {
            [x, y] => Ok(Pose2D::new(*x, *y, 0.0)),
            [x, y, theta] => Ok(Pose2D::new(*x, *y, *theta)),
            _ => Err(Error::validation("start", "expected [x, y] or [x, y, heading]")),
        }
    }
}

/// Fixed evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub couples: Vec<StartGoal>,
    #[serde(default = "one_episode")]
    pub episodes_per_couple: u64,
    /// Agent label in reports.
    #[serde(default = "default_label")]
    pub label: String,
}

fn one_episode() -> u64 {
    1
}

fn default_label() -> String {
    "agent".into()
}

impl BenchmarkSpec {
    /// Couples must be collision-free and lie inside the bounds.
    pub fn validate(&self, field: &str, env: &NavEnv) -> Result<()> {
        if self.couples.is_empty() {
            return Err(Error::validation(format!("{field}.couples"), "need at least one start-goal couple"));
        }
        if self.episodes_per_couple == 0 {
            return Err(Error::validation(format!("{field}.episodes_per_couple"), "must be at least 1"));
        }
        let world = env.world();
        let fp = &env.platform().footprint;
        for (i, c) in self.couples.iter().enumerate() {
            let start = c
                .start_pose()
                .map_err(|e| Error::validation(format!("{field}.couples[{i}].start"), e.to_string()))?;
            if world.check_collision(&start, fp) {
                return Err(Error::validation(format!("{field}.couples[{i}].start"), "start pose is in collision"));
            }
            if !world.bounds.contains(c.goal) {
                return Err(Error::validation(format!("{field}.couples[{i}].goal"), "goal lies outside the bounds"));
            }
        }
        Ok(())
    }
}

fn record(env: &NavEnv, t: f64) -> TraceRecord {
    let s = env.state();
    TraceRecord {
        t,
        pose: s.pose,
        velocity: s.velocity,
        linear_acceleration: s.linear_acceleration,
        yaw_acceleration: s.yaw_acceleration,
        min_range: env.readings().min_range(),
    }
}

/// Runs every couple `episodes_per_couple` times with the policy in evaluation
/// mode. Episode indices run `0, 1, …` over couples in order, which fixes the
/// sensor-noise streams.
pub fn run_evaluation(env: &mut NavEnv, policy: &dyn Policy, spec: &BenchmarkSpec) -> Result<Vec<EpisodeTrace>> {
    spec.validate("test", env)?;
    let dt = env.episode_config().dt;
    let mut traces = Vec::new();
    let mut index = 0u64;
    for (couple, c) in spec.couples.iter().enumerate() {
        let start = c.start_pose()?;
        for _ in 0..spec.episodes_per_couple {
            let mut obs = env.reset_to(index, start, c.goal)?.to_vec();
            let mut records = vec![record(env, 0.0)];
            let outcome = loop {
                let action = policy.act(&obs)?;
                let step = env.step_action(&action)?;
                records.push(record(env, records.len() as f64 * dt));
                obs = step.observation.to_vec();
                if step.done {
                    break step.outcome;
                }
            };
            traces.push(EpisodeTrace {
                couple,
                episode: index,
                start,
                goal: c.goal,
                dt,
                outcome,
                records,
            });
            index += 1;
        }
    }
    Ok(traces)
}
