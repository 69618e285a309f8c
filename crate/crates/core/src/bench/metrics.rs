use serde::{Deserialize, Serialize};

use super::EpisodeTrace;
use crate::env::Outcome;
use crate::error::Result;
use crate::geometry::wrap_angle;
use crate::world::World;

/// Navigation metrics of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub success: bool,
    /// Elapsed simulated time to the terminal event, s.
    pub time: f64,
    /// Mean absolute heading change per step, rad.
    pub cumulative_heading: f64,
    /// Traveled path length, m.
    pub path: f64,
    /// Straight-line distance between the first and last position over the path length.
    pub dist_path_ratio: f64,
    pub v_mean: f64,
    pub omega_std: f64,
    pub max_linear_acceleration: f64,
    pub max_yaw_acceleration: f64,
    pub min_obstacle_distance: f64,
    pub mean_obstacle_distance: f64,
    pub v_std: f64,
    pub omega_mean: f64,
    pub mean_linear_acceleration: f64,
    pub mean_yaw_acceleration: f64,
    /// The robot never moved, so the ratio is reported as 1.
    pub degenerate: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Population standard deviation.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    mean(xs.iter().map(|x| (x - m) * (x - m))).sqrt()
}

/// Metrics from the recorded path and velocities, with obstacle distances
/// taken from the world geometry at every recorded pose.
///
/// Velocity statistics use the records after the initial rest state;
/// accelerations are finite differences between all consecutive records.
pub fn compute_metrics(trace: &EpisodeTrace, world: &World) -> Result<MetricsRow> {
    trace.validate()?;
    let r = &trace.records;
    let dt = trace.dt;
    let path: f64 = r
        .windows(2)
        .map(|w| w[0].pose.position().distance(w[1].pose.position()))
        .sum();
    let displacement = r[0].pose.position().distance(r[r.len() - 1].pose.position());
    let degenerate = path == 0.0;
    let dist_path_ratio = if degenerate { 1.0 } else { (displacement / path).min(1.0) };
    let cumulative_heading = mean(r.windows(2).map(|w| wrap_angle(w[1].pose.theta - w[0].pose.theta).abs()));
    let moving = &r[1..];
    let speeds: Vec<f64> = moving.iter().map(|x| x.velocity.v_x.hypot(x.velocity.v_y)).collect();
    let omegas: Vec<f64> = moving.iter().map(|x| x.velocity.omega).collect();
    let lin_acc: Vec<f64> = r
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].velocity, w[1].velocity);
            (b.v_x - a.v_x).hypot(b.v_y - a.v_y) / dt
        })
        .collect();
    let yaw_acc: Vec<f64> = r
        .windows(2)
        .map(|w| (w[1].velocity.omega - w[0].velocity.omega).abs() / dt)
        .collect();
    let clearances: Vec<f64> = r
        .iter()
        .map(|x| world.distance_to_nearest_obstacle(x.pose.position()))
        .collect();
    let max = |xs: &[f64]| xs.iter().copied().fold(0.0f64, f64::max);
    Ok(MetricsRow {
        success: trace.outcome == Outcome::GoalReached,
        time: r[r.len() - 1].t,
        cumulative_heading,
        path,
        dist_path_ratio,
        v_mean: mean(speeds.iter().copied()),
        omega_std: std_dev(&omegas),
        max_linear_acceleration: max(&lin_acc),
        max_yaw_acceleration: max(&yaw_acc),
        min_obstacle_distance: clearances.iter().copied().fold(f64::INFINITY, f64::min),
        mean_obstacle_distance: mean(clearances.iter().copied()),
        v_std: std_dev(&speeds),
        omega_mean: mean(omegas.iter().copied()),
        mean_linear_acceleration: mean(lin_acc.iter().copied()),
        mean_yaw_acceleration: mean(yaw_acc.iter().copied()),
        degenerate,
    })
}
