//! Simulated exteroceptive sensors: a planar lidar and a 2.5D depth camera.
//!
//! Both are exact raycasters over the world's extruded obstacle prisms. Lidar
//! ray 0 points at `heading - fov/2`; angles increase counterclockwise. Depth
//! columns run left to right and rows top to bottom; each pixel reports the
//! Euclidean range along its own ray.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2D};
use crate::world::World;

/// Readings never fall below this after noise is applied.
pub const RANGE_MIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub n_ranges: usize,
    #[serde(default = "full_circle")]
    pub fov: f64,
    pub max_distance: f64,
    #[serde(default)]
    pub mount: Pose2D,
    #[serde(default)]
    pub noise_std: f64,
}

fn full_circle() -> f64 {
    TAU
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            n_ranges: 36,
            fov: TAU,
            max_distance: 3.5,
            mount: Pose2D::default(),
            noise_std: 0.0,
        }
    }
}

impl LidarSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.n_ranges < 2 {
            return Err(Error::validation(format!("{field}.n_ranges"), "must be >= 2"));
        }
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return Err(Error::validation(format!("{field}.fov"), "must be in (0, 2π]"));
        }
        if !(self.max_distance > 0.0) {
            return Err(Error::validation(format!("{field}.max_distance"), "must be > 0"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::validation(format!("{field}.noise_std"), "must be >= 0"));
        }
        Ok(())
    }

    /// Ray angles relative to the sensor frame.
    pub fn ray_angles(&self) -> Vec<f64> {
        // a full circle would otherwise repeat the first ray at the end
        let step = if self.fov >= TAU {
            self.fov / self.n_ranges as f64
        } else {
            self.fov / (self.n_ranges - 1) as f64
        };
        (0..self.n_ranges)
            .map(|i| -self.fov / 2.0 + i as f64 * step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSpec {
    pub width: usize,
    pub height: usize,
    pub h_fov: f64,
    pub v_fov: f64,
    pub max_depth: f64,
    pub mount_height: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Network input resolution `[height, width]` after area averaging; must divide the image size.
    #[serde(default)]
    pub downsample_to: Option<[usize; 2]>,
}

impl Default for DepthSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            h_fov: 1.5,
            v_fov: 1.0,
            max_depth: 5.0,
            mount_height: 0.3,
            noise_std: 0.0,
            downsample_to: Some([16, 16]),
        }
    }
}

impl DepthSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.width < 1 || self.height < 1 {
            return Err(Error::validation(format!("{field}.width"), "image size must be >= 1"));
        }
        for (name, v) in [("h_fov", self.h_fov), ("v_fov", self.v_fov)] {
            if !(v > 0.0 && v < PI) {
                return Err(Error::validation(format!("{field}.{name}"), "must be in (0, π)"));
            }
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::validation(format!("{field}.max_depth"), "must be > 0"));
        }
        if !(self.mount_height >= 0.0) {
            return Err(Error::validation(format!("{field}.mount_height"), "must be >= 0"));
        }
        if let Some([h, w]) = self.downsample_to {
            if h == 0 || w == 0 || !self.height.is_multiple_of(h) || !self.width.is_multiple_of(w) {
                return Err(Error::validation(
                    format!("{field}.downsample_to"),
                    "must evenly divide the image size",
                ));
            }
        }
        Ok(())
    }

    /// Processed image shape `(height, width)`.
    pub fn output_shape(&self) -> (usize, usize) {
        match self.downsample_to {
            Some([h, w]) => (h, w),
            None => (self.height, self.width),
        }
    }

    /// Azimuth of column `u` relative to the camera heading.
    pub fn column_azimuth(&self, u: usize) -> f64 {
        self.h_fov * (self.width as f64 - 1.0 - 2.0 * u as f64) / (2.0 * self.width as f64)
    }

    /// Elevation of row `v`; exactly 0 for the middle row of an odd-height image.
    pub fn row_elevation(&self, v: usize) -> f64 {
        self.v_fov * (self.height as f64 - 1.0 - 2.0 * v as f64) / (2.0 * self.height as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
}

impl LidarScan {
    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Row-major `height × width` range image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.depths[row * self.width + col]
    }

    pub fn min_depth(&self) -> f64 {
        self.depths.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Distance along the ray to the first obstacle or wall, capped at `max_d`.
pub fn raycast(world: &World, origin: Point, direction: f64, max_d: f64) -> f64 {
    let d = Point::from_angle(direction);
    if !world.bounds.contains(origin) {
        return 0.0;
    }
    world
        .obstacles
        .iter()
        .filter_map(|o| o.shape.ray_interval(origin, d))
        .map(|(t_in, _)| t_in)
        .fold(world.bounds.exit_distance(origin, d), f64::min)
        .min(max_d)
}

fn noisy<R: Rng + ?Sized>(value: f64, noise: Option<&Normal<f64>>, rng: &mut R, max: f64) -> f64 {
    let v = match noise {
        Some(n) => value + n.sample(rng),
        None => value,
    };
    v.clamp(RANGE_MIN, max)
}

fn noise_model(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"))
}

pub fn scan_lidar<R: Rng + ?Sized>(world: &World, robot: &Pose2D, spec: &LidarSpec, rng: &mut R) -> LidarScan {
    let sensor = robot.compose(&spec.mount);
    let origin = sensor.position();
    let noise = noise_model(spec.noise_std);
    let ranges = spec
        .ray_angles()
        .into_iter()
        .map(|a| {
            let r = raycast(world, origin, sensor.theta + a, spec.max_distance);
            noisy(r, noise.as_ref(), rng, spec.max_distance)
        })
        .collect();
    LidarScan { ranges }
}

/// Every prism the horizontal ray passes through, as `(t_in, t_out, height)`, sorted by entry.
fn ray_spans(world: &World, origin: Point, d: Point) -> (Vec<(f64, f64, f64)>, f64) {
    let mut spans: Vec<(f64, f64, f64)> = world
        .obstacles
        .iter()
        .filter_map(|o| o.shape.ray_interval(origin, d).map(|(a, b)| (a, b, o.height)))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    (spans, world.bounds.exit_distance(origin, d))
}

/// Horizontal distance at which a pixel ray of slope `tan_phi`, starting at
/// `cam_h`, first meets the ground or an obstacle prism. `None` if it escapes.
fn pixel_hit(spans: &[(f64, f64, f64)], wall_t: f64, wall_h: f64, cam_h: f64, tan_phi: f64) -> Option<f64> {
    let ground = if tan_phi < 0.0 { cam_h / -tan_phi } else { f64::INFINITY };
    let z = |t: f64| cam_h + t * tan_phi;
    for &(t_in, t_out, h) in spans {
        if t_in >= ground || t_in >= wall_t {
            break;
        }
        let z_in = z(t_in);
        if z_in <= h {
            // z_in >= 0 because the ground has not been reached yet
            return Some(t_in);
        }
        if tan_phi < 0.0 {
            let t_top = (h - cam_h) / tan_phi;
            if t_top <= t_out.min(wall_t) {
                return Some(t_top);
            }
        }
    }
    if ground <= wall_t {
        return Some(ground);
    }
    (z(wall_t) <= wall_h).then_some(wall_t)
}

/// Renders a range image by 2.5D raycasting over extruded prisms.
pub fn render_depth<R: Rng + ?Sized>(world: &World, robot: &Pose2D, spec: &DepthSpec, rng: &mut R) -> DepthImage {
    let origin = robot.position();
    let noise = noise_model(spec.noise_std);
    let tans: Vec<(f64, f64)> = (0..spec.height)
        .map(|v| {
            let phi = spec.row_elevation(v);
            (phi.tan(), phi.cos())
        })
        .collect();
    let mut columns = Vec::with_capacity(spec.width);
    for u in 0..spec.width {
        let d = Point::from_angle(robot.theta + spec.column_azimuth(u));
        let inside = world.bounds.contains(origin);
        let (spans, wall_t) = ray_spans(world, origin, d);
        let col: Vec<f64> = tans
            .iter()
            .map(|&(tan_phi, cos_phi)| {
                if !inside {
                    return 0.0;
                }
                match pixel_hit(&spans, wall_t, world.wall_height, spec.mount_height, tan_phi) {
                    Some(t) => t / cos_phi,
                    None => spec.max_depth,
                }
            })
            .collect();
        columns.push(col);
    }
    let mut depths = vec![0.0; spec.width * spec.height];
    // noise is drawn in row-major order so the stream does not depend on the column loop
    for v in 0..spec.height {
        for u in 0..spec.width {
            depths[v * spec.width + u] = noisy(columns[u][v], noise.as_ref(), rng, spec.max_depth);
        }
    }
    DepthImage {
        width: spec.width,
        height: spec.height,
        depths,
    }
}

pub fn process_lidar(scan: &LidarScan, spec: &LidarSpec) -> Vec<f64> {
    scan.ranges
        .iter()
        .map(|r| (r / spec.max_distance).clamp(0.0, 1.0))
        .collect()
}

/// Normalizes to `[0, 1]` and area-averages down to the configured network resolution.
pub fn process_depth(image: &DepthImage, spec: &DepthSpec) -> Vec<f64> {
    let (oh, ow) = spec.output_shape();
    let (bh, bw) = (image.height / oh, image.width / ow);
    let area = (bh * bw) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let mut sum = 0.0;
            for i in 0..bh {
                for j in 0..bw {
                    sum += image.at(r * bh + i, c * bw + j);
                }
            }
            out.push((sum / area / spec.max_depth).clamp(0.0, 1.0));
        }
    }
    out
}
