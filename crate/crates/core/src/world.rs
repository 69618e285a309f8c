//! Static 2.5D world: obstacle geometry, clearance and collision queries, and
//! collision-free spawn sampling.
//!
//! The world bounds act as solid walls. Every query is a pure function of an
//! immutable [`World`], so one instance can be shared across threads.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, ConvexPolygon, Point, Pose2D, Rect};

/// Rejection-sampling cap used when no explicit attempt count is given.
pub const DEFAULT_SPAWN_ATTEMPTS: usize = 1000;

/// Height of the bounding walls when the world file does not set one.
pub const DEFAULT_WALL_HEIGHT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleShape {
    Segment { p1: Point, p2: Point },
    Circle { center: Point, radius: f64 },
    Rectangle { min: Point, max: Point },
}

impl ObstacleShape {
    /// Distance from `p` to the shape; 0 on or inside it.
    pub fn distance(&self, p: Point) -> f64 {
        match *self {
            ObstacleShape::Segment { p1, p2 } => point_segment_distance(p, p1, p2),
            ObstacleShape::Circle { center, radius } => (p.distance(center) - radius).max(0.0),
            ObstacleShape::Rectangle { min, max } => Rect::new(min, max).distance(p),
        }
    }

    /// Interval `[t_in, t_out]` of the ray `o + t·d` (unit `d`, `t ≥ 0`) inside the shape.
    pub fn ray_interval(&self, o: Point, d: Point) -> Option<(f64, f64)> {
        match *self {
            ObstacleShape::Segment { p1, p2 } => ray_segment(o, d, p1, p2),
            ObstacleShape::Circle { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let (t0, t1) = (-b - s, -b + s);
                if t1 < 0.0 {
                    None
                } else {
                    Some((t0.max(0.0), t1))
                }
            }
            ObstacleShape::Rectangle { min, max } => Rect::new(min, max).ray_interval(o, d),
        }
    }

    /// Distance between the shape and a convex polygon; 0 when they overlap.
    pub fn distance_to_polygon(&self, poly: &ConvexPolygon) -> f64 {
        match *self {
            ObstacleShape::Segment { p1, p2 } => poly.distance_to_segment(p1, p2),
            ObstacleShape::Circle { center, radius } => {
                (poly.distance_to_point(center) - radius).max(0.0)
            }
            ObstacleShape::Rectangle { min, max } => poly.distance_to_rect(&Rect::new(min, max)),
        }
    }

    fn within(&self, bounds: &Rect) -> bool {
        match *self {
            ObstacleShape::Segment { p1, p2 } => bounds.contains(p1) && bounds.contains(p2),
            ObstacleShape::Circle { center, radius } => {
                bounds.contains(center - Point::new(radius, radius))
                    && bounds.contains(center + Point::new(radius, radius))
            }
            ObstacleShape::Rectangle { min, max } => bounds.contains_rect(&Rect::new(min, max)),
        }
    }
}

fn ray_segment(o: Point, d: Point, a: Point, b: Point) -> Option<(f64, f64)> {
    let e = b - a;
    let denom = d.cross(e);
    let ao = a - o;
    if denom == 0.0 {
        // parallel: only a collinear segment can be hit
        if ao.cross(d) != 0.0 {
            return None;
        }
        let (t1, t2) = (ao.dot(d), (b - o).dot(d));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if hi < 0.0 {
            return None;
        }
        return Some((lo.max(0.0), hi));
    }
    let t = ao.cross(e) / denom;
    let s = ao.cross(d) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&s) {
        Some((t, t))
    } else {
        None
    }
}

/// An extruded obstacle: planar shape plus height above the ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(flatten)]
    pub shape: ObstacleShape,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub name: String,
    pub min: Point,
    pub max: Point,
}

impl Region {
    pub fn rect(&self) -> Rect {
        Rect::new(self.min, self.max)
    }
}

/// Robot collision shape in its own frame; rectangles have `length` along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FootprintShape {
    Circle { radius: f64 },
    Rectangle { length: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub shape: FootprintShape,
    #[serde(default)]
    pub collision_tolerance: f64,
}

impl Footprint {
    pub fn circle(radius: f64, collision_tolerance: f64) -> Self {
        Self {
            shape: FootprintShape::Circle { radius },
            collision_tolerance,
        }
    }

    pub fn rectangle(length: f64, width: f64, collision_tolerance: f64) -> Self {
        Self {
            shape: FootprintShape::Rectangle { length, width },
            collision_tolerance,
        }
    }

    /// Diameter of the circumscribed circle.
    pub fn diameter(&self) -> f64 {
        match self.shape {
            FootprintShape::Circle { radius } => 2.0 * radius,
            FootprintShape::Rectangle { length, width } => length.hypot(width),
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let ok = match self.shape {
            FootprintShape::Circle { radius } => radius > 0.0,
            FootprintShape::Rectangle { length, width } => length > 0.0 && width > 0.0,
        };
        if !ok {
            return Err(Error::validation(
                format!("{field}.shape"),
                "footprint dimensions must be positive",
            ));
        }
        if !(self.collision_tolerance >= 0.0) {
            return Err(Error::validation(
                format!("{field}.collision_tolerance"),
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    min: Point,
    max: Point,
    #[serde(default = "default_wall_height")]
    wall_height: f64,
}

fn default_wall_height() -> f64 {
    DEFAULT_WALL_HEIGHT
}

/// On-disk world layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    bounds: BoundsFile,
    #[serde(default)]
    obstacles: Vec<Obstacle>,
    spawn_regions: Vec<Region>,
    goal_regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bounds: Rect,
    pub wall_height: f64,
    pub obstacles: Vec<Obstacle>,
    pub spawn_regions: Vec<Region>,
    pub goal_regions: Vec<Region>,
}

impl World {
    /// Builds a world and checks every invariant.
    pub fn new(
        bounds: Rect,
        wall_height: f64,
        obstacles: Vec<Obstacle>,
        spawn_regions: Vec<Region>,
        goal_regions: Vec<Region>,
    ) -> Result<Self> {
        let w = Self {
            bounds,
            wall_height,
            obstacles,
            spawn_regions,
            goal_regions,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_yaml(&text).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse {
                context: format!("{}{}", path.display(), context),
                message,
            },
            other => other,
        })
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let file: WorldFile = serde_yaml::from_str(text).map_err(yaml_error)?;
        Self::new(
            Rect::new(file.bounds.min, file.bounds.max),
            file.bounds.wall_height,
            file.obstacles,
            file.spawn_regions,
            file.goal_regions,
        )
    }

    pub fn to_yaml(&self) -> String {
        let file = WorldFile {
            bounds: BoundsFile {
                min: self.bounds.min,
                max: self.bounds.max,
                wall_height: self.wall_height,
            },
            obstacles: self.obstacles.clone(),
            spawn_regions: self.spawn_regions.clone(),
            goal_regions: self.goal_regions.clone(),
        };
        serde_yaml::to_string(&file).expect("world serializes")
    }

    fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(b.min.x < b.max.x && b.min.y < b.max.y) {
            return Err(Error::validation("bounds", "min must be < max componentwise"));
        }
        if !(self.wall_height > 0.0) {
            return Err(Error::validation("bounds.wall_height", "must be > 0"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let field = format!("obstacles[{i}]");
            if !(o.height > 0.0) {
                return Err(Error::validation(format!("{field}.height"), "must be > 0"));
            }
            match o.shape {
                ObstacleShape::Circle { radius, .. } if !(radius > 0.0) => {
                    return Err(Error::validation(format!("{field}.radius"), "must be > 0"));
                }
                ObstacleShape::Rectangle { min, max } if !(min.x < max.x && min.y < max.y) => {
                    return Err(Error::validation(
                        format!("{field}.min"),
                        "must be < max componentwise",
                    ));
                }
                _ => {}
            }
            if !o.shape.within(b) {
                return Err(Error::validation(field, "obstacle lies outside the world bounds"));
            }
        }
        for (list, key) in [(&self.spawn_regions, "spawn_regions"), (&self.goal_regions, "goal_regions")] {
            if list.is_empty() {
                return Err(Error::validation(key, "at least one region is required"));
            }
            for (i, r) in list.iter().enumerate() {
                let field = format!("{key}[{i}]");
                if !(r.min.x < r.max.x && r.min.y < r.max.y) {
                    return Err(Error::validation(field, "min must be < max componentwise"));
                }
                if !b.contains_rect(&r.rect()) {
                    return Err(Error::validation(field, "region lies outside the world bounds"));
                }
            }
        }
        Ok(())
    }

    pub fn spawn_region(&self, name: &str) -> Result<&Region> {
        self.spawn_regions
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    pub fn goal_region(&self, name: &str) -> Result<&Region> {
        self.goal_regions
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    /// Exact distance from `p` to the nearest obstacle or wall; 0 inside an
    /// obstacle or outside the bounds.
    pub fn distance_to_nearest_obstacle(&self, p: Point) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.shape.distance(p))
            .fold(self.bounds.interior_clearance(p), f64::min)
    }

    /// Whether the footprint at `pose`, inflated by its tolerance, touches an
    /// obstacle or the bounding walls.
    ///
    /// Inflation is a Minkowski sum with a disk of radius `collision_tolerance`,
    /// so rectangles get rounded corners.
    pub fn check_collision(&self, pose: &Pose2D, footprint: &Footprint) -> bool {
        let tol = footprint.collision_tolerance;
        match footprint.shape {
            FootprintShape::Circle { radius } => {
                self.distance_to_nearest_obstacle(pose.position()) <= radius + tol
            }
            FootprintShape::Rectangle { length, width } => {
                let poly = ConvexPolygon::oriented_rect(pose, length, width);
                // the inflated rectangle's extent along either axis is set by a corner
                if poly.vertices.iter().any(|&v| self.bounds.interior_clearance(v) <= tol) {
                    return true;
                }
                self.obstacles
                    .iter()
                    .any(|o| o.shape.distance_to_polygon(&poly) <= tol)
            }
        }
    }

    /// Rejection-samples a collision-free pose uniformly inside `rect`, with a
    /// uniform heading in `[-π, π)`.
    pub fn sample_free_pose_in<R: Rng + ?Sized>(
        &self,
        rect: &Rect,
        region_name: &str,
        footprint: &Footprint,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Pose2D> {
        for _ in 0..max_attempts {
            let x = rng.random_range(rect.min.x..=rect.max.x);
            let y = rng.random_range(rect.min.y..=rect.max.y);
            let theta = rng.random_range(-PI..PI);
            let pose = Pose2D::new(x, y, theta);
            if !self.check_collision(&pose, footprint) {
                return Ok(pose);
            }
        }
        Err(Error::SpawnExhausted {
            region: region_name.to_string(),
            attempts: max_attempts,
        })
    }

    pub fn sample_spawn_pose<R: Rng + ?Sized>(
        &self,
        region: &str,
        footprint: &Footprint,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Pose2D> {
        let r = self.spawn_region(region)?.rect();
        self.sample_free_pose_in(&r, region, footprint, rng, max_attempts)
    }

    pub fn sample_goal_pose<R: Rng + ?Sized>(
        &self,
        region: &str,
        footprint: &Footprint,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Pose2D> {
        let r = self.goal_region(region)?.rect();
        self.sample_free_pose_in(&r, region, footprint, rng, max_attempts)
    }
}

pub(crate) fn yaml_error(e: serde_yaml::Error) -> Error {
    let context = e
        .location()
        .map(|l| format!(":{}:{}", l.line(), l.column()))
        .unwrap_or_default();
    Error::Parse {
        context,
        message: e.to_string(),
    }
}
