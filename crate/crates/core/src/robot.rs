//! Kinematic platform models with velocity limits and closed-form pose integration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::{wrap_angle, Pose2D};
use crate::world::Footprint;

/// Below this yaw rate the arc solution is replaced by its straight-line limit.
pub const STRAIGHT_LINE_OMEGA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveType {
    Differential,
    Omnidirectional,
}

/// Body-frame velocity command `[v_x, v_y, ω]`. `v_y` is always 0 for differential drive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl VelocityCommand {
    pub const fn new(v_x: f64, v_y: f64, omega: f64) -> Self {
        Self { v_x, v_y, omega }
    }

    pub fn linear_speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub min: f64,
    pub max: f64,
}

impl Limits {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub drive_type: DriveType,
    pub v_x_limits: Limits,
    /// Ignored for differential drive.
    #[serde(default = "zero_limits")]
    pub v_y_limits: Limits,
    pub omega_limits: Limits,
    pub footprint: Footprint,
}

fn zero_limits() -> Limits {
    Limits::new(0.0, 0.0)
}

impl PlatformSpec {
    /// Jackal-class differential-drive defaults.
    pub fn differential(v_max: f64, omega_max: f64, footprint: Footprint) -> Self {
        Self {
            drive_type: DriveType::Differential,
            v_x_limits: Limits::new(0.0, v_max),
            v_y_limits: zero_limits(),
            omega_limits: Limits::new(-omega_max, omega_max),
            footprint,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let mut pairs = vec![("v_x_limits", self.v_x_limits), ("omega_limits", self.omega_limits)];
        if self.drive_type == DriveType::Omnidirectional {
            pairs.push(("v_y_limits", self.v_y_limits));
        }
        for (name, l) in pairs {
            if !(l.min < l.max) {
                return Err(Error::validation(format!("{field}.{name}"), "min must be < max"));
            }
        }
        self.footprint.validate(&format!("{field}.footprint"))
    }

    /// Action vector layout used by agents: `[v_x, ω]` or `[v_x, v_y, ω]`.
    pub fn action_limits(&self) -> Vec<Limits> {
        match self.drive_type {
            DriveType::Differential => vec![self.v_x_limits, self.omega_limits],
            DriveType::Omnidirectional => vec![self.v_x_limits, self.v_y_limits, self.omega_limits],
        }
    }

    pub fn command_from_action(&self, action: &[f64]) -> VelocityCommand {
        match self.drive_type {
            DriveType::Differential => VelocityCommand::new(action[0], 0.0, action[1]),
            DriveType::Omnidirectional => VelocityCommand::new(action[0], action[1], action[2]),
        }
    }

    pub fn clamp_command(&self, cmd: VelocityCommand) -> VelocityCommand {
        let v_y = match self.drive_type {
            DriveType::Differential => 0.0,
            DriveType::Omnidirectional => self.v_y_limits.clamp(cmd.v_y),
        };
        VelocityCommand {
            v_x: self.v_x_limits.clamp(cmd.v_x),
            v_y,
            omega: self.omega_limits.clamp(cmd.omega),
        }
    }
}

/// Pose plus the realized velocity and its finite-difference accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub velocity: VelocityCommand,
    /// Magnitude of the change in body-frame linear velocity per second.
    pub linear_acceleration: f64,
    pub yaw_acceleration: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose2D) -> Self {
        Self {
            pose,
            ..Default::default()
        }
    }
}

/// Exact constant-twist motion: body-frame `(v_x, v_y)` rotated along the arc of yaw rate `ω`.
///
/// For differential drive (`v_y = 0`) this is the unicycle arc.
pub fn integrate_pose(pose: &Pose2D, cmd: &VelocityCommand, dt: f64) -> Pose2D {
    let w = cmd.omega;
    let (dx, dy) = if w.abs() < STRAIGHT_LINE_OMEGA {
        (cmd.v_x * dt, cmd.v_y * dt)
    } else {
        // ∫0^dt R(ωs) v ds with R the body rotation
        let (s, c) = (w * dt).sin_cos();
        let a = s / w;
        let b = (1.0 - c) / w;
        (a * cmd.v_x - b * cmd.v_y, b * cmd.v_x + a * cmd.v_y)
    };
    let (st, ct) = pose.theta.sin_cos();
    Pose2D::new(
        pose.x + ct * dx - st * dy,
        pose.y + st * dx + ct * dy,
        pose.theta + w * dt,
    )
}

/// Advances `state` by `dt` under `cmd` (already clamped); the command becomes the realized velocity.
pub fn integrate(spec: &PlatformSpec, state: &RobotState, cmd: &VelocityCommand, dt: f64) -> RobotState {
    debug_assert!(dt > 0.0);
    let cmd = match spec.drive_type {
        DriveType::Differential => VelocityCommand { v_y: 0.0, ..*cmd },
        DriveType::Omnidirectional => *cmd,
    };
    let prev = state.velocity;
    RobotState {
        pose: integrate_pose(&state.pose, &cmd, dt),
        velocity: cmd,
        linear_acceleration: (cmd.v_x - prev.v_x).hypot(cmd.v_y - prev.v_y) / dt,
        yaw_acceleration: (cmd.omega - prev.omega) / dt,
    }
}
