//! Headless, deterministic robot-navigation gym for deep reinforcement learning.
//!
//! The crate bundles an episodic navigation environment (world geometry,
//! kinematic platforms, lidar and depth sensors), a small reverse-mode neural
//! network engine, continuous-control off-policy agents (DDPG, TD3, SAC) with
//! uniform, prioritized and n-step replay, and a testing harness that runs
//! evaluation episodes and computes navigation metrics.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod world;
pub mod robot;
pub mod sensors;
pub mod env;
pub mod nn;
pub mod drl;
pub mod bench;
pub mod config;

pub use error::{Error, Result};
pub use geometry::{wrap_angle, Point, Pose2D, Rect};
pub use world::{Footprint, Obstacle, ObstacleShape, World};
pub use robot::{PlatformSpec, RobotState, VelocityCommand};
pub use env::{NavEnv, Observation, Outcome, StepResult};
