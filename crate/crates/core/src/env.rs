//! Episodic point-to-point navigation environment with a `reset`/`step` contract.
//!
//! The simulation only advances inside [`NavEnv::step`]; between calls the
//! world is frozen, so agent-environment interaction is strictly synchronous.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point, Pose2D};
use crate::robot::{integrate, Limits, PlatformSpec, RobotState, VelocityCommand};
use crate::sensors::{process_depth, process_lidar, render_depth, scan_lidar, DepthSpec, LidarSpec};
use crate::world::{World, DEFAULT_SPAWN_ATTEMPTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub spawn_region: String,
    pub goal_region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Control interval, seconds.
    pub dt: f64,
    pub goal_threshold: f64,
    /// Episodes spent in each stage before moving to the next; the last stage repeats.
    pub curriculum_stage_episodes: usize,
    pub stages: Vec<CurriculumStage>,
    pub seed: u64,
    /// Goal distances in observations are divided by this; defaults to the world diagonal.
    pub distance_scale: Option<f64>,
    pub spawn_attempts: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            dt: 0.1,
            goal_threshold: 0.3,
            curriculum_stage_episodes: 300,
            stages: vec![CurriculumStage {
                spawn_region: "central".into(),
                goal_region: "central".into(),
            }],
            seed: 0,
            distance_scale: None,
            spawn_attempts: DEFAULT_SPAWN_ATTEMPTS,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self, field: &str, world: &World) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::validation(format!("{field}.max_steps"), "must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::validation(format!("{field}.dt"), "must be > 0"));
        }
        if !(self.goal_threshold > 0.0) {
            return Err(Error::validation(format!("{field}.goal_threshold"), "must be > 0"));
        }
        if self.curriculum_stage_episodes < 1 {
            return Err(Error::validation(
                format!("{field}.curriculum_stage_episodes"),
                "must be >= 1",
            ));
        }
        if self.stages.is_empty() {
            return Err(Error::validation(format!("{field}.stages"), "at least one stage is required"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            world
                .spawn_region(&s.spawn_region)
                .map_err(|e| Error::validation(format!("{field}.stages[{i}].spawn_region"), e.to_string()))?;
            world
                .goal_region(&s.goal_region)
                .map_err(|e| Error::validation(format!("{field}.stages[{i}].goal_region"), e.to_string()))?;
        }
        if matches!(self.distance_scale, Some(s) if !(s > 0.0)) {
            return Err(Error::validation(format!("{field}.distance_scale"), "must be > 0"));
        }
        Ok(())
    }

    pub fn stage_index(&self, episode: u64) -> usize {
        ((episode / self.curriculum_stage_episodes as u64) as usize).min(self.stages.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub goal: f64,
    pub collision: f64,
    /// Coefficient on the per-step distance reduction `d_{t-1} - d_t`.
    pub progress: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            goal: 1000.0,
            collision: -150.0,
            progress: 1.0,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.goal > 0.0 && self.collision < 0.0) {
            return Err(Error::validation(field, "requires goal > 0 > collision"));
        }
        if !self.progress.is_finite() {
            return Err(Error::validation(format!("{field}.progress"), "must be finite"));
        }
        Ok(())
    }

    /// Dense progress term plus the terminal bonus or penalty; timeouts add nothing.
    pub fn compute_reward(&self, d_prev: f64, d_now: f64, outcome: Outcome) -> f64 {
        let dense = self.progress * (d_prev - d_now);
        match outcome {
            Outcome::GoalReached => dense + self.goal,
            Outcome::Collision => dense + self.collision,
            Outcome::Running | Outcome::Timeout => dense,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorsConfig {
    #[serde(default)]
    pub lidar: Option<LidarSpec>,
    #[serde(default)]
    pub depth: Option<DepthSpec>,
}

impl SensorsConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.lidar.is_none() && self.depth.is_none() {
            return Err(Error::validation(field, "at least one sensor is required"));
        }
        if let Some(l) = &self.lidar {
            l.validate(&format!("{field}.lidar"))?;
        }
        if let Some(d) = &self.depth {
            d.validate(&format!("{field}.depth"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Running,
    GoalReached,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(&self) -> bool {
        *self != Outcome::Running
    }

    /// True terminals end the MDP; timeouts are truncations and still bootstrap.
    pub fn is_true_terminal(&self) -> bool {
        matches!(self, Outcome::GoalReached | Outcome::Collision)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::GoalReached => "goal_reached",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "running" => Outcome::Running,
            "goal_reached" => Outcome::GoalReached,
            "collision" => Outcome::Collision,
            "timeout" => Outcome::Timeout,
            _ => {
                return Err(Error::Parse {
                    context: "outcome".into(),
                    message: format!("unknown outcome `{s}`"),
                })
            }
        })
    }
}

/// Agent input: processed sensor data plus goal-relative task state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Normalized, downsampled depth image, row-major.
    pub depth: Option<Vec<f64>>,
    /// Normalized lidar ranges.
    pub lidar: Option<Vec<f64>>,
    /// Goal distance divided by the configured distance scale.
    pub goal_distance: f64,
    /// Goal bearing relative to the robot heading, in `[-π, π)`.
    pub goal_bearing: f64,
}

impl Observation {
    /// Flat layout: depth image, then lidar, then `[goal_distance, goal_bearing]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let Some(d) = &self.depth {
            v.extend_from_slice(d);
        }
        if let Some(l) = &self.lidar {
            v.extend_from_slice(l);
        }
        v.push(self.goal_distance);
        v.push(self.goal_bearing);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
}

/// Raw sensor readings before processing.
#[derive(Debug, Clone, Default)]
pub struct SensorReadings {
    pub lidar: Option<crate::sensors::LidarScan>,
    pub depth: Option<crate::sensors::DepthImage>,
}

impl SensorReadings {
    pub fn min_range(&self) -> f64 {
        match (&self.lidar, &self.depth) {
            (Some(l), _) => l.min_range(),
            (None, Some(d)) => d.min_depth(),
            (None, None) => f64::NAN,
        }
    }
}

/// Task-specific parts of `step`: observation assembly, termination and reward.
///
/// Point-to-point navigation ships; other tasks (row following, person
/// monitoring) plug in by implementing this trait.
pub trait NavigationTask: Send + Sync {
    fn name(&self) -> &str;

    fn assemble_observation(&self, readings: &SensorReadings, sensors: &SensorsConfig, pose: &Pose2D, goal: Point) -> Observation;

    /// Evaluated in priority order collision > goal > timeout.
    fn outcome(&self, collided: bool, pose: &Pose2D, goal: Point, step: usize, max_steps: usize) -> Outcome;

    fn reward(&self, pose_prev: &Pose2D, pose_now: &Pose2D, goal: Point, outcome: Outcome) -> f64;
}

#[derive(Debug, Clone)]
pub struct PointToPoint {
    pub reward: RewardSpec,
    pub goal_threshold: f64,
    pub distance_scale: f64,
}

impl NavigationTask for PointToPoint {
    fn name(&self) -> &str {
        "point_to_point"
    }

    fn assemble_observation(&self, readings: &SensorReadings, sensors: &SensorsConfig, pose: &Pose2D, goal: Point) -> Observation {
        let (d, bearing) = goal_polar(pose, goal);
        Observation {
            depth: readings
                .depth
                .as_ref()
                .zip(sensors.depth.as_ref())
                .map(|(img, spec)| process_depth(img, spec)),
            lidar: readings
                .lidar
                .as_ref()
                .zip(sensors.lidar.as_ref())
                .map(|(scan, spec)| process_lidar(scan, spec)),
            goal_distance: d / self.distance_scale,
            goal_bearing: bearing,
        }
    }

    fn outcome(&self, collided: bool, pose: &Pose2D, goal: Point, step: usize, max_steps: usize) -> Outcome {
        if collided {
            Outcome::Collision
        } else if pose.position().distance(goal) <= self.goal_threshold {
            Outcome::GoalReached
        } else if step >= max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        }
    }

    fn reward(&self, pose_prev: &Pose2D, pose_now: &Pose2D, goal: Point, outcome: Outcome) -> f64 {
        self.reward.compute_reward(
            pose_prev.position().distance(goal),
            pose_now.position().distance(goal),
            outcome,
        )
    }
}

/// Euclidean goal distance and bearing relative to the heading.
pub fn goal_polar(pose: &Pose2D, goal: Point) -> (f64, f64) {
    let delta = goal - pose.position();
    (delta.norm(), wrap_angle(delta.y.atan2(delta.x) - pose.theta))
}

/// Point-to-point observation built from already-processed sensor arrays.
pub fn assemble_observation(
    depth: Option<Vec<f64>>,
    lidar: Option<Vec<f64>>,
    pose: &Pose2D,
    goal: Point,
    distance_scale: f64,
) -> Observation {
    let (d, bearing) = goal_polar(pose, goal);
    Observation {
        depth,
        lidar,
        goal_distance: d / distance_scale,
        goal_bearing: bearing,
    }
}

/// Per-episode random stream: a fixed ChaCha stream per `(seed, episode, purpose)`.
pub(crate) fn episode_rng(seed: u64, episode: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode.wrapping_mul(4).wrapping_add(purpose));
    rng
}

const SPAWN_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

pub struct NavEnv {
    world: Arc<World>,
    platform: PlatformSpec,
    sensors: SensorsConfig,
    episode: EpisodeConfig,
    task: Box<dyn NavigationTask>,
    state: RobotState,
    start: Pose2D,
    goal: Point,
    steps: usize,
    episode_index: u64,
    active: bool,
    noise_rng: ChaCha8Rng,
    readings: SensorReadings,
}

impl NavEnv {
    /// Point-to-point environment.
    pub fn new(
        world: Arc<World>,
        platform: PlatformSpec,
        sensors: SensorsConfig,
        episode: EpisodeConfig,
        reward: RewardSpec,
    ) -> Result<Self> {
        reward.validate("reward")?;
        let task = PointToPoint {
            reward,
            goal_threshold: episode.goal_threshold,
            distance_scale: episode.distance_scale.unwrap_or_else(|| world.bounds.diagonal()),
        };
        Self::with_task(world, platform, sensors, episode, Box::new(task))
    }

    pub fn with_task(
        world: Arc<World>,
        platform: PlatformSpec,
        sensors: SensorsConfig,
        episode: EpisodeConfig,
        task: Box<dyn NavigationTask>,
    ) -> Result<Self> {
        platform.validate("robot")?;
        sensors.validate("sensors")?;
        episode.validate("episode", &world)?;
        let noise_rng = episode_rng(episode.seed, 0, NOISE_STREAM);
        Ok(Self {
            world,
            platform,
            sensors,
            episode,
            task,
            state: RobotState::default(),
            start: Pose2D::default(),
            goal: Point::default(),
            steps: 0,
            episode_index: 0,
            active: false,
            noise_rng,
            readings: SensorReadings::default(),
        })
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn platform(&self) -> &PlatformSpec {
        &self.platform
    }

    pub fn sensors(&self) -> &SensorsConfig {
        &self.sensors
    }

    pub fn episode_config(&self) -> &EpisodeConfig {
        &self.episode
    }

    pub fn task(&self) -> &dyn NavigationTask {
        self.task.as_ref()
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn start(&self) -> Pose2D {
        self.start
    }

    pub fn goal(&self) -> Point {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn episode_index(&self) -> u64 {
        self.episode_index
    }

    pub fn readings(&self) -> &SensorReadings {
        &self.readings
    }

    pub fn action_limits(&self) -> Vec<Limits> {
        self.platform.action_limits()
    }

    /// Length of [`Observation::to_vec`].
    pub fn observation_dim(&self) -> usize {
        let depth = self.sensors.depth.as_ref().map_or(0, |d| {
            let (h, w) = d.output_shape();
            h * w
        });
        let lidar = self.sensors.lidar.as_ref().map_or(0, |l| l.n_ranges);
        depth + lidar + 2
    }

    pub fn curriculum_stage(&self, episode: u64) -> &CurriculumStage {
        &self.episode.stages[self.episode.stage_index(episode)]
    }

    /// Re-spawns robot and goal for `episode` per the curriculum. Deterministic in `(seed, episode)`.
    pub fn reset(&mut self, episode: u64) -> Result<Observation> {
        let stage = self.curriculum_stage(episode).clone();
        let mut rng = episode_rng(self.episode.seed, episode, SPAWN_STREAM);
        let fp = &self.platform.footprint;
        let attempts = self.episode.spawn_attempts;
        let start = self.world.sample_spawn_pose(&stage.spawn_region, fp, &mut rng, attempts)?;
        let min_sep = self.episode.goal_threshold + fp.diameter();
        let mut goal = None;
        for _ in 0..attempts {
            let g = self.world.sample_goal_pose(&stage.goal_region, fp, &mut rng, attempts)?;
            if g.position().distance(start.position()) >= min_sep {
                goal = Some(g.position());
                break;
            }
        }
        let goal = goal.ok_or_else(|| Error::SpawnExhausted {
            region: stage.goal_region.clone(),
            attempts,
        })?;
        self.reset_to(episode, start, goal)
    }

    /// Starts an episode from an explicit start pose and goal, as used for fixed benchmark couples.
    pub fn reset_to(&mut self, episode: u64, start: Pose2D, goal: Point) -> Result<Observation> {
        self.episode_index = episode;
        self.start = start;
        self.goal = goal;
        self.state = RobotState::at_rest(start);
        self.steps = 0;
        self.active = true;
        self.noise_rng = episode_rng(self.episode.seed, episode, NOISE_STREAM);
        self.readings = self.sense();
        Ok(self.observe())
    }

    fn sense(&mut self) -> SensorReadings {
        let pose = self.state.pose;
        SensorReadings {
            lidar: self
                .sensors
                .lidar
                .as_ref()
                .map(|s| scan_lidar(&self.world, &pose, s, &mut self.noise_rng)),
            depth: self
                .sensors
                .depth
                .as_ref()
                .map(|s| render_depth(&self.world, &pose, s, &mut self.noise_rng)),
        }
    }

    fn observe(&self) -> Observation {
        self.task
            .assemble_observation(&self.readings, &self.sensors, &self.state.pose, self.goal)
    }

    /// Applies one clamped command for `dt` and reports the transition.
    pub fn step(&mut self, cmd: VelocityCommand) -> Result<StepResult> {
        if !self.active {
            return Err(Error::Protocol(
                "step called before reset or after the episode ended".into(),
            ));
        }
        let cmd = self.platform.clamp_command(cmd);
        let prev = self.state.pose;
        self.state = integrate(&self.platform, &self.state, &cmd, self.episode.dt);
        self.steps += 1;
        let collided = self.world.check_collision(&self.state.pose, &self.platform.footprint);
        self.readings = self.sense();
        let outcome = self
            .task
            .outcome(collided, &self.state.pose, self.goal, self.steps, self.episode.max_steps);
        let reward = self.task.reward(&prev, &self.state.pose, self.goal, outcome);
        let done = outcome.is_terminal();
        if done {
            self.active = false;
        }
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done,
            outcome,
        })
    }

    /// Same as [`step`](Self::step) with an action vector laid out per [`PlatformSpec::action_limits`].
    pub fn step_action(&mut self, action: &[f64]) -> Result<StepResult> {
        let cmd = self.platform.command_from_action(action);
        self.step(cmd)
    }
}
