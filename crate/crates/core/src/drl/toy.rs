use rand::Rng;

use super::{EnvStep, Environment};
use crate::env::{episode_rng, Outcome};
use crate::error::{Error, Result};
use crate::robot::Limits;

/// Move a point on `[-1, 1]` to a goal. Observation `[x, goal − x]`, action a
/// velocity in `[-1, 1]` applied for `dt`. Reward is ten times the progress,
/// plus ten on reaching the goal.
#[derive(Debug, Clone)]
pub struct PointReach1D {
    pub seed: u64,
    pub dt: f64,
    pub threshold: f64,
    pub max_steps: usize,
    x: f64,
    goal: f64,
    steps: usize,
    active: bool,
}

impl PointReach1D {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dt: 0.1,
            threshold: 0.05,
            max_steps: 50,
            x: 0.0,
            goal: 0.0,
            steps: 0,
            active: false,
        }
    }

    pub fn position(&self) -> f64 {
        self.x
    }

    pub fn goal(&self) -> f64 {
        self.goal
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.x, self.goal - self.x]
    }
}

impl Environment for PointReach1D {
    fn observation_dim(&self) -> usize {
        2
    }

    fn action_limits(&self) -> Vec<Limits> {
        vec![Limits::new(-1.0, 1.0)]
    }

    fn reset(&mut self, episode: u64) -> Result<Vec<f64>> {
        let mut rng = episode_rng(self.seed, episode, 0);
        self.x = rng.random_range(-1.0..1.0);
        loop {
            self.goal = rng.random_range(-1.0..1.0);
            if (self.goal - self.x).abs() > 2.0 * self.threshold {
                break;
            }
        }
        self.steps = 0;
        self.active = true;
        Ok(self.observe())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if !self.active {
            return Err(Error::Protocol("step called before reset or after the episode ended".into()));
        }
        let a = action.first().copied().unwrap_or(0.0).clamp(-1.0, 1.0);
        let d_prev = (self.goal - self.x).abs();
        self.x = (self.x + a * self.dt).clamp(-1.0, 1.0);
        self.steps += 1;
        let d_now = (self.goal - self.x).abs();
        let mut reward = 10.0 * (d_prev - d_now);
        let outcome = if d_now < self.threshold {
            reward += 10.0;
            Outcome::GoalReached
        } else if self.steps >= self.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        self.active = outcome == Outcome::Running;
        Ok(EnvStep {
            observation: self.observe(),
            reward,
            outcome,
        })
    }
}
