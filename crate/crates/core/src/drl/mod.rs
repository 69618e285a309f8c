//! Off-policy continuous-control agents and the training loop.
//!
//! Agents act in a normalized action space `[-1, 1]^n` and map to the
//! environment's [`Limits`] at the boundary. Replay stores environment-space
//! actions.

mod agent;
mod checkpoint;
mod replay;
mod toy;
mod train;

pub use agent::{Agent, Mode, SelectedAction, UpdateStats};
pub use checkpoint::{
    AgentCheckpoint, NetworkState, Policy, RngState, PolicyFile, ScriptedPolicy, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use replay::{Batch, NStepBuffer, PrioritizedBuffer, ReplayBuffer, SumTree, Transition, UniformBuffer};
pub use toy::PointReach1D;
pub use train::{
    discounted_return, read_training_log, train, write_training_log, EpisodeRecord, Trainer, TrainingOutcome,
};

use serde::{Deserialize, Serialize};

use crate::env::{NavEnv, Outcome};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvSpec, ImageShape};
use crate::robot::Limits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ddpg,
    Td3,
    Sac,
}

impl Algorithm {
    pub fn critic_count(&self) -> usize {
        match self {
            Algorithm::Ddpg => 1,
            Algorithm::Td3 | Algorithm::Sac => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BufferKind {
    Uniform,
    /// Proportional prioritization; β is annealed linearly over `beta_anneal_samples` sample calls.
    Prioritized {
        alpha: f64,
        beta_start: f64,
        #[serde(default = "one")]
        beta_end: f64,
        beta_anneal_samples: u64,
    },
    NStep {
        n: usize,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Convolution stack applied to image observations.
    pub conv: Vec<ConvSpec>,
    /// Dense layers on the non-image part before fusion.
    pub state_hidden: Vec<usize>,
    /// Uniform range of the output layer at initialization.
    pub final_layer_scale: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            conv: vec![
                ConvSpec {
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                },
                ConvSpec {
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
            ],
            state_hidden: vec![],
            final_layer_scale: Some(3e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer: BufferKind,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Std of Gaussian exploration noise in normalized action units (DDPG, TD3).
    pub exploration_noise: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub auto_alpha: bool,
    pub initial_alpha: f64,
    pub alpha_lr: f64,
    /// Multiplies rewards before they enter replay; logged returns stay unscaled.
    pub reward_scale: f64,
    pub episodes: u64,
    pub max_total_steps: Option<u64>,
    /// Write a checkpoint every this many episodes (CLI).
    pub checkpoint_every: Option<u64>,
    pub network: NetworkConfig,
    /// Start critics at exactly zero output.
    pub zero_init_critics: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Td3,
            gamma: 0.99,
            batch_size: 64,
            buffer: BufferKind::Uniform,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            epsilon_start: 0.5,
            epsilon_min: 0.05,
            epsilon_decay: 0.9999,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            exploration_noise: 0.1,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            target_entropy: None,
            auto_alpha: true,
            initial_alpha: 0.2,
            alpha_lr: 3e-4,
            reward_scale: 1.0,
            episodes: 1000,
            max_total_steps: None,
            checkpoint_every: None,
            network: NetworkConfig::default(),
            zero_init_critics: false,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |name: &str, msg: &str| Err(Error::validation(format!("{field}.{name}"), msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity", "must be at least batch_size");
        }
        if !(0.0..=1.0).contains(&self.epsilon_min)
            || !(0.0..=1.0).contains(&self.epsilon_start)
            || self.epsilon_min > self.epsilon_start
        {
            return bad("epsilon_min", "need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay", "must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
            ("initial_alpha", self.initial_alpha),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, "must be positive and finite");
            }
        }
        for (name, v) in [
            ("exploration_noise", self.exploration_noise),
            ("target_noise", self.target_noise),
            ("target_noise_clip", self.target_noise_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be non-negative");
            }
        }
        if self.policy_delay == 0 {
            return bad("policy_delay", "must be at least 1");
        }
        match self.buffer {
            BufferKind::NStep { n: 0 } => return bad("buffer.n", "must be at least 1"),
            BufferKind::Prioritized {
                alpha,
                beta_start,
                beta_end,
                ..
            } => {
                if alpha < 0.0 || !alpha.is_finite() {
                    return bad("buffer.alpha", "must be non-negative");
                }
                if !(0.0..=1.0).contains(&beta_start) || !(0.0..=1.0).contains(&beta_end) {
                    return bad("buffer.beta_start", "beta must lie in [0, 1]");
                }
            }
            _ => {}
        }
        if self.network.hidden.iter().chain(&self.network.state_hidden).any(|&h| h == 0) {
            return bad("network.hidden", "layer widths must be positive");
        }
        Ok(())
    }
}

/// `ε_t = ε_min + (ε_0 − ε_min)·γ_ε^t`.
pub fn epsilon_schedule(t: u64, epsilon_start: f64, epsilon_min: f64, decay: f64) -> f64 {
    let eps = epsilon_min + (epsilon_start - epsilon_min) * decay.powf(t as f64);
    eps.max(epsilon_min)
}

/// Result of one environment step as seen by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub outcome: Outcome,
}

/// Episodic environment with flat observations and bounded continuous actions.
pub trait Environment {
    fn observation_dim(&self) -> usize;

    /// Shape of an image occupying the leading observation entries, if any.
    fn image_shape(&self) -> Option<ImageShape> {
        None
    }

    fn action_limits(&self) -> Vec<Limits>;

    fn reset(&mut self, episode: u64) -> Result<Vec<f64>>;

    fn step(&mut self, action: &[f64]) -> Result<EnvStep>;
}

impl Environment for NavEnv {
    fn observation_dim(&self) -> usize {
        NavEnv::observation_dim(self)
    }

    fn image_shape(&self) -> Option<ImageShape> {
        self.sensors().depth.as_ref().map(|d| {
            let (height, width) = d.output_shape();
            ImageShape {
                channels: 1,
                height,
                width,
            }
        })
    }

    fn action_limits(&self) -> Vec<Limits> {
        NavEnv::action_limits(self)
    }

    fn reset(&mut self, episode: u64) -> Result<Vec<f64>> {
        Ok(NavEnv::reset(self, episode)?.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        let r = self.step_action(action)?;
        Ok(EnvStep {
            observation: r.observation.to_vec(),
            reward: r.reward,
            outcome: r.outcome,
        })
    }
}
