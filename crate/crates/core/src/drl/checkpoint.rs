use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, Mode, TrainingConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamState, ImageShape, Network, NetworkSpec, ParameterSet};
use crate::robot::Limits;

pub const CHECKPOINT_FORMAT: &str = "navgym-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable form of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
}

impl From<&Network> for NetworkState {
    fn from(n: &Network) -> Self {
        Self {
            spec: n.spec().clone(),
            params: n.params().clone(),
        }
    }
}

impl NetworkState {
    pub fn into_network(self) -> Result<Network> {
        Network::from_parts(self.spec, self.params)
    }
}

/// Full trainer state needed to evaluate or resume an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainingConfig,
    pub action_limits: Vec<Limits>,
    pub observation_dim: usize,
    pub image: Option<ImageShape>,
    pub actor: NetworkState,
    pub actor_target: Option<NetworkState>,
    pub critics: Vec<NetworkState>,
    pub critic_targets: Vec<NetworkState>,
    pub actor_opt: AdamState,
    pub critic_opts: Vec<AdamState>,
    pub log_alpha: ParameterSet,
    pub alpha_opt: AdamState,
    pub update_count: u64,
    /// Episodes completed when the checkpoint was taken.
    pub episode: u64,
    pub total_steps: u64,
    pub rng: RngState,
}

/// Position of a ChaCha8 stream: key, stream id and 128-bit word offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl From<&ChaCha8Rng> for RngState {
    fn from(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }
}

impl RngState {
    pub fn to_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos((u128::from(self.word_pos_hi) << 64) | u128::from(self.word_pos_lo));
        rng
    }
}

impl AgentCheckpoint {
    pub fn capture(agent: &Agent, episode: u64, total_steps: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: agent.config.clone(),
            action_limits: agent.action_limits.clone(),
            observation_dim: agent.observation_dim,
            image: agent.image,
            actor: (&agent.actor).into(),
            actor_target: agent.actor_target.as_ref().map(Into::into),
            critics: agent.critics.iter().map(Into::into).collect(),
            critic_targets: agent.critic_targets.iter().map(Into::into).collect(),
            actor_opt: agent.actor_opt.clone(),
            critic_opts: agent.critic_opts.clone(),
            log_alpha: agent.log_alpha.clone(),
            alpha_opt: agent.alpha_opt.clone(),
            update_count: agent.update_count,
            episode,
            total_steps,
            rng: rng.into(),
        }
    }

    pub fn to_agent(&self) -> Result<Agent> {
        let nets = |v: &[NetworkState]| v.iter().cloned().map(NetworkState::into_network).collect::<Result<Vec<_>>>();
        let critics = nets(&self.critics)?;
        let critic_targets = nets(&self.critic_targets)?;
        let expected = self.config.algorithm.critic_count();
        if critics.len() != expected || critic_targets.len() != expected || self.critic_opts.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} critics for {:?}",
                self.config.algorithm
            )));
        }
        Ok(Agent {
            config: self.config.clone(),
            action_limits: self.action_limits.clone(),
            observation_dim: self.observation_dim,
            image: self.image,
            actor: self.actor.clone().into_network()?,
            actor_target: self.actor_target.clone().map(NetworkState::into_network).transpose()?,
            critics,
            critic_targets,
            actor_opt: self.actor_opt.clone(),
            critic_opts: self.critic_opts.clone(),
            log_alpha: self.log_alpha.clone(),
            alpha_opt: self.alpha_opt.clone(),
            update_count: self.update_count,
        })
    }
}

/// A loadable policy: a trained agent or a fixed scripted action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFile {
    Agent(Box<AgentCheckpoint>),
    /// Emits the same environment-space action at every step.
    Scripted { action: Vec<f64> },
}

/// Header read before the body, so version mismatches are reported clearly.
#[derive(Deserialize)]
struct Header {
    kind: String,
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    version: Option<u32>,
}

impl PolicyFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.kind == "agent" {
            if header.format.as_deref() != Some(CHECKPOINT_FORMAT) {
                return Err(Error::Checkpoint("not an agent checkpoint".into()));
            }
            if header.version != Some(CHECKPOINT_VERSION) {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {:?}, expected {CHECKPOINT_VERSION}",
                    header.version
                )));
            }
        }
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Evaluation-mode policy for environments with `observation_dim` inputs and the given limits.
    pub fn into_policy(self, observation_dim: usize, limits: &[Limits]) -> Result<Box<dyn Policy>> {
        match self {
            PolicyFile::Agent(ckpt) => {
                let agent = ckpt.to_agent()?;
                if agent.observation_dim() != observation_dim || agent.action_limits().len() != limits.len() {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint expects {} observations and {} actions, environment has {} and {}",
                        agent.observation_dim(),
                        agent.action_limits().len(),
                        observation_dim,
                        limits.len()
                    )));
                }
                Ok(Box::new(agent))
            }
            PolicyFile::Scripted { action } => {
                if action.len() != limits.len() {
                    return Err(Error::Checkpoint(format!(
                        "scripted action has {} entries, environment expects {}",
                        action.len(),
                        limits.len()
                    )));
                }
                Ok(Box::new(ScriptedPolicy { action }))
            }
        }
    }
}

/// Deterministic mapping from observation to environment-space action.
pub trait Policy {
    fn act(&self, observation: &[f64]) -> Result<Vec<f64>>;
}

impl Policy for Agent {
    fn act(&self, observation: &[f64]) -> Result<Vec<f64>> {
        // eval mode draws nothing from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.select_action(observation, Mode::Eval, 0.0, &mut rng)?.action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPolicy {
    pub action: Vec<f64>,
}

impl Policy for ScriptedPolicy {
    fn act(&self, _observation: &[f64]) -> Result<Vec<f64>> {
        Ok(self.action.clone())
    }
}
