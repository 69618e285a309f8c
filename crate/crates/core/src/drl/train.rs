use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{epsilon_schedule, Agent, AgentCheckpoint, Environment, Mode, ReplayBuffer, TrainingConfig, Transition};
use crate::env::Outcome;
use crate::error::{Error, Result};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub discounted_return: f64,
    /// `running` when the step budget cut the episode short.
    pub outcome: Outcome,
    /// Exploration rate after the episode's last step.
    pub epsilon: f64,
    /// Unscaled per-step rewards; not written to the CSV log.
    #[serde(skip)]
    pub rewards: Vec<f64>,
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

pub fn write_training_log(path: impl AsRef<Path>, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_training_log(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Agent, replay and counters of a running training session.
#[derive(Debug, Clone)]
pub struct Trainer {
    agent: Agent,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    episode: u64,
    total_steps: u64,
    updates: u64,
}

impl Trainer {
    pub fn new<E: Environment + ?Sized>(env: &E, config: TrainingConfig) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let buffer = ReplayBuffer::new(&config.buffer, config.buffer_capacity, config.gamma);
        let agent = Agent::new(config, env.observation_dim(), env.image_shape(), env.action_limits())?;
        Ok(Self {
            agent,
            buffer,
            rng,
            episode: 0,
            total_steps: 0,
            updates: 0,
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Gradient updates performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self) -> f64 {
        let c = self.agent.config();
        epsilon_schedule(self.total_steps, c.epsilon_start, c.epsilon_min, c.epsilon_decay)
    }

    pub fn is_finished(&self) -> bool {
        let c = self.agent.config();
        self.episode >= c.episodes || c.max_total_steps.is_some_and(|m| self.total_steps >= m)
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint::capture(&self.agent, self.episode, self.total_steps, &self.rng)
    }

    /// Runs one episode: warm-up actions are uniform random; after warm-up every
    /// environment step is followed by one gradient update.
    pub fn run_episode<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<EpisodeRecord> {
        let cfg = self.agent.config().clone();
        let mut obs = env.reset(self.episode)?;
        let mut rewards = Vec::new();
        let mut outcome = Outcome::Running;
        while !cfg.max_total_steps.is_some_and(|m| self.total_steps >= m) {
            let t = self.total_steps;
            let action = if t < cfg.warmup_steps {
                self.agent.random_action(&mut self.rng)
            } else {
                let eps = epsilon_schedule(t, cfg.epsilon_start, cfg.epsilon_min, cfg.epsilon_decay);
                self.agent.select_action(&obs, Mode::Train, eps, &mut self.rng)?.action
            };
            let step = env.step(&action)?;
            if !step.reward.is_finite() {
                return Err(Error::Divergence(format!("non-finite reward at step {t}")));
            }
            rewards.push(step.reward);
            outcome = step.outcome;
            self.buffer.push(Transition::single(
                std::mem::replace(&mut obs, step.observation.clone()),
                action,
                step.reward * cfg.reward_scale,
                step.observation,
                outcome.is_terminal(),
                outcome.is_true_terminal(),
            ));
            self.total_steps += 1;
            if t >= cfg.warmup_steps && self.buffer.len() >= cfg.batch_size {
                let batch = self.buffer.sample(cfg.batch_size, &mut self.rng)?;
                let stats = self.agent.update(&batch, &mut self.rng)?;
                self.buffer.update_priorities(&batch.indices, &stats.td_errors);
                self.updates += 1;
            }
            if outcome.is_terminal() {
                break;
            }
        }
        if let ReplayBuffer::NStep(b) = &mut self.buffer {
            b.clear_pending();
        }
        let record = EpisodeRecord {
            episode: self.episode,
            steps: rewards.len(),
            episode_return: rewards.iter().sum(),
            discounted_return: discounted_return(&rewards, cfg.gamma),
            outcome,
            epsilon: self.epsilon(),
            rewards,
        };
        self.episode += 1;
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub trainer: Trainer,
    pub log: Vec<EpisodeRecord>,
}

/// Trains until the configured episode count or step budget is reached.
pub fn train<E: Environment + ?Sized>(env: &mut E, config: &TrainingConfig) -> Result<TrainingOutcome> {
    let mut trainer = Trainer::new(env, config.clone())?;
    let mut log = Vec::new();
    while !trainer.is_finished() {
        log.push(trainer.run_episode(env)?);
    }
    Ok(TrainingOutcome { trainer, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drl::{Algorithm, BufferKind, PointReach1D};

    fn small(alg: Algorithm) -> TrainingConfig {
        let mut c = TrainingConfig {
            algorithm: alg,
            batch_size: 16,
            warmup_steps: 50,
            episodes: 6,
            ..Default::default()
        };
        c.network.hidden = vec![16, 16];
        c
    }

    #[test]
    fn no_updates_during_warmup() {
        let mut env = PointReach1D::new(0);
        let cfg = TrainingConfig {
            warmup_steps: 1000,
            max_total_steps: Some(1000),
            episodes: 10_000,
            ..small(Algorithm::Td3)
        };
        let out = train(&mut env, &cfg).unwrap();
        assert_eq!(out.trainer.total_steps(), 1000);
        assert_eq!(out.trainer.updates(), 0);
        assert_eq!(out.trainer.agent().update_count(), 0);
    }

    #[test]
    fn one_update_per_step_after_warmup() {
        let mut env = PointReach1D::new(0);
        let cfg = TrainingConfig {
            warmup_steps: 40,
            max_total_steps: Some(100),
            episodes: 10_000,
            ..small(Algorithm::Ddpg)
        };
        let out = train(&mut env, &cfg).unwrap();
        assert_eq!(out.trainer.updates(), 60);
    }

    #[test]
    fn logged_discounted_return_matches_rewards() {
        for alg in [Algorithm::Ddpg, Algorithm::Td3, Algorithm::Sac] {
            let mut env = PointReach1D::new(1);
            let cfg = TrainingConfig {
                buffer: BufferKind::Prioritized {
                    alpha: 0.6,
                    beta_start: 0.4,
                    beta_end: 1.0,
                    beta_anneal_samples: 1000,
                },
                ..small(alg)
            };
            let out = train(&mut env, &cfg).unwrap();
            assert_eq!(out.log.len(), 6);
            for r in &out.log {
                let mut expected = 0.0;
                for (t, x) in r.rewards.iter().enumerate() {
                    expected += cfg.gamma.powi(t as i32) * x;
                }
                assert!((r.discounted_return - expected).abs() < 1e-9);
                assert_eq!(r.steps, r.rewards.len());
            }
        }
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = TrainingConfig {
            buffer: BufferKind::NStep { n: 3 },
            ..small(Algorithm::Sac)
        };
        let a = train(&mut PointReach1D::new(2), &cfg).unwrap();
        let b = train(&mut PointReach1D::new(2), &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.trainer.checkpoint(), b.trainer.checkpoint());
    }

    #[test]
    fn log_csv_round_trip() {
        let out = train(&mut PointReach1D::new(3), &small(Algorithm::Td3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_training_log(&path, &out.log).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("episode,steps,return,discounted_return,outcome,epsilon\n"));
        let back = read_training_log(&path).unwrap();
        for (a, b) in out.log.iter().zip(&back) {
            assert_eq!(
                (a.episode, a.steps, a.episode_return, a.discounted_return, a.outcome, a.epsilon),
                (b.episode, b.steps, b.episode_return, b.discounted_return, b.outcome, b.epsilon)
            );
        }
    }

    #[test]
    fn td3_learns_point_reaching() {
        let mut cfg = TrainingConfig {
            algorithm: Algorithm::Td3,
            episodes: 200,
            warmup_steps: 500,
            batch_size: 64,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            epsilon_start: 0.2,
            epsilon_decay: 0.999,
            seed: 4,
            ..Default::default()
        };
        cfg.network.hidden = vec![32, 32];
        let out = train(&mut PointReach1D::new(11), &cfg).unwrap();
        let mean = |r: &[EpisodeRecord]| r.iter().map(|e| e.episode_return).sum::<f64>() / r.len() as f64;
        let (first, last) = (mean(&out.log[..20]), mean(&out.log[180..]));
        assert!(last > first, "first {first}, last {last}");
    }
}
