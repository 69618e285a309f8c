use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Algorithm, Batch, TrainingConfig};
use crate::error::{Error, Result};
use crate::nn::{
    adam_update, soft_update, AdamConfig, AdamState, Architecture, ImageShape, Init, Network, NetworkSpec,
    OutputHead, Param, ParameterSet,
};
use crate::robot::Limits;

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Exploration: ε-greedy plus algorithm noise.
    Train,
    /// Deterministic policy output.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedAction {
    /// Environment-space action, inside the limits.
    pub action: Vec<f64>,
    /// Drawn uniformly by the ε branch.
    pub random: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    /// Mean over critics of the weighted squared TD error.
    pub critic_loss: f64,
    /// Present when the actor was updated this step.
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    /// `Q_1(s, a) − y` per batch row.
    pub td_errors: Vec<f64>,
}

/// Networks, optimizer states and counters of one off-policy agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub(super) config: TrainingConfig,
    pub(super) action_limits: Vec<Limits>,
    pub(super) observation_dim: usize,
    pub(super) image: Option<ImageShape>,
    pub(super) actor: Network,
    /// DDPG and TD3 only.
    pub(super) actor_target: Option<Network>,
    pub(super) critics: Vec<Network>,
    pub(super) critic_targets: Vec<Network>,
    pub(super) actor_opt: AdamState,
    pub(super) critic_opts: Vec<AdamState>,
    /// SAC temperature as a `1×1` parameter `log α`.
    pub(super) log_alpha: ParameterSet,
    pub(super) alpha_opt: AdamState,
    pub(super) update_count: u64,
}

/// `log(1 − tanh²u)` without cancellation: `2(log 2 − u − softplus(−2u))`.
fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Reparameterized draw from the squashed Gaussian policy.
struct SquashedSample {
    /// `tanh(u)`, normalized action.
    action: Array2<f64>,
    eps: Array2<f64>,
    sigma: Array2<f64>,
    /// Whether `log σ` hit a clamp (zero gradient).
    clamped: Array2<bool>,
    log_prob: Array1<f64>,
}

fn sample_squashed<R: Rng + ?Sized>(raw: &Array2<f64>, dim: usize, rng: &mut R) -> SquashedSample {
    let b = raw.nrows();
    let mut s = SquashedSample {
        action: Array2::zeros((b, dim)),
        eps: Array2::zeros((b, dim)),
        sigma: Array2::zeros((b, dim)),
        clamped: Array2::from_elem((b, dim), false),
        log_prob: Array1::zeros(b),
    };
    for i in 0..b {
        let mut lp = 0.0;
        for j in 0..dim {
            let mu = raw[[i, j]];
            let ls_raw = raw[[i, dim + j]];
            let ls = ls_raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let sigma = ls.exp();
            let e: f64 = StandardNormal.sample(rng);
            let u = mu + sigma * e;
            s.action[[i, j]] = u.tanh();
            s.eps[[i, j]] = e;
            s.sigma[[i, j]] = sigma;
            s.clamped[[i, j]] = ls != ls_raw;
            lp += -0.5 * e * e - ls - 0.5 * LN_2PI - log1m_tanh2(u);
        }
        s.log_prob[i] = lp;
    }
    s
}

fn critic_input(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("same batch size")
}

fn derive_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

fn scalar_param(v: f64) -> ParameterSet {
    ParameterSet {
        tensors: vec![Param {
            name: "log_alpha".into(),
            value: Array2::from_elem((1, 1), v),
        }],
    }
}

impl Agent {
    /// Fresh agent for an environment with the given observation layout and action limits.
    pub fn new(
        config: TrainingConfig,
        observation_dim: usize,
        image: Option<ImageShape>,
        action_limits: Vec<Limits>,
    ) -> Result<Self> {
        config.validate("training")?;
        if action_limits.is_empty() {
            return Err(Error::validation("action_limits", "need at least one action dimension"));
        }
        if let Some(img) = image {
            if img.len() > observation_dim {
                return Err(Error::validation("image", "image is larger than the observation"));
            }
        }
        let act_dim = action_limits.len();
        let net = &config.network;
        let architecture = || match image {
            None => Architecture::Dense {
                hidden: net.hidden.clone(),
            },
            Some(image) => Architecture::MultiInput {
                image,
                conv: net.conv.clone(),
                state_hidden: net.state_hidden.clone(),
                fusion_hidden: net.hidden.clone(),
            },
        };
        let (actor_head, actor_out) = match config.algorithm {
            Algorithm::Sac => (OutputHead::GaussianHead, act_dim),
            _ => (
                OutputHead::TanhScaled {
                    limits: vec![Limits::new(-1.0, 1.0); act_dim],
                },
                act_dim,
            ),
        };
        let actor = Network::new(NetworkSpec {
            input_dim: observation_dim,
            architecture: architecture(),
            activation: net.activation,
            output_dim: actor_out,
            head: actor_head,
            init: Init::HeUniform,
            final_layer_scale: net.final_layer_scale,
            seed: derive_seed(config.seed, 1),
        })?;
        let critics = (0..config.algorithm.critic_count())
            .map(|k| {
                Network::new(NetworkSpec {
                    input_dim: observation_dim + act_dim,
                    architecture: architecture(),
                    activation: net.activation,
                    output_dim: 1,
                    head: OutputHead::Linear,
                    init: if config.zero_init_critics {
                        Init::Zeros
                    } else {
                        Init::HeUniform
                    },
                    final_layer_scale: net.final_layer_scale,
                    seed: derive_seed(config.seed, 2 + k as u64),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let actor_target = match config.algorithm {
            Algorithm::Sac => None,
            _ => Some(actor.clone()),
        };
        let log_alpha = scalar_param(config.initial_alpha.ln());
        Ok(Self {
            actor_opt: AdamState::new(actor.params()),
            critic_opts: critics.iter().map(|c| AdamState::new(c.params())).collect(),
            alpha_opt: AdamState::new(&log_alpha),
            log_alpha,
            critic_targets: critics.clone(),
            critics,
            actor_target,
            actor,
            config,
            action_limits,
            observation_dim,
            image,
            update_count: 0,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn action_limits(&self) -> &[Limits] {
        &self.action_limits
    }

    pub fn observation_dim(&self) -> usize {
        self.observation_dim
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image
    }

    pub fn actor(&self) -> &Network {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Network {
        &mut self.actor
    }

    pub fn actor_target(&self) -> Option<&Network> {
        self.actor_target.as_ref()
    }

    pub fn critics(&self) -> &[Network] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Network] {
        &mut self.critics
    }

    pub fn critic_targets(&self) -> &[Network] {
        &self.critic_targets
    }

    pub fn critic_targets_mut(&mut self) -> &mut [Network] {
        &mut self.critic_targets
    }

    pub fn actor_target_mut(&mut self) -> Option<&mut Network> {
        self.actor_target.as_mut()
    }

    /// Number of critic updates performed.
    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.tensors[0].value[[0, 0]].exp()
    }

    fn action_dim(&self) -> usize {
        self.action_limits.len()
    }

    pub fn to_normalized(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.action_limits)
            .map(|(&a, l)| {
                let half = 0.5 * (l.max - l.min);
                if half > 0.0 {
                    (a - 0.5 * (l.max + l.min)) / half
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn from_normalized(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.action_limits)
            .map(|(&a, l)| l.clamp(0.5 * (l.max + l.min) + 0.5 * (l.max - l.min) * a.clamp(-1.0, 1.0)))
            .collect()
    }

    fn normalize_rows(&self, actions: &Array2<f64>) -> Array2<f64> {
        let mut out = actions.clone();
        for mut row in out.rows_mut() {
            let n = self.to_normalized(row.as_slice().expect("contiguous"));
            row.assign(&Array1::from(n));
        }
        out
    }

    /// Uniform action inside the limits.
    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.action_limits
            .iter()
            .map(|l| if l.max > l.min { rng.random_range(l.min..=l.max) } else { l.min })
            .collect()
    }

    fn check_observation(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.observation_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} observation entries", self.observation_dim),
                actual: obs.len().to_string(),
            });
        }
        Ok(())
    }

    /// Deterministic normalized action: actor output, or `tanh(μ)` for SAC.
    fn deterministic_normalized(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_observation(obs)?;
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
        let out = self.actor.predict(x)?;
        let dim = self.action_dim();
        Ok(match self.config.algorithm {
            Algorithm::Sac => (0..dim).map(|j| out[[0, j]].tanh()).collect(),
            _ => out.row(0).to_vec(),
        })
    }

    /// Eval mode is deterministic. Train mode takes a uniform random action with
    /// probability `epsilon`, otherwise the policy plus exploration noise.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        mode: Mode,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<SelectedAction> {
        if mode == Mode::Eval {
            let a = self.deterministic_normalized(obs)?;
            return Ok(SelectedAction {
                action: self.from_normalized(&a),
                random: false,
            });
        }
        self.check_observation(obs)?;
        if rng.random::<f64>() < epsilon {
            return Ok(SelectedAction {
                action: self.random_action(rng),
                random: true,
            });
        }
        let a = match self.config.algorithm {
            Algorithm::Sac => {
                let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
                let raw = self.actor.predict(x)?;
                sample_squashed(&raw, self.action_dim(), rng).action.row(0).to_vec()
            }
            _ => {
                let mut a = self.deterministic_normalized(obs)?;
                let sd = self.config.exploration_noise;
                for v in &mut a {
                    let n: f64 = StandardNormal.sample(rng);
                    *v = (*v + sd * n).clamp(-1.0, 1.0);
                }
                a
            }
        };
        Ok(SelectedAction {
            action: self.from_normalized(&a),
            random: false,
        })
    }

    /// Critic regression targets `y = r + γ^k·(1 − terminal)·Q'(s', a')`.
    ///
    /// DDPG: `a' = μ'(s')`. TD3: `a'` is the target actor plus clipped Gaussian
    /// noise and `Q'` the twin minimum. SAC: `a' ~ π(s')` and
    /// `Q' = min Q'_i − α·log π(a'|s')`.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Array1<f64>> {
        let dim = self.action_dim();
        let next = batch.next_states.view();
        let (next_actions, entropy_term) = match self.config.algorithm {
            Algorithm::Ddpg => (self.actor_target.as_ref().expect("target actor").predict(next)?, None),
            Algorithm::Td3 => {
                let mut a = self.actor_target.as_ref().expect("target actor").predict(next)?;
                let (sd, c) = (self.config.target_noise, self.config.target_noise_clip);
                a.mapv_inplace(|v| {
                    let n: f64 = StandardNormal.sample(rng);
                    (v + (sd * n).clamp(-c, c)).clamp(-1.0, 1.0)
                });
                (a, None)
            }
            Algorithm::Sac => {
                let raw = self.actor.predict(next)?;
                let s = sample_squashed(&raw, dim, rng);
                let alpha = self.alpha();
                (s.action, Some(s.log_prob.mapv(|lp| alpha * lp)))
            }
        };
        let input = critic_input(next, next_actions.view());
        let mut q_next: Option<Array1<f64>> = None;
        for target in &self.critic_targets {
            let q = target.predict(input.view())?.column(0).to_owned();
            q_next = Some(match q_next {
                None => q,
                Some(prev) => ndarray::Zip::from(&prev).and(&q).map_collect(|&a, &b| a.min(b)),
            });
        }
        let mut q_next = q_next.expect("at least one critic");
        if let Some(e) = entropy_term {
            q_next -= &e;
        }
        let gamma = self.config.gamma;
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            let discount = if batch.terminal[i] {
                0.0
            } else {
                gamma.powi(batch.bootstrap_steps[i] as i32)
            };
            batch.rewards[i] + discount * q_next[i]
        }))
    }

    /// One gradient step on the critics and, per schedule, the actor, temperature and targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::InsufficientData {
                available: 0,
                requested: 1,
            });
        }
        let y = self.td_targets(batch, rng)?;
        let actions_n = self.normalize_rows(&batch.actions);
        let input = critic_input(batch.states.view(), actions_n.view());
        let critic_cfg = AdamConfig::with_lr(self.config.critic_lr);
        let mut critic_loss = 0.0;
        let mut td_errors = Vec::new();
        for (k, (critic, opt)) in self.critics.iter_mut().zip(&mut self.critic_opts).enumerate() {
            let pass = critic.forward(input.view())?;
            let diff = &pass.output.column(0) - &y;
            let loss = (&batch.weights * &diff * &diff).sum() / b as f64;
            let grad = (&batch.weights * &diff * (2.0 / b as f64)).insert_axis(Axis(1));
            let (g, _) = critic.backward(&pass, grad.view());
            adam_update(critic.params_mut(), &g, opt, &critic_cfg);
            critic_loss += loss;
            if k == 0 {
                td_errors = diff.to_vec();
            }
        }
        critic_loss /= self.critics.len() as f64;
        self.update_count += 1;

        let mut stats = UpdateStats {
            critic_loss,
            actor_loss: None,
            alpha: None,
            td_errors,
        };
        let tau = self.config.tau;
        match self.config.algorithm {
            Algorithm::Ddpg => {
                stats.actor_loss = Some(self.deterministic_actor_step(batch)?);
                self.soft_update_all(tau);
            }
            Algorithm::Td3 => {
                if self.update_count.is_multiple_of(self.config.policy_delay) {
                    stats.actor_loss = Some(self.deterministic_actor_step(batch)?);
                    self.soft_update_all(tau);
                }
            }
            Algorithm::Sac => {
                let (actor_loss, alpha) = self.sac_actor_step(batch, rng)?;
                stats.actor_loss = Some(actor_loss);
                stats.alpha = Some(alpha);
                for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                    soft_update(t.params_mut(), c.params(), tau);
                }
            }
        }
        self.guard(&stats)?;
        Ok(stats)
    }

    fn guard(&self, stats: &UpdateStats) -> Result<()> {
        let finite_losses = stats.critic_loss.is_finite() && stats.actor_loss.is_none_or(f64::is_finite);
        if !finite_losses {
            return Err(Error::Divergence(format!(
                "non-finite loss after update {} (critic {}, actor {:?})",
                self.update_count, stats.critic_loss, stats.actor_loss
            )));
        }
        let nets = std::iter::once(&self.actor)
            .chain(self.actor_target.iter())
            .chain(&self.critics)
            .chain(&self.critic_targets);
        for net in nets {
            if !net.params().all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after update {}",
                    self.update_count
                )));
            }
        }
        Ok(())
    }

    fn soft_update_all(&mut self, tau: f64) {
        if let Some(t) = &mut self.actor_target {
            soft_update(t.params_mut(), self.actor.params(), tau);
        }
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t.params_mut(), c.params(), tau);
        }
    }

    /// Deterministic policy gradient through the first critic; returns `−mean Q`.
    fn deterministic_actor_step(&mut self, batch: &Batch) -> Result<f64> {
        let b = batch.len() as f64;
        let dim = self.action_dim();
        let pass_a = self.actor.forward(batch.states.view())?;
        let input = critic_input(batch.states.view(), pass_a.output.view());
        let critic = &self.critics[0];
        let pass_q = critic.forward(input.view())?;
        let loss = -pass_q.output.sum() / b;
        let seed = Array2::from_elem((batch.len(), 1), -1.0 / b);
        let d_input = critic.input_gradient(&pass_q, seed.view());
        let d_action = d_input.slice(s![.., self.observation_dim..]).to_owned();
        debug_assert_eq!(d_action.ncols(), dim);
        let (g, _) = self.actor.backward(&pass_a, d_action.view());
        adam_update(
            self.actor.params_mut(),
            &g,
            &mut self.actor_opt,
            &AdamConfig::with_lr(self.config.actor_lr),
        );
        Ok(loss)
    }

    /// Reparameterized gradient of `E[α·log π − min Q]` with respect to the actor.
    /// Returns the gradient, the loss and the per-row log-probabilities.
    fn sac_actor_gradient<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<(ParameterSet, f64, Array1<f64>)> {
        let n = batch.len();
        let b = n as f64;
        let dim = self.action_dim();
        let alpha = self.alpha();
        let pass_a = self.actor.forward(batch.states.view())?;
        let smp = sample_squashed(&pass_a.output, dim, rng);
        let input = critic_input(batch.states.view(), smp.action.view());
        let p1 = self.critics[0].forward(input.view())?;
        let p2 = self.critics[1].forward(input.view())?;
        let mut seed1 = Array2::zeros((n, 1));
        let mut seed2 = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for i in 0..n {
            let (q1, q2) = (p1.output[[i, 0]], p2.output[[i, 0]]);
            if q1 <= q2 {
                seed1[[i, 0]] = -1.0 / b;
            } else {
                seed2[[i, 0]] = -1.0 / b;
            }
            loss += (alpha * smp.log_prob[i] - q1.min(q2)) / b;
        }
        let dq = self.critics[0].input_gradient(&p1, seed1.view()) + self.critics[1].input_gradient(&p2, seed2.view());
        let obs_dim = self.observation_dim;
        let mut grad = Array2::zeros((n, 2 * dim));
        for i in 0..n {
            for j in 0..dim {
                let a = smp.action[[i, j]];
                let (e, sigma) = (smp.eps[[i, j]], smp.sigma[[i, j]]);
                let dq_du = dq[[i, obs_dim + j]] * (1.0 - a * a);
                grad[[i, j]] = alpha * 2.0 * a / b + dq_du;
                grad[[i, dim + j]] = if smp.clamped[[i, j]] {
                    0.0
                } else {
                    alpha * (-1.0 + 2.0 * a * e * sigma) / b + dq_du * e * sigma
                };
            }
        }
        let (g, _) = self.actor.backward(&pass_a, grad.view());
        Ok((g, loss, smp.log_prob))
    }

    /// Actor step, then the temperature toward the entropy target.
    fn sac_actor_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, f64)> {
        let (g, loss, log_prob) = self.sac_actor_gradient(batch, rng)?;
        adam_update(
            self.actor.params_mut(),
            &g,
            &mut self.actor_opt,
            &AdamConfig::with_lr(self.config.actor_lr),
        );
        if self.config.auto_alpha {
            let b = batch.len() as f64;
            let target = self.config.target_entropy.unwrap_or(-(self.action_dim() as f64));
            let g_alpha = -(log_prob.sum() / b + target);
            let grads = scalar_param(g_alpha);
            adam_update(
                &mut self.log_alpha,
                &grads,
                &mut self.alpha_opt,
                &AdamConfig::with_lr(self.config.alpha_lr),
            );
        }
        Ok((loss, self.alpha()))
    }
}
