//! Goal-conditioned DDPG: actor, critic, their target copies and the four
//! update rules.

mod actor;
mod critic;
mod train;

pub use actor::{Actor, ActorCache, ActorGrads, ActorOptimizer, ActorOutput, Variant, ACTOR_INPUT};
pub use critic::Critic;
pub use train::{train, EpisodeLog, TrainLog};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{BeamState, EnvError};
use crate::numerics::checkpoint::NetRecord;
use crate::numerics::rng::streams;
use crate::numerics::{Matrix, NumericsError, OptimizerState, RngStream};
use crate::replay::{HerStrategy, ReplayError, Transition};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("non-finite {what} at training step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub noise: NoiseKind,
    pub noise_sigma_start: f64,
    pub noise_sigma_end: f64,
    /// Fraction of training over which σ is annealed linearly.
    pub noise_anneal_fraction: f64,
    /// Environment steps with uniformly random actions before any update.
    pub warmup_steps: usize,
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub her: bool,
    pub her_strategy: HerStrategy,
    pub k_future: usize,
    /// Training episode length.
    pub episode_horizon: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.005,
            actor_lr: 3e-3,
            critic_lr: 3e-3,
            noise: NoiseKind::Gaussian,
            noise_sigma_start: 0.2,
            noise_sigma_end: 0.05,
            noise_anneal_fraction: 0.5,
            warmup_steps: 1000,
            hidden_dims: vec![64, 64],
            batch_size: 128,
            replay_capacity: 1_000_000,
            her: true,
            her_strategy: HerStrategy::Future,
            k_future: 4,
            episode_horizon: 50,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.noise_sigma_start < 0.0 || self.noise_sigma_end < 0.0 {
            return bad("noise sigma must be non-negative");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be a non-empty list of positive widths");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.episode_horizon == 0 {
            return bad("batch_size, replay_capacity and episode_horizon must be positive");
        }
        Ok(())
    }

    /// Linear σ schedule for environment step `t` of `total`.
    pub fn sigma_at(&self, t: usize, total: usize) -> f64 {
        let span = (self.noise_anneal_fraction * total as f64).max(1.0);
        let frac = (t as f64 / span).min(1.0);
        self.noise_sigma_start + (self.noise_sigma_end - self.noise_sigma_start) * frac
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentBundle {
    pub config: AgentConfig,
    pub actor: Actor,
    pub critic: Critic,
    pub target_actor: Actor,
    pub target_critic: Critic,
    pub actor_opt: ActorOptimizer,
    pub critic_opt: OptimizerState,
}

/// Rows `[s; g]` for each transition, using `next_state` when `next` is set.
fn state_goal_matrix(batch: &[&Transition], next: bool) -> Matrix {
    let mut m = Matrix::zeros(batch.len(), ACTOR_INPUT);
    for (i, t) in batch.iter().enumerate() {
        let row = m.row_mut(i);
        let s = if next { &t.next_state } else { &t.state };
        row[..4].copy_from_slice(s.as_array());
        row[4..].copy_from_slice(t.goal.as_array());
    }
    m
}

impl AgentBundle {
    pub fn new(
        action_dim: usize,
        variant: Variant,
        config: AgentConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = RngStream::new(seed, streams::INIT);
        let actor = Actor::new(action_dim, &config.hidden_dims, variant, &mut rng);
        let critic = Critic::new(action_dim, &config.hidden_dims, &mut rng);
        let actor_opt = ActorOptimizer::new(&actor, config.actor_lr);
        let critic_opt = OptimizerState::new(&critic.net, config.critic_lr);
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
            config,
        })
    }

    pub fn variant(&self) -> Variant {
        self.actor.variant
    }

    pub fn action_dim(&self) -> usize {
        self.actor.action_dim()
    }

    /// Deterministic policy output and attention weights.
    pub fn actor_forward(
        &self,
        s: &BeamState,
        goal: &BeamState,
    ) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        Ok(self.actor.act(s.as_array(), goal.as_array())?)
    }

    /// Policy action plus N(0, σ²I) exploration noise, clipped to `[-1, 1]`.
    pub fn select_action(
        &self,
        s: &BeamState,
        goal: &BeamState,
        sigma: f64,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>, AgentError> {
        let (mut a, _) = self.actor_forward(s, goal)?;
        if sigma > 0.0 {
            for v in &mut a {
                *v += sigma * rng.normal();
            }
        }
        for v in &mut a {
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    /// Bootstrapped targets `y = r + γ(1 − done)·Q'([s'; g], μ'([s'; g]))`.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, AgentError> {
        let x_next = state_goal_matrix(batch, true);
        let a_next = self.target_actor.forward(&x_next)?.0.actions;
        let q_next = self.target_critic.net.predict(&x_next.hcat(&a_next))?;
        Ok(batch
            .iter()
            .zip(q_next.as_slice())
            .map(|(t, q)| t.reward + if t.done { 0.0 } else { self.config.gamma * q })
            .collect())
    }

    /// One Adam step on the mean squared TD error. Returns the loss before the step.
    pub fn update_critic(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let y = self.critic_targets(batch)?;
        let n = batch.len();
        let x = state_goal_matrix(batch, false);
        let actions = Matrix::from_rows(
            &batch
                .iter()
                .map(|t| t.action.as_slice())
                .collect::<Vec<_>>(),
        );
        let (q, cache) = self.critic.net.forward_batch(&x.hcat(&actions))?;
        let mut grad = Matrix::zeros(n, 1);
        let mut loss = 0.0;
        for i in 0..n {
            let diff = q.get(i, 0) - y[i];
            loss += diff * diff;
            grad.as_mut_slice()[i] = 2.0 * diff / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(AgentError::NonFinite {
                what: "critic loss",
                step: 0,
            });
        }
        let (grads, _) = self.critic.net.backward(&cache, &grad)?;
        self.critic_opt.step(&mut self.critic.net, &grads)?;
        Ok(loss)
    }

    /// `J = mean Q([s; g], μ([s; g]))` and its gradient w.r.t. the actor
    /// parameters (ascent direction), with the critic held fixed.
    pub fn actor_objective_and_grads(
        &self,
        batch: &[&Transition],
    ) -> Result<(f64, ActorGrads), AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let n = batch.len();
        let x = state_goal_matrix(batch, false);
        let (out, actor_cache) = self.actor.forward(&x)?;
        let (q, critic_cache) = self.critic.net.forward_batch(&x.hcat(&out.actions))?;
        let objective = q.as_slice().iter().sum::<f64>() / n as f64;
        if !objective.is_finite() {
            return Err(AgentError::NonFinite {
                what: "actor objective",
                step: 0,
            });
        }
        let grad_q = Matrix::from_vec(n, 1, vec![1.0 / n as f64; n]);
        let grad_in = self.critic.net.backward_input(&critic_cache, &grad_q)?;
        let grad_a = grad_in.columns(ACTOR_INPUT, self.action_dim());
        let grads = self.actor.backward(&actor_cache, &grad_a)?;
        Ok((objective, grads))
    }

    /// One ascent step on `J`. Returns `J` before the step.
    pub fn update_actor(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let (objective, mut grads) = self.actor_objective_and_grads(batch)?;
        grads.trunk.scale(-1.0);
        grads.act.scale(-1.0);
        if let Some(g) = grads.attn.as_mut() {
            g.scale(-1.0);
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(objective)
    }

    /// Polyak-averages both target networks towards the online ones.
    pub fn soft_update_targets(&mut self, tau: f64) -> Result<(), AgentError> {
        self.target_critic
            .net
            .soft_update_from(&self.critic.net, tau)?;
        self.target_actor.soft_update_from(&self.actor, tau)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const AGENT_CHECKPOINT_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    pub role: String,
    pub part: String,
    pub net: NetRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: String,
    pub variant: Variant,
    pub action_dim: usize,
    pub config: AgentConfig,
    pub config_hash: String,
    pub networks: Vec<NetEntry>,
}

impl AgentCheckpoint {
    pub fn from_bundle(agent: &AgentBundle, config_hash: &str) -> Self {
        let entry = |role: &str, part: &str, net, opt: Option<&OptimizerState>| NetEntry {
            role: role.into(),
            part: part.into(),
            net: NetRecord::from_net(net, opt),
        };
        let o = &agent.actor_opt;
        let networks = vec![
            entry("actor", "trunk", &agent.actor.trunk, Some(&o.trunk)),
            entry("actor", "attention", &agent.actor.attn_head, Some(&o.attn)),
            entry("actor", "action", &agent.actor.act_head, Some(&o.act)),
            entry("critic", "q", &agent.critic.net, Some(&agent.critic_opt)),
            entry("target_actor", "trunk", &agent.target_actor.trunk, None),
            entry(
                "target_actor",
                "attention",
                &agent.target_actor.attn_head,
                None,
            ),
            entry("target_actor", "action", &agent.target_actor.act_head, None),
            entry("target_critic", "q", &agent.target_critic.net, None),
        ];
        Self {
            version: AGENT_CHECKPOINT_VERSION.into(),
            variant: agent.variant(),
            action_dim: agent.action_dim(),
            config: agent.config.clone(),
            config_hash: config_hash.into(),
            networks,
        }
    }

    pub fn into_bundle(self) -> Result<AgentBundle, AgentError> {
        if self.version != AGENT_CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported version {:?}",
                self.version
            )));
        }
        self.config.validate()?;
        let find = |role: &str, part: &str| {
            self.networks
                .iter()
                .find(|e| e.role == role && e.part == part)
                .ok_or_else(|| AgentError::Checkpoint(format!("missing network {role}/{part}")))
        };
        let net = |role: &str, part: &str| -> Result<_, AgentError> {
            Ok(find(role, part)?.net.to_net()?)
        };
        let opt = |role: &str,
                   part: &str,
                   lr: f64,
                   n: &crate::numerics::DenseNet|
         -> Result<OptimizerState, AgentError> {
            Ok(find(role, part)?
                .net
                .optimizer
                .clone()
                .unwrap_or_else(|| OptimizerState::new(n, lr)))
        };
        let actor = Actor::from_parts(
            net("actor", "trunk")?,
            net("actor", "attention")?,
            net("actor", "action")?,
            self.variant,
        )?;
        let target_actor = Actor::from_parts(
            net("target_actor", "trunk")?,
            net("target_actor", "attention")?,
            net("target_actor", "action")?,
            self.variant,
        )?;
        let critic = Critic {
            net: net("critic", "q")?,
        };
        let target_critic = Critic {
            net: net("target_critic", "q")?,
        };
        if actor.action_dim() != self.action_dim || critic.action_dim() != self.action_dim {
            return Err(AgentError::Checkpoint(
                "network shapes disagree with action_dim".into(),
            ));
        }
        if !actor.same_shape(&target_actor) || !critic.net.same_shape(&target_critic.net) {
            return Err(AgentError::Checkpoint(
                "target networks differ in shape from online networks".into(),
            ));
        }
        let actor_opt = ActorOptimizer {
            trunk: opt("actor", "trunk", self.config.actor_lr, &actor.trunk)?,
            attn: opt("actor", "attention", self.config.actor_lr, &actor.attn_head)?,
            act: opt("actor", "action", self.config.actor_lr, &actor.act_head)?,
        };
        let critic_opt = opt("critic", "q", self.config.critic_lr, &critic.net)?;
        Ok(AgentBundle {
            config: self.config,
            actor,
            critic,
            target_actor,
            target_critic,
            actor_opt,
            critic_opt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)
            .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
