//! Off-policy training loop with hindsight relabelling.

use serde::{Deserialize, Serialize};

use crate::env::Env;
use crate::numerics::rng::streams;
use crate::numerics::RngStream;
use crate::replay::{her_relabel, ReplayBuffer, Transition};

use super::{AgentBundle, AgentError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Global step index after the episode's last transition.
    pub end_step: usize,
    pub length: usize,
    pub final_wmae: f64,
    pub success: bool,
    /// Mean critic loss over the updates made during the episode (none during warmup).
    pub critic_loss: Option<f64>,
    /// Mean actor objective over the updates made during the episode.
    pub actor_objective: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLog>,
    pub total_steps: usize,
    pub updates: usize,
}

impl TrainLog {
    /// Success rate over the last `n` episodes (all if fewer).
    pub fn success_rate_last_episodes(&self, n: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        rate(tail.iter())
    }

    /// Success rate over episodes that ended within the final `steps` environment steps.
    pub fn success_rate_last_steps(&self, steps: usize) -> f64 {
        let from = self.total_steps.saturating_sub(steps);
        rate(self.episodes.iter().filter(|e| e.end_step > from))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W, config_hash: &str) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "episode",
            "end_step",
            "length",
            "final_wmae",
            "success",
            "critic_loss",
            "actor_objective",
            "config_hash",
        ])?;
        for e in &self.episodes {
            w.write_record([
                e.episode.to_string(),
                e.end_step.to_string(),
                e.length.to_string(),
                e.final_wmae.to_string(),
                e.success.to_string(),
                e.critic_loss.map_or(String::new(), |v| v.to_string()),
                e.actor_objective.map_or(String::new(), |v| v.to_string()),
                config_hash.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rate<'a>(eps: impl Iterator<Item = &'a EpisodeLog>) -> f64 {
    let (n, s) = eps.fold((0usize, 0usize), |(n, s), e| {
        (n + 1, s + e.success as usize)
    });
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// Trains `agent` for `total_steps` environment steps. The environment's
/// `max_k` is overridden by the configured episode horizon. Fully
/// deterministic given `seed`.
pub fn train(
    agent: &mut AgentBundle,
    env: &mut Env,
    total_steps: usize,
    seed: u64,
) -> Result<TrainLog, AgentError> {
    let cfg = agent.config.clone();
    cfg.validate()?;
    if env.dim() != agent.action_dim() {
        return Err(AgentError::Config(format!(
            "agent acts on {} parameters, environment has {}",
            agent.action_dim(),
            env.dim()
        )));
    }
    env.max_k = cfg.episode_horizon;
    let d = env.dim();
    let mut env_rng = RngStream::new(seed, streams::TRAIN_ENV);
    let mut policy_rng = RngStream::new(seed, streams::TRAIN_POLICY);
    let mut replay_rng = RngStream::new(seed, streams::TRAIN_REPLAY);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, env.beta);
    let mut log = TrainLog::default();
    let mut step = 0usize;

    while step < total_steps {
        let (mut state, goal) = env.reset(&mut env_rng)?;
        let mut episode: Vec<Transition> = Vec::with_capacity(cfg.episode_horizon);
        let (mut loss_sum, mut obj_sum, mut n_updates) = (0.0, 0.0, 0usize);
        let mut last = None;
        while step < total_steps {
            let action = if step < cfg.warmup_steps {
                (0..d).map(|_| policy_rng.uniform(-1.0, 1.0)).collect()
            } else {
                agent.select_action(
                    &state,
                    &goal,
                    cfg.sigma_at(step, total_steps),
                    &mut policy_rng,
                )?
            };
            let out = env.step(&action)?;
            let t = Transition {
                state,
                action,
                reward: out.reward,
                next_state: out.next,
                goal,
                done: out.success,
            };
            buffer.push(t.clone())?;
            episode.push(t);
            state = out.next;
            step += 1;

            if step > cfg.warmup_steps && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut replay_rng)?;
                let loss = agent
                    .update_critic(&batch)
                    .map_err(|e| with_step(e, step))?;
                let objective = agent.update_actor(&batch).map_err(|e| with_step(e, step))?;
                agent.soft_update_targets(cfg.tau)?;
                loss_sum += loss;
                obj_sum += objective;
                n_updates += 1;
                log.updates += 1;
            }
            last = Some(out);
            if out.done {
                break;
            }
        }
        if cfg.her {
            for t in her_relabel(
                &episode,
                cfg.her_strategy,
                cfg.k_future,
                env.beta,
                env.epsilon,
                &mut replay_rng,
            ) {
                buffer.push(t)?;
            }
        }
        if let Some(out) = last {
            log.episodes.push(EpisodeLog {
                episode: log.episodes.len(),
                end_step: step,
                length: episode.len(),
                final_wmae: out.wmae,
                success: out.success,
                critic_loss: (n_updates > 0).then(|| loss_sum / n_updates as f64),
                actor_objective: (n_updates > 0).then(|| obj_sum / n_updates as f64),
            });
        }
    }
    log.total_steps = step;
    Ok(log)
}

fn with_step(e: AgentError, step: usize) -> AgentError {
    match e {
        AgentError::NonFinite { what, .. } => AgentError::NonFinite { what, step },
        other => other,
    }
}
