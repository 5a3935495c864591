//! Randomised goal-reaching trials, the coverage / avg(k) metrics, seed
//! aggregation, iteration traces and attention dumps.

mod report;

pub use report::{aggregate, AttentionDump, EvalReport, Summary, TrialRecord, ATTENTION_THRESHOLD};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentBundle, AgentError, Variant};
use crate::baselines::{black_box_search, BaselinesConfig, BeamScore, SearchError, SearchMethod};
use crate::env::{BeamState, DeviceParams, Env, EnvError, ForwardModel};
use crate::numerics::rng::streams;
use crate::numerics::RngStream;
use crate::par::{self, Execution};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{0}")]
    Invalid(String),
}

/// What a policy sees at each step. The hidden goal parameters are only
/// exposed for oracle policies in tests.
pub struct Observation<'a> {
    pub state: BeamState,
    pub goal: BeamState,
    env: &'a Env,
}

impl Observation<'_> {
    pub fn hidden_goal_params(&self) -> &DeviceParams {
        self.env.goal_params()
    }

    pub fn hidden_params(&self) -> &DeviceParams {
        self.env.params()
    }

    pub fn delta_max(&self) -> f64 {
        self.env.delta_max
    }
}

pub trait Policy: Sync {
    fn action(&self, obs: &Observation<'_>) -> Result<Vec<f64>, EvalError>;
}

/// The agent's deterministic actor (no exploration noise).
impl Policy for AgentBundle {
    fn action(&self, obs: &Observation<'_>) -> Result<Vec<f64>, EvalError> {
        Ok(self.actor_forward(&obs.state, &obs.goal)?.0)
    }
}

/// Always outputs the zero adjustment.
pub struct NullPolicy(pub usize);

impl Policy for NullPolicy {
    fn action(&self, _: &Observation<'_>) -> Result<Vec<f64>, EvalError> {
        Ok(vec![0.0; self.0])
    }
}

#[derive(Clone, Copy)]
pub enum Method<'a> {
    Policy {
        name: &'a str,
        policy: &'a dyn Policy,
    },
    Search {
        method: SearchMethod,
        config: &'a BaselinesConfig,
    },
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Policy { name, .. } => name.to_string(),
            Method::Search { method, .. } => method.name().to_string(),
        }
    }
}

/// Environment settings shared by all trials of one evaluation cell.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub model: Arc<ForwardModel>,
    pub beta: f64,
    pub delta_max: f64,
}

impl EnvSpec {
    fn env(&self, epsilon: f64, max_k: usize) -> Env {
        Env::new(
            Arc::clone(&self.model),
            epsilon,
            max_k,
            self.beta,
            self.delta_max,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSettings {
    pub method: String,
    pub system: String,
    pub epsilon: f64,
    pub max_k: usize,
    pub n_trials: usize,
    pub seed: u64,
}

fn trial_rng(seed: u64, trial: usize) -> RngStream {
    RngStream::new(seed, streams::EVAL_TRIAL + trial as u64)
}

/// One trial. Trial `i` of seed `s` draws the same start and goal for every
/// method, so methods are compared on paired problems.
pub fn run_trial(
    method: Method<'_>,
    spec: &EnvSpec,
    epsilon: f64,
    max_k: usize,
    seed: u64,
    trial: usize,
) -> Result<TrialRecord, EvalError> {
    let mut env = spec.env(epsilon, max_k);
    let mut rng = trial_rng(seed, trial);
    env.reset(&mut rng)?;
    let (success, k_used, series) = match method {
        Method::Policy { policy, .. } => roll_policy(policy, &mut env)?,
        Method::Search { method, config } => {
            let score = BeamScore {
                model: &spec.model,
                goal: env.goal(),
                beta: spec.beta,
            };
            let mut search_rng = RngStream::new(seed, streams::SEARCH + trial as u64);
            let r = black_box_search(
                method,
                &score,
                max_k,
                epsilon,
                config,
                Some(env.params().as_slice()),
                &mut search_rng,
            )?;
            match r.k_success {
                Some(k) => (true, k, r.trace),
                None => (false, max_k, r.trace),
            }
        }
    };
    let final_wmae = *series.last().expect("a trial records at least one value");
    Ok(TrialRecord {
        trial_id: trial,
        seed,
        method: method.name(),
        epsilon,
        max_k,
        success,
        k_used,
        final_wmae,
        wmae_series: series,
    })
}

/// Rolls the policy from the current reset. A start already within ε counts
/// as a success charged one iteration.
fn roll_policy(policy: &dyn Policy, env: &mut Env) -> Result<(bool, usize, Vec<f64>), EvalError> {
    let initial = env.current_wmae();
    if initial <= env.epsilon {
        return Ok((true, 1, vec![initial]));
    }
    let mut series = Vec::with_capacity(env.max_k);
    loop {
        let obs = Observation {
            state: env.current(),
            goal: env.goal(),
            env,
        };
        let action = policy.action(&obs)?;
        let out = env.step(&action)?;
        series.push(out.wmae);
        if out.success {
            return Ok((true, env.k(), series));
        }
        if out.done {
            return Ok((false, env.max_k, series));
        }
    }
}

pub fn run_trials(
    method: Method<'_>,
    spec: &EnvSpec,
    n_trials: usize,
    epsilon: f64,
    max_k: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    run_trials_with(
        Execution::default(),
        method,
        spec,
        n_trials,
        epsilon,
        max_k,
        seed,
    )
}

/// [`run_trials`] with an explicit execution mode. Records are assembled in
/// trial order, so both modes produce identical reports.
pub fn run_trials_with(
    exec: Execution,
    method: Method<'_>,
    spec: &EnvSpec,
    n_trials: usize,
    epsilon: f64,
    max_k: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if n_trials == 0 {
        return Err(EvalError::Invalid("n_trials must be at least 1".into()));
    }
    if max_k == 0 {
        return Err(EvalError::Invalid("max_k must be at least 1".into()));
    }
    let results = par::map_with(exec, n_trials, |i| {
        run_trial(method, spec, epsilon, max_k, seed, i).map_err(|e| EvalError::Trial {
            trial: i,
            source: Box::new(e),
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let settings = TrialSettings {
        method: method.name(),
        system: spec.model.system().to_string(),
        epsilon,
        max_k,
        n_trials,
        seed,
    };
    Ok(EvalReport::from_records(records, settings))
}

/// WMAE after each iteration of one episode (trial 0 of `seed`).
pub fn iteration_trace(
    policy: &dyn Policy,
    spec: &EnvSpec,
    epsilon: f64,
    max_k: usize,
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    let mut env = spec.env(epsilon, max_k);
    env.reset(&mut trial_rng(seed, 0))?;
    Ok(roll_policy(policy, &mut env)?.2)
}

/// Per-step attention weights of an attentive agent over one episode.
pub fn attention_dump(
    agent: &AgentBundle,
    spec: &EnvSpec,
    epsilon: f64,
    max_k: usize,
    seed: u64,
) -> Result<AttentionDump, EvalError> {
    if agent.variant() != Variant::Attentive {
        return Err(EvalError::Invalid(
            "attention dumps need an attentive agent; the uniform variant has no attention weights"
                .into(),
        ));
    }
    let mut env = spec.env(epsilon, max_k);
    env.reset(&mut trial_rng(seed, 0))?;
    let mut weights = Vec::new();
    let mut wmae = Vec::new();
    if env.current_wmae() > epsilon {
        loop {
            let (action, w) = agent.actor_forward(&env.current(), &env.goal())?;
            weights.push(w);
            let out = env.step(&action)?;
            wmae.push(out.wmae);
            if out.done {
                break;
            }
        }
    }
    Ok(AttentionDump::new(weights, wmae))
}
