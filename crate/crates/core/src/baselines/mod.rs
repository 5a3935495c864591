//! Black-box optimizers that search device parameters directly, charged one
//! unit of budget per forward-model evaluation.

mod bo;
mod de;
mod ga;
mod pso;

pub use bo::{BoConfig, GaussianProcess};
pub use de::DeConfig;
pub use ga::GaConfig;
pub use pso::PsoConfig;

use serde::{Deserialize, Serialize};

use crate::env::{wmae, BeamState, DeviceParams, EnvError, ForwardModel};
use crate::numerics::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("unknown search method {0:?}")]
    UnknownMethod(String),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("evaluated point leaves the search box at component {index} ({value})")]
    OutOfBox { index: usize, value: f64 },
    #[error("Gaussian-process Gram matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    De,
    Ga,
    Pso,
    Bo,
}

impl SearchMethod {
    pub const ALL: [SearchMethod; 4] = [
        SearchMethod::De,
        SearchMethod::Ga,
        SearchMethod::Pso,
        SearchMethod::Bo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SearchMethod::De => "de",
            SearchMethod::Ga => "ga",
            SearchMethod::Pso => "pso",
            SearchMethod::Bo => "bo",
        }
    }
}

impl std::str::FromStr for SearchMethod {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "de" => Ok(SearchMethod::De),
            "ga" => Ok(SearchMethod::Ga),
            "pso" => Ok(SearchMethod::Pso),
            "bo" => Ok(SearchMethod::Bo),
            other => Err(SearchError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesConfig {
    pub de: DeConfig,
    pub ga: GaConfig,
    pub pso: PsoConfig,
    pub bo: BoConfig,
}

/// Anything that maps a point of the search box to a non-negative score.
pub trait Score {
    fn dim(&self) -> usize;
    fn score(&self, p: &[f64]) -> Result<f64, SearchError>;
}

/// WMAE of the forward model's output against a fixed goal.
pub struct BeamScore<'a> {
    pub model: &'a ForwardModel,
    pub goal: BeamState,
    pub beta: f64,
}

impl Score for BeamScore<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn score(&self, p: &[f64]) -> Result<f64, SearchError> {
        let s = self.model.forward(&DeviceParams::new(p.to_vec())?)?;
        Ok(wmae(&s, &self.goal, self.beta))
    }
}

/// Budget meter around a score. Every call to [`Objective::evaluate`] costs
/// exactly one unit; the search stops at the budget or at the first value ≤ ε.
pub struct Objective<'a> {
    score: &'a dyn Score,
    budget: usize,
    epsilon: f64,
    eval_count: usize,
    best_value: f64,
    best_p: Vec<f64>,
    k_success: Option<usize>,
    /// Best value seen after each evaluation.
    trace: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(score: &'a dyn Score, budget: usize, epsilon: f64) -> Self {
        Self {
            score,
            budget,
            epsilon,
            eval_count: 0,
            best_value: f64::INFINITY,
            best_p: Vec::new(),
            k_success: None,
            trace: Vec::with_capacity(budget),
        }
    }

    pub fn dim(&self) -> usize {
        self.score.dim()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Fraction of the budget already spent, in [0, 1].
    pub fn progress(&self) -> f64 {
        self.eval_count as f64 / self.budget.max(1) as f64
    }

    pub fn eval_count(&self) -> usize {
        self.eval_count
    }

    pub fn remaining(&self) -> usize {
        if self.k_success.is_some() {
            0
        } else {
            self.budget - self.eval_count
        }
    }

    pub fn finished(&self) -> bool {
        self.remaining() == 0
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }

    pub fn evaluate(&mut self, p: &[f64]) -> Result<f64, SearchError> {
        debug_assert!(!self.finished(), "evaluation past the budget");
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(SearchError::OutOfBox { index, value });
        }
        let value = self.score.score(p)?;
        self.eval_count += 1;
        if value < self.best_value {
            self.best_value = value;
            self.best_p = p.to_vec();
        }
        self.trace.push(self.best_value);
        if value <= self.epsilon && self.k_success.is_none() {
            self.k_success = Some(self.eval_count);
        }
        Ok(value)
    }

    fn into_result(self) -> SearchResult {
        SearchResult {
            best_p: self.best_p,
            best_value: self.best_value,
            k_success: self.k_success,
            evals_used: self.eval_count,
            trace: self.trace,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_p: Vec<f64>,
    pub best_value: f64,
    /// First evaluation index (1-based) with value ≤ ε.
    pub k_success: Option<usize>,
    pub evals_used: usize,
    /// Running best value after each evaluation.
    pub trace: Vec<f64>,
}

/// Runs one search. `initial` (the beamline's current configuration) is
/// evaluated first when given.
pub fn black_box_search(
    method: SearchMethod,
    score: &dyn Score,
    budget: usize,
    epsilon: f64,
    cfg: &BaselinesConfig,
    initial: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<SearchResult, SearchError> {
    if budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let mut obj = Objective::new(score, budget, epsilon);
    match method {
        SearchMethod::De => de::run(&cfg.de, &mut obj, initial, rng)?,
        SearchMethod::Ga => ga::run(&cfg.ga, &mut obj, initial, rng)?,
        SearchMethod::Pso => pso::run(&cfg.pso, &mut obj, initial, rng)?,
        SearchMethod::Bo => bo::run(&cfg.bo, &mut obj, initial, rng)?,
    }
    Ok(obj.into_result())
}

/// Population size rule shared by the evolutionary methods: at most half the
/// budget so that at least two generations fit, at least one member.
pub(crate) fn population_size(preferred: usize, budget: usize) -> usize {
    preferred.min(budget / 2).max(1)
}

pub(crate) fn random_point(d: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

pub(crate) fn clamp_box(p: &mut [f64]) {
    for v in p {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Initial population: `initial` first (if any), then uniform samples.
/// Evaluation stops as soon as the budget runs out; returned scores cover
/// only evaluated members.
pub(crate) fn seed_population(
    n: usize,
    obj: &mut Objective<'_>,
    initial: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), SearchError> {
    let d = obj.dim();
    let mut pop = Vec::with_capacity(n);
    let mut fit = Vec::with_capacity(n);
    for i in 0..n {
        if obj.finished() {
            break;
        }
        let p = match (i, initial) {
            (0, Some(p0)) => p0.to_vec(),
            _ => random_point(d, rng),
        };
        fit.push(obj.evaluate(&p)?);
        pop.push(p);
    }
    Ok((pop, fit))
}
