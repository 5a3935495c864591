//! Generational genetic algorithm: tournament selection, uniform crossover,
//! per-gene Gaussian mutation and single-member elitism.
//!
//! The mutation scale shrinks linearly from `mutation_sigma_start` to
//! `mutation_sigma` as the evaluation budget is spent (non-uniform mutation).
//! With a fixed σ = 0.1 the population cannot move far enough in fifty
//! evaluations to be useful on the beamline problems.

use serde::{Deserialize, Serialize};

use super::{clamp_box, population_size, seed_population, Objective, SearchError};
use crate::numerics::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub tournament: usize,
    pub crossover_p: f64,
    pub mutation_p: f64,
    pub mutation_sigma_start: f64,
    pub mutation_sigma: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 6,
            tournament: 6,
            crossover_p: 0.9,
            mutation_p: 0.5,
            mutation_sigma_start: 0.5,
            mutation_sigma: 0.1,
            elitism: 1,
        }
    }
}

fn tournament(fit: &[f64], size: usize, rng: &mut RngStream) -> usize {
    let mut best = rng.below(fit.len());
    for _ in 1..size.max(1) {
        let c = rng.below(fit.len());
        if fit[c] < fit[best] {
            best = c;
        }
    }
    best
}

pub(super) fn run(
    cfg: &GaConfig,
    obj: &mut Objective<'_>,
    initial: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<(), SearchError> {
    let d = obj.dim();
    let n = population_size(cfg.population, obj.remaining());
    let (mut pop, mut fit) = seed_population(n, obj, initial, rng)?;
    let n = pop.len();
    while !obj.finished() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]));
        let elites = cfg.elitism.min(n - 1);
        let mut next_pop: Vec<Vec<f64>> = order[..elites].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = order[..elites].iter().map(|&i| fit[i]).collect();
        while next_pop.len() < n && !obj.finished() {
            let a = tournament(&fit, cfg.tournament, rng);
            let b = tournament(&fit, cfg.tournament, rng);
            let mut child = if rng.bernoulli(cfg.crossover_p) {
                (0..d)
                    .map(|j| {
                        if rng.bernoulli(0.5) {
                            pop[a][j]
                        } else {
                            pop[b][j]
                        }
                    })
                    .collect()
            } else {
                pop[a].clone()
            };
            let sigma = cfg.mutation_sigma
                + (cfg.mutation_sigma_start - cfg.mutation_sigma) * (1.0 - obj.progress());
            for g in child.iter_mut() {
                if rng.bernoulli(cfg.mutation_p) {
                    *g += sigma * rng.normal();
                }
            }
            clamp_box(&mut child);
            next_fit.push(obj.evaluate(&child)?);
            next_pop.push(child);
        }
        if next_pop.len() < n {
            break;
        }
        pop = next_pop;
        fit = next_fit;
    }
    Ok(())
}
