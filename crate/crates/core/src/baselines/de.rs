//! Differential evolution, rand/1/bin.

use serde::{Deserialize, Serialize};

use super::{clamp_box, population_size, seed_population, Objective, SearchError};
use crate::numerics::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeConfig {
    pub f: f64,
    pub cr: f64,
    /// Preferred population as a multiple of the dimension (capped by budget/2).
    pub population_per_dim: usize,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            f: 0.5,
            cr: 0.9,
            population_per_dim: 2,
        }
    }
}

/// Three distinct indices different from `skip`, drawn with replacement when
/// the population is too small.
fn pick_three(n: usize, skip: usize, rng: &mut RngStream) -> [usize; 3] {
    if n < 4 {
        return [rng.below(n), rng.below(n), rng.below(n)];
    }
    let mut out = [usize::MAX; 3];
    let mut filled = 0;
    while filled < 3 {
        let c = rng.below(n);
        if c != skip && !out[..filled].contains(&c) {
            out[filled] = c;
            filled += 1;
        }
    }
    out
}

pub(super) fn run(
    cfg: &DeConfig,
    obj: &mut Objective<'_>,
    initial: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<(), SearchError> {
    let d = obj.dim();
    let np = population_size(cfg.population_per_dim * d, obj.remaining());
    let (mut pop, mut fit) = seed_population(np, obj, initial, rng)?;
    let np = pop.len();
    while !obj.finished() {
        for i in 0..np {
            if obj.finished() {
                break;
            }
            let [r1, r2, r3] = pick_three(np, i, rng);
            let j_rand = rng.below(d);
            let mut trial = pop[i].clone();
            for j in 0..d {
                if j == j_rand || rng.bernoulli(cfg.cr) {
                    trial[j] = pop[r1][j] + cfg.f * (pop[r2][j] - pop[r3][j]);
                }
            }
            clamp_box(&mut trial);
            let value = obj.evaluate(&trial)?;
            if value <= fit[i] {
                pop[i] = trial;
                fit[i] = value;
            }
        }
    }
    Ok(())
}
