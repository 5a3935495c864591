//! Global-best particle swarm with velocity clamping.

use serde::{Deserialize, Serialize};

use super::{clamp_box, population_size, seed_population, Objective, SearchError};
use crate::numerics::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoConfig {
    pub swarm: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm: 6,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            velocity_clamp: 0.5,
        }
    }
}

pub(super) fn run(
    cfg: &PsoConfig,
    obj: &mut Objective<'_>,
    initial: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<(), SearchError> {
    let d = obj.dim();
    let n = population_size(cfg.swarm, obj.remaining());
    let (mut pos, fit) = seed_population(n, obj, initial, rng)?;
    let n = pos.len();
    let vmax = cfg.velocity_clamp;
    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.uniform(-vmax, vmax)).collect())
        .collect();
    let mut personal = pos.clone();
    let mut personal_fit = fit;
    let mut g = (0..n)
        .min_by(|&a, &b| personal_fit[a].total_cmp(&personal_fit[b]))
        .unwrap_or(0);
    while !obj.finished() {
        for i in 0..n {
            if obj.finished() {
                break;
            }
            for j in 0..d {
                let r1 = rng.uniform(0.0, 1.0);
                let r2 = rng.uniform(0.0, 1.0);
                let v = cfg.inertia * vel[i][j]
                    + cfg.cognitive * r1 * (personal[i][j] - pos[i][j])
                    + cfg.social * r2 * (personal[g][j] - pos[i][j]);
                vel[i][j] = v.clamp(-vmax, vmax);
                pos[i][j] += vel[i][j];
            }
            clamp_box(&mut pos[i]);
            let value = obj.evaluate(&pos[i])?;
            if value < personal_fit[i] {
                personal_fit[i] = value;
                personal[i] = pos[i].clone();
                if value < personal_fit[g] {
                    g = i;
                }
            }
        }
    }
    Ok(())
}
