//! Bayesian optimisation: a zero-mean Gaussian process on centred
//! observations with a squared-exponential kernel, and expected improvement
//! maximised over random candidates followed by a short local refinement.

use serde::{Deserialize, Serialize};

use super::{random_point, seed_population, Objective, SearchError};
use crate::numerics::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise: f64,
    pub initial_design: usize,
    pub candidates: usize,
    pub refine_steps: usize,
    pub refine_sigma: f64,
    /// Fit the GP to mean-centred observations instead of a zero prior mean.
    pub centred_prior: bool,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.5,
            signal_variance: 1.0,
            noise: 1e-6,
            initial_design: 5,
            candidates: 256,
            refine_steps: 32,
            refine_sigma: 0.1,
            centred_prior: false,
        }
    }
}

const MAX_JITTER_TRIES: usize = 6;

/// Lower-triangular Cholesky factor of a row-major `n × n` SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn solve_upper_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

pub struct GaussianProcess {
    xs: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    mean: f64,
    length_scale: f64,
    signal_variance: f64,
}

impl GaussianProcess {
    /// `centred` subtracts the sample mean of `ys` before fitting; otherwise
    /// the prior mean is zero.
    pub fn fit(
        xs: &[Vec<f64>],
        ys: &[f64],
        length_scale: f64,
        signal_variance: f64,
        noise: f64,
        centred: bool,
    ) -> Result<Self, SearchError> {
        let n = xs.len();
        let mean = if centred {
            ys.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let kernel = |a: &[f64], b: &[f64]| se_kernel(a, b, length_scale, signal_variance);
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel(&xs[i], &xs[j]);
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let mut jitter = noise;
        let mut chol = None;
        for _ in 0..MAX_JITTER_TRIES {
            let mut g = gram.clone();
            for i in 0..n {
                g[i * n + i] += jitter;
            }
            if let Some(l) = cholesky(&g, n) {
                chol = Some(l);
                break;
            }
            jitter = (jitter * 10.0).max(1e-10);
        }
        let chol = chol.ok_or(SearchError::NotPositiveDefinite { jitter })?;
        let mut alpha: Vec<f64> = ys.iter().map(|y| y - mean).collect();
        solve_lower(&chol, n, &mut alpha);
        solve_upper_t(&chol, n, &mut alpha);
        Ok(Self {
            xs: xs.to_vec(),
            chol,
            alpha,
            mean,
            length_scale,
            signal_variance,
        })
    }

    /// Posterior mean and standard deviation at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let mut k: Vec<f64> = self
            .xs
            .iter()
            .map(|xi| se_kernel(xi, x, self.length_scale, self.signal_variance))
            .collect();
        let mu = self.mean + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        solve_lower(&self.chol, n, &mut k);
        let var = (self.signal_variance - k.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        (mu, var.sqrt())
    }
}

fn se_kernel(a: &[f64], b: &[f64], length_scale: f64, signal_variance: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    signal_variance * (-0.5 * d2 / (length_scale * length_scale)).exp()
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via the complementary error function (Numerical Recipes erfc).
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Expected improvement for minimisation.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 1e-12 {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sigma;
    (best - mu) * normal_cdf(z) + sigma * normal_pdf(z)
}

pub(super) fn run(
    cfg: &BoConfig,
    obj: &mut Objective<'_>,
    initial: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<(), SearchError> {
    let d = obj.dim();
    let (mut xs, mut ys) = seed_population(cfg.initial_design.max(1), obj, initial, rng)?;
    while !obj.finished() {
        let gp = GaussianProcess::fit(
            &xs,
            &ys,
            cfg.length_scale,
            cfg.signal_variance,
            cfg.noise,
            cfg.centred_prior,
        )?;
        let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let ei = |x: &[f64]| {
            let (mu, sd) = gp.predict(x);
            expected_improvement(mu, sd, best)
        };
        let mut incumbent = random_point(d, rng);
        let mut incumbent_ei = ei(&incumbent);
        for _ in 1..cfg.candidates {
            let c = random_point(d, rng);
            let v = ei(&c);
            if v > incumbent_ei {
                incumbent = c;
                incumbent_ei = v;
            }
        }
        let mut sigma = cfg.refine_sigma;
        for _ in 0..cfg.refine_steps {
            let c: Vec<f64> = incumbent
                .iter()
                .map(|v| (v + sigma * rng.normal()).clamp(-1.0, 1.0))
                .collect();
            let v = ei(&c);
            if v > incumbent_ei {
                incumbent = c;
                incumbent_ei = v;
            } else {
                sigma *= 0.9;
            }
        }
        ys.push(obj.evaluate(&incumbent)?);
        xs.push(incumbent);
    }
    Ok(())
}
