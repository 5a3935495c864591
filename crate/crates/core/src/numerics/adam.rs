//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, NetGrads};
use super::NumericsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub step_count: u64,
    pub first: Vec<Moments>,
    pub second: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        Self::with_betas(net, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        net: &DenseNet,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps_hat: f64,
    ) -> Self {
        let zeros = || {
            net.layers()
                .iter()
                .map(|l| Moments {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect::<Vec<_>>()
        };
        Self {
            learning_rate,
            beta1,
            beta2,
            eps_hat,
            step_count: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn matches(&self, net: &DenseNet) -> bool {
        self.first.len() == net.layers().len()
            && self.second.len() == net.layers().len()
            && net
                .layers()
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(l, (m, v))| {
                    m.weights.len() == l.weights.len()
                        && v.weights.len() == l.weights.len()
                        && m.bias.len() == l.bias.len()
                        && v.bias.len() == l.bias.len()
                })
    }

    /// One descent step `θ ← θ − lr·m̂/(√v̂ + ε̂)`. Gradients are checked for
    /// finiteness before anything is mutated.
    pub fn step(&mut self, net: &mut DenseNet, grads: &NetGrads) -> Result<(), NumericsError> {
        if !self.matches(net) || grads.layers.len() != net.layers().len() {
            return Err(NumericsError::Shape(
                "optimizer state does not match network".into(),
            ));
        }
        for (i, (l, g)) in net.layers().iter().zip(&grads.layers).enumerate() {
            if g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len() {
                return Err(NumericsError::Shape(format!(
                    "gradient shape mismatch at layer {i}"
                )));
            }
            if !g.weights.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite(format!(
                    "gradient of layer {i} weights"
                )));
            }
            if !g.bias.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite(format!(
                    "gradient of layer {i} bias"
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps_hat);
        for (idx, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[idx];
            let (m, v) = (&mut self.first[idx], &mut self.second[idx]);
            update(
                &mut layer.weights,
                &g.weights,
                &mut m.weights,
                &mut v.weights,
                b1,
                b2,
                c1,
                c2,
                lr,
                eps,
            );
            update(
                &mut layer.bias,
                &g.bias,
                &mut m.bias,
                &mut v.bias,
                b1,
                b2,
                c1,
                c2,
                lr,
                eps,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    lr: f64,
    eps: f64,
) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        if lr != 0.0 {
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
