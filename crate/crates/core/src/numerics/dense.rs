//! Fixed-topology dense networks with cached reverse-mode gradients.

use serde::{Deserialize, Serialize};

use super::matrix::{matmul_g_w, matmul_gt_x_acc, matmul_xwt, Matrix};
use super::rng::RngStream;
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(row),
        }
    }

    /// Maps `dL/dy` to `dL/dz` for one row, given pre-activation `z` and output `y`.
    fn backprop_row(self, z: &[f64], y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => {
                for (g, &zi) in grad.iter_mut().zip(z) {
                    if zi <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, &yi) in grad.iter_mut().zip(y) {
                    *g *= 1.0 - yi * yi;
                }
            }
            Activation::Sigmoid => {
                for (g, &yi) in grad.iter_mut().zip(y) {
                    *g *= yi * (1.0 - yi);
                }
            }
            Activation::Identity => {}
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(y).map(|(g, yi)| g * yi).sum();
                for (g, &yi) in grad.iter_mut().zip(y) {
                    *g = yi * (*g - dot);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// One affine map followed by an activation. Weights are `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in ±1/√fan_in for both weights and biases.
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let bias = (0..outputs).map(|_| rng.uniform(-bound, bound)).collect();
        Self {
            inputs,
            outputs,
            activation,
            weights,
            bias,
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn validate(&self, index: usize) -> Result<(), NumericsError> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(NumericsError::Shape(format!(
                "layer {index}: expected {}x{} weights and {} biases, found {} and {}",
                self.outputs,
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite(format!(
                "layer {index} parameters"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer inputs, pre-activations and outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("cache of an empty network")
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients with the same shapes as the network they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g *= factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::Shape(
                "network needs at least one layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate(i)?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(NumericsError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// MLP with the given widths: `dims = [in, h1, ..., out]`. Hidden layers use
    /// `hidden`, the final layer uses `output`.
    pub fn mlp(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs && a.activation == b.activation
            })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NumericsError> {
        let (y, cache) = self.forward_batch(&Matrix::from_row(x))?;
        Ok((y.into_vec(), cache))
    }

    /// Forward pass over a `batch × in` matrix.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, ForwardCache), NumericsError> {
        self.check_input(x)?;
        let n = x.rows();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut current = x.clone();
        for layer in &self.layers {
            let z = affine(layer, &current, n);
            let mut y = z.clone();
            for i in 0..n {
                layer.activation.apply_row(y.row_mut(i));
            }
            cache.inputs.push(current);
            cache.pre.push(z);
            current = y.clone();
            cache.post.push(y);
        }
        Ok((current, cache))
    }

    /// Forward pass without retaining a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NumericsError> {
        self.check_input(x)?;
        let n = x.rows();
        let mut current = x.clone();
        for layer in &self.layers {
            let mut z = affine(layer, &current, n);
            for i in 0..n {
                layer.activation.apply_row(z.row_mut(i));
            }
            current = z;
        }
        Ok(current)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        Ok(self.predict(&Matrix::from_row(x))?.into_vec())
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NumericsError> {
        if x.cols() != self.input_dim() {
            return Err(NumericsError::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        if !x.all_finite() {
            return Err(NumericsError::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<(), NumericsError> {
        let consistent = cache.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&cache.inputs)
                .all(|(l, x)| x.cols() == l.inputs)
            && self
                .layers
                .iter()
                .zip(&cache.post)
                .all(|(l, y)| y.cols() == l.outputs);
        if !consistent {
            return Err(NumericsError::Shape(
                "forward cache does not belong to this network".into(),
            ));
        }
        if grad_out.rows() != cache.batch() || grad_out.cols() != self.output_dim() {
            return Err(NumericsError::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                cache.batch(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Reverse pass. Parameter gradients are summed over the batch; scale
    /// `grad_out` to get a mean.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
    ) -> Result<(NetGrads, Matrix), NumericsError> {
        let mut grads = NetGrads::zeros_like(self);
        let grad_in = self.backward_impl(cache, grad_out, Some(&mut grads))?;
        Ok((grads, grad_in))
    }

    /// Reverse pass that only propagates to the input (parameters held fixed).
    pub fn backward_input(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
    ) -> Result<Matrix, NumericsError> {
        self.backward_impl(cache, grad_out, None)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
        mut grads: Option<&mut NetGrads>,
    ) -> Result<Matrix, NumericsError> {
        self.check_cache(cache, grad_out)?;
        let n = cache.batch();
        let mut delta = grad_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[idx];
            let y = &cache.post[idx];
            for i in 0..n {
                layer
                    .activation
                    .backprop_row(z.row(i), y.row(i), delta.row_mut(i));
            }
            if let Some(g) = grads.as_deref_mut() {
                let lg = &mut g.layers[idx];
                matmul_gt_x_acc(
                    delta.as_slice(),
                    cache.inputs[idx].as_slice(),
                    n,
                    layer.outputs,
                    layer.inputs,
                    &mut lg.weights,
                );
                for i in 0..n {
                    for (b, d) in lg.bias.iter_mut().zip(delta.row(i)) {
                        *b += d;
                    }
                }
            }
            let mut prev = Matrix::zeros(n, layer.inputs);
            matmul_g_w(
                delta.as_slice(),
                &layer.weights,
                n,
                layer.outputs,
                layer.inputs,
                prev.as_mut_slice(),
            );
            delta = prev;
        }
        Ok(delta)
    }

    /// θ ← τ·θ_online + (1−τ)·θ.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<(), NumericsError> {
        if !self.same_shape(online) {
            return Err(NumericsError::Shape(
                "soft update between networks of different shape".into(),
            ));
        }
        if tau == 1.0 {
            self.layers.clone_from(&online.layers);
            return Ok(());
        }
        if tau == 0.0 {
            return Ok(());
        }
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }
}

fn affine(layer: &Layer, x: &Matrix, n: usize) -> Matrix {
    let mut z = Matrix::zeros(n, layer.outputs);
    matmul_xwt(
        x.as_slice(),
        &layer.weights,
        n,
        layer.inputs,
        layer.outputs,
        z.as_mut_slice(),
    );
    for i in 0..n {
        for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}
