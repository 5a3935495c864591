//! Goal-conditioned actor with an optional softmax gate over action components.

use serde::{Deserialize, Serialize};

use crate::numerics::{
    Activation, DenseNet, ForwardCache, Matrix, NetGrads, NumericsError, OptimizerState, RngStream,
};

/// Width of the actor input `[s; s_e]`.
pub const ACTOR_INPUT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `a = softmax(W₃h + b₃) ⊙ tanh(W₄h + b₄)`
    Attentive,
    /// `a = tanh(W₄h + b₄) / d`; the attention head is never evaluated.
    Uniform,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attentive" => Ok(Variant::Attentive),
            "uniform" => Ok(Variant::Uniform),
            other => Err(format!(
                "unknown variant {other:?}, expected attentive or uniform"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Attentive => "attentive",
            Variant::Uniform => "uniform",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    /// `[s; s_e] → h`, two relu layers.
    pub trunk: DenseNet,
    /// `h → a_w`, softmax.
    pub attn_head: DenseNet,
    /// `h → tanh(·)`.
    pub act_head: DenseNet,
    pub variant: Variant,
}

pub struct ActorCache {
    trunk: ForwardCache,
    attn: Option<ForwardCache>,
    act: ForwardCache,
    weights: Matrix,
    squashed: Matrix,
}

#[derive(Clone, Debug)]
pub struct ActorOutput {
    pub actions: Matrix,
    /// Attention weights; the constant `1/d` vector for the uniform variant.
    pub weights: Matrix,
}

#[derive(Clone, Debug)]
pub struct ActorGrads {
    pub trunk: NetGrads,
    pub attn: Option<NetGrads>,
    pub act: NetGrads,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorOptimizer {
    pub trunk: OptimizerState,
    pub attn: OptimizerState,
    pub act: OptimizerState,
}

impl ActorOptimizer {
    pub fn new(actor: &Actor, lr: f64) -> Self {
        Self {
            trunk: OptimizerState::new(&actor.trunk, lr),
            attn: OptimizerState::new(&actor.attn_head, lr),
            act: OptimizerState::new(&actor.act_head, lr),
        }
    }

    pub fn step(&mut self, actor: &mut Actor, grads: &ActorGrads) -> Result<(), NumericsError> {
        self.trunk.step(&mut actor.trunk, &grads.trunk)?;
        if let Some(g) = &grads.attn {
            self.attn.step(&mut actor.attn_head, g)?;
        }
        self.act.step(&mut actor.act_head, &grads.act)
    }
}

impl Actor {
    pub fn new(action_dim: usize, hidden: &[usize], variant: Variant, rng: &mut RngStream) -> Self {
        assert!(!hidden.is_empty(), "actor needs at least one hidden layer");
        let mut dims = vec![ACTOR_INPUT];
        dims.extend_from_slice(hidden);
        let trunk = DenseNet::mlp(&dims, Activation::Relu, Activation::Relu, rng);
        let h = *hidden.last().unwrap();
        let attn_head = DenseNet::mlp(
            &[h, action_dim],
            Activation::Identity,
            Activation::Softmax,
            rng,
        );
        let act_head = DenseNet::mlp(
            &[h, action_dim],
            Activation::Identity,
            Activation::Tanh,
            rng,
        );
        Self {
            trunk,
            attn_head,
            act_head,
            variant,
        }
    }

    pub fn from_parts(
        trunk: DenseNet,
        attn_head: DenseNet,
        act_head: DenseNet,
        variant: Variant,
    ) -> Result<Self, NumericsError> {
        let d = act_head.output_dim();
        if trunk.input_dim() != ACTOR_INPUT
            || attn_head.input_dim() != trunk.output_dim()
            || act_head.input_dim() != trunk.output_dim()
            || attn_head.output_dim() != d
        {
            return Err(NumericsError::Shape("actor parts do not chain".into()));
        }
        Ok(Self {
            trunk,
            attn_head,
            act_head,
            variant,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.act_head.output_dim()
    }

    pub fn same_shape(&self, other: &Actor) -> bool {
        self.variant == other.variant
            && self.trunk.same_shape(&other.trunk)
            && self.attn_head.same_shape(&other.attn_head)
            && self.act_head.same_shape(&other.act_head)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(ActorOutput, ActorCache), NumericsError> {
        let (h, trunk) = self.trunk.forward_batch(x)?;
        let (squashed, act) = self.act_head.forward_batch(&h)?;
        let d = self.action_dim();
        let n = x.rows();
        let (weights, attn) = match self.variant {
            Variant::Attentive => {
                let (w, cache) = self.attn_head.forward_batch(&h)?;
                (w, Some(cache))
            }
            Variant::Uniform => (Matrix::from_vec(n, d, vec![1.0 / d as f64; n * d]), None),
        };
        let mut actions = squashed.clone();
        for (a, w) in actions.as_mut_slice().iter_mut().zip(weights.as_slice()) {
            *a *= w;
        }
        let out = ActorOutput {
            actions,
            weights: weights.clone(),
        };
        Ok((
            out,
            ActorCache {
                trunk,
                attn,
                act,
                weights,
                squashed,
            },
        ))
    }

    pub fn act(
        &self,
        state: &[f64; 4],
        goal: &[f64; 4],
    ) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
        let mut x = [0.0; ACTOR_INPUT];
        x[..4].copy_from_slice(state);
        x[4..].copy_from_slice(goal);
        let (out, _) = self.forward(&Matrix::from_row(&x))?;
        Ok((out.actions.into_vec(), out.weights.into_vec()))
    }

    /// Parameter gradients (summed over the batch) for upstream `dL/da`.
    pub fn backward(
        &self,
        cache: &ActorCache,
        grad_actions: &Matrix,
    ) -> Result<ActorGrads, NumericsError> {
        let n = grad_actions.rows();
        let d = self.action_dim();
        if grad_actions.cols() != d || cache.squashed.rows() != n {
            return Err(NumericsError::Shape(
                "action gradient does not match actor cache".into(),
            ));
        }
        // dL/dtanh = dL/da ⊙ a_w ; dL/da_w = dL/da ⊙ tanh
        let mut grad_t = grad_actions.clone();
        for (g, w) in grad_t
            .as_mut_slice()
            .iter_mut()
            .zip(cache.weights.as_slice())
        {
            *g *= w;
        }
        let (act_grads, mut grad_h) = self.act_head.backward(&cache.act, &grad_t)?;
        let attn_grads = match (&self.variant, &cache.attn) {
            (Variant::Attentive, Some(attn_cache)) => {
                let mut grad_w = grad_actions.clone();
                for (g, t) in grad_w
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.squashed.as_slice())
                {
                    *g *= t;
                }
                let (g, grad_h_attn) = self.attn_head.backward(attn_cache, &grad_w)?;
                for (a, b) in grad_h.as_mut_slice().iter_mut().zip(grad_h_attn.as_slice()) {
                    *a += b;
                }
                Some(g)
            }
            _ => None,
        };
        let (trunk_grads, _) = self.trunk.backward(&cache.trunk, &grad_h)?;
        Ok(ActorGrads {
            trunk: trunk_grads,
            attn: attn_grads,
            act: act_grads,
        })
    }

    pub fn soft_update_from(&mut self, online: &Actor, tau: f64) -> Result<(), NumericsError> {
        self.trunk.soft_update_from(&online.trunk, tau)?;
        self.attn_head.soft_update_from(&online.attn_head, tau)?;
        self.act_head.soft_update_from(&online.act_head, tau)
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.trunk
            .params()
            .chain(self.attn_head.params())
            .chain(self.act_head.params())
    }
}
