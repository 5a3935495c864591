use crate::numerics::{Activation, DenseNet, RngStream};

use super::actor::ACTOR_INPUT;

/// `Q([s; s_e; a])`: relu MLP with a single linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub net: DenseNet,
}

impl Critic {
    pub fn new(action_dim: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let mut dims = vec![ACTOR_INPUT + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self {
            net: DenseNet::mlp(&dims, Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.net.input_dim() - ACTOR_INPUT
    }
}
