//! Helpers shared by the integration suites and the acceptance run.
#![allow(dead_code)]

pub mod invariants;

use std::sync::Arc;

use beamalign::agent::{train, Actor, AgentBundle, AgentConfig, TrainLog, Variant, ACTOR_INPUT};
use beamalign::env::{BeamState, Env, EnvConfig, ForwardModel, SystemId};
use beamalign::eval::EnvSpec;
use beamalign::numerics::{Activation, DenseNet, Layer, Matrix, RngStream};
use beamalign::replay::Transition;

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps round-off on
/// near-zero derivatives from dominating.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
}

fn weighted_sum(y: &Matrix, c: &Matrix) -> f64 {
    y.as_slice()
        .iter()
        .zip(c.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

/// Central differences of `f` with respect to every element yielded by
/// `params`, compared against `analytic` (same order). Returns the max
/// relative error.
pub fn fd_compare<T>(
    target: &mut T,
    count: usize,
    param: impl Fn(&mut T, usize) -> &mut f64,
    f: impl Fn(&T) -> f64,
    analytic: &[f64],
) -> f64 {
    assert_eq!(count, analytic.len());
    let mut worst = 0.0f64;
    for i in 0..count {
        let orig = *param(target, i);
        *param(target, i) = orig + FD_STEP;
        let up = f(target);
        *param(target, i) = orig - FD_STEP;
        let down = f(target);
        *param(target, i) = orig;
        worst = worst.max(rel_err((up - down) / (2.0 * FD_STEP), analytic[i]));
    }
    worst
}

/// Seeded net with 1–3 layers of width ≤ 64 and a random mix of activations.
pub fn random_net(seed: u64) -> DenseNet {
    let mut rng = RngStream::new(seed, 0xfd);
    let n_layers = 1 + rng.below(3);
    let hidden = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Identity,
    ];
    let output = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Softmax,
        Activation::Relu,
    ];
    let mut dims = vec![1 + rng.below(12)];
    for _ in 0..n_layers {
        dims.push(1 + rng.below(64));
    }
    let layers = (0..n_layers)
        .map(|i| {
            let act = if i + 1 == n_layers {
                output[rng.below(output.len())]
            } else {
                hidden[rng.below(hidden.len())]
            };
            Layer::init(dims[i], dims[i + 1], act, &mut rng)
        })
        .collect();
    DenseNet::new(layers).unwrap()
}

fn net_param(net: &mut DenseNet, i: usize) -> &mut f64 {
    net.params_mut().nth(i).unwrap()
}

/// Max relative error of parameter and input gradients of `L = Σ c ⊙ f(x)`.
pub fn net_gradient_error(seed: u64) -> f64 {
    let mut net = random_net(seed);
    let mut rng = RngStream::new(seed, 0xfe);
    let x = random_matrix(3, net.input_dim(), &mut rng);
    let c = random_matrix(3, net.output_dim(), &mut rng);
    let (_, cache) = net.forward_batch(&x).unwrap();
    let (grads, grad_in) = net.backward(&cache, &c).unwrap();
    let analytic: Vec<f64> = grads.iter().copied().collect();
    let n = net.param_count();
    let loss = |net: &DenseNet| weighted_sum(&net.predict(&x).unwrap(), &c);
    let mut worst = fd_compare(&mut net, n, net_param, loss, &analytic);

    let mut x_var = x.clone();
    let n_in = x_var.as_slice().len();
    worst = worst.max(fd_compare(
        &mut x_var,
        n_in,
        |m, i| &mut m.as_mut_slice()[i],
        |m| weighted_sum(&net.predict(m).unwrap(), &c),
        grad_in.as_slice(),
    ));
    worst
}

fn actor_param(actor: &mut Actor, i: usize) -> &mut f64 {
    let t = actor.trunk.param_count();
    let a = actor.attn_head.param_count();
    if i < t {
        actor.trunk.params_mut().nth(i).unwrap()
    } else if i < t + a {
        actor.attn_head.params_mut().nth(i - t).unwrap()
    } else {
        actor.act_head.params_mut().nth(i - t - a).unwrap()
    }
}

fn actor_param_count(actor: &Actor) -> usize {
    actor.trunk.param_count() + actor.attn_head.param_count() + actor.act_head.param_count()
}

/// Attentive actor at `d` actions, loss `Σ c ⊙ a`.
pub fn actor_gradient_error(d: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 0xa1);
    let mut actor = Actor::new(d, &[64, 64], Variant::Attentive, &mut rng);
    let x = random_matrix(4, ACTOR_INPUT, &mut rng);
    let c = random_matrix(4, d, &mut rng);
    let (_, cache) = actor.forward(&x).unwrap();
    let g = actor.backward(&cache, &c).unwrap();
    let analytic: Vec<f64> = g
        .trunk
        .iter()
        .chain(g.attn.as_ref().unwrap().iter())
        .chain(g.act.iter())
        .copied()
        .collect();
    let n = actor_param_count(&actor);
    fd_compare(
        &mut actor,
        n,
        actor_param,
        |a| weighted_sum(&a.forward(&x).unwrap().0.actions, &c),
        &analytic,
    )
}

pub fn random_transition(d: usize, rng: &mut RngStream) -> Transition {
    let mut state = || {
        BeamState::new(
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
            rng.uniform(0.05, 0.55),
            rng.uniform(0.05, 0.55),
        )
    };
    let (state, next_state, goal) = (state(), state(), state());
    let reward = -beamalign::env::wmae(&next_state, &goal, 2.0);
    Transition {
        state,
        action: (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        reward,
        next_state,
        goal,
        done: false,
    }
}

/// Actor gradient of `J = mean Q(s, μ(s))` through a fixed critic.
pub fn actor_objective_gradient_error(d: usize, seed: u64) -> f64 {
    let mut agent = AgentBundle::new(d, Variant::Attentive, AgentConfig::default(), seed).unwrap();
    let mut rng = RngStream::new(seed, 0xa2);
    let batch: Vec<Transition> = (0..4).map(|_| random_transition(d, &mut rng)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let (_, g) = agent.actor_objective_and_grads(&refs).unwrap();
    let analytic: Vec<f64> = g
        .trunk
        .iter()
        .chain(g.attn.as_ref().unwrap().iter())
        .chain(g.act.iter())
        .copied()
        .collect();
    let n = actor_param_count(&agent.actor);
    fd_compare(
        &mut agent,
        n,
        |a, i| actor_param(&mut a.actor, i),
        |a| a.actor_objective_and_grads(&refs).unwrap().0,
        &analytic,
    )
}

pub fn spec(system: SystemId) -> EnvSpec {
    let cfg = EnvConfig {
        system,
        ..EnvConfig::default()
    };
    EnvSpec {
        model: Arc::new(cfg.build_model().unwrap()),
        beta: cfg.beta,
        delta_max: cfg.delta_max,
    }
}

pub fn train_agent(
    system: SystemId,
    variant: Variant,
    steps: usize,
    seed: u64,
    config: AgentConfig,
) -> (AgentBundle, TrainLog) {
    let env_cfg = EnvConfig {
        system,
        ..EnvConfig::default()
    };
    let model = Arc::new(ForwardModel::synthetic(system, env_cfg.seed));
    let mut env = Env::from_config(model, &env_cfg);
    let mut agent = AgentBundle::new(system.dim(), variant, config, seed).unwrap();
    let log = train(&mut agent, &mut env, steps, seed).unwrap();
    (agent, log)
}
