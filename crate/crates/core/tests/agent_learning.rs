mod common;

use beamalign::agent::{Actor, ActorOptimizer, AgentBundle, AgentConfig, Variant, ACTOR_INPUT};
use beamalign::env::SystemId;
use beamalign::numerics::{Matrix, RngStream};
use beamalign::replay::Transition;

use common::{random_matrix, random_transition, train_agent};

#[test]
fn actor_climbs_a_hard_wired_quadratic_critic() {
    // Q(a) = −‖a − a*‖², maximised at a*; the attentive actor can reach it since ‖a*‖₁ < 1.
    let target = [0.3, -0.2, 0.1, 0.0, 0.05, -0.1];
    let mut rng = RngStream::new(8, 0);
    let mut actor = Actor::new(6, &[64, 64], Variant::Attentive, &mut rng);
    let mut opt = ActorOptimizer::new(&actor, 1e-3);
    let x = random_matrix(8, ACTOR_INPUT, &mut rng);
    for _ in 0..2000 {
        let (out, cache) = actor.forward(&x).unwrap();
        // Gradient of the loss −Q averaged over the batch.
        let mut g = Matrix::zeros(8, 6);
        for i in 0..8 {
            for j in 0..6 {
                g.as_mut_slice()[i * 6 + j] = 2.0 * (out.actions.get(i, j) - target[j]) / 8.0;
            }
        }
        let grads = actor.backward(&cache, &g).unwrap();
        opt.step(&mut actor, &grads).unwrap();
    }
    let a = actor.forward(&x).unwrap().0.actions;
    for i in 0..8 {
        for j in 0..6 {
            assert!(
                (a.get(i, j) - target[j]).abs() < 0.05,
                "row {i} component {j}: {}",
                a.get(i, j)
            );
        }
    }
}

#[test]
fn critic_loss_halves_on_a_frozen_batch() {
    let mut agent = AgentBundle::new(12, Variant::Attentive, AgentConfig::default(), 4).unwrap();
    let mut rng = RngStream::new(4, 1);
    let batch: Vec<Transition> = (0..128).map(|_| random_transition(12, &mut rng)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let losses: Vec<f64> = (0..5000)
        .map(|_| agent.update_critic(&refs).unwrap())
        .collect();
    let start = losses[..100].iter().sum::<f64>() / 100.0;
    let end = losses[4900..].iter().sum::<f64>() / 100.0;
    assert!(end <= 0.5 * start, "loss went from {start} to {end}");
}

#[test]
fn warmup_longer_than_training_leaves_weights_untouched() {
    let config = AgentConfig {
        warmup_steps: 5000,
        ..AgentConfig::default()
    };
    let before = AgentBundle::new(12, Variant::Attentive, config.clone(), 2).unwrap();
    let (after, log) = train_agent(SystemId::S1, Variant::Attentive, 2000, 2, config);
    assert_eq!(log.updates, 0);
    assert_eq!(before, after);
}

#[test]
fn training_is_bit_reproducible() {
    let config = AgentConfig {
        warmup_steps: 300,
        batch_size: 32,
        ..AgentConfig::default()
    };
    let (a, log_a) = train_agent(SystemId::S2, Variant::Attentive, 1500, 6, config.clone());
    let (b, log_b) = train_agent(SystemId::S2, Variant::Attentive, 1500, 6, config);
    assert_eq!(log_a, log_b);
    assert_eq!(a, b);
    assert_eq!(log_a.total_steps, 1500);
    assert!(log_a.episodes.iter().all(|e| (1..=50).contains(&e.length)));
    assert!(log_a.updates > 0);
}

#[test]
fn s1_thirty_thousand_steps_reach_ninety_percent_training_success() {
    // Training episodes judged at ε = 0.1 with the 50-step horizon.
    let env = beamalign::env::EnvConfig {
        system: SystemId::S1,
        epsilon: 0.1,
        ..Default::default()
    };
    let model = std::sync::Arc::new(env.build_model().unwrap());
    let mut e = beamalign::env::Env::from_config(model, &env);
    let mut agent = AgentBundle::new(12, Variant::Attentive, AgentConfig::default(), 1).unwrap();
    let log = beamalign::agent::train(&mut agent, &mut e, 30_000, 1).unwrap();
    let rate = log.success_rate_last_episodes(100);
    assert!(rate >= 0.9, "final-100-episode success rate {rate}");
}
