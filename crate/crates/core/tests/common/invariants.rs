//! The invariant suite as plain checks returning `Err(reason)`, so the
//! acceptance run can report them alongside the per-check tests.

use std::cell::Cell;
use std::sync::Arc;

use beamalign::agent::{Actor, Variant, ACTOR_INPUT};
use beamalign::baselines::{black_box_search, BaselinesConfig, Score, SearchError, SearchMethod};
use beamalign::env::{wmae, BeamState, DeviceParams, Env, ForwardModel, SystemId};
use beamalign::numerics::{softmax_in_place, Activation, DenseNet, Layer, RngStream};
use beamalign::replay::{her_relabel, HerStrategy, ReplayBuffer, Transition};

use super::random_matrix;

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn softmax_normalization() -> Check {
    let mut rng = RngStream::new(1, 0x50);
    for _ in 0..200 {
        let mut row: Vec<f64> = (0..30).map(|_| rng.uniform(-50.0, 50.0)).collect();
        softmax_in_place(&mut row);
        let sum: f64 = row.iter().sum();
        ensure(
            (sum - 1.0).abs() <= 1e-9 && row.iter().all(|&w| w > 0.0),
            || format!("softmax row sums to {sum}"),
        )?;
    }
    for d in [6, 12, 30] {
        let actor = Actor::new(d, &[64, 64], Variant::Attentive, &mut rng);
        let x = random_matrix(50, ACTOR_INPUT, &mut rng);
        let out = actor.forward(&x).map_err(|e| e.to_string())?.0;
        for i in 0..50 {
            let w = out.weights.row(i);
            let sum: f64 = w.iter().sum();
            ensure(
                (sum - 1.0).abs() <= 1e-9 && w.iter().all(|&v| v > 0.0),
                || format!("attention row sums to {sum}"),
            )?;
        }
    }
    Ok(())
}

pub fn reward_non_positive() -> Check {
    let model = Arc::new(ForwardModel::synthetic(SystemId::S1, 7));
    let mut env = Env::new(model, 0.05, 50, 2.0, 1.0);
    let mut rng = RngStream::new(2, 0x51);
    for _ in 0..20 {
        env.reset(&mut rng).map_err(|e| e.to_string())?;
        while !env.is_done() {
            let a: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let out = env.step(&a).map_err(|e| e.to_string())?;
            ensure(out.reward <= 0.0, || {
                format!("positive reward {}", out.reward)
            })?;
            ensure((out.reward + out.wmae).abs() < 1e-15, || {
                "reward is not -wmae".into()
            })?;
        }
    }
    Ok(())
}

pub fn wmae_hand_cases() -> Check {
    let cases = [
        ([1.0, 1.0, 0.3, 0.3], [0.0, 0.0, 0.3, 0.3], 2.0, 1.0),
        ([0.0, 0.0, 0.3, 0.3], [0.0, 0.0, 0.3, 0.3], 2.0, 0.0),
        ([0.0, 0.0, 0.4, 0.2], [0.0, 0.0, 0.3, 0.3], 2.0, 0.2),
        ([0.5, -0.5, 0.1, 0.1], [0.0, 0.0, 0.2, 0.2], 1.0, 0.6),
    ];
    for (s, g, beta, want) in cases {
        let got = wmae(&BeamState(s), &BeamState(g), beta);
        ensure((got - want).abs() < 1e-12, || {
            format!("wmae({s:?}, {g:?}, {beta}) = {got}, want {want}")
        })?;
    }
    Ok(())
}

pub fn soft_update_convexity() -> Check {
    let layer = |v: f64| {
        let mut l = Layer::zeros(2, 2, Activation::Identity);
        l.weights.iter_mut().for_each(|w| *w = v);
        l.bias.iter_mut().for_each(|b| *b = v);
        DenseNet::new(vec![l]).unwrap()
    };
    let online = layer(1.0);
    for (tau, want) in [(0.0, 0.0), (0.005, 0.005), (1.0, 1.0)] {
        let mut target = layer(0.0);
        target
            .soft_update_from(&online, tau)
            .map_err(|e| e.to_string())?;
        ensure(target.params().all(|&p| p == want), || {
            format!("tau={tau}: expected every parameter to be {want}")
        })?;
    }
    let mut rng = RngStream::new(3, 0x52);
    let a = DenseNet::mlp(&[5, 8, 3], Activation::Relu, Activation::Tanh, &mut rng);
    let b = DenseNet::mlp(&[5, 8, 3], Activation::Relu, Activation::Tanh, &mut rng);
    let mut t = b.clone();
    t.soft_update_from(&a, 0.3).map_err(|e| e.to_string())?;
    for ((x, y), z) in a.params().zip(b.params()).zip(t.params()) {
        ensure((z - (0.3 * x + 0.7 * y)).abs() < 1e-15, || {
            "soft update is not the convex combination".into()
        })?;
    }
    let mut exact = b.clone();
    exact.soft_update_from(&a, 1.0).map_err(|e| e.to_string())?;
    ensure(exact == a, || "tau=1 must copy bit-identically".into())
}

pub fn her_reward_consistency() -> Check {
    let mut rng = RngStream::new(4, 0x53);
    let mut state = || {
        BeamState::new(
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
            rng.uniform(0.05, 0.55),
            rng.uniform(0.05, 0.55),
        )
    };
    let goal = state();
    let states: Vec<BeamState> = (0..21).map(|_| state()).collect();
    let episode: Vec<Transition> = states
        .windows(2)
        .map(|w| Transition {
            state: w[0],
            action: vec![0.0; 12],
            reward: -wmae(&w[1], &goal, 2.0),
            next_state: w[1],
            goal,
            done: false,
        })
        .collect();
    let mut rng = RngStream::new(5, 0x54);
    for strategy in [HerStrategy::Final, HerStrategy::Future] {
        let relabelled = her_relabel(&episode, strategy, 4, 2.0, 0.05, &mut rng);
        let expected = if strategy == HerStrategy::Final {
            episode.len()
        } else {
            4 * episode.len()
        };
        ensure(relabelled.len() == expected, || {
            format!("{strategy:?}: {} relabels", relabelled.len())
        })?;
        let mut buffer = ReplayBuffer::new(1000, 2.0);
        for t in relabelled {
            let r = -wmae(&t.next_state, &t.goal, 2.0);
            ensure((t.reward - r).abs() <= 1e-9, || {
                format!("relabelled reward {} vs {r}", t.reward)
            })?;
            ensure(t.done == (-t.reward <= 0.05), || {
                "done flag disagrees with the new goal".into()
            })?;
            buffer.push(t).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

pub fn fifo_eviction() -> Check {
    let mut buffer = ReplayBuffer::new(3, 2.0);
    let goal = BeamState::new(0.0, 0.0, 0.3, 0.3);
    for i in 0..5 {
        let next = BeamState::new(i as f64 * 0.1, 0.0, 0.3, 0.3);
        buffer
            .push(Transition {
                state: goal,
                action: vec![i as f64],
                reward: -wmae(&next, &goal, 2.0),
                next_state: next,
                goal,
                done: false,
            })
            .map_err(|e| e.to_string())?;
    }
    let kept: Vec<f64> = buffer.iter().map(|t| t.action[0]).collect();
    ensure(kept == vec![2.0, 3.0, 4.0], || {
        format!("buffer holds {kept:?} after 5 pushes into capacity 3")
    })
}

/// Counts every call so the budget can be checked from the outside.
struct Counting<'a> {
    model: &'a ForwardModel,
    goal: BeamState,
    calls: Cell<usize>,
}

impl Score for Counting<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn score(&self, p: &[f64]) -> Result<f64, SearchError> {
        self.calls.set(self.calls.get() + 1);
        let s = self.model.forward(&DeviceParams::new(p.to_vec())?)?;
        Ok(wmae(&s, &self.goal, 2.0))
    }
}

pub fn baseline_budget_exactness() -> Check {
    let cfg = BaselinesConfig::default();
    for system in [SystemId::S1, SystemId::S2] {
        let model = ForwardModel::synthetic(system, 7);
        for method in SearchMethod::ALL {
            for budget in [1, 2, 7, 10, 50] {
                let counting = Counting {
                    model: &model,
                    goal: BeamState::new(0.9, -0.9, 0.06, 0.54),
                    calls: Cell::new(0),
                };
                let mut rng = RngStream::new(budget as u64, 0x55);
                // ε = 0 is unreachable here, so the whole budget is spent.
                let r = black_box_search(method, &counting, budget, 0.0, &cfg, None, &mut rng)
                    .map_err(|e| e.to_string())?;
                ensure(
                    r.evals_used == budget
                        && counting.calls.get() == budget
                        && r.trace.len() == budget,
                    || {
                        format!(
                            "{} on {system} with budget {budget}: {} evaluations",
                            method.name(),
                            counting.calls.get()
                        )
                    },
                )?;
            }
        }
    }
    Ok(())
}

pub fn clip_box_feasibility() -> Check {
    let model = Arc::new(ForwardModel::synthetic(SystemId::S2, 7));
    let mut env = Env::new(model, 0.0, 50, 2.0, 1.0);
    let mut rng = RngStream::new(6, 0x56);
    for _ in 0..10 {
        env.reset(&mut rng).map_err(|e| e.to_string())?;
        while !env.is_done() {
            let a: Vec<f64> = (0..30).map(|_| rng.uniform(-5.0, 5.0)).collect();
            env.step(&a).map_err(|e| e.to_string())?;
            ensure(
                env.params()
                    .as_slice()
                    .iter()
                    .all(|v| (-1.0..=1.0).contains(v)),
                || "parameters left [-1, 1]".into(),
            )?;
            ensure(env.current().is_valid(), || "invalid beam state".into())?;
        }
    }
    Ok(())
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("softmax normalization", softmax_normalization()),
        ("reward non-positivity", reward_non_positive()),
        ("WMAE hand cases", wmae_hand_cases()),
        ("soft-update convexity", soft_update_convexity()),
        ("HER reward recompute", her_reward_consistency()),
        ("FIFO eviction", fifo_eviction()),
        ("baseline budget exactness", baseline_budget_exactness()),
        ("clip/box feasibility", clip_box_feasibility()),
    ]
}
