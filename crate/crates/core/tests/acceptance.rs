//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Takes 20–30 minutes on one core.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use beamalign::agent::{AgentBundle, AgentConfig, Variant};
use beamalign::baselines::{BaselinesConfig, SearchMethod};
use beamalign::cli::{cmd_eval, cmd_train, Overrides, RunConfig};
use beamalign::env::SystemId;
use beamalign::eval::{aggregate, attention_dump, iteration_trace, run_trials, Method, Summary};

use common::*;

const S1_STEPS: usize = 50_000;
const S2_STEPS: usize = 150_000;
const HER_STEPS: usize = 50_000;
const TRIALS: usize = 500;
const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn summary(
    agent: &AgentBundle,
    system: SystemId,
    epsilon: f64,
    max_k: usize,
    seeds: &[u64],
) -> Summary {
    let spec = spec(system);
    let reports: Vec<_> = seeds
        .iter()
        .map(|&s| {
            run_trials(
                Method::Policy {
                    name: "agent",
                    policy: agent,
                },
                &spec,
                TRIALS,
                epsilon,
                max_k,
                s,
            )
            .unwrap()
        })
        .collect();
    aggregate(&reports).unwrap()
}

fn gradients() -> Outcome {
    let net = (0..20).map(net_gradient_error).fold(0.0, f64::max);
    let actor = actor_gradient_error(6, 3);
    let objective = actor_objective_gradient_error(6, 5);
    outcome(
        net < 1e-4 && actor < 1e-4 && objective < 1e-3,
        format!("max rel err nets {net:.2e}, actor {actor:.2e}, actor objective {objective:.2e}"),
    )
}

fn invariant_suite() -> Outcome {
    let failed: Vec<String> = invariants::all()
        .into_iter()
        .filter_map(|(name, r)| r.err().map(|e| format!("{name}: {e}")))
        .collect();
    let n = invariants::all().len();
    if failed.is_empty() {
        outcome(true, format!("{n} invariant checks hold"))
    } else {
        outcome(false, failed.join("; "))
    }
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(4),
            steps: Some(5_000),
            out: Some(dir.path().to_path_buf()),
            ..Overrides::default()
        });
        cfg.eval.n_trials = 100;
        cmd_train(&cfg).unwrap();
        cmd_eval(&cfg, None).unwrap();
    }
    let a = files_under(dirs[0].path());
    let b = files_under(dirs[1].path());
    let same = a == b;
    outcome(
        same && a.len() > 2,
        format!("{} output files, byte-identical: {same}", a.len()),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n, name, o: Outcome| {
        println!(
            "{} criterion {n} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };

    let t = Instant::now();
    record(1, "gradient fidelity", gradients());
    eprintln!("  [{:.0?}]", t.elapsed());
    record(2, "invariants", invariant_suite());
    record(3, "determinism", determinism());
    eprintln!("  [{:.0?}]", t.elapsed());

    // Criterion 4: three independently trained S1 agents.
    let s1: Vec<AgentBundle> = SEEDS
        .iter()
        .map(|&s| {
            train_agent(
                SystemId::S1,
                Variant::Attentive,
                S1_STEPS,
                s,
                AgentConfig::default(),
            )
            .0
        })
        .collect();
    let per_seed: Vec<_> = s1
        .iter()
        .zip(SEEDS)
        .map(|(a, s)| {
            run_trials(
                Method::Policy {
                    name: "ours",
                    policy: a,
                },
                &spec(SystemId::S1),
                TRIALS,
                0.1,
                10,
                s,
            )
            .unwrap()
        })
        .collect();
    let c4 = aggregate(&per_seed).unwrap();
    record(
        4,
        "S1 coverage",
        outcome(
            c4.coverage_mean >= 0.9 && c4.avg_k_mean <= 5.0,
            format!(
                "coverage {:.3} ± {:.3} (≥ 0.90), avg_k {:.2} (≤ 5) at ε=0.1, max_k=10, {S1_STEPS} steps",
                c4.coverage_mean, c4.coverage_std, c4.avg_k_mean
            ),
        ),
    );
    eprintln!("  [{:.0?}]", t.elapsed());

    // Criterion 5: attention ablation on both systems, same budget and seeds per system.
    let s1_uniform = train_agent(
        SystemId::S1,
        Variant::Uniform,
        S1_STEPS,
        1,
        AgentConfig::default(),
    )
    .0;
    let s2_attn = train_agent(
        SystemId::S2,
        Variant::Attentive,
        S2_STEPS,
        1,
        AgentConfig::default(),
    )
    .0;
    let s2_uniform = train_agent(
        SystemId::S2,
        Variant::Uniform,
        S2_STEPS,
        1,
        AgentConfig::default(),
    )
    .0;
    let gap = |a: &AgentBundle, u: &AgentBundle, sys| {
        let ca = summary(a, sys, 0.05, 10, &SEEDS).coverage_mean;
        let cu = summary(u, sys, 0.05, 10, &SEEDS).coverage_mean;
        (ca, cu, ca - cu)
    };
    let (a1, u1, g1) = gap(&s1[0], &s1_uniform, SystemId::S1);
    let (a2, u2, g2) = gap(&s2_attn, &s2_uniform, SystemId::S2);
    record(
        5,
        "attention ablation",
        outcome(
            g1 >= 0.15 && g2 >= 0.15,
            format!("ε=0.05, max_k=10: S1 {a1:.3} vs {u1:.3} (gap {g1:.3}); S2 {a2:.3} vs {u2:.3} (gap {g2:.3})"),
        ),
    );
    eprintln!("  [{:.0?}]", t.elapsed());

    // Criterion 6: baselines against the S1 agent on paired trials.
    let s1_spec = spec(SystemId::S1);
    let cfg = BaselinesConfig::default();
    let cov = |m: Method<'_>| {
        run_trials(m, &s1_spec, TRIALS, 0.1, 50, 1)
            .unwrap()
            .coverage
    };
    let base: Vec<(SearchMethod, f64)> = SearchMethod::ALL
        .iter()
        .map(|&m| {
            (
                m,
                cov(Method::Search {
                    method: m,
                    config: &cfg,
                }),
            )
        })
        .collect();
    let ours = cov(Method::Policy {
        name: "ours",
        policy: &s1[0],
    });
    let of = |m| base.iter().find(|(x, _)| *x == m).unwrap().1;
    let c6 = of(SearchMethod::Ga) >= 0.6
        && of(SearchMethod::Pso) >= 0.6
        && of(SearchMethod::Bo) <= 0.4
        && base.iter().all(|(_, c)| ours > *c);
    let table: Vec<String> = base
        .iter()
        .map(|(m, c)| format!("{} {c:.3}", m.name()))
        .collect();
    record(
        6,
        "baseline ordering",
        outcome(
            c6,
            format!("ε=0.1, max_k=50: {}, ours {ours:.3}", table.join(", ")),
        ),
    );
    eprintln!("  [{:.0?}]", t.elapsed());

    // Criterion 7: first-success step and attention focus over 100 S2 episodes.
    let s2_spec = spec(SystemId::S2);
    let (eps, max_k) = (0.1, 50);
    let first_success = |agent: &AgentBundle, seed| {
        let series = iteration_trace(agent, &s2_spec, eps, max_k, seed).unwrap();
        series
            .iter()
            .position(|&w| w <= eps)
            .map_or(max_k + 1, |i| i + 1)
    };
    let median = |mut v: Vec<usize>| {
        v.sort_unstable();
        let n = v.len();
        (v[(n - 1) / 2] + v[n / 2]) as f64 / 2.0
    };
    let episodes = 1000..1100u64;
    let m_attn = median(
        episodes
            .clone()
            .map(|s| first_success(&s2_attn, s))
            .collect(),
    );
    let m_unif = median(
        episodes
            .clone()
            .map(|s| first_success(&s2_uniform, s))
            .collect(),
    );
    let shifting = episodes
        .filter(|&s| {
            attention_dump(&s2_attn, &s2_spec, eps, max_k, s)
                .unwrap()
                .focus_shifts()
        })
        .count();
    record(
        7,
        "iteration trace",
        outcome(
            m_attn <= m_unif && shifting >= 50,
            format!(
                "median first success {m_attn} vs uniform {m_unif} (ε={eps}, max_k={max_k}); attention focus shifts in {shifting}/100 episodes"
            ),
        ),
    );
    eprintln!("  [{:.0?}]", t.elapsed());

    // Criterion 8: HER on/off with matched budgets and seeds.
    let mut wins = 0;
    let mut rates = Vec::new();
    for s in SEEDS {
        let with = train_agent(
            SystemId::S2,
            Variant::Attentive,
            HER_STEPS,
            s,
            AgentConfig::default(),
        )
        .1;
        let without = train_agent(
            SystemId::S2,
            Variant::Attentive,
            HER_STEPS,
            s,
            AgentConfig {
                her: false,
                ..AgentConfig::default()
            },
        )
        .1;
        let (a, b) = (
            with.success_rate_last_steps(1000),
            without.success_rate_last_steps(1000),
        );
        wins += usize::from(b <= a);
        rates.push(format!("seed {s}: {a:.3} vs {b:.3}"));
    }
    record(
        8,
        "HER effect",
        outcome(
            wins >= 2,
            format!(
                "final-1000-step success with vs without HER on S2: {} ({wins}/3)",
                rates.join(", ")
            ),
        ),
    );

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, _, o)| !o.pass)
        .map(|(n, _, _)| *n)
        .collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0?}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
