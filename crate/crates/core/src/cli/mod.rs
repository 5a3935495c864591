//! Operator surface: one JSON run configuration, four commands (train, eval,
//! bench, attn) and the files they write. `main.rs` only parses flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{train, AgentBundle, AgentCheckpoint, AgentConfig, Variant};
use crate::baselines::{BaselinesConfig, SearchMethod};
use crate::env::{Env, EnvConfig, ForwardModel, SystemId};
use crate::eval::{self, aggregate, EnvSpec, EvalReport, Method, Summary};

/// Environment variable that overrides `output_dir` (the `--out` flag wins).
pub const OUT_DIR_ENV: &str = "BEAMALIGN_OUT";

/// Method names accepted by `bench`.
pub const BENCH_METHODS: [&str; 6] = ["de", "ga", "pso", "bo", "ddpg_uniform", "ours"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub steps: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainBlock {
    fn default() -> Self {
        Self {
            steps: 50_000,
            seed: 1,
            variant: Variant::Attentive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub n_trials: usize,
    pub epsilons: Vec<f64>,
    pub max_ks: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            n_trials: 500,
            epsilons: vec![0.05, 0.1],
            max_ks: vec![10, 20, 50],
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchBlock {
    pub methods: Vec<String>,
}

impl Default for BenchBlock {
    fn default() -> Self {
        Self {
            methods: BENCH_METHODS.iter().map(|m| m.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub baselines: BaselinesConfig,
    pub train: TrainBlock,
    pub eval: EvalBlock,
    pub bench: BenchBlock,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            baselines: BaselinesConfig::default(),
            train: TrainBlock::default(),
            eval: EvalBlock::default(),
            bench: BenchBlock::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Command-line overrides; each one takes precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub system: Option<SystemId>,
    pub variant: Option<Variant>,
    pub epsilon: Option<f64>,
    pub max_k: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config file. Errors name the offending key; relative
    /// surrogate paths resolve against the file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg =
            Self::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let Some(s) = cfg.env.surrogate_path.as_mut() {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *s = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config key `{path}`: {}", e.into_inner())
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if let Some(p) = &self.env.surrogate_path {
            if !Path::new(p).exists() {
                bail!("env.surrogate_path {p} does not exist");
            }
        }
        let e = &self.eval;
        if e.n_trials == 0 || e.epsilons.is_empty() || e.max_ks.is_empty() || e.seeds.is_empty() {
            bail!("eval block needs n_trials > 0 and non-empty epsilons, max_ks and seeds");
        }
        if e.max_ks.contains(&0) {
            bail!("eval.max_ks entries must be positive");
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !e.epsilons.iter().all(|&x| positive(x)) || !positive(self.env.epsilon) {
            bail!("epsilons must be positive");
        }
        for m in &self.bench.methods {
            if !BENCH_METHODS.contains(&m.as_str()) {
                bail!(
                    "unknown bench method {m:?}; expected one of {}",
                    BENCH_METHODS.join(", ")
                );
            }
        }
        Ok(())
    }

    /// `--seed` selects the training seed and a single evaluation seed;
    /// `--epsilon` / `--max-k` pin both the environment and the eval grid.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
            self.eval.seeds = vec![s];
        }
        if let Some(s) = o.system {
            self.env.system = s;
        }
        if let Some(v) = o.variant {
            self.train.variant = v;
        }
        if let Some(e) = o.epsilon {
            self.env.epsilon = e;
            self.eval.epsilons = vec![e];
        }
        if let Some(k) = o.max_k {
            self.env.max_k = k;
            self.eval.max_ks = vec![k];
        }
        if let Some(n) = o.steps {
            self.train.steps = n;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON of everything that
    /// affects results. `output_dir` is excluded so relocating a run keeps its hash.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(m) = &mut value {
            m.remove("output_dir");
        }
        let mut canonical = String::new();
        write_canonical(&value, &mut canonical);
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    fn model(&self) -> Result<Arc<ForwardModel>> {
        let model = self.env.build_model()?;
        if model.system() != self.env.system {
            bail!(
                "surrogate has {} inputs but env.system is {}",
                model.dim(),
                self.env.system
            );
        }
        Ok(Arc::new(model))
    }

    fn spec(&self) -> Result<EnvSpec> {
        Ok(EnvSpec {
            model: self.model()?,
            beta: self.env.beta,
            delta_max: self.env.delta_max,
        })
    }

    pub fn checkpoint_path(&self, variant: Variant) -> PathBuf {
        self.output_dir.join("checkpoints").join(format!(
            "{}_{}_seed{}.json",
            self.env.system, variant, self.train.seed
        ))
    }
}

fn write_canonical(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_file(path: &Path) -> Result<fs::File> {
    create_parent(path)?;
    fs::File::create(path).with_context(|| format!("writing {}", path.display()))
}

fn method_name(variant: Variant) -> &'static str {
    match variant {
        Variant::Attentive => "ours",
        Variant::Uniform => "ddpg_uniform",
    }
}

fn load_agent(path: &Path, system: SystemId) -> Result<AgentBundle> {
    let ckpt = AgentCheckpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ckpt.action_dim != system.dim() {
        bail!(
            "checkpoint {} controls {} parameters but system {} has {}",
            path.display(),
            ckpt.action_dim,
            system,
            system.dim()
        );
    }
    Ok(ckpt.into_bundle()?)
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub success_rate: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let hash = cfg.config_hash();
    let model = cfg.model()?;
    let t = &cfg.train;
    let mut agent = AgentBundle::new(model.dim(), t.variant, cfg.agent.clone(), t.seed)?;
    let mut env = Env::from_config(model, &cfg.env);
    let log = train(&mut agent, &mut env, t.steps, t.seed)?;

    let checkpoint = cfg.checkpoint_path(t.variant);
    create_parent(&checkpoint)?;
    AgentCheckpoint::from_bundle(&agent, &hash).save(&checkpoint)?;
    let log_path = cfg.output_dir.join("train").join(format!(
        "{}_{}_seed{}_log.csv",
        cfg.env.system, t.variant, t.seed
    ));
    log.write_csv(csv_file(&log_path)?, &hash)?;
    Ok(TrainOutput {
        checkpoint,
        log: log_path,
        success_rate: log.success_rate_last_episodes(100),
    })
}

#[derive(Debug)]
pub struct EvalOutput {
    pub files: Vec<PathBuf>,
    pub summaries: Vec<Summary>,
}

fn cell_stem(method: &str, system: SystemId, epsilon: f64, max_k: usize) -> String {
    format!("{method}_{system}_eps{epsilon}_k{max_k}")
}

/// Runs one (method, ε, max_k) cell over every configured seed.
fn run_cell(
    cfg: &RunConfig,
    spec: &EnvSpec,
    method: Method<'_>,
    epsilon: f64,
    max_k: usize,
) -> Result<Vec<EvalReport>> {
    cfg.eval
        .seeds
        .iter()
        .map(|&seed| {
            Ok(eval::run_trials(
                method,
                spec,
                cfg.eval.n_trials,
                epsilon,
                max_k,
                seed,
            )?)
        })
        .collect()
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalOutput> {
    let hash = cfg.config_hash();
    let spec = cfg.spec()?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.checkpoint_path(cfg.train.variant));
    let agent = load_agent(&path, cfg.env.system)?;
    let name = method_name(agent.variant());
    let method = Method::Policy {
        name,
        policy: &agent,
    };
    let dir = cfg.output_dir.join("eval");
    let mut out = EvalOutput {
        files: Vec::new(),
        summaries: Vec::new(),
    };
    for &epsilon in &cfg.eval.epsilons {
        for &max_k in &cfg.eval.max_ks {
            let stem = cell_stem(name, cfg.env.system, epsilon, max_k);
            let reports = run_cell(cfg, &spec, method, epsilon, max_k)?;
            for r in &reports {
                let csv_path = dir.join(format!("{stem}_seed{}.csv", r.settings.seed));
                r.write_csv(csv_file(&csv_path)?, &hash)?;
                let json_path = csv_path.with_extension("json");
                write_json(&json_path, &r.summary_json(&hash))?;
                out.files.extend([csv_path, json_path]);
            }
            let summary = aggregate(&reports)?;
            let path = dir.join(format!("{stem}_summary.json"));
            let mut value = serde_json::to_value(&summary)?;
            value["config_hash"] = hash.clone().into();
            write_json(&path, &value)?;
            out.files.push(path);
            out.summaries.push(summary);
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct BenchOutput {
    pub table: PathBuf,
    pub rows: Vec<Summary>,
}

pub const BENCH_HEADER: [&str; 11] = [
    "method",
    "system",
    "epsilon",
    "max_k",
    "n_trials",
    "n_seeds",
    "coverage_mean",
    "coverage_std",
    "avg_k_mean",
    "avg_k_std",
    "config_hash",
];

/// The methods × ε × max_k grid as one table. RL rows need checkpoints
/// produced by `train` with the same seed.
pub fn cmd_bench(cfg: &RunConfig, methods: &[String]) -> Result<BenchOutput> {
    let hash = cfg.config_hash();
    let spec = cfg.spec()?;
    for m in methods {
        if !BENCH_METHODS.contains(&m.as_str()) {
            bail!(
                "unknown bench method {m:?}; expected one of {}",
                BENCH_METHODS.join(", ")
            );
        }
    }
    let mut agents = Vec::new();
    for m in methods {
        let variant = match m.as_str() {
            "ours" => Variant::Attentive,
            "ddpg_uniform" => Variant::Uniform,
            _ => continue,
        };
        let path = cfg.checkpoint_path(variant);
        if !path.exists() {
            bail!(
                "no checkpoint for {m} at {}; run `beamalign train --variant {variant}` with this config first",
                path.display()
            );
        }
        agents.push((m.clone(), load_agent(&path, cfg.env.system)?));
    }

    let mut rows = Vec::new();
    for &epsilon in &cfg.eval.epsilons {
        for &max_k in &cfg.eval.max_ks {
            for m in methods {
                let method = match agents.iter().find(|(n, _)| n == m) {
                    Some((n, a)) => Method::Policy { name: n, policy: a },
                    None => Method::Search {
                        method: m.parse::<SearchMethod>()?,
                        config: &cfg.baselines,
                    },
                };
                rows.push(aggregate(&run_cell(cfg, &spec, method, epsilon, max_k)?)?);
            }
        }
    }

    let table = cfg
        .output_dir
        .join("bench")
        .join(format!("{}_table.csv", cfg.env.system));
    let mut w = csv::Writer::from_writer(csv_file(&table)?);
    w.write_record(BENCH_HEADER)?;
    for r in &rows {
        w.write_record([
            r.method.clone(),
            r.system.clone(),
            r.epsilon.to_string(),
            r.max_k.to_string(),
            r.n_trials.to_string(),
            r.seeds.len().to_string(),
            r.coverage_mean.to_string(),
            r.coverage_std.to_string(),
            r.avg_k_mean.to_string(),
            r.avg_k_std.to_string(),
            hash.clone(),
        ])?;
    }
    w.flush()?;
    // Full resolved configuration next to the table, for provenance.
    let mut value = serde_json::to_value(cfg)?;
    value["config_hash"] = hash.into();
    write_json(&table.with_extension("config.json"), &value)?;
    Ok(BenchOutput { table, rows })
}

#[derive(Debug)]
pub struct AttnOutput {
    pub weights: PathBuf,
    pub mask: PathBuf,
    pub steps: usize,
}

/// Attention weights of one episode (seed = first eval seed), run at the
/// environment's ε and max_k.
pub fn cmd_attn(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<AttnOutput> {
    let hash = cfg.config_hash();
    let spec = cfg.spec()?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.checkpoint_path(Variant::Attentive));
    let agent = load_agent(&path, cfg.env.system)?;
    let seed = cfg.eval.seeds[0];
    let dump = eval::attention_dump(&agent, &spec, cfg.env.epsilon, cfg.env.max_k, seed)?;
    let dir = cfg.output_dir.join("attn");
    let stem = format!("{}_seed{seed}", cfg.env.system);
    let weights = dir.join(format!("{stem}_weights.csv"));
    let mask = dir.join(format!("{stem}_mask.csv"));
    dump.write_weights_csv(csv_file(&weights)?, &hash)?;
    dump.write_mask_csv(csv_file(&mask)?, &hash)?;
    Ok(AttnOutput {
        weights,
        mask,
        steps: dump.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = RunConfig::from_json(r#"{"env": {"system": "S2", "seed": 3}, "output_dir": "a"}"#)
            .unwrap();
        let b = RunConfig::from_json(r#"{"output_dir": "b", "env": {"seed": 3, "system": "S2"}}"#)
            .unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = RunConfig::from_json(r#"{"env": {"system": "S2", "seed": 4}}"#).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn bad_field_names_key() {
        let err = RunConfig::from_json(r#"{"agent": {"gamma": "high"}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("agent.gamma"), "{err}");
        let err = RunConfig::from_json(r#"{"eval": {"trials": 3}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("trials"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(9),
            epsilon: Some(0.1),
            max_k: Some(10),
            ..Default::default()
        });
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.eval.seeds, vec![9]);
        assert_eq!(cfg.eval.epsilons, vec![0.1]);
        assert_eq!(cfg.eval.max_ks, vec![10]);
    }
}
