use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, TrialSettings};

/// Highlight threshold for attention weights.
pub const ATTENTION_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub method: String,
    pub epsilon: f64,
    pub max_k: usize,
    pub success: bool,
    /// Iterations consumed; `max_k` on failure.
    pub k_used: usize,
    pub final_wmae: f64,
    pub wmae_series: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub settings: TrialSettings,
    pub coverage: f64,
    pub avg_k: f64,
    pub records: Vec<TrialRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<TrialRecord>, settings: TrialSettings) -> Self {
        let n = records.len().max(1) as f64;
        let coverage = records.iter().filter(|r| r.success).count() as f64 / n;
        let avg_k = records.iter().map(|r| r.k_used as f64).sum::<f64>() / n;
        Self {
            settings,
            coverage,
            avg_k,
            records,
        }
    }

    pub const CSV_HEADER: [&'static str; 11] = [
        "trial_id",
        "seed",
        "method",
        "system",
        "epsilon",
        "max_k",
        "success",
        "k_used",
        "final_wmae",
        "wmae_series",
        "config_hash",
    ];

    /// One row per trial; `wmae_series` is `;`-separated.
    pub fn write_csv<W: Write>(&self, writer: W, config_hash: &str) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            let series = r
                .wmae_series
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.trial_id.to_string(),
                r.seed.to_string(),
                r.method.clone(),
                self.settings.system.clone(),
                r.epsilon.to_string(),
                r.max_k.to_string(),
                r.success.to_string(),
                r.k_used.to_string(),
                r.final_wmae.to_string(),
                series,
                config_hash.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self, config_hash: &str) -> serde_json::Value {
        serde_json::json!({
            "method": self.settings.method,
            "system": self.settings.system,
            "epsilon": self.settings.epsilon,
            "max_k": self.settings.max_k,
            "n_trials": self.settings.n_trials,
            "seed": self.settings.seed,
            "coverage": self.coverage,
            "avg_k": self.avg_k,
            "config_hash": config_hash,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub system: String,
    pub epsilon: f64,
    pub max_k: usize,
    pub n_trials: usize,
    pub seeds: Vec<u64>,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub avg_k_mean: f64,
    pub avg_k_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation across seeds of reports that share
/// every setting except the seed.
pub fn aggregate(reports: &[EvalReport]) -> Result<Summary, EvalError> {
    let first = reports
        .first()
        .ok_or_else(|| EvalError::Invalid("nothing to aggregate".into()))?;
    let s0 = &first.settings;
    for r in reports {
        let s = &r.settings;
        if s.method != s0.method
            || s.system != s0.system
            || s.epsilon != s0.epsilon
            || s.max_k != s0.max_k
            || s.n_trials != s0.n_trials
        {
            return Err(EvalError::Invalid(format!(
                "cannot aggregate {} {} eps={} max_k={} with {} {} eps={} max_k={}",
                s0.method, s0.system, s0.epsilon, s0.max_k, s.method, s.system, s.epsilon, s.max_k
            )));
        }
    }
    let cov: Vec<f64> = reports.iter().map(|r| r.coverage).collect();
    let ks: Vec<f64> = reports.iter().map(|r| r.avg_k).collect();
    let (coverage_mean, coverage_std) = mean_std(&cov);
    let (avg_k_mean, avg_k_std) = mean_std(&ks);
    Ok(Summary {
        method: s0.method.clone(),
        system: s0.system.clone(),
        epsilon: s0.epsilon,
        max_k: s0.max_k,
        n_trials: s0.n_trials,
        seeds: reports.iter().map(|r| r.settings.seed).collect(),
        coverage_mean,
        coverage_std,
        avg_k_mean,
        avg_k_std,
    })
}

/// Attention weights per step (rows) over the `d` action components, with
/// the `> ATTENTION_THRESHOLD` mask and the WMAE after each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub weights: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub wmae: Vec<f64>,
}

impl AttentionDump {
    pub fn new(weights: Vec<Vec<f64>>, wmae: Vec<f64>) -> Self {
        let mask = weights
            .iter()
            .map(|row| row.iter().map(|&w| w > ATTENTION_THRESHOLD).collect())
            .collect();
        Self {
            weights,
            mask,
            wmae,
        }
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    /// Header `step, p0..p{d-1}, wmae, config_hash`; one row per step.
    pub fn write_weights_csv<W: Write>(&self, writer: W, config_hash: &str) -> csv::Result<()> {
        self.write_rows(writer, config_hash, |row, i| {
            self.weights[i][row].to_string()
        })
    }

    /// Same layout as the weights file with 0/1 entries.
    pub fn write_mask_csv<W: Write>(&self, writer: W, config_hash: &str) -> csv::Result<()> {
        self.write_rows(writer, config_hash, |row, i| {
            u8::from(self.mask[i][row]).to_string()
        })
    }

    fn write_rows<W: Write>(
        &self,
        writer: W,
        config_hash: &str,
        cell: impl Fn(usize, usize) -> String,
    ) -> csv::Result<()> {
        let d = self.weights.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|j| format!("p{j}")));
        header.push("wmae".into());
        header.push("config_hash".into());
        w.write_record(&header)?;
        for i in 0..self.steps() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend((0..d).map(|j| cell(j, i)));
            rec.push(self.wmae[i].to_string());
            rec.push(config_hash.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whether the set of above-threshold components changes between consecutive steps.
    pub fn focus_shifts(&self) -> bool {
        self.mask.windows(2).any(|w| w[0] != w[1])
    }
}
