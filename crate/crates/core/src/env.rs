//! Beamline environment: device parameters → output beam, the WMAE reward and
//! reset/step episode dynamics.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numerics::checkpoint::load_net;
use crate::numerics::rng::streams;
use crate::numerics::{sigmoid, DenseNet, NumericsError, RngStream};

/// Lower bound for learned semi-axes.
pub const SEMI_AXIS_FLOOR: f64 = 1e-4;
pub const PARAMS_PER_DEVICE: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter {index} = {value} lies outside [-1, 1]")]
    OutOfBox { index: usize, value: f64 },
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("episode not started; call reset first")]
    NotReset,
    #[error("invalid beam state: {0}")]
    InvalidState(String),
    #[error("surrogate load error: {0}")]
    Load(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Output beam ellipse: centre `(s1, s2)` and semi-axes `(s3, s4)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamState(pub [f64; 4]);

impl BeamState {
    pub const DIM: usize = 4;

    pub fn new(s1: f64, s2: f64, s3: f64, s4: f64) -> Self {
        Self([s1, s2, s3, s4])
    }

    pub fn as_array(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn center(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn semi_axes(&self) -> [f64; 2] {
        [self.0[2], self.0[3]]
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
            && self.0[2] > 0.0
            && self.0[3] > 0.0
            && self.0[0].abs() <= 1.0
            && self.0[1].abs() <= 1.0
    }
}

/// Weighted mean absolute error: position MAE plus `beta` times semi-axis MAE.
pub fn wmae(s: &BeamState, goal: &BeamState, beta: f64) -> f64 {
    let a = s.as_array();
    let b = goal.as_array();
    let pos = 0.5 * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs());
    let size = 0.5 * ((a[2] - b[2]).abs() + (a[3] - b[3]).abs());
    pos + beta * size
}

/// Normalised optical-device configuration, every component in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams(Vec<f64>);

impl DeviceParams {
    pub fn new(values: Vec<f64>) -> Result<Self, EnvError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
        {
            return Err(EnvError::OutOfBox { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn sample(dim: usize, rng: &mut RngStream) -> Self {
        Self((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `clip(p + action ⊙ delta_max, -1, 1)`.
    pub fn stepped(&self, action: &[f64], delta_max: f64) -> Self {
        Self(
            self.0
                .iter()
                .zip(action)
                .map(|(p, a)| (p + a * delta_max).clamp(-1.0, 1.0))
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemId {
    S1,
    S2,
}

impl SystemId {
    pub fn dim(self) -> usize {
        self.devices().len() * PARAMS_PER_DEVICE
    }

    /// Adjustable devices and the beam property each one predominantly drives.
    /// S1's plane mirror is frozen and therefore absent.
    pub fn devices(self) -> &'static [(&'static str, Block)] {
        match self {
            SystemId::S1 => &[
                ("concave mirror 1", Block::Position),
                ("concave mirror 2", Block::Size),
            ],
            SystemId::S2 => &[
                ("collimating mirror", Block::Size),
                ("plane mirror 1", Block::Position),
                ("plane mirror 2", Block::Position),
                ("cylindrical mirror 1", Block::Size),
                ("cylindrical mirror 2", Block::Size),
            ],
        }
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        match dim {
            12 => Some(SystemId::S1),
            30 => Some(SystemId::S2),
            _ => None,
        }
    }
}

impl std::str::FromStr for SystemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S1" | "s1" => Ok(SystemId::S1),
            "S2" | "s2" => Ok(SystemId::S2),
            other => Err(format!("unknown system {other:?}, expected S1 or S2")),
        }
    }
}

impl std::fmt::Display for SystemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemId::S1 => f.write_str("S1"),
            SystemId::S2 => f.write_str("S2"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Position,
    Size,
}

/// Magnitude ranges of the synthetic coefficient matrices. Angles (α, β, γ)
/// act strongly on their block, translations (x, y, z) weakly, and every
/// column leaks a small `coupling` into the other block.
pub const ANGLE_GAIN: (f64, f64) = (1.0, 2.0);
pub const TRANSLATION_GAIN: (f64, f64) = (0.1, 0.3);
pub const COUPLING: f64 = 0.15;
pub const BIAS_RANGE: f64 = 0.2;

/// Seeded analytic stand-in for the ray-traced beamline:
/// centre = tanh(A_pos·p + b_pos), semi-axes = 0.05 + 0.5·sigmoid(A_size·p + b_size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub system: SystemId,
    /// Row-major `2 × d`.
    pub a_pos: Vec<f64>,
    pub b_pos: [f64; 2],
    /// Row-major `2 × d`.
    pub a_size: Vec<f64>,
    pub b_size: [f64; 2],
    /// Block of each parameter column.
    pub blocks: Vec<Block>,
    pub coupling: f64,
}

impl SyntheticModel {
    pub fn new(system: SystemId, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, streams::MODEL);
        let blocks: Vec<Block> = system
            .devices()
            .iter()
            .flat_map(|&(_, b)| std::iter::repeat_n(b, PARAMS_PER_DEVICE))
            .collect();
        let d = blocks.len();
        // Off-block bound keeps on-block weights at least 1/coupling (> 5) times larger.
        let leak = COUPLING * ANGLE_GAIN.0.min(TRANSLATION_GAIN.0);
        let mut matrix = |target: Block| {
            let mut m = vec![0.0; 2 * d];
            for col in 0..d {
                for row in 0..2 {
                    m[row * d + col] = if blocks[col] == target {
                        let (lo, hi) = if col % PARAMS_PER_DEVICE >= 3 {
                            ANGLE_GAIN
                        } else {
                            TRANSLATION_GAIN
                        };
                        let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                        sign * rng.uniform(lo, hi)
                    } else {
                        rng.uniform(-leak, leak)
                    };
                }
            }
            m
        };
        let a_pos = matrix(Block::Position);
        let a_size = matrix(Block::Size);
        let b_pos = [
            rng.uniform(-BIAS_RANGE, BIAS_RANGE),
            rng.uniform(-BIAS_RANGE, BIAS_RANGE),
        ];
        let b_size = [
            rng.uniform(-BIAS_RANGE, BIAS_RANGE),
            rng.uniform(-BIAS_RANGE, BIAS_RANGE),
        ];
        Self {
            system,
            a_pos,
            b_pos,
            a_size,
            b_size,
            blocks,
            coupling: COUPLING,
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.len()
    }

    fn row_dot(m: &[f64], row: usize, p: &[f64]) -> f64 {
        let d = p.len();
        m[row * d..(row + 1) * d]
            .iter()
            .zip(p)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn eval(&self, p: &[f64]) -> BeamState {
        let z = |m: &[f64], b: &[f64; 2], r: usize| Self::row_dot(m, r, p) + b[r];
        BeamState([
            z(&self.a_pos, &self.b_pos, 0).tanh(),
            z(&self.a_pos, &self.b_pos, 1).tanh(),
            0.05 + 0.5 * sigmoid(z(&self.a_size, &self.b_size, 0)),
            0.05 + 0.5 * sigmoid(z(&self.a_size, &self.b_size, 1)),
        ])
    }

    /// Smallest ratio between on-block and off-block weight magnitudes over all rows.
    pub fn block_dominance(&self) -> f64 {
        let d = self.dim();
        let mut worst = f64::INFINITY;
        for (m, target) in [(&self.a_pos, Block::Position), (&self.a_size, Block::Size)] {
            for row in 0..2 {
                let vals = &m[row * d..(row + 1) * d];
                let on = (0..d)
                    .filter(|&c| self.blocks[c] == target)
                    .map(|c| vals[c].abs())
                    .fold(f64::INFINITY, f64::min);
                let off = (0..d)
                    .filter(|&c| self.blocks[c] != target)
                    .map(|c| vals[c].abs())
                    .fold(0.0, f64::max);
                worst = worst.min(on / off);
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ForwardModel {
    Synthetic(SyntheticModel),
    /// Learned `d → 4` network.
    Surrogate(DenseNet),
}

impl ForwardModel {
    pub fn synthetic(system: SystemId, seed: u64) -> Self {
        ForwardModel::Synthetic(SyntheticModel::new(system, seed))
    }

    pub fn surrogate(net: DenseNet) -> Result<Self, EnvError> {
        if net.output_dim() != BeamState::DIM {
            return Err(EnvError::Load(format!(
                "surrogate output dimension is {}, expected {}",
                net.output_dim(),
                BeamState::DIM
            )));
        }
        if SystemId::from_dim(net.input_dim()).is_none() {
            return Err(EnvError::Load(format!(
                "surrogate input dimension is {}, expected 12 (S1) or 30 (S2)",
                net.input_dim()
            )));
        }
        Ok(ForwardModel::Surrogate(net))
    }

    pub fn load_surrogate(path: &Path) -> Result<Self, EnvError> {
        let (net, _) = load_net(path).map_err(|e| EnvError::Load(e.to_string()))?;
        Self::surrogate(net)
    }

    pub fn dim(&self) -> usize {
        match self {
            ForwardModel::Synthetic(m) => m.dim(),
            ForwardModel::Surrogate(n) => n.input_dim(),
        }
    }

    pub fn system(&self) -> SystemId {
        match self {
            ForwardModel::Synthetic(m) => m.system,
            ForwardModel::Surrogate(n) => {
                SystemId::from_dim(n.input_dim()).expect("validated at construction")
            }
        }
    }

    pub fn forward(&self, p: &DeviceParams) -> Result<BeamState, EnvError> {
        if p.dim() != self.dim() {
            return Err(EnvError::Dimension {
                expected: self.dim(),
                got: p.dim(),
            });
        }
        match self {
            ForwardModel::Synthetic(m) => Ok(m.eval(p.as_slice())),
            ForwardModel::Surrogate(net) => {
                let y = net.predict_one(p.as_slice())?;
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(EnvError::InvalidState(
                        "surrogate produced a non-finite output".into(),
                    ));
                }
                Ok(BeamState([
                    y[0].clamp(-1.0, 1.0),
                    y[1].clamp(-1.0, 1.0),
                    y[2].max(SEMI_AXIS_FLOOR),
                    y[3].max(SEMI_AXIS_FLOOR),
                ]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub system: SystemId,
    pub seed: u64,
    /// Success threshold on WMAE used to terminate training episodes.
    pub epsilon: f64,
    /// Episode horizon.
    pub max_k: usize,
    pub beta: f64,
    pub delta_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate_path: Option<String>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            system: SystemId::S1,
            seed: 7,
            epsilon: 0.05,
            max_k: 50,
            beta: 2.0,
            delta_max: 1.0,
            surrogate_path: None,
        }
    }
}

impl EnvConfig {
    pub fn build_model(&self) -> Result<ForwardModel, EnvError> {
        let model = match &self.surrogate_path {
            Some(path) => ForwardModel::load_surrogate(Path::new(path))?,
            None => ForwardModel::synthetic(self.system, self.seed),
        };
        if model.system() != self.system {
            return Err(EnvError::Dimension {
                expected: self.system.dim(),
                got: model.dim(),
            });
        }
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: BeamState,
    pub reward: f64,
    pub wmae: f64,
    pub done: bool,
    /// `wmae <= epsilon`, as opposed to running out of iterations.
    pub success: bool,
}

#[derive(Clone, Debug)]
struct Episode {
    params: DeviceParams,
    current: BeamState,
    goal: BeamState,
    goal_params: DeviceParams,
    k: usize,
    done: bool,
}

/// One episode runner. The forward model is shared; episode state is owned.
#[derive(Clone, Debug)]
pub struct Env {
    model: Arc<ForwardModel>,
    pub epsilon: f64,
    pub max_k: usize,
    pub beta: f64,
    pub delta_max: f64,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(
        model: Arc<ForwardModel>,
        epsilon: f64,
        max_k: usize,
        beta: f64,
        delta_max: f64,
    ) -> Self {
        Self {
            model,
            epsilon,
            max_k,
            beta,
            delta_max,
            episode: None,
        }
    }

    pub fn from_config(model: Arc<ForwardModel>, cfg: &EnvConfig) -> Self {
        Self::new(model, cfg.epsilon, cfg.max_k, cfg.beta, cfg.delta_max)
    }

    pub fn model(&self) -> &Arc<ForwardModel> {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Fresh start configuration and a goal generated from independently drawn
    /// hidden parameters, so every goal is reachable.
    pub fn reset(&mut self, rng: &mut RngStream) -> Result<(BeamState, BeamState), EnvError> {
        let d = self.dim();
        let params = DeviceParams::sample(d, rng);
        let goal_params = DeviceParams::sample(d, rng);
        self.reset_to(params, goal_params)
    }

    /// Starts an episode from explicit start and goal-generating parameters.
    pub fn reset_to(
        &mut self,
        params: DeviceParams,
        goal_params: DeviceParams,
    ) -> Result<(BeamState, BeamState), EnvError> {
        let current = self.model.forward(&params)?;
        let goal = self.model.forward(&goal_params)?;
        self.episode = Some(Episode {
            params,
            current,
            goal,
            goal_params,
            k: 0,
            done: false,
        });
        Ok((current, goal))
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        let d = self.dim();
        let (delta_max, beta, epsilon, max_k) =
            (self.delta_max, self.beta, self.epsilon, self.max_k);
        let model = Arc::clone(&self.model);
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::EpisodeFinished);
        }
        if action.len() != d {
            return Err(EnvError::Dimension {
                expected: d,
                got: action.len(),
            });
        }
        let params = ep.params.stepped(action, delta_max);
        let next = model.forward(&params)?;
        let err = wmae(&next, &ep.goal, beta);
        ep.params = params;
        ep.current = next;
        ep.k += 1;
        let success = err <= epsilon;
        ep.done = success || ep.k >= max_k;
        Ok(StepOutcome {
            next,
            reward: -err,
            wmae: err,
            done: ep.done,
            success,
        })
    }

    fn ep(&self) -> &Episode {
        self.episode
            .as_ref()
            .expect("environment used before reset")
    }

    pub fn current(&self) -> BeamState {
        self.ep().current
    }

    pub fn goal(&self) -> BeamState {
        self.ep().goal
    }

    pub fn params(&self) -> &DeviceParams {
        &self.ep().params
    }

    /// Hidden parameters that generated the goal. Policies never receive this;
    /// it exists for oracle policies in tests.
    pub fn goal_params(&self) -> &DeviceParams {
        &self.ep().goal_params
    }

    pub fn k(&self) -> usize {
        self.ep().k
    }

    pub fn is_done(&self) -> bool {
        self.ep().done
    }

    pub fn current_wmae(&self) -> f64 {
        let ep = self.ep();
        wmae(&ep.current, &ep.goal, self.beta)
    }
}
