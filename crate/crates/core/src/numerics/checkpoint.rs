//! Versioned JSON checkpoints for dense networks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use super::dense::{Activation, DenseNet, Layer};
use super::NumericsError;

pub const FORMAT_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub version: String,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
}

impl NetRecord {
    pub fn from_net(net: &DenseNet, optimizer: Option<&OptimizerState>) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    activation: l.activation,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn to_net(&self) -> Result<DenseNet, NumericsError> {
        if self.version != FORMAT_VERSION {
            return Err(NumericsError::Format(format!(
                "unsupported checkpoint version {:?}, expected {FORMAT_VERSION:?}",
                self.version
            )));
        }
        let net = DenseNet::new(
            self.layers
                .iter()
                .map(|r| Layer {
                    inputs: r.inputs,
                    outputs: r.outputs,
                    activation: r.activation,
                    weights: r.weights.clone(),
                    bias: r.bias.clone(),
                })
                .collect(),
        )?;
        if let Some(opt) = &self.optimizer {
            if !opt.matches(&net) {
                return Err(NumericsError::Format(
                    "optimizer moments do not match layer shapes".into(),
                ));
            }
        }
        Ok(net)
    }
}

pub fn save_net(
    path: &Path,
    net: &DenseNet,
    optimizer: Option<&OptimizerState>,
) -> Result<(), NumericsError> {
    let json = serde_json::to_string_pretty(&NetRecord::from_net(net, optimizer))
        .map_err(|e| NumericsError::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| NumericsError::Io(format!("{}: {e}", path.display())))
}

pub fn load_net(path: &Path) -> Result<(DenseNet, Option<OptimizerState>), NumericsError> {
    let text = fs::read_to_string(path)
        .map_err(|e| NumericsError::Io(format!("{}: {e}", path.display())))?;
    let record: NetRecord = serde_json::from_str(&text)
        .map_err(|e| NumericsError::Format(format!("{}: {e}", path.display())))?;
    let net = record.to_net()?;
    Ok((net, record.optimizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = RngStream::new(11, 0);
        let net = DenseNet::mlp(&[5, 7, 3], Activation::Relu, Activation::Softmax, &mut rng);
        let opt = OptimizerState::new(&net, 1e-3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_net(&path, &net, Some(&opt)).unwrap();
        let (back, opt_back) = load_net(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(opt_back.unwrap(), opt);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut rng = RngStream::new(11, 0);
        let net = DenseNet::mlp(&[2, 2], Activation::Relu, Activation::Identity, &mut rng);
        let mut rec = NetRecord::from_net(&net, None);
        rec.version = "v0".into();
        assert!(matches!(rec.to_net(), Err(NumericsError::Format(_))));
    }
}
