//! JSON checkpoints for networks and policies.
//!
//! ```json
//! {
//!   "layer_sizes": [4, 64, 64, 4],
//!   "activations": ["relu", "relu", "identity"],
//!   "weights": [[...], [...], [...]],
//!   "biases": [[...], [...], [...]],
//!   "policy": {"squash": "tanh", "action_low": [-1, -1], "action_high": [1, 1],
//!              "log_std_min": -20.0, "log_std_max": 2.0}
//! }
//! ```
//!
//! `weights[l]` is the `inputs x outputs` matrix of layer `l` in row-major
//! order: entry `i * outputs + j` connects input `i` to output `j`. Numbers
//! are written in shortest round-trip decimal form, so save/load is
//! bit-exact for finite `f64`. `policy` is present only for policies.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, MlpParams};
use super::policy::{GaussianPolicy, Squash};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SquashKind {
    None,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyMeta {
    pub squash: SquashKind,
    #[serde(default)]
    pub action_low: Vec<f64>,
    #[serde(default)]
    pub action_high: Vec<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl From<&MlpParams> for NetworkCheckpoint {
    fn from(p: &MlpParams) -> Self {
        Self {
            layer_sizes: p.layer_sizes(),
            activations: p.activations().to_vec(),
            weights: p.layers().iter().map(|l| l.weight.iter().copied().collect()).collect(),
            biases: p.layers().iter().map(|l| l.bias.iter().copied().collect()).collect(),
            policy: None,
        }
    }
}

impl From<&GaussianPolicy> for NetworkCheckpoint {
    fn from(p: &GaussianPolicy) -> Self {
        let mut c = NetworkCheckpoint::from(&p.net);
        let (squash, action_low, action_high) = match &p.squash {
            Squash::None => (SquashKind::None, vec![], vec![]),
            Squash::Tanh { low, high } => (SquashKind::Tanh, low.clone(), high.clone()),
        };
        c.policy = Some(PolicyMeta {
            squash,
            action_low,
            action_high,
            log_std_min: p.log_std_min,
            log_std_max: p.log_std_max,
        });
        c
    }
}

impl NetworkCheckpoint {
    pub fn to_params(&self) -> Result<MlpParams> {
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::shape(
                "checkpoint layers",
                n.saturating_sub(1),
                self.weights.len(),
            ));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for l in 0..n - 1 {
            let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weight = Array2::from_shape_vec((i, o), self.weights[l].clone())
                .map_err(|_| Error::shape(&format!("checkpoint weights[{l}]"), i * o, self.weights[l].len()))?;
            let bias = Array2::from_shape_vec((1, o), self.biases[l].clone())
                .map_err(|_| Error::shape(&format!("checkpoint biases[{l}]"), o, self.biases[l].len()))?;
            layers.push(Dense { weight, bias });
        }
        let p = MlpParams::from_layers(layers, self.activations.clone())?;
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(p)
    }

    pub fn to_policy(&self) -> Result<GaussianPolicy> {
        let meta = self
            .policy
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no policy block".into()))?;
        let squash = match meta.squash {
            SquashKind::None => Squash::None,
            SquashKind::Tanh => Squash::Tanh {
                low: meta.action_low.clone(),
                high: meta.action_high.clone(),
            },
        };
        let mut p = GaussianPolicy::new(self.to_params()?, squash)?;
        p.log_std_min = meta.log_std_min;
        p.log_std_max = meta.log_std_max;
        Ok(p)
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn policy_json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = MlpParams::mlp(4, &[16, 16], 4, Activation::Relu, &mut rng).unwrap();
        let policy = GaussianPolicy::new(
            net,
            Squash::Tanh {
                low: vec![-1.0, -0.5],
                high: vec![1.0, 2.0],
            },
        )
        .unwrap();
        let text = serde_json::to_string(&NetworkCheckpoint::from(&policy)).unwrap();
        let back: NetworkCheckpoint = serde_json::from_str(&text).unwrap();
        let restored = back.to_policy().unwrap();
        let bits = |p: &GaussianPolicy| p.net.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&policy), bits(&restored));
        assert_eq!(policy, restored);
    }

    #[test]
    fn wrong_weight_length_is_rejected() {
        let p = MlpParams::zeros(&[2, 3], &[Activation::Identity]).unwrap();
        let mut c = NetworkCheckpoint::from(&p);
        c.weights[0].pop();
        assert!(c.to_params().is_err());
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = r#"{"layer_sizes":[1,1],"activations":["identity"],"weights":[[1.0]],"biases":[[0.0]],"extra":1}"#;
        assert!(serde_json::from_str::<NetworkCheckpoint>(text).is_err());
    }
}
