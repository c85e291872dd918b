//! JSON checkpoint of trained policies.
//!
//! ```json
//! {
//!   "format": "linksched-policies",
//!   "version": 1,
//!   "kind": "cdnn",              // or "locally_robust"
//!   "seed": 42,                  // training seed
//!   "k_users": 2,
//!   "networks": [{
//!     "tx_index": 0,
//!     "layer_sizes": [4, 30, 30, 30, 1],
//!     "dropout_rate": 0.5,
//!     "threshold": 0.5,
//!     "standardization": { "mean": [...], "std": [...] },
//!     "layers": [{ "fan_in": 4, "fan_out": 30,
//!                  "weights": [...],   // fan_out × fan_in, row-major
//!                  "bias": [...] }]
//!   }]
//! }
//! ```
//!
//! Network inputs are the TX's estimate flattened row-major, standardized as
//! `(x - mean) / std` per coordinate.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Layer, MlpArchitecture, MlpParams, Standardizer};
use crate::training::{LocalPolicy, LocallyRobustSet, Policy, PolicySet};

pub const FORMAT: &str = "linksched-policies";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Cdnn,
    LocallyRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRecord {
    tx_index: usize,
    layer_sizes: Vec<usize>,
    dropout_rate: f64,
    threshold: f64,
    standardization: Standardizer,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    kind: PolicyKind,
    seed: u64,
    k_users: usize,
    networks: Vec<NetworkRecord>,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Cdnn { policies: PolicySet, seed: u64 },
    LocallyRobust { set: LocallyRobustSet, seed: u64 },
}

fn to_record(tx_index: usize, p: &Policy) -> NetworkRecord {
    NetworkRecord {
        tx_index,
        layer_sizes: p.arch.layer_sizes().to_vec(),
        dropout_rate: p.arch.dropout_rate(),
        threshold: p.threshold,
        standardization: p.standardizer.clone(),
        layers: p
            .params
            .layers
            .iter()
            .map(|l| LayerRecord {
                fan_in: l.weights.ncols(),
                fan_out: l.weights.nrows(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

fn from_record(r: NetworkRecord) -> Result<(usize, Policy)> {
    let arch = MlpArchitecture::new(r.layer_sizes, r.dropout_rate)?;
    let layers = r
        .layers
        .into_iter()
        .map(|l| {
            let weights = Array2::from_shape_vec((l.fan_out, l.fan_in), l.weights)
                .map_err(|e| bad(format!("weights of {}x{} layer: {e}", l.fan_out, l.fan_in)))?;
            if l.bias.len() != l.fan_out {
                return Err(bad("bias length differs from fan_out"));
            }
            Ok(Layer { weights, bias: Array1::from(l.bias) })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = MlpParams { layers };
    if !params.matches(&arch) {
        return Err(bad("layer shapes do not match layer_sizes"));
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    if r.standardization.width() != arch.input_width() || r.standardization.std.len() != arch.input_width() {
        return Err(bad("standardization width differs from input width"));
    }
    Ok((r.tx_index, Policy { arch, params, standardizer: r.standardization, threshold: r.threshold }))
}

impl Checkpoint {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Checkpoint::Cdnn { .. } => PolicyKind::Cdnn,
            Checkpoint::LocallyRobust { .. } => PolicyKind::LocallyRobust,
        }
    }

    pub fn to_json(&self) -> String {
        let (seed, k_users, networks) = match self {
            Checkpoint::Cdnn { policies, seed } => (
                *seed,
                policies.k_users(),
                policies.policies.iter().enumerate().map(|(j, p)| to_record(j, p)).collect(),
            ),
            Checkpoint::LocallyRobust { set, seed } => (
                *seed,
                set.locals.len(),
                set.locals.iter().map(|l| to_record(l.tx_index, &l.policy)).collect(),
            ),
        };
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind(),
            seed,
            k_users,
            networks,
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != FORMAT {
            return Err(bad(format!("unknown format `{}`", file.format)));
        }
        if file.version != VERSION {
            return Err(bad(format!("unsupported version {}", file.version)));
        }
        let k = file.k_users;
        if file.networks.len() != k {
            return Err(bad(format!("{} networks for {k} users", file.networks.len())));
        }
        let networks = file.networks.into_iter().map(from_record).collect::<Result<Vec<_>>>()?;
        if networks.iter().enumerate().any(|(j, (tx, _))| *tx != j) {
            return Err(bad("networks must be listed in TX order"));
        }
        let expected_out = match file.kind {
            PolicyKind::Cdnn => 1,
            PolicyKind::LocallyRobust => k,
        };
        for (_, p) in &networks {
            if p.arch.input_width() != k * k || p.arch.output_width() != expected_out {
                return Err(bad("network shape inconsistent with k_users and kind"));
            }
        }
        Ok(match file.kind {
            PolicyKind::Cdnn => Checkpoint::Cdnn {
                policies: PolicySet { policies: networks.into_iter().map(|(_, p)| p).collect() },
                seed: file.seed,
            },
            PolicyKind::LocallyRobust => Checkpoint::LocallyRobust {
                set: LocallyRobustSet {
                    locals: networks.into_iter().map(|(tx_index, policy)| LocalPolicy { tx_index, policy }).collect(),
                },
                seed: file.seed,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
