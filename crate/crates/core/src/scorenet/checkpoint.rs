//! JSON checkpoints.
//!
//! Layout (schema version 1):
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "schedule": {"schedule": "vp", "beta_min": 0.1, "beta_max": 20.0},
//!   "t_min": 0.001,
//!   "train_seed": 7,
//!   "t_split": null,
//!   "nets": [{"widths": [11, 64, 64, 10], "activation": "tanh", "skip_mode": "none",
//!             "weights": [[...]], "biases": [[...]], "coeff_nets": null}],
//!   "adam": []
//! }
//! ```
//!
//! Each weight matrix is `fan_in x fan_out`, flattened row-major. A split model
//! stores `[low, high]` in `nets` and its boundary in `t_split`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::model::{ScoreModel, ScoreNet, Skip, SkipMode};
use super::train::AdamState;
use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::schedule::NoiseSchedule;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct MlpDoc {
    widths: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetDoc {
    widths: Vec<usize>,
    activation: Activation,
    skip_mode: SkipMode,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    coeff_nets: Option<[MlpDoc; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u64,
    schedule: NoiseSchedule,
    t_min: f64,
    train_seed: Option<Seed>,
    t_split: Option<f64>,
    nets: Vec<NetDoc>,
    adam: Vec<AdamState>,
}

/// Everything a checkpoint restores.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ScoreModel,
    pub adam: Vec<AdamState>,
    pub train_seed: Option<Seed>,
}

fn load_err(field: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Load {
        field: field.into(),
        msg: msg.into(),
    }
}

fn mlp_doc(m: &Mlp) -> MlpDoc {
    MlpDoc {
        widths: m.widths(),
        activation: m.activation,
        weights: m.weights.iter().map(|w| w.iter().copied().collect()).collect(),
        biases: m.biases.iter().map(|b| b.to_vec()).collect(),
    }
}

fn mlp_from(
    field: &str,
    widths: &[usize],
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
) -> Result<Mlp> {
    if widths.len() < 2 {
        return Err(load_err(format!("{field}.widths"), "need at least two widths"));
    }
    let layers = widths.len() - 1;
    if weights.len() != layers || biases.len() != layers {
        return Err(load_err(
            format!("{field}.weights"),
            format!("expected {layers} layers, found {} weights and {} biases", weights.len(), biases.len()),
        ));
    }
    let mut ws = Vec::with_capacity(layers);
    let mut bs = Vec::with_capacity(layers);
    for (i, (w, b)) in weights.into_iter().zip(biases).enumerate() {
        let (fi, fo) = (widths[i], widths[i + 1]);
        let w = Array2::from_shape_vec((fi, fo), w).map_err(|_| {
            load_err(format!("{field}.weights[{i}]"), format!("expected {fi}x{fo} entries"))
        })?;
        if b.len() != fo {
            return Err(load_err(format!("{field}.biases[{i}]"), format!("expected {fo} entries")));
        }
        ws.push(w);
        bs.push(Array1::from(b));
    }
    let m = Mlp {
        activation,
        weights: ws,
        biases: bs,
    };
    m.validate().map_err(|e| load_err(field, e.to_string()))?;
    Ok(m)
}

fn net_doc(n: &ScoreNet) -> NetDoc {
    let inner = mlp_doc(&n.inner);
    NetDoc {
        widths: inner.widths,
        activation: inner.activation,
        skip_mode: n.skip.mode(),
        weights: inner.weights,
        biases: inner.biases,
        coeff_nets: match &n.skip {
            Skip::Learned { c1, c2 } => Some([mlp_doc(c1), mlp_doc(c2)]),
            _ => None,
        },
    }
}

fn net_from(field: &str, doc: NetDoc, schedule: NoiseSchedule, t_min: f64) -> Result<ScoreNet> {
    let inner = mlp_from(field, &doc.widths, doc.activation, doc.weights, doc.biases)?;
    let skip = match (doc.skip_mode, doc.coeff_nets) {
        (SkipMode::None, _) => Skip::None,
        (SkipMode::Fixed, _) => Skip::Fixed { swapped: false },
        (SkipMode::FixedSwapped, _) => Skip::Fixed { swapped: true },
        (SkipMode::Learned, Some([a, b])) => Skip::Learned {
            c1: mlp_from(&format!("{field}.coeff_nets[0]"), &a.widths, a.activation, a.weights, a.biases)?,
            c2: mlp_from(&format!("{field}.coeff_nets[1]"), &b.widths, b.activation, b.weights, b.biases)?,
        },
        (SkipMode::Learned, None) => {
            return Err(load_err(format!("{field}.coeff_nets"), "learned skip needs two coefficient nets"))
        }
    };
    let net = ScoreNet {
        inner,
        skip,
        schedule,
        t_min,
    };
    net.validate().map_err(|e| load_err(field, e.to_string()))?;
    Ok(net)
}

pub fn to_json(ckpt: &Checkpoint) -> Result<String> {
    let (nets, t_split) = match &ckpt.model {
        ScoreModel::Single(n) => (vec![net_doc(n)], None),
        ScoreModel::Split { low, high, t_split } => (vec![net_doc(low), net_doc(high)], Some(*t_split)),
    };
    let doc = CheckpointDoc {
        schema_version: SCHEMA_VERSION,
        schedule: ckpt.model.schedule(),
        t_min: ckpt.model.t_min(),
        train_seed: ckpt.train_seed,
        t_split,
        nets,
        adam: ckpt.adam.clone(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| load_err("document", e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(load_err(
                "schema_version",
                format!("unsupported schema version {v} (expected {SCHEMA_VERSION})"),
            ))
        }
        None => return Err(load_err("schema_version", "missing or not an integer")),
    }
    let doc: CheckpointDoc =
        serde_json::from_value(value).map_err(|e| load_err("document", e.to_string()))?;
    doc.schedule
        .validate()
        .map_err(|e| load_err("schedule", e.to_string()))?;
    let mut nets = doc.nets.into_iter();
    let model = match (nets.next(), nets.next(), nets.next(), doc.t_split) {
        (Some(n), None, None, None) => ScoreModel::Single(net_from("nets[0]", n, doc.schedule, doc.t_min)?),
        (Some(l), Some(h), None, Some(t_split)) => ScoreModel::Split {
            low: net_from("nets[0]", l, doc.schedule, doc.t_min)?,
            high: net_from("nets[1]", h, doc.schedule, doc.t_min)?,
            t_split,
        },
        _ => {
            return Err(load_err(
                "nets",
                "expected one net, or two nets together with t_split",
            ))
        }
    };
    Ok(Checkpoint {
        model,
        adam: doc.adam,
        train_seed: doc.train_seed,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, to_json(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_json(&fs::read_to_string(path)?)
}
