//! Trained-model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "RESELM\0\x01"
//! header_len u64
//! header     JSON, header_len bytes
//! weights    f64 × (selected × classes), row-major
//! ```
//!
//! The hidden layer is not stored: it is regenerated from its seed, shape and
//! activation, which [`HiddenLayer::generate`] maps to identical weights.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::Normalizer;
use crate::elm::{Activation, ElmModel, HiddenLayer};
use crate::harness::ModelKind;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RESELM\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelKind,
    layer_seed: u64,
    features: usize,
    neurons: usize,
    activation: Activation,
    selected: Vec<usize>,
    ridge: f64,
    classes: usize,
    sparsity: Option<u32>,
    epsilon: Option<f64>,
    normalization: Option<Normalizer>,
}

/// A model plus what is needed to apply it to raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub kind: ModelKind,
    pub model: ElmModel,
    /// Training-set statistics to apply before [`crate::elm::predict`].
    pub normalization: Option<Normalizer>,
    pub sparsity: Option<u32>,
    pub epsilon: Option<f64>,
}

impl SavedModel {
    /// Normalises raw features (when statistics are stored) and predicts.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        match &self.normalization {
            Some(n) => crate::elm::predict(&n.apply(x)?, &self.model),
            None => crate::elm::predict(x, &self.model),
        }
    }
}

pub fn to_bytes(saved: &SavedModel) -> Result<Vec<u8>> {
    let m = &saved.model;
    let layer = m.layer();
    let header = Header {
        version: FORMAT_VERSION,
        model: saved.kind,
        layer_seed: layer.seed(),
        features: layer.features(),
        neurons: layer.neurons(),
        activation: layer.activation(),
        selected: m.selected().to_vec(),
        ridge: m.ridge(),
        classes: m.classes(),
        sparsity: saved.sparsity,
        epsilon: saved.epsilon,
        normalization: saved.normalization.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let b = m.output_weights();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * b.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for r in 0..b.nrows() {
        for c in 0..b.ncols() {
            out.extend_from_slice(&b[(r, c)].to_le_bytes());
        }
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("model file: {}", msg.into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic bytes"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let json_end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header length exceeds file size"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..json_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {}", header.version)));
    }
    let rows = header.selected.len();
    let body = &bytes[json_end..];
    if body.len() != 8 * rows * header.classes {
        return Err(corrupt(format!(
            "expected {} weight bytes, found {}",
            8 * rows * header.classes,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let b = DMatrix::from_row_slice(rows, header.classes, &values);
    let layer = HiddenLayer::generate(header.features, header.neurons, header.activation, header.layer_seed)?;
    if let Some(n) = &header.normalization {
        if n.means.len() != header.features || n.stds.len() != header.features {
            return Err(corrupt("normalisation statistics do not match the feature count"));
        }
    }
    Ok(SavedModel {
        kind: header.model,
        model: ElmModel::new(layer, header.selected, b, header.ridge)?,
        normalization: header.normalization,
        sparsity: header.sparsity,
        epsilon: header.epsilon,
    })
}

pub fn save_model(path: &Path, saved: &SavedModel) -> Result<()> {
    std::fs::write(path, to_bytes(saved)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::format(path, 0, msg),
        other => other,
    })
}
