//! Model file: a JSON text document holding the architecture descriptor and
//! full parameter array of each network, every parameter written with 17
//! significant digits so loading reproduces the exact bits.
//!
//! ```json
//! {
//!   "format": "fha-model/1",
//!   "kind": "source",
//!   "seed": 7,
//!   "encoder":    { "arch": { "widths": [2, 32, 32], "activations": ["tanh", "tanh"], "head": "linear" },
//!                   "params": [0.12345678901234567, ...] },
//!   "classifier": { "arch": { ... }, "params": [ ... ] },
//!   "meta": { ... }
//! }
//! ```
//!
//! `kind` is `"source"` for a trained source hypothesis and `"target"` for an
//! adapted target model. `meta` is free-form and optional.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, Mlp};
use crate::error::{FhaError, Result};
use crate::numfmt::serialize_sig17_vec;

pub const MODEL_FORMAT: &str = "fha-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub arch: ArchSpec,
    #[serde(serialize_with = "serialize_sig17_vec")]
    pub params: Vec<f64>,
}

impl From<&Mlp> for NetworkRecord {
    fn from(m: &Mlp) -> Self {
        Self {
            arch: m.arch.clone(),
            params: m.params.clone(),
        }
    }
}

impl TryFrom<NetworkRecord> for Mlp {
    type Error = FhaError;

    fn try_from(r: NetworkRecord) -> Result<Self> {
        if r.params.iter().any(|v| !v.is_finite()) {
            return Err(FhaError::Format("non-finite parameter".into()));
        }
        Mlp::new(r.arch, r.params).map_err(|e| FhaError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub kind: String,
    pub seed: u64,
    pub encoder: NetworkRecord,
    pub classifier: NetworkRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mf: ModelFile =
            serde_json::from_str(text).map_err(|e| FhaError::Format(e.to_string()))?;
        if mf.format != MODEL_FORMAT {
            return Err(FhaError::Format(format!(
                "unsupported model format {:?}",
                mf.format
            )));
        }
        Ok(mf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
