use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Training phase of a single parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Finetune,
    Generator,
    PretrainD,
    AdaptTarget,
    AdaptD,
}

/// The parameter set an update touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSet {
    Generator(usize),
    Discriminator,
    /// Encoder and classifier of the target model.
    Target,
    Classifier,
    Encoder,
}

/// Fingerprints of each parameter set after the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fingerprints {
    pub generators: u64,
    pub discriminator: u64,
    pub target: u64,
}

/// One update step. Serialized as one line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Position within the phase for this epoch (class index for generator
    /// steps, iteration for discriminator pretraining).
    pub step: usize,
    pub updated: ParamSet,
    pub losses: BTreeMap<String, f64>,
    /// Size of the intermediate pool at the time of the update.
    pub dm_size: usize,
    pub fingerprints: Fingerprints,
}

impl TraceRecord {
    pub(crate) fn new(epoch: usize, phase: Phase, step: usize, updated: ParamSet) -> Self {
        Self {
            epoch,
            phase,
            step,
            updated,
            losses: BTreeMap::new(),
            dm_size: 0,
            fingerprints: Fingerprints::default(),
        }
    }

    pub(crate) fn loss(mut self, name: &str, value: f64) -> Self {
        self.losses.insert(name.to_string(), value);
        self
    }

    pub(crate) fn dm(mut self, size: usize) -> Self {
        self.dm_size = size;
        self
    }

    pub(crate) fn with_fingerprints(mut self, f: Fingerprints) -> Self {
        self.fingerprints = f;
        self
    }
}
