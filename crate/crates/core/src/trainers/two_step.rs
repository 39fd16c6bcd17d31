//! Two-step methods: train generators to completion, then adapt on a fixed
//! intermediate pool.

use serde::{Deserialize, Serialize};

use super::adapt::adapt_pairwise;
use super::generator::{train_generator_bank, GeneratorMode};
use super::{SourceHypothesis, TohanConfig, Trained};
use crate::data::FewShotSet;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwoStepMethod {
    /// S+FADA: generators trained on the source loss only.
    SourceOnly,
    /// T+FADA: generators trained on the target distance only.
    TargetOnly,
    /// ST+FADA: the combined generator loss, adapted afterwards.
    Combined,
}

impl TwoStepMethod {
    pub fn mode(self) -> GeneratorMode {
        match self {
            TwoStepMethod::SourceOnly => GeneratorMode::SourceOnly,
            TwoStepMethod::TargetOnly => GeneratorMode::TargetOnly,
            TwoStepMethod::Combined => GeneratorMode::Combined,
        }
    }
}

/// Generators run for `max_epochs` epochs; the pool then holds `gen_batch`
/// fresh samples per class and stays fixed during adaptation.
pub fn run_two_step(
    h: &SourceHypothesis,
    fs: &FewShotSet,
    method: TwoStepMethod,
    cfg: &TohanConfig,
) -> Result<Trained> {
    let (bank, mut trace) = train_generator_bank(h, fs, method.mode(), cfg)?;
    let pool = bank.sample_pool(cfg.gen_batch)?;
    let adapted = adapt_pairwise(&pool, fs, h, cfg)?;
    let offset = cfg.max_epochs;
    trace.extend(adapted.trace.into_iter().map(|mut r| {
        r.epoch += offset;
        r
    }));
    Ok(Trained {
        model: adapted.model,
        trace,
    })
}
