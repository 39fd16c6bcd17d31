//! One-step TOHAN: generators and adaptation trained in a single loop.

use super::adapt::Adapter;
use super::generator::{GeneratorBank, GeneratorMode};
use super::{SourceHypothesis, TohanConfig, Trained};
use crate::data::FewShotSet;
use crate::error::{FhaError, Result};

/// Runs `max_epochs` epochs. Every epoch updates each generator once and
/// rebuilds the intermediate pool from that epoch's generated batches. At
/// epoch `max_epochs - adapt_epochs` the discriminator is pretrained for
/// `pretrain_epochs` steps; from then on every epoch also performs one
/// target update and one discriminator update.
pub fn train_tohan(h: &SourceHypothesis, fs: &FewShotSet, cfg: &TohanConfig) -> Result<Trained> {
    cfg.validate()?;
    if fs.num_classes() != h.num_classes() || fs.dim() != h.input_dim() {
        return Err(FhaError::shape("few-shot set does not match the source model"));
    }
    let mut bank = GeneratorBank::new(h.num_classes(), h.input_dim(), cfg)?;
    let mut adapter = Adapter::new(h, fs, cfg)?;
    let start = cfg.adapt_start();
    let mut trace = Vec::new();
    for t in 0..cfg.max_epochs {
        let pool = bank.epoch(
            t,
            h,
            fs,
            GeneratorMode::Combined,
            cfg,
            &mut trace,
            adapter.fingerprints(0),
        )?;
        if t < start {
            continue;
        }
        let gen_fp = bank.fingerprint();
        if t == start {
            adapter.pretrain(&pool, fs, cfg, t, gen_fp, &mut trace)?;
        }
        adapter.adapt_step(&pool, fs, cfg, t - start, t, gen_fp, &mut trace)?;
    }
    Ok(Trained {
        model: adapter.target,
        trace,
    })
}
