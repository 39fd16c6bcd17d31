//! Group-discriminator adaptation shared by the two-step methods and TOHAN.

use super::{
    discriminator_arch, Fingerprints, ParamSet, Phase, SourceHypothesis, TargetModel, TohanConfig,
    TraceRecord, Trained,
};
use crate::data::FewShotSet;
use crate::error::{FhaError, Result};
use crate::losses::{adaptation_loss, beta_schedule, group_ce_loss_grad, AdaptationLoss, LabeledBatch, PairSet};
use crate::nn::{AdamState, Matrix, Mlp};
use crate::pairing::{build_groups, phi, Group, LabeledPool, PairBatch};
use crate::rng;

/// Target model, group discriminator and their optimizers.
///
/// The discriminator keeps one Adam state for both pretraining and
/// adaptation; only its learning rate switches.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub target: TargetModel,
    pub disc: Mlp,
    adam_enc: AdamState,
    adam_cls: AdamState,
    adam_disc: AdamState,
    x_t: Matrix,
    y_t: Vec<usize>,
}

impl Adapter {
    pub fn new(h: &SourceHypothesis, fs: &FewShotSet, cfg: &TohanConfig) -> Result<Self> {
        if fs.num_classes() != h.num_classes() || fs.dim() != h.input_dim() {
            return Err(FhaError::shape("few-shot set does not match the source model"));
        }
        let target = TargetModel::from_source(h);
        let arch = discriminator_arch(target.encoder.arch.output_width(), cfg.discriminator_hidden)?;
        let disc = Mlp::init(arch, &mut rng::stream(cfg.seed, "discriminator-init", 0));
        Ok(Self {
            adam_enc: AdamState::new(target.encoder.params.len(), cfg.lr_target),
            adam_cls: AdamState::new(target.classifier.params.len(), cfg.lr_target),
            adam_disc: AdamState::new(disc.params.len(), cfg.lr_discriminator_pretrain),
            target,
            disc,
            x_t: fs.samples().to_matrix(),
            y_t: fs.samples().labels_usize(),
        })
    }

    pub fn fingerprints(&self, generators: u64) -> Fingerprints {
        Fingerprints {
            generators,
            discriminator: self.disc.fingerprint(),
            target: self.target.fingerprint(),
        }
    }

    pub fn set_discriminator_lr(&mut self, lr: f64) {
        self.adam_disc.lr = lr;
    }

    /// One update of `D` on all four groups, with `g_t` frozen.
    pub fn discriminator_step(&mut self, batch: &PairBatch) -> Result<f64> {
        let features = phi(&self.target.encoder, batch.first(), batch.second())?;
        let td = self.disc.forward_trace(&features)?;
        let (loss, dprobs) = group_ce_loss_grad(td.output(), &batch.group_labels())?;
        let (grad, _) = self.disc.backward(&td, &dprobs)?;
        self.adam_disc.step(&mut self.disc.params, &grad)?;
        Ok(loss)
    }

    /// One update of `g_t` and `h_t` with `D` frozen.
    pub fn target_step(&mut self, batch: &PairBatch, beta: f64) -> Result<AdaptationLoss> {
        let (g2a, g2b) = batch.group(Group::G2);
        let (g4a, g4b) = batch.group(Group::G4);
        let loss = adaptation_loss(
            PairSet { first: &g2a, second: &g2b },
            PairSet { first: &g4a, second: &g4b },
            &self.disc,
            &self.target.encoder,
            &self.target.classifier,
            LabeledBatch { features: &self.x_t, labels: &self.y_t },
            beta,
        )?;
        if !loss.value.is_finite() {
            return Err(FhaError::Numerical(format!("adaptation loss {}", loss.value)));
        }
        self.adam_enc.step(&mut self.target.encoder.params, &loss.grad_encoder)?;
        self.adam_cls.step(&mut self.target.classifier.params, &loss.grad_classifier)?;
        Ok(loss)
    }

    /// `T_d` discriminator updates on pairs drawn from `pool`, recorded under
    /// `epoch`.
    pub(crate) fn pretrain(
        &mut self,
        pool: &LabeledPool,
        fs: &FewShotSet,
        cfg: &TohanConfig,
        epoch: usize,
        generators: u64,
        trace: &mut Vec<TraceRecord>,
    ) -> Result<()> {
        self.set_discriminator_lr(cfg.lr_discriminator_pretrain);
        for i in 0..cfg.pretrain_epochs {
            let seed = rng::derive_seed(cfg.seed, "pairs-pretrain", i as u64);
            let batch = build_groups(pool, fs, cfg.per_group(), seed)?;
            let loss = self.discriminator_step(&batch)?;
            trace.push(
                TraceRecord::new(epoch, Phase::PretrainD, i, ParamSet::Discriminator)
                    .loss("group_ce", loss)
                    .dm(pool.len())
                    .with_fingerprints(self.fingerprints(generators)),
            );
        }
        self.set_discriminator_lr(cfg.lr_discriminator);
        Ok(())
    }

    /// Adaptation step `k` (0-based): one pair sample, one `h∘g` update with
    /// `beta(k / T_f)`, then one `D` update on the same pairs.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn adapt_step(
        &mut self,
        pool: &LabeledPool,
        fs: &FewShotSet,
        cfg: &TohanConfig,
        k: usize,
        epoch: usize,
        generators: u64,
        trace: &mut Vec<TraceRecord>,
    ) -> Result<()> {
        let seed = rng::derive_seed(cfg.seed, "pairs-adapt", k as u64);
        let batch = build_groups(pool, fs, cfg.per_group(), seed)?;
        let beta = beta_schedule(k as f64 / cfg.adapt_epochs.max(1) as f64);
        let loss = self.target_step(&batch, beta)?;
        trace.push(
            TraceRecord::new(epoch, Phase::AdaptTarget, 0, ParamSet::Target)
                .loss("adaptation", loss.value)
                .loss("confusion", loss.confusion)
                .loss("classification", loss.classification)
                .loss("beta", loss.beta)
                .dm(pool.len())
                .with_fingerprints(self.fingerprints(generators)),
        );
        let d_loss = self.discriminator_step(&batch)?;
        trace.push(
            TraceRecord::new(epoch, Phase::AdaptD, 0, ParamSet::Discriminator)
                .loss("group_ce", d_loss)
                .dm(pool.len())
                .with_fingerprints(self.fingerprints(generators)),
        );
        Ok(())
    }
}

/// FADA-style adaptation on a fixed intermediate pool: `T_d` discriminator
/// pretraining steps followed by `T_f` alternating adaptation steps.
pub fn adapt_pairwise(
    intermediate: &LabeledPool,
    fs: &FewShotSet,
    h: &SourceHypothesis,
    cfg: &TohanConfig,
) -> Result<Trained> {
    cfg.validate()?;
    let mut adapter = Adapter::new(h, fs, cfg)?;
    let mut trace = Vec::with_capacity(cfg.pretrain_epochs + 2 * cfg.adapt_epochs);
    if cfg.adapt_epochs > 0 {
        adapter.pretrain(intermediate, fs, cfg, 0, 0, &mut trace)?;
    }
    for k in 0..cfg.adapt_epochs {
        adapter.adapt_step(intermediate, fs, cfg, k, k, 0, &mut trace)?;
    }
    Ok(Trained {
        model: adapter.target,
        trace,
    })
}
