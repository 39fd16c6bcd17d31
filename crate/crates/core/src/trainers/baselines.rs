//! WA, FT and SHOT.

use super::{
    classification_grads, FinetuneConfig, Fingerprints, ParamSet, Phase,
    SourceHypothesis, TargetModel, TraceRecord, Trained,
};
use crate::data::{Dataset, FewShotSet};
use crate::error::{FhaError, Result};
use crate::harness::accuracy;
use crate::nn::AdamState;

/// Without adaptation: the source model applied to the target test split.
pub fn eval_wa(h: &SourceHypothesis, target_test: &Dataset) -> Result<f64> {
    accuracy(h, target_test)
}

fn check_few_shot(h: &SourceHypothesis, fs: &FewShotSet) -> Result<()> {
    if fs.samples().is_empty() {
        return Err(FhaError::InvalidArgument("empty few-shot set".into()));
    }
    if fs.dim() != h.input_dim() || fs.num_classes() != h.num_classes() {
        return Err(FhaError::shape(format!(
            "few-shot set is {}-dimensional with {} classes, model expects {} and {}",
            fs.dim(),
            fs.num_classes(),
            h.input_dim(),
            h.num_classes()
        )));
    }
    Ok(())
}

fn fingerprints(m: &TargetModel) -> Fingerprints {
    Fingerprints {
        target: m.fingerprint(),
        ..Fingerprints::default()
    }
}

/// Fine-tuning: the encoder stays frozen at `g_s`; only the classifier is
/// trained on the few-shot set.
pub fn train_ft(h: &SourceHypothesis, fs: &FewShotSet, cfg: &FinetuneConfig) -> Result<Trained> {
    check_few_shot(h, fs)?;
    let mut model = TargetModel::from_source(h);
    let x = fs.samples().to_matrix();
    let y = fs.samples().labels_usize();
    let mut adam = AdamState::new(model.classifier.params.len(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, _, g_cls) = classification_grads(&model.encoder, &model.classifier, &x, &y, false)?;
        adam.step(&mut model.classifier.params, &g_cls)?;
        trace.push(
            TraceRecord::new(step, Phase::Finetune, 0, ParamSet::Classifier)
                .loss("ce", loss)
                .with_fingerprints(fingerprints(&model)),
        );
    }
    Ok(Trained { model, trace })
}

/// SHOT with labeled target data: the classifier stays frozen at `h_s`;
/// only the encoder is trained, using the true few-shot labels.
pub fn train_shot(h: &SourceHypothesis, fs: &FewShotSet, cfg: &FinetuneConfig) -> Result<Trained> {
    check_few_shot(h, fs)?;
    let mut model = TargetModel::from_source(h);
    let x = fs.samples().to_matrix();
    let y = fs.samples().labels_usize();
    let mut adam = AdamState::new(model.encoder.params.len(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, g_enc, _) = classification_grads(&model.encoder, &model.classifier, &x, &y, true)?;
        adam.step(&mut model.encoder.params, &g_enc.expect("requested"))?;
        trace.push(
            TraceRecord::new(step, Phase::Finetune, 0, ParamSet::Encoder)
                .loss("ce", loss)
                .with_fingerprints(fingerprints(&model)),
        );
    }
    Ok(Trained { model, trace })
}
