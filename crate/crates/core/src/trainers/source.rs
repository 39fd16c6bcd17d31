use rand::seq::SliceRandom;

use super::{classification_grads, classifier_arch, encoder_arch, SourceConfig, SourceHypothesis, SourceMeta};
use crate::data::Dataset;
use crate::error::{FhaError, Result};
use crate::harness::accuracy;
use crate::nn::{AdamState, Mlp};
use crate::rng;

/// Trains `(g_s, h_s)` with minibatch cross-entropy and Adam.
///
/// A shuffled `holdout_fraction` of the source data is held out; the model
/// is rejected if its held-out accuracy is below `min_test_accuracy`.
pub fn train_source(source: &Dataset, cfg: &SourceConfig, seed: u64, task: &str) -> Result<SourceHypothesis> {
    cfg.validate()?;
    if source.len() < 2 {
        return Err(FhaError::InvalidArgument("source dataset needs at least 2 samples".into()));
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut rng::stream(seed, "source-split", 0));
    let n_test = ((source.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, source.len() - 1);
    let (test_idx, train_idx) = order.split_at(n_test);
    let train = source.subset(train_idx);
    let test = source.subset(test_idx);

    let mut encoder = Mlp::init(
        encoder_arch(source.dim(), cfg.hidden)?,
        &mut rng::stream(seed, "source-encoder", 0),
    );
    let mut classifier = Mlp::init(
        classifier_arch(cfg.hidden, source.num_classes())?,
        &mut rng::stream(seed, "source-classifier", 0),
    );
    let mut adam_enc = AdamState::new(encoder.params.len(), cfg.lr);
    let mut adam_cls = AdamState::new(classifier.params.len(), cfg.lr);

    let x = train.to_matrix();
    let y = train.labels_usize();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng::stream(seed, "source-batches", epoch as u64));
        for batch in idx.chunks(cfg.batch_size) {
            let xb = x.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (_, g_enc, g_cls) = classification_grads(&encoder, &classifier, &xb, &yb, true)?;
            adam_enc.step(&mut encoder.params, &g_enc.expect("requested"))?;
            adam_cls.step(&mut classifier.params, &g_cls)?;
        }
    }

    let mut h = SourceHypothesis::new(
        encoder,
        classifier,
        SourceMeta {
            task: task.to_string(),
            seed,
            train_accuracy: 0.0,
            test_accuracy: 0.0,
        },
    )?;
    let train_accuracy = accuracy(&h, &train)?;
    let test_accuracy = accuracy(&h, &test)?;
    h.meta.train_accuracy = train_accuracy;
    h.meta.test_accuracy = test_accuracy;
    log::debug!("source model seed {seed}: train {train_accuracy:.4}, held-out {test_accuracy:.4}");
    if test_accuracy < cfg.min_test_accuracy {
        return Err(FhaError::QualityGate {
            accuracy: test_accuracy,
            required: cfg.min_test_accuracy,
        });
    }
    Ok(h)
}
