//! Every method: source training, the benchmark ladder (WA, FT, SHOT,
//! S+FADA, T+FADA), the two-step ablation ST+FADA, and one-step TOHAN.

mod adapt;
mod baselines;
mod generator;
mod source;
mod tohan;
mod trace;
mod two_step;

use serde::{Deserialize, Serialize};

pub use adapt::{adapt_pairwise, Adapter};
pub use baselines::{eval_wa, train_ft, train_shot};
pub use generator::{
    generator_objective, train_generator_bank, GeneratorBank, GeneratorMode, GeneratorObjective,
};
pub use source::train_source;
pub use tohan::train_tohan;
pub use trace::{Fingerprints, ParamSet, Phase, TraceRecord};
pub use two_step::{run_two_step, TwoStepMethod};

use crate::error::{FhaError, Result};
use crate::losses::{cross_entropy_grad, DEFAULT_GEN_BATCH, DEFAULT_LAMBDA};
use crate::nn::{Activation, ArchSpec, Head, Matrix, Mlp, DEFAULT_LR};

/// An encoder followed by a softmax classifier head.
pub trait FeatureClassifier {
    fn encoder(&self) -> &Mlp;
    fn classifier(&self) -> &Mlp;

    fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.encoder().forward(x)
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.classifier().forward(&self.embed(x)?)
    }

    /// Argmax predictions, lowest class index on ties.
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.argmax_rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub task: String,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// The frozen source model `(g_s, h_s)`. Trainers only ever borrow it.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceHypothesis {
    encoder: Mlp,
    classifier: Mlp,
    meta: SourceMeta,
}

impl SourceHypothesis {
    pub fn new(encoder: Mlp, classifier: Mlp, meta: SourceMeta) -> Result<Self> {
        check_pair(&encoder, &classifier)?;
        Ok(Self {
            encoder,
            classifier,
            meta,
        })
    }

    pub fn meta(&self) -> &SourceMeta {
        &self.meta
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.arch.output_width()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.arch.input_width()
    }

    /// Fingerprint of all parameter bytes.
    pub fn fingerprint(&self) -> u64 {
        crate::rng::fingerprint(&[
            f64::from_bits(self.encoder.fingerprint()),
            f64::from_bits(self.classifier.fingerprint()),
        ])
    }
}

impl FeatureClassifier for SourceHypothesis {
    fn encoder(&self) -> &Mlp {
        &self.encoder
    }
    fn classifier(&self) -> &Mlp {
        &self.classifier
    }
}

/// The adapted target model `(g_t, h_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub encoder: Mlp,
    pub classifier: Mlp,
}

impl TargetModel {
    /// `g_t = g_s`, `h_t = h_s`, bit for bit.
    pub fn from_source(h: &SourceHypothesis) -> Self {
        Self {
            encoder: h.encoder.clone(),
            classifier: h.classifier.clone(),
        }
    }

    pub fn new(encoder: Mlp, classifier: Mlp) -> Result<Self> {
        check_pair(&encoder, &classifier)?;
        Ok(Self {
            encoder,
            classifier,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        crate::rng::fingerprint(&[
            f64::from_bits(self.encoder.fingerprint()),
            f64::from_bits(self.classifier.fingerprint()),
        ])
    }
}

impl FeatureClassifier for TargetModel {
    fn encoder(&self) -> &Mlp {
        &self.encoder
    }
    fn classifier(&self) -> &Mlp {
        &self.classifier
    }
}

fn check_pair(encoder: &Mlp, classifier: &Mlp) -> Result<()> {
    if encoder.arch.output_width() != classifier.arch.input_width() {
        return Err(FhaError::shape(format!(
            "encoder emits {} features, classifier expects {}",
            encoder.arch.output_width(),
            classifier.arch.input_width()
        )));
    }
    if classifier.arch.head != Head::Softmax {
        return Err(FhaError::InvalidArgument("classifier needs a softmax head".into()));
    }
    Ok(())
}

/// Result of a trainer: the model and the per-step trace.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: TargetModel,
    pub trace: Vec<TraceRecord>,
}

pub fn encoder_arch(dim: usize, hidden: usize) -> Result<ArchSpec> {
    ArchSpec::new(
        vec![dim, hidden, hidden],
        vec![Activation::Tanh, Activation::Tanh],
        Head::Linear,
    )
}

pub fn classifier_arch(hidden: usize, classes: usize) -> Result<ArchSpec> {
    ArchSpec::new(vec![hidden, classes], vec![Activation::Identity], Head::Softmax)
}

/// Latent noise to feature space, squashed into `[0,1]` by a logistic unit.
pub fn generator_arch(z_dim: usize, hidden: usize, dim: usize) -> Result<ArchSpec> {
    ArchSpec::new(
        vec![z_dim, hidden, dim],
        vec![Activation::Tanh, Activation::Logistic],
        Head::Linear,
    )
}

/// Pair embedding (two encoder outputs) to four group probabilities.
pub fn discriminator_arch(embed_width: usize, hidden: usize) -> Result<ArchSpec> {
    ArchSpec::new(
        vec![2 * embed_width, hidden, 4],
        vec![Activation::Tanh, Activation::Identity],
        Head::Softmax,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of the source data held out to measure source accuracy.
    pub holdout_fraction: f64,
    /// Training fails if held-out accuracy is below this.
    pub min_test_accuracy: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 40,
            batch_size: 64,
            lr: 3e-3,
            holdout_fraction: 0.2,
            min_test_accuracy: 0.8,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(FhaError::Config("source hidden width and batch size must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(FhaError::Config("source lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || self.holdout_fraction == 0.0 {
            return Err(FhaError::Config("holdout_fraction must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// FT and SHOT budget: full-batch steps on the few-shot set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            lr: DEFAULT_LR,
        }
    }
}

/// Hyperparameters of TOHAN and of the two-step methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TohanConfig {
    pub lambda: f64,
    pub gen_batch: usize,
    pub pair_batch: usize,
    /// Pairs per group; defaults to `pair_batch / 4`.
    pub per_group: Option<usize>,
    pub lr_generator: f64,
    pub lr_discriminator_pretrain: f64,
    pub lr_target: f64,
    pub lr_discriminator: f64,
    pub max_epochs: usize,
    pub pretrain_epochs: usize,
    pub adapt_epochs: usize,
    pub z_dim: usize,
    pub generator_hidden: usize,
    pub discriminator_hidden: usize,
    pub seed: u64,
}

impl Default for TohanConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            gen_batch: DEFAULT_GEN_BATCH,
            pair_batch: 64,
            per_group: None,
            lr_generator: DEFAULT_LR,
            lr_discriminator_pretrain: DEFAULT_LR,
            lr_target: DEFAULT_LR,
            lr_discriminator: DEFAULT_LR,
            max_epochs: 500,
            pretrain_epochs: 100,
            adapt_epochs: 50,
            z_dim: 8,
            generator_hidden: 32,
            discriminator_hidden: 32,
            seed: 0,
        }
    }
}

impl TohanConfig {
    pub fn per_group(&self) -> usize {
        self.per_group.unwrap_or((self.pair_batch / 4).max(1))
    }

    /// First epoch of the adaptation phase.
    pub fn adapt_start(&self) -> usize {
        self.max_epochs - self.adapt_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FhaError::Config(m.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.gen_batch == 0
            || self.pair_batch == 0
            || self.per_group() == 0
            || self.z_dim == 0
            || self.max_epochs == 0
            || self.generator_hidden == 0
            || self.discriminator_hidden == 0
        {
            return bad("batch sizes, widths, z_dim and max_epochs must be positive");
        }
        if self.adapt_epochs >= self.max_epochs {
            return bad("adapt_epochs must be smaller than max_epochs");
        }
        for lr in [
            self.lr_generator,
            self.lr_discriminator_pretrain,
            self.lr_target,
            self.lr_discriminator,
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rates must be positive");
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy of `(encoder, classifier)` on `(x, labels)` with
/// gradients for the classifier and, if requested, the encoder.
pub(crate) fn classification_grads(
    encoder: &Mlp,
    classifier: &Mlp,
    x: &Matrix,
    labels: &[usize],
    want_encoder: bool,
) -> Result<(f64, Option<Vec<f64>>, Vec<f64>)> {
    let te = encoder.forward_trace(x)?;
    let tc = classifier.forward_trace(te.output())?;
    let (loss, dprobs) = cross_entropy_grad(tc.output(), labels)?;
    if !loss.is_finite() {
        return Err(FhaError::Numerical(format!("non-finite loss {loss}")));
    }
    let (g_cls, demb) = classifier.backward(&tc, &dprobs)?;
    let g_enc = if want_encoder {
        Some(encoder.backward(&te, &demb)?.0)
    } else {
        None
    };
    Ok((loss, g_enc, g_cls))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = TohanConfig::default();
        assert_eq!(c.lambda, 0.2);
        assert_eq!(c.gen_batch, 32);
        assert_eq!(c.pair_batch, 64);
        assert_eq!((c.max_epochs, c.pretrain_epochs, c.adapt_epochs), (500, 100, 50));
        for lr in [c.lr_generator, c.lr_discriminator_pretrain, c.lr_target, c.lr_discriminator] {
            assert_eq!(lr, 1e-3);
        }
        assert_eq!(c.z_dim, 8);
        assert_eq!(c.per_group(), 16);
        assert_eq!(c.adapt_start(), 450);
        c.validate().unwrap();
    }

    #[test]
    fn schedule_must_fit() {
        let c = TohanConfig {
            adapt_epochs: 500,
            ..TohanConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TohanConfig {
            adapt_epochs: 0,
            ..TohanConfig::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn default_architectures() {
        assert_eq!(encoder_arch(2, 32).unwrap().widths, vec![2, 32, 32]);
        assert_eq!(classifier_arch(32, 3).unwrap().widths, vec![32, 3]);
        assert_eq!(generator_arch(8, 32, 2).unwrap().widths, vec![8, 32, 2]);
        assert_eq!(discriminator_arch(32, 32).unwrap().widths, vec![64, 32, 4]);
    }
}
