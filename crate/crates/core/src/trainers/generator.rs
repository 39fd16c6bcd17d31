//! Per-class generators `G_n` trained through the frozen source model.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{generator_arch, Fingerprints, ParamSet, Phase, SourceHypothesis, TohanConfig, TraceRecord};
use crate::data::FewShotSet;
use crate::error::{FhaError, Result};
use crate::losses::{gen_source_loss_grad, gen_target_loss_grad, l1_diameter};
use crate::nn::{AdamState, Matrix, Mlp};
use crate::pairing::{Domain, LabeledPool};
use crate::rng;

/// Which generator loss to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    /// `L_s`: be classified as class `n` by the source model (S+FADA).
    SourceOnly,
    /// `L_t`: be close to the class-`n` target samples (T+FADA).
    TargetOnly,
    /// `L_s + lambda * L_t` (ST+FADA and TOHAN).
    Combined,
}

/// Value and parameter gradient of one generator's loss on one noise batch.
#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    pub value: f64,
    pub source_loss: Option<f64>,
    pub target_loss: Option<f64>,
    pub grad: Vec<f64>,
    /// `G_n(z)`, computed before any update.
    pub generated: Matrix,
}

/// Evaluates the mode's loss for generator `generator` of class `class` and
/// backpropagates it through the frozen source model into the generator.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective(
    generator: &Mlp,
    source: &SourceHypothesis,
    z: &Matrix,
    targets_n: &Matrix,
    class: usize,
    mode: GeneratorMode,
    lambda: f64,
    diameter: f64,
) -> Result<GeneratorObjective> {
    if class >= source.num_classes() {
        return Err(FhaError::InvalidArgument(format!("class {class} out of range")));
    }
    let tg = generator.forward_trace(z)?;
    let x = tg.output();
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut value = 0.0;
    let mut source_loss = None;
    let mut target_loss = None;

    if matches!(mode, GeneratorMode::SourceOnly | GeneratorMode::Combined) {
        let te = source.encoder.forward_trace(x)?;
        let tc = source.classifier.forward_trace(te.output())?;
        let l_n = tc.output().column(class);
        let (ls, dl) = gen_source_loss_grad(&l_n)?;
        let mut dprobs = Matrix::zeros(x.rows(), source.num_classes());
        for (i, g) in dl.into_iter().enumerate() {
            dprobs.set(i, class, g);
        }
        let (_, demb) = source.classifier.backward(&tc, &dprobs)?;
        let (_, dxs) = source.encoder.backward(&te, &demb)?;
        for (a, b) in dx.as_mut_slice().iter_mut().zip(dxs.as_slice()) {
            *a += b;
        }
        value += ls;
        source_loss = Some(ls);
    }

    let target_weight = match mode {
        GeneratorMode::SourceOnly => 0.0,
        GeneratorMode::TargetOnly => 1.0,
        GeneratorMode::Combined => lambda,
    };
    if target_weight != 0.0 {
        if targets_n.rows() == 0 {
            return Err(FhaError::MissingClass(class));
        }
        let (lt, dxt) = gen_target_loss_grad(x, targets_n, diameter)?;
        for (a, b) in dx.as_mut_slice().iter_mut().zip(dxt.as_slice()) {
            *a += target_weight * b;
        }
        value += target_weight * lt;
        target_loss = Some(lt);
    }

    if !value.is_finite() {
        return Err(FhaError::Numerical(format!("generator loss {value}")));
    }
    let (grad, _) = generator.backward(&tg, &dx)?;
    Ok(GeneratorObjective {
        value,
        source_loss,
        target_loss,
        grad,
        generated: tg.into_output(),
    })
}

/// One generator per class, each with its own Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorBank {
    generators: Vec<Mlp>,
    adam: Vec<AdamState>,
    z_dim: usize,
    noise_seed: u64,
}

impl GeneratorBank {
    pub fn new(num_classes: usize, dim: usize, cfg: &TohanConfig) -> Result<Self> {
        let arch = generator_arch(cfg.z_dim, cfg.generator_hidden, dim)?;
        let generators: Vec<Mlp> = (0..num_classes)
            .map(|n| Mlp::init(arch.clone(), &mut rng::stream(cfg.seed, "generator-init", n as u64)))
            .collect();
        let adam = generators
            .iter()
            .map(|g| AdamState::new(g.params.len(), cfg.lr_generator))
            .collect();
        Ok(Self {
            generators,
            adam,
            z_dim: cfg.z_dim,
            noise_seed: rng::derive_seed(cfg.seed, "generator-noise", 0),
        })
    }

    pub fn generators(&self) -> &[Mlp] {
        &self.generators
    }

    pub fn num_classes(&self) -> usize {
        self.generators.len()
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn fingerprint(&self) -> u64 {
        let per: Vec<f64> = self.generators.iter().map(|g| f64::from_bits(g.fingerprint())).collect();
        rng::fingerprint(&per)
    }

    /// Standard normal noise, one independent stream per `(tag, key)`.
    fn noise(&self, tag: &str, key: u64, rows: usize) -> Matrix {
        let mut r = rng::stream(self.noise_seed, tag, key);
        let data = (0..rows * self.z_dim).map(|_| StandardNormal.sample(&mut r)).collect();
        Matrix::from_vec(rows, self.z_dim, data).expect("noise shape")
    }

    /// One epoch: for each class draw noise, generate a batch into the
    /// returned pool, then update that class's generator on the same batch.
    /// Appends one trace record per generator update.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn epoch(
        &mut self,
        epoch: usize,
        source: &SourceHypothesis,
        fs: &FewShotSet,
        mode: GeneratorMode,
        cfg: &TohanConfig,
        trace: &mut Vec<TraceRecord>,
        other: Fingerprints,
    ) -> Result<LabeledPool> {
        let n_classes = self.num_classes();
        let dim = source.input_dim();
        let diameter = l1_diameter(dim)?;
        let mut features = Matrix::zeros(0, dim);
        let mut labels = Vec::with_capacity(n_classes * cfg.gen_batch);
        for n in 0..n_classes {
            let z = self.noise("z", (epoch * n_classes + n) as u64, cfg.gen_batch);
            let targets = fs.class_matrix(n);
            let obj = generator_objective(
                &self.generators[n],
                source,
                &z,
                &targets,
                n,
                mode,
                cfg.lambda,
                diameter,
            )?;
            features = features.vstack(&obj.generated)?;
            labels.extend(std::iter::repeat_n(n, obj.generated.rows()));
            self.adam[n].step(&mut self.generators[n].params, &obj.grad)?;

            let mut rec = TraceRecord::new(epoch, Phase::Generator, n, ParamSet::Generator(n))
                .loss("generator", obj.value)
                .dm(labels.len());
            if let Some(v) = obj.source_loss {
                rec = rec.loss("source", v);
            }
            if let Some(v) = obj.target_loss {
                rec = rec.loss("target", v);
            }
            trace.push(rec.with_fingerprints(Fingerprints {
                generators: self.fingerprint(),
                ..other
            }));
        }
        LabeledPool::new(Domain::Intermediate, features, labels, n_classes)
    }

    /// A fresh labeled pool of `per_class` samples per class, without
    /// updating any generator.
    pub fn sample_pool(&self, per_class: usize) -> Result<LabeledPool> {
        let n_classes = self.num_classes();
        let dim = self.generators[0].arch.output_width();
        let mut features = Matrix::zeros(0, dim);
        let mut labels = Vec::with_capacity(n_classes * per_class);
        for (n, g) in self.generators.iter().enumerate() {
            let z = self.noise("pool", n as u64, per_class);
            features = features.vstack(&g.forward(&z)?)?;
            labels.extend(std::iter::repeat_n(n, per_class));
        }
        LabeledPool::new(Domain::Intermediate, features, labels, n_classes)
    }
}

/// Trains a generator bank for `max_epochs` epochs on the mode's loss.
pub fn train_generator_bank(
    h: &SourceHypothesis,
    fs: &FewShotSet,
    mode: GeneratorMode,
    cfg: &TohanConfig,
) -> Result<(GeneratorBank, Vec<TraceRecord>)> {
    cfg.validate()?;
    if fs.num_classes() != h.num_classes() || fs.dim() != h.input_dim() {
        return Err(FhaError::shape("few-shot set does not match the source model"));
    }
    let mut bank = GeneratorBank::new(h.num_classes(), h.input_dim(), cfg)?;
    let mut trace = Vec::with_capacity(cfg.max_epochs * h.num_classes());
    for epoch in 0..cfg.max_epochs {
        bank.epoch(epoch, h, fs, mode, cfg, &mut trace, Fingerprints::default())?;
    }
    Ok((bank, trace))
}
