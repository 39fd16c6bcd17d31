//! Generator losses, the augmented L1 distance, the group discriminator loss
//! and the target adaptation loss.
//!
//! Every loss comes with an analytic gradient. The `*_grad` variants return
//! `(value, gradient)`; the gradient is taken with respect to the loss's
//! direct input (probabilities or generated points), and callers chain it
//! through the networks with [`crate::nn::backward_from_trace`].

use log::warn;

use crate::error::{FhaError, Result};
use crate::nn::{Matrix, Mlp};

/// Lower clamp applied to every probability before a logarithm.
pub const PROB_CLAMP: f64 = 1e-12;
/// Default weight of the target-distance term in the generator loss.
pub const DEFAULT_LAMBDA: f64 = 0.2;
/// Default generator batch size.
pub const DEFAULT_GEN_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenLossConfig {
    pub class: usize,
    pub batch_size: usize,
    pub lambda: f64,
    /// Diameter of the feature space under the augmented L1 distance.
    pub diameter: f64,
}

impl GenLossConfig {
    pub fn new(class: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            class,
            batch_size: DEFAULT_GEN_BATCH,
            lambda: DEFAULT_LAMBDA,
            diameter: l1_diameter(dim)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FhaError::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(FhaError::InvalidArgument("generator batch size must be >= 1".into()));
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(FhaError::InvalidArgument(format!("diameter {} must be > 0", self.diameter)));
        }
        Ok(())
    }
}

/// `(1/B) * |l_n - 1|^2` over the class-`n` probabilities of a generated batch.
pub fn gen_source_loss(l_n: &[f64]) -> Result<f64> {
    Ok(gen_source_loss_grad(l_n)?.0)
}

pub fn gen_source_loss_grad(l_n: &[f64]) -> Result<(f64, Vec<f64>)> {
    if l_n.is_empty() {
        return Err(FhaError::InvalidArgument("empty generated batch".into()));
    }
    if let Some(p) = l_n.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(FhaError::InvalidArgument(format!("probability {p} outside [0,1]")));
    }
    let b = l_n.len() as f64;
    let value = l_n.iter().map(|p| (p - 1.0) * (p - 1.0)).sum::<f64>() / b;
    let grad = l_n.iter().map(|p| 2.0 * (p - 1.0) / b).collect();
    Ok((value, grad))
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(FhaError::shape(format!(
            "augmented L1 of {}- and {}-dimensional points",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `sum_i w_i |x_i - y_i|` with `w_i = |x_i - y_i|^2 / |x - y|_2`, which is
/// `sum |d_i|^3 / |d|_2`. Zero when `x == y`.
pub fn augmented_l1(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    Ok(aug_l1_value(x, y))
}

fn aug_l1_value(x: &[f64], y: &[f64]) -> f64 {
    let mut cubes = 0.0;
    let mut squares = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = (a - b).abs();
        cubes += d * d * d;
        squares += d * d;
    }
    if squares == 0.0 {
        0.0
    } else {
        cubes / squares.sqrt()
    }
}

/// Value and gradient with respect to `x`.
pub fn augmented_l1_grad(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(x, y)?;
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let squares: f64 = diff.iter().map(|d| d * d).sum();
    if squares == 0.0 {
        return Ok((0.0, vec![0.0; x.len()]));
    }
    let norm = squares.sqrt();
    let cubes: f64 = diff.iter().map(|d| d.abs() * d * d).sum();
    let grad = diff
        .iter()
        .map(|&d| 3.0 * d.abs() * d / norm - cubes * d / (norm * squares))
        .collect();
    Ok((cubes / norm, grad))
}

/// Largest augmented L1 distance between two points of `[0,1]^d`: `sqrt(d)`.
pub fn l1_diameter(d: usize) -> Result<f64> {
    if d < 1 {
        return Err(FhaError::InvalidArgument("dimension must be >= 1".into()));
    }
    Ok((d as f64).sqrt())
}

/// `(1/(M B K)) sum_i sum_k |x_m^i - x_t^k|` between a generated batch and the
/// `K` labeled target samples of the generator's class.
pub fn gen_target_loss(generated: &Matrix, targets: &Matrix, diameter: f64) -> Result<f64> {
    Ok(gen_target_loss_grad(generated, targets, diameter)?.0)
}

pub fn gen_target_loss_grad(
    generated: &Matrix,
    targets: &Matrix,
    diameter: f64,
) -> Result<(f64, Matrix)> {
    if targets.rows() == 0 {
        return Err(FhaError::InvalidArgument(
            "no labeled target samples for this class".into(),
        ));
    }
    if generated.rows() == 0 {
        return Err(FhaError::InvalidArgument("empty generated batch".into()));
    }
    if generated.cols() != targets.cols() {
        return Err(FhaError::shape(format!(
            "generated points have {} dims, targets {}",
            generated.cols(),
            targets.cols()
        )));
    }
    let scale = 1.0 / (diameter * generated.rows() as f64 * targets.rows() as f64);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(generated.rows(), generated.cols());
    for i in 0..generated.rows() {
        let x = generated.row(i);
        for t in targets.iter_rows() {
            let (v, g) = augmented_l1_grad(x, t)?;
            value += v;
            for (gi, gv) in grad.row_mut(i).iter_mut().zip(g) {
                *gi += gv * scale;
            }
        }
    }
    Ok((value * scale, grad))
}

/// `L_s + lambda * L_t` for one generator batch.
pub fn gen_total_loss(
    l_n: &[f64],
    generated: &Matrix,
    targets_n: &Matrix,
    cfg: &GenLossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let source = gen_source_loss(l_n)?;
    let target = gen_target_loss(generated, targets_n, cfg.diameter)?;
    Ok(source + cfg.lambda * target)
}

/// Mean clamped negative log-likelihood of `labels` (0-based columns) under
/// row-stochastic `probs`, and its gradient with respect to `probs`.
pub fn cross_entropy_grad(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        return Err(FhaError::shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(FhaError::InvalidArgument("cross-entropy of an empty batch".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(FhaError::InvalidArgument(format!(
            "label {y} outside [0, {})",
            probs.cols()
        )));
    }
    let n = probs.rows() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.get(i, y);
        if p > PROB_CLAMP {
            value -= p.ln();
            grad.set(i, y, -1.0 / (p * n));
        } else {
            value -= PROB_CLAMP.ln();
        }
    }
    Ok((value / n, grad))
}

pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_grad(probs, labels)?.0)
}

fn group_columns(labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&g| {
            if (1..=4).contains(&g) {
                Ok(g - 1)
            } else {
                Err(FhaError::InvalidArgument(format!(
                    "group label {g} outside 1..=4"
                )))
            }
        })
        .collect()
}

/// Four-way categorical cross-entropy of the group discriminator. `labels`
/// are group numbers 1..=4.
pub fn group_ce_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(group_ce_loss_grad(probs, labels)?.0)
}

pub fn group_ce_loss_grad(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.cols() != 4 {
        return Err(FhaError::shape(format!(
            "group discriminator must output 4 probabilities, got {}",
            probs.cols()
        )));
    }
    cross_entropy_grad(probs, &group_columns(labels)?)
}

/// Confusion-term weight `2 / (1 + exp(-10 q)) - 1` at progress `q`, clamped
/// to `[0, 1]`.
pub fn beta_schedule(q: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    2.0 / (1.0 + (-10.0 * q).exp()) - 1.0
}

/// First and second members of a set of pairs, row-aligned.
#[derive(Debug, Clone, Copy)]
pub struct PairSet<'a> {
    pub first: &'a Matrix,
    pub second: &'a Matrix,
}

impl PairSet<'_> {
    pub fn len(&self) -> usize {
        self.first.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.first.rows() == 0
    }
}

/// The labeled few-shot target batch.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

/// Value and gradients of the target adaptation loss. Only the encoder and
/// classifier receive gradients; the discriminator is read-only.
#[derive(Debug, Clone)]
pub struct AdaptationLoss {
    pub value: f64,
    /// Unweighted `CE(G2 -> group 1) + CE(G4 -> group 3)`.
    pub confusion: f64,
    pub classification: f64,
    pub beta: f64,
    pub grad_encoder: Vec<f64>,
    pub grad_classifier: Vec<f64>,
}

/// Encodes both members of each pair, concatenates them, and evaluates the
/// discriminator. Returns the CE towards `group` and adds its gradient,
/// scaled by `weight`, into `grad_encoder`.
fn pair_confusion(
    pairs: PairSet<'_>,
    group: usize,
    weight: f64,
    encoder: &Mlp,
    discriminator: &Mlp,
    grad_encoder: &mut [f64],
) -> Result<f64> {
    let t1 = encoder.forward_trace(pairs.first)?;
    let t2 = encoder.forward_trace(pairs.second)?;
    let width = t1.output().cols();
    let phi = t1.output().hstack(t2.output())?;
    let td = discriminator.forward_trace(&phi)?;
    let labels = vec![group; pairs.len()];
    let (value, dprobs) = group_ce_loss_grad(td.output(), &labels)?;
    if weight == 0.0 {
        return Ok(value);
    }
    let (_, dphi) = discriminator.backward(&td, &dprobs)?;
    let (d1, d2) = dphi.split_cols(width);
    let (g1, _) = encoder.backward(&t1, &d1)?;
    let (g2, _) = encoder.backward(&t2, &d2)?;
    for ((g, a), b) in grad_encoder.iter_mut().zip(g1).zip(g2) {
        *g += weight * (a + b);
    }
    Ok(value)
}

/// `beta * [CE(D(phi(G2)) -> G1) + CE(D(phi(G4)) -> G3)] + CE(f_t(X_t), y_t)`.
///
/// An empty pair set contributes nothing to the confusion term.
pub fn adaptation_loss(
    g2: PairSet<'_>,
    g4: PairSet<'_>,
    discriminator: &Mlp,
    encoder: &Mlp,
    classifier: &Mlp,
    labeled: LabeledBatch<'_>,
    beta: f64,
) -> Result<AdaptationLoss> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(FhaError::InvalidArgument(format!("beta {beta} must be >= 0")));
    }
    if labeled.labels.is_empty() {
        return Err(FhaError::InvalidArgument("no labeled target samples".into()));
    }
    let mut grad_encoder = vec![0.0; encoder.params.len()];
    let mut confusion = 0.0;
    for (pairs, group, name) in [(g2, 1, "G2"), (g4, 3, "G4")] {
        if pairs.is_empty() {
            warn!("adaptation loss: no {name} pairs, confusion term skipped");
            continue;
        }
        confusion += pair_confusion(pairs, group, beta, encoder, discriminator, &mut grad_encoder)?;
    }

    let te = encoder.forward_trace(labeled.features)?;
    let tc = classifier.forward_trace(te.output())?;
    let (classification, dprobs) = cross_entropy_grad(tc.output(), labeled.labels)?;
    let (grad_classifier, demb) = classifier.backward(&tc, &dprobs)?;
    let (ge, _) = encoder.backward(&te, &demb)?;
    for (g, v) in grad_encoder.iter_mut().zip(ge) {
        *g += v;
    }
    Ok(AdaptationLoss {
        value: beta * confusion + classification,
        confusion,
        classification,
        beta,
        grad_encoder,
        grad_classifier,
    })
}
