//! Feedforward MLPs with exact reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>`. Layer `l` (mapping `in -> out`)
//! owns a contiguous block: `in * out` weights stored row-major as
//! `W[i][o]`, followed by `out` biases. Forward is `a' = act(a W + b)`, and a
//! softmax head, when present, is applied after the last activation.

mod adam;
mod gradcheck;
mod matrix;
pub mod model_file;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{AdamState, DEFAULT_LR};
pub use gradcheck::{grad_check_fd, GradCheckReport, FD_STEP};
pub use matrix::Matrix;

use crate::error::{FhaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Logistic,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Linear,
    Softmax,
}

/// Layer widths, one activation per layer, and an output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: Head,
}

impl ArchSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, head: Head) -> Result<Self> {
        let arch = Self {
            widths,
            activations,
            head,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Hidden layers use `hidden_act`; the last layer is affine.
    pub fn mlp(widths: &[usize], hidden_act: Activation, head: Head) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let mut acts = vec![hidden_act; layers];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        Self::new(widths.to_vec(), acts, head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(FhaError::InvalidArgument(
                "architecture needs at least one layer".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(FhaError::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        if self.activations.len() != self.num_layers() {
            return Err(FhaError::InvalidArgument(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.num_layers()
            )));
        }
        if self.head == Head::Softmax && self.output_width() < 2 {
            return Err(FhaError::InvalidArgument(
                "softmax head needs at least 2 outputs".into(),
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_len(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// `(weights, biases)` ranges of each layer inside the flat vector.
    pub fn layout(&self) -> Vec<(Range<usize>, Range<usize>)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let wr = off..off + w[0] * w[1];
                let br = wr.end..wr.end + w[1];
                off = br.end;
                (wr, br)
            })
            .collect()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Vec<f64> {
    let mut params = vec![0.0; arch.param_len()];
    for (w, (wr, _)) in arch.widths.windows(2).zip(arch.layout()) {
        let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
        for p in &mut params[wr] {
            *p = rng.random_range(-limit..=limit);
        }
    }
    params
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
    /// Softmax output, when the head is softmax.
    probs: Option<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.probs
            .as_ref()
            .unwrap_or_else(|| self.acts.last().unwrap())
    }

    pub fn into_output(mut self) -> Matrix {
        match self.probs.take() {
            Some(p) => p,
            None => self.acts.pop().unwrap(),
        }
    }
}

fn check_params(arch: &ArchSpec, params: &[f64]) -> Result<()> {
    if params.len() != arch.param_len() {
        return Err(FhaError::shape(format!(
            "{} parameters for an architecture needing {}",
            params.len(),
            arch.param_len()
        )));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn forward_trace(arch: &ArchSpec, params: &[f64], batch: &Matrix) -> Result<ForwardTrace> {
    check_params(arch, params)?;
    if batch.cols() != arch.input_width() {
        return Err(FhaError::shape(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            arch.input_width()
        )));
    }
    let n = batch.rows();
    let mut acts = Vec::with_capacity(arch.num_layers() + 1);
    let mut pre = Vec::with_capacity(arch.num_layers());
    acts.push(batch.clone());
    for (l, (wr, br)) in arch.layout().into_iter().enumerate() {
        let (fan_in, fan_out) = (arch.widths[l], arch.widths[l + 1]);
        let w = &params[wr];
        let b = &params[br];
        let input = &acts[l];
        let mut z = Matrix::zeros(n, fan_out);
        for i in 0..n {
            let x = input.row(i);
            let zr = z.row_mut(i);
            zr.copy_from_slice(b);
            for (k, &xk) in x.iter().enumerate().take(fan_in) {
                let wrow = &w[k * fan_out..(k + 1) * fan_out];
                for (zo, &wv) in zr.iter_mut().zip(wrow) {
                    *zo += xk * wv;
                }
            }
        }
        let act = arch.activations[l];
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = act.apply(*v);
        }
        pre.push(z);
        acts.push(a);
    }
    let probs = match arch.head {
        Head::Softmax => Some(softmax_rows(acts.last().unwrap())),
        Head::Linear => None,
    };
    Ok(ForwardTrace { acts, pre, probs })
}

pub fn forward(arch: &ArchSpec, params: &[f64], batch: &Matrix) -> Result<Matrix> {
    Ok(forward_trace(arch, params, batch)?.into_output())
}

/// Reverse-mode pass given `upstream = dL/d(output)`. Returns the parameter
/// gradient and `dL/d(input)`.
pub fn backward_from_trace(
    arch: &ArchSpec,
    params: &[f64],
    trace: &ForwardTrace,
    upstream: &Matrix,
) -> Result<(Vec<f64>, Matrix)> {
    check_params(arch, params)?;
    let out = trace.output();
    if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
        return Err(FhaError::shape(format!(
            "upstream gradient is {}x{}, output is {}x{}",
            upstream.rows(),
            upstream.cols(),
            out.rows(),
            out.cols()
        )));
    }
    let n = upstream.rows();
    // gradient w.r.t. the last activation output
    let mut g = match &trace.probs {
        Some(p) => {
            let mut g = Matrix::zeros(n, p.cols());
            for i in 0..n {
                let pr = p.row(i);
                let ur = upstream.row(i);
                let dot: f64 = pr.iter().zip(ur).map(|(a, b)| a * b).sum();
                for (j, gv) in g.row_mut(i).iter_mut().enumerate() {
                    *gv = pr[j] * (ur[j] - dot);
                }
            }
            g
        }
        None => upstream.clone(),
    };

    let mut grad = vec![0.0; params.len()];
    let layout = arch.layout();
    for l in (0..arch.num_layers()).rev() {
        let (fan_in, fan_out) = (arch.widths[l], arch.widths[l + 1]);
        let act = arch.activations[l];
        let z = &trace.pre[l];
        let a = &trace.acts[l + 1];
        for (gv, (&zv, &av)) in g
            .as_mut_slice()
            .iter_mut()
            .zip(z.as_slice().iter().zip(a.as_slice()))
        {
            *gv *= act.derivative(zv, av);
        }
        let (wr, br) = layout[l].clone();
        let input = &trace.acts[l];
        {
            let (gw, gb) = grad[wr.start..br.end].split_at_mut(wr.len());
            for i in 0..n {
                let gz = g.row(i);
                for (b, &v) in gb.iter_mut().zip(gz) {
                    *b += v;
                }
                let x = input.row(i);
                for (k, &xk) in x.iter().enumerate() {
                    let gwrow = &mut gw[k * fan_out..(k + 1) * fan_out];
                    for (gwv, &v) in gwrow.iter_mut().zip(gz) {
                        *gwv += xk * v;
                    }
                }
            }
        }
        let w = &params[wr];
        let mut gin = Matrix::zeros(n, fan_in);
        for i in 0..n {
            let gz = g.row(i);
            let gi = gin.row_mut(i);
            for (k, giv) in gi.iter_mut().enumerate() {
                let wrow = &w[k * fan_out..(k + 1) * fan_out];
                *giv = wrow.iter().zip(gz).map(|(a, b)| a * b).sum();
            }
        }
        g = gin;
    }
    Ok((grad, g))
}

pub fn backward(
    arch: &ArchSpec,
    params: &[f64],
    batch: &Matrix,
    upstream: &Matrix,
) -> Result<(Vec<f64>, Matrix)> {
    let trace = forward_trace(arch, params, batch)?;
    backward_from_trace(arch, params, &trace, upstream)
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub arch: ArchSpec,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(arch: ArchSpec, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        check_params(&arch, &params)?;
        Ok(Self { arch, params })
    }

    pub fn init<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Self {
        let params = init_params(&arch, rng);
        Self { arch, params }
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        forward(&self.arch, &self.params, batch)
    }

    pub fn forward_trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        forward_trace(&self.arch, &self.params, batch)
    }

    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        backward_from_trace(&self.arch, &self.params, trace, upstream)
    }

    pub fn fingerprint(&self) -> u64 {
        crate::rng::fingerprint(&self.params)
    }
}
