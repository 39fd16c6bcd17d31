//! Synthetic two-domain tasks: a Gaussian mixture source domain and a target
//! domain obtained by rotating (in the plane of the first two coordinates,
//! about the centroid of the class means) and translating the same mixture.
//!
//! Both domains are mapped into `[0,1]^d` through one shared affine box so
//! the transform is the only difference between them. The box is the
//! centroid plus/minus `max_c(|mu_c - centroid| + 4 * spread_c)`, widened by
//! the translation; points beyond it are clipped.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{FhaError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGaussian {
    pub mean: Vec<f64>,
    /// Isotropic standard deviation. Exactly one of `std` and `cov` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    /// Full covariance matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl ClassGaussian {
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Self {
        Self {
            mean,
            std: Some(std),
            cov: None,
        }
    }

    /// Lower Cholesky factor of the covariance.
    fn factor(&self, d: usize) -> Result<DMatrix<f64>> {
        match (self.std, &self.cov) {
            (Some(s), None) => {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(FhaError::InvalidSpec(format!("std {s} must be finite and >= 0")));
                }
                Ok(DMatrix::identity(d, d) * s)
            }
            (None, Some(cov)) => {
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(FhaError::InvalidSpec(format!("covariance must be {d}x{d}")));
                }
                let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
                if (0..d).any(|i| (0..d).any(|j| m[(i, j)] != m[(j, i)])) {
                    return Err(FhaError::InvalidSpec("covariance must be symmetric".into()));
                }
                m.cholesky()
                    .map(|c| c.l())
                    .ok_or_else(|| FhaError::InvalidSpec("covariance is not positive definite".into()))
            }
            _ => Err(FhaError::InvalidSpec(
                "each class needs exactly one of `std` or `cov`".into(),
            )),
        }
    }

    /// Upper bound on the standard deviation along any direction.
    fn spread(&self) -> f64 {
        match (self.std, &self.cov) {
            (Some(s), _) => s,
            (None, Some(cov)) => (0..cov.len()).map(|i| cov[i][i]).sum::<f64>().sqrt(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub source: usize,
    pub target: usize,
    pub target_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub num_classes: usize,
    pub dim: usize,
    pub classes: Vec<ClassGaussian>,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<Vec<f64>>,
    /// Samples per class in each split.
    pub samples_per_class: SplitSizes,
    #[serde(default)]
    pub seed: u64,
}

/// Parses a rotation such as `40`, `40deg` or `40°`. Other units are rejected.
pub fn parse_rotation(text: &str) -> Result<f64> {
    let t = text.trim();
    let number = t
        .strip_suffix("deg")
        .or_else(|| t.strip_suffix('°'))
        .unwrap_or(t)
        .trim();
    match number.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(FhaError::InvalidArgument(format!(
            "invalid rotation {text:?}: expected degrees such as `40` or `40deg`"
        ))),
    }
}

impl TaskSpec {
    /// Three classes on a circle in 2D, target rotated by `rotation_deg`.
    pub fn rotated_triangle(rotation_deg: f64) -> Self {
        let radius = 2.0;
        let classes = [90.0f64, 210.0, 330.0]
            .iter()
            .map(|a| {
                let r = a.to_radians();
                ClassGaussian::isotropic(vec![radius * r.cos(), radius * r.sin()], 0.8)
            })
            .collect();
        Self {
            name: format!("rot{}", fmt_angle(rotation_deg)),
            num_classes: 3,
            dim: 2,
            classes,
            rotation_deg,
            translation: None,
            samples_per_class: SplitSizes {
                source: 200,
                target: 200,
                target_test: 200,
            },
            seed: 0,
        }
    }

    /// Two antipodal classes in 2D; a 180° rotation swaps them.
    pub fn antipodal_pair(rotation_deg: f64) -> Self {
        let classes = vec![
            ClassGaussian::isotropic(vec![-2.0, 0.0], 0.6),
            ClassGaussian::isotropic(vec![2.0, 0.0], 0.6),
        ];
        Self {
            name: format!("pair-rot{}", fmt_angle(rotation_deg)),
            num_classes: 2,
            dim: 2,
            classes,
            rotation_deg,
            translation: None,
            samples_per_class: SplitSizes {
                source: 200,
                target: 200,
                target_test: 200,
            },
            seed: 0,
        }
    }

    /// Named presets: `rot<angle>` (three classes), `pair-rot<angle>` (two
    /// antipodal classes) and `identity` (`rot0`). Angles take an optional
    /// `deg` suffix.
    pub fn preset(name: &str) -> Result<Self> {
        if name == "identity" {
            let mut t = Self::rotated_triangle(0.0);
            t.name = "identity".into();
            return Ok(t);
        }
        if let Some(rest) = name.strip_prefix("pair-rot") {
            return Ok(Self::antipodal_pair(parse_rotation(rest)?));
        }
        if let Some(rest) = name.strip_prefix("rot") {
            return Ok(Self::rotated_triangle(parse_rotation(rest)?));
        }
        Err(FhaError::InvalidArgument(format!(
            "unknown task preset {name:?} (expected rot<deg>, pair-rot<deg> or identity)"
        )))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FhaError::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.dim < 1 {
            return bad("dim must be >= 1".into());
        }
        if self.classes.len() != self.num_classes {
            return bad(format!(
                "{} class distributions for {} classes",
                self.classes.len(),
                self.num_classes
            ));
        }
        let s = self.samples_per_class;
        if s.source == 0 || s.target == 0 || s.target_test == 0 {
            return bad("sample counts per split must be positive".into());
        }
        for (c, g) in self.classes.iter().enumerate() {
            if g.mean.len() != self.dim {
                return bad(format!("class {c} mean has {} coordinates", g.mean.len()));
            }
            if g.mean.iter().any(|v| !v.is_finite()) {
                return bad(format!("class {c} mean is not finite"));
            }
            g.factor(self.dim)?;
        }
        if !self.rotation_deg.is_finite() {
            return bad("rotation must be finite".into());
        }
        if self.dim < 2 && self.rotation_deg.rem_euclid(360.0) != 0.0 {
            return bad("rotation needs dim >= 2".into());
        }
        if let Some(t) = &self.translation {
            if t.len() != self.dim || t.iter().any(|v| !v.is_finite()) {
                return bad(format!("translation must have {} finite coordinates", self.dim));
            }
        }
        Ok(())
    }

    pub fn is_identity_transform(&self) -> bool {
        self.rotation_deg.rem_euclid(360.0) == 0.0
            && self
                .translation
                .as_ref()
                .is_none_or(|t| t.iter().all(|&v| v == 0.0))
    }

    fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for g in &self.classes {
            for (ci, mi) in c.iter_mut().zip(&g.mean) {
                *ci += mi;
            }
        }
        for ci in &mut c {
            *ci /= self.num_classes as f64;
        }
        c
    }
}

fn fmt_angle(a: f64) -> String {
    if a.fract() == 0.0 {
        format!("{}", a as i64)
    } else {
        format!("{a}")
    }
}

struct Sampler {
    dim: usize,
    factors: Vec<DMatrix<f64>>,
    means: Vec<DVector<f64>>,
    centroid: Vec<f64>,
    cos: f64,
    sin: f64,
    translation: Vec<f64>,
    lower: Vec<f64>,
    width: Vec<f64>,
}

impl Sampler {
    fn new(spec: &TaskSpec) -> Result<Self> {
        let d = spec.dim;
        let centroid = spec.centroid();
        let translation = spec.translation.clone().unwrap_or_else(|| vec![0.0; d]);
        let radius = spec
            .classes
            .iter()
            .map(|g| {
                let dist = g
                    .mean
                    .iter()
                    .zip(&centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dist + 4.0 * g.spread()
            })
            .fold(0.0, f64::max)
            .max(1e-6);
        let lower: Vec<f64> = (0..d)
            .map(|j| centroid[j] - radius + translation[j].min(0.0))
            .collect();
        let width: Vec<f64> = (0..d)
            .map(|j| 2.0 * radius + translation[j].abs())
            .collect();
        let theta = spec.rotation_deg.to_radians();
        Ok(Self {
            dim: d,
            factors: spec
                .classes
                .iter()
                .map(|g| g.factor(d))
                .collect::<Result<_>>()?,
            means: spec
                .classes
                .iter()
                .map(|g| DVector::from_column_slice(&g.mean))
                .collect(),
            centroid,
            cos: theta.cos(),
            sin: theta.sin(),
            translation,
            lower,
            width,
        })
    }

    fn split(&self, seed: u64, tag: &str, per_class: usize, transform: bool) -> Dataset {
        let d = self.dim;
        let mut features = Vec::with_capacity(per_class * self.means.len() * d);
        let mut labels = Vec::with_capacity(per_class * self.means.len());
        for (c, (mean, factor)) in self.means.iter().zip(&self.factors).enumerate() {
            let mut rng = rng::stream(seed, tag, c as u64);
            for _ in 0..per_class {
                let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let x = mean + factor * z;
                let mut p: Vec<f64> = x.iter().copied().collect();
                if transform {
                    if d >= 2 {
                        let (u, v) = (p[0] - self.centroid[0], p[1] - self.centroid[1]);
                        p[0] = self.centroid[0] + self.cos * u - self.sin * v;
                        p[1] = self.centroid[1] + self.sin * u + self.cos * v;
                    }
                    for (pj, tj) in p.iter_mut().zip(&self.translation) {
                        *pj += tj;
                    }
                }
                for ((pj, lo), w) in p.iter().zip(&self.lower).zip(&self.width) {
                    let unit = ((pj - lo) / w).clamp(0.0, 1.0);
                    features.push(unit as f32);
                }
                labels.push(c as u32);
            }
        }
        Dataset::new(d, self.means.len(), features, labels).expect("generated data satisfies invariants")
    }
}

/// Builds `(source, target, target_test)`. Each split and class draws from
/// its own seeded stream, so the target test split is independent of (and
/// disjoint from) the target training split.
pub fn make_synthetic_task(spec: &TaskSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let s = Sampler::new(spec)?;
    let sizes = spec.samples_per_class;
    Ok((
        s.split(spec.seed, "task-source", sizes.source, false),
        s.split(spec.seed, "task-target", sizes.target, true),
        s.split(spec.seed, "task-target-test", sizes.target_test, true),
    ))
}
