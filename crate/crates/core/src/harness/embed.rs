//! 2D export of encoder features by principal component analysis.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Dataset;
use crate::error::{FhaError, Result};
use crate::nn::Matrix;
use crate::numfmt::sig17;
use crate::trainers::FeatureClassifier;

/// Below this top eigenvalue the covariance is treated as degenerate.
const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `n x 2` coordinates.
    pub coords: Matrix,
    /// Unit principal directions, or `None` on the degenerate fallback.
    pub components: Option<[Vec<f64>; 2]>,
    /// Variance along each output axis.
    pub variance: [f64; 2],
    /// True when the covariance was degenerate and the first two raw
    /// dimensions were returned instead.
    pub degenerate: bool,
}

/// Projects the rows of `x` onto their top two principal components. Each
/// component's largest-magnitude loading is made positive (lowest index on
/// ties), so the output is deterministic.
pub fn pca_2d(x: &Matrix) -> Result<Projection> {
    let (n, d) = (x.rows(), x.cols());
    if d < 2 {
        return Err(FhaError::shape(format!("PCA to 2D needs at least 2 features, got {d}")));
    }
    if n == 0 {
        return Err(FhaError::InvalidArgument("PCA of an empty set".into()));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];

    if top.is_nan() || top <= DEGENERATE_VARIANCE {
        log::warn!("degenerate embedding covariance; exporting the first two raw dimensions");
        let coords = x.select_cols(&[0, 1]);
        return Ok(Projection {
            coords,
            components: None,
            variance: [0.0, 0.0],
            degenerate: true,
        });
    }

    let component = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let mut lead = 0;
        for (i, c) in v.iter().enumerate() {
            if c.abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        v
    };
    let comps = [component(0), component(1)];
    let mut coords = Matrix::zeros(n, 2);
    for i in 0..n {
        for (k, comp) in comps.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                s += centered[(i, j)] * comp[j];
            }
            coords.set(i, k, s);
        }
    }
    Ok(Projection {
        coords,
        components: Some(comps),
        variance: [top, eig.eigenvalues[order[1]].max(0.0)],
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Vec<EmbeddingPoint>,
    pub degenerate: bool,
}

impl Embedding {
    /// `x,y,label,domain` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,label,domain\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", sig17(p.x), sig17(p.y), p.label, p.domain);
        }
        out
    }
}

/// Encodes every dataset with the model's encoder and projects all features
/// jointly, tagging each point with its dataset's domain name.
pub fn dump_embedding<M: FeatureClassifier + ?Sized>(
    model: &M,
    datasets: &[(&str, &Dataset)],
) -> Result<Embedding> {
    let width = model.encoder().arch.output_width();
    let mut features = Matrix::zeros(0, width);
    let mut tags = Vec::new();
    for (domain, ds) in datasets {
        features = features.vstack(&model.embed(&ds.to_matrix())?)?;
        tags.extend((0..ds.len()).map(|i| (ds.label(i), *domain)));
    }
    let proj = pca_2d(&features)?;
    let points = tags
        .into_iter()
        .enumerate()
        .map(|(i, (label, domain))| EmbeddingPoint {
            x: proj.coords.get(i, 0),
            y: proj.coords.get(i, 1),
            label,
            domain: domain.to_string(),
        })
        .collect();
    Ok(Embedding {
        points,
        degenerate: proj.degenerate,
    })
}
