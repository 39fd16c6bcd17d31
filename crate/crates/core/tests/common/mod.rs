#![allow(dead_code)]

use fha_core::data::{make_synthetic_task, Dataset, TaskSpec};
use fha_core::nn::{Activation, ArchSpec, Head, Matrix, Mlp};
use fha_core::rng::stream;
use fha_core::trainers::{train_source, SourceConfig, SourceHypothesis, SourceMeta};
use rand::Rng;

pub struct Task {
    pub source: Dataset,
    pub target: Dataset,
    pub target_test: Dataset,
}

pub fn task(name: &str) -> Task {
    let (source, target, target_test) = make_synthetic_task(&TaskSpec::preset(name).unwrap()).unwrap();
    Task {
        source,
        target,
        target_test,
    }
}

pub fn source_model(t: &Task, seed: u64) -> SourceHypothesis {
    train_source(&t.source, &SourceConfig::default(), seed, "test").unwrap()
}

/// A small random network with the given layer widths.
pub fn random_mlp(widths: &[usize], acts: &[Activation], head: Head, seed: u64) -> Mlp {
    let arch = ArchSpec::new(widths.to_vec(), acts.to_vec(), head).unwrap();
    Mlp::init(arch, &mut stream(seed, "test-mlp", 0))
}

pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64, tag: &str) -> Matrix {
    let mut r = stream(seed, tag, 0);
    let data = (0..rows * cols).map(|_| r.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A hand-built source model whose encoder maps `[0,1]^2` affinely to
/// `scale * (x - 0.5)`, so class and domain are separated by construction.
pub fn separable_source(scale: f64) -> SourceHypothesis {
    let enc = Mlp::new(
        ArchSpec::new(vec![2, 2], vec![Activation::Identity], Head::Linear).unwrap(),
        vec![scale, 0.0, 0.0, scale, -scale / 2.0, -scale / 2.0],
    )
    .unwrap();
    let cls = Mlp::new(
        ArchSpec::new(vec![2, 2], vec![Activation::Identity], Head::Softmax).unwrap(),
        vec![-1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    SourceHypothesis::new(
        enc,
        cls,
        SourceMeta {
            task: "separable".into(),
            seed: 0,
            train_accuracy: 1.0,
            test_accuracy: 1.0,
        },
    )
    .unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
