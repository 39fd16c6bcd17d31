mod common;

use common::{random_matrix, random_mlp, source_model, task};
use fha_core::data::{Dataset, TaskSpec};
use fha_core::harness::{
    accuracy, dump_embedding, parse_results, pca_2d, run_experiment, summarize, ExperimentOptions,
    Method, MethodConfig, ResultSink, RunOutcome,
};
use fha_core::nn::{Activation, Head};
use fha_core::rng::stream;
use fha_core::trainers::{SourceConfig, TargetModel, TohanConfig};
use rand::Rng;

fn quick_config() -> MethodConfig {
    MethodConfig {
        tohan: TohanConfig {
            max_epochs: 30,
            pretrain_epochs: 10,
            adapt_epochs: 10,
            ..TohanConfig::default()
        },
        ..MethodConfig::default()
    }
}

fn results(outcomes: &[RunOutcome]) -> Vec<(Method, usize, u64, u64)> {
    outcomes
        .iter()
        .map(|o| {
            let r = o.as_ref().expect("run succeeded");
            (r.method, r.n_t, r.seed, r.accuracy.to_bits())
        })
        .collect()
}

#[test]
fn accuracy_matches_brute_force_count() {
    let mut r = stream(11, "acc-data", 0);
    let features: Vec<f32> = (0..20).map(|_| r.random_range(0.0..1.0)).collect();
    let labels: Vec<u32> = (0..10).map(|_| r.random_range(0..3)).collect();
    let ds = Dataset::new(2, 3, features, labels).unwrap();
    let model = TargetModel::new(
        random_mlp(&[2, 4], &[Activation::Tanh], Head::Linear, 1),
        random_mlp(&[4, 3], &[Activation::Identity], Head::Softmax, 2),
    )
    .unwrap();
    let mut hits = 0;
    for i in 0..ds.len() {
        let x = fha_core::nn::Matrix::from_vec(1, 2, ds.row(i).iter().map(|&v| v as f64).collect()).unwrap();
        let h = model.encoder.forward(&x).unwrap();
        let p = model.classifier.forward(&h).unwrap();
        let row = p.row(0);
        let mut best = 0;
        for c in 1..3 {
            if row[c] > row[best] {
                best = c;
            }
        }
        hits += usize::from(best == ds.label(i));
    }
    assert_eq!(accuracy(&model, &ds).unwrap(), hits as f64 / 10.0);
}

#[test]
fn grid_produces_one_record_per_combination() {
    let spec = TaskSpec::preset("rot40").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let sink = ResultSink::create(&path).unwrap();
    let opts = ExperimentOptions {
        trace_dir: Some(dir.path().join("traces")),
        ..ExperimentOptions::default()
    };
    let methods = [Method::Wa, Method::Tohan];
    let out = run_experiment(&spec, &methods, &[1, 3], &[0, 1, 2], &quick_config(), &opts, Some(&sink)).unwrap();
    assert_eq!(out.len(), 12);
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed = parse_results(&text);
    assert_eq!(parsed.results.len(), 12);
    assert!(parsed.errors.is_empty() && parsed.malformed.is_empty());

    for seed in 0..3 {
        let wa: Vec<u64> = out
            .iter()
            .map(|o| o.as_ref().unwrap())
            .filter(|r| r.method == Method::Wa && r.seed == seed)
            .map(|r| r.accuracy.to_bits())
            .collect();
        assert_eq!(wa.len(), 2);
        assert_eq!(wa[0], wa[1], "WA depends on n_t for seed {seed}");
    }
    for o in &out {
        let r = o.as_ref().unwrap();
        let trace = dir
            .path()
            .join("traces")
            .join(format!("{}-n{}-s{}.jsonl", r.method, r.n_t, r.seed));
        assert_eq!(std::fs::read_to_string(trace).unwrap().lines().count(), r.traces.len());
    }
}

#[test]
fn reruns_and_parallel_runs_are_bit_identical() {
    let spec = TaskSpec::preset("rot40").unwrap();
    let methods = [Method::Ft, Method::Tohan];
    let cfg = quick_config();
    let seq = ExperimentOptions::default();
    let par = ExperimentOptions {
        jobs: 3,
        ..ExperimentOptions::default()
    };
    let a = results(&run_experiment(&spec, &methods, &[1, 3], &[0, 1, 2], &cfg, &seq, None).unwrap());
    let b = results(&run_experiment(&spec, &methods, &[1, 3], &[0, 1, 2], &cfg, &seq, None).unwrap());
    let c = results(&run_experiment(&spec, &methods, &[1, 3], &[0, 1, 2], &cfg, &par, None).unwrap());
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn failed_source_training_becomes_error_records() {
    let spec = TaskSpec::preset("rot40").unwrap();
    let cfg = MethodConfig {
        source: SourceConfig {
            epochs: 0,
            ..SourceConfig::default()
        },
        ..quick_config()
    };
    let out = run_experiment(&spec, &[Method::Wa, Method::Ft], &[1], &[0, 1], &cfg, &ExperimentOptions::default(), None)
        .unwrap();
    assert_eq!(out.len(), 4);
    for o in out {
        let e = o.unwrap_err();
        assert!(e.error.contains("quality gate"), "{}", e.error);
    }
}

#[test]
fn invalid_grid_is_rejected_up_front() {
    let spec = TaskSpec::preset("rot40").unwrap();
    let opts = ExperimentOptions::default();
    assert!(run_experiment(&spec, &[Method::Wa], &[8], &[0], &quick_config(), &opts, None).is_err());
    assert!(run_experiment(&spec, &[], &[1], &[0], &quick_config(), &opts, None).is_err());
}

#[test]
fn summary_recomputes_from_the_results_file() {
    let spec = TaskSpec::preset("rot40").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let sink = ResultSink::create(&path).unwrap();
    let out = run_experiment(
        &spec,
        &[Method::Wa, Method::Ft],
        &[1, 3],
        &[0, 1, 2, 3],
        &quick_config(),
        &ExperimentOptions { jobs: 2, ..ExperimentOptions::default() },
        Some(&sink),
    )
    .unwrap();
    let parsed = parse_results(&std::fs::read_to_string(&path).unwrap());
    let table = summarize(&parsed.results).unwrap();
    for row in &table.rows {
        let mut accs: Vec<(u64, f64)> = out
            .iter()
            .map(|o| o.as_ref().unwrap())
            .filter(|r| r.method == row.method && r.n_t == row.n_t)
            .map(|r| (r.seed, r.accuracy))
            .collect();
        accs.sort_by_key(|a| a.0);
        let n = accs.len() as f64;
        let m = accs.iter().map(|a| a.1).sum::<f64>() / n;
        let s = (accs.iter().map(|a| (a.1 - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert_eq!(row.seeds, 4);
        assert_eq!(row.mean.to_bits(), m.to_bits());
        assert_eq!(row.std.unwrap().to_bits(), s.to_bits());
    }
}

#[test]
fn pca_captures_more_variance_than_random_projections() {
    let mut r = stream(5, "pca-data", 0);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let a: f64 = r.random_range(-1.0..1.0);
            let b: f64 = r.random_range(-1.0..1.0);
            vec![3.0 * a, a + 0.5 * b, 0.1 * r.random_range(-1.0..1.0), b - a, 0.2 * b]
        })
        .collect();
    let x = fha_core::nn::Matrix::from_rows(&rows).unwrap();
    let p = pca_2d(&x).unwrap();
    let captured = p.variance[0] + p.variance[1];
    let var_of = |coords: &[f64]| {
        let m = coords.iter().sum::<f64>() / coords.len() as f64;
        coords.iter().map(|c| (c - m).powi(2)).sum::<f64>() / coords.len() as f64
    };
    assert!((var_of(&p.coords.column(0)) + var_of(&p.coords.column(1)) - captured).abs() < 1e-9);
    for k in 0..100 {
        // Random orthonormal pair by Gram-Schmidt.
        let q = random_matrix(2, 5, -1.0, 1.0, k, "projection");
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let u: Vec<f64> = q.row(0).iter().map(|a| a / norm(q.row(0))).collect();
        let dot: f64 = q.row(1).iter().zip(&u).map(|(a, b)| a * b).sum();
        let w: Vec<f64> = q.row(1).iter().zip(&u).map(|(a, b)| a - dot * b).collect();
        let w: Vec<f64> = w.iter().map(|a| a / norm(&w)).collect();
        let project = |dir: &[f64]| -> Vec<f64> {
            x.iter_rows().map(|row| row.iter().zip(dir).map(|(a, b)| a * b).sum()).collect()
        };
        let random = var_of(&project(&u)) + var_of(&project(&w));
        assert!(captured >= random - 1e-12, "projection {k}: {random} > {captured}");
    }
}

#[test]
fn embedding_covers_every_sample_with_its_domain() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let e = dump_embedding(&h, &[("source", &t.source), ("target", &t.target_test)]).unwrap();
    assert_eq!(e.points.len(), t.source.len() + t.target_test.len());
    assert!(!e.degenerate);
    assert_eq!(e.points[0].domain, "source");
    assert_eq!(e.points.last().unwrap().domain, "target");
    let csv = e.to_csv();
    assert!(csv.starts_with("x,y,label,domain\n"));
    assert_eq!(csv.lines().count(), e.points.len() + 1);
}
