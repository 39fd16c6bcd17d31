//! Seeded multi-run experiments, accuracy, summaries and embedding export.

mod embed;
mod sink;
mod summary;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use embed::{dump_embedding, pca_2d, Embedding, EmbeddingPoint, Projection};
pub use sink::{ErrorLine, ResultLine, ResultSink, RunRecord};
pub use summary::{parse_results, summarize, ParsedResults, SummaryRow, SummaryTable, CSV_HEADER};

use crate::data::{make_synthetic_task, sample_few_shot, Dataset, TaskSpec};
use crate::error::{FhaError, Result};
use crate::trainers::{
    eval_wa, run_two_step, train_ft, train_shot, train_source, train_tohan, FeatureClassifier,
    FinetuneConfig, SourceConfig, SourceHypothesis, TohanConfig, TraceRecord, Trained,
    TwoStepMethod,
};

/// Fraction of argmax-correct predictions, lowest class index on ties.
pub fn accuracy<M: FeatureClassifier + ?Sized>(model: &M, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(FhaError::InvalidArgument("accuracy of an empty test set".into()));
    }
    if test.dim() != model.encoder().arch.input_width() {
        return Err(FhaError::shape(format!(
            "test data is {}-dimensional, model expects {}",
            test.dim(),
            model.encoder().arch.input_width()
        )));
    }
    let predicted = model.predict(&test.to_matrix())?;
    let correct = predicted
        .iter()
        .zip(test.labels())
        .filter(|(p, y)| **p == **y as usize)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Wa,
    Ft,
    Shot,
    Sfada,
    Tfada,
    Stfada,
    Tohan,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Wa,
        Method::Ft,
        Method::Shot,
        Method::Sfada,
        Method::Tfada,
        Method::Stfada,
        Method::Tohan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Wa => "wa",
            Method::Ft => "ft",
            Method::Shot => "shot",
            Method::Sfada => "sfada",
            Method::Tfada => "tfada",
            Method::Stfada => "stfada",
            Method::Tohan => "tohan",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = FhaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                FhaError::InvalidArgument(format!(
                    "unknown method {s:?} (expected one of wa, ft, shot, sfada, tfada, stfada, tohan)"
                ))
            })
    }
}

/// Per-method hyperparameters shared by every run of an experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub source: SourceConfig,
    pub finetune: FinetuneConfig,
    /// Used by TOHAN and the two-step methods. Its `seed` is replaced by the
    /// run seed.
    pub tohan: TohanConfig,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub task: String,
    pub n_t: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub wa_accuracy: f64,
    pub traces: Vec<TraceRecord>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunError {
    pub method: Method,
    pub task: String,
    pub n_t: usize,
    pub seed: u64,
    pub error: String,
}

pub type RunOutcome = std::result::Result<RunResult, RunError>;

/// Options of [`run_experiment`] beyond the grid itself.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Worker threads; 0 and 1 both mean sequential.
    pub jobs: usize,
    /// If set, each run's trace is written to
    /// `<dir>/<method>-n<n_t>-s<seed>.jsonl`.
    pub trace_dir: Option<PathBuf>,
    /// Drop traces from the returned results to save memory.
    pub discard_traces: bool,
}

/// Trains the method on the run's few-shot set and reports its target-test
/// accuracy.
pub fn run_method(
    method: Method,
    h: &SourceHypothesis,
    target: &Dataset,
    target_test: &Dataset,
    n_t: usize,
    seed: u64,
    cfg: &MethodConfig,
) -> Result<(f64, Vec<TraceRecord>)> {
    if method == Method::Wa {
        return Ok((eval_wa(h, target_test)?, Vec::new()));
    }
    let fs = sample_few_shot(target, n_t, seed)?;
    let tohan = TohanConfig {
        seed,
        ..cfg.tohan.clone()
    };
    let Trained { model, trace } = match method {
        Method::Wa => unreachable!(),
        Method::Ft => train_ft(h, &fs, &cfg.finetune)?,
        Method::Shot => train_shot(h, &fs, &cfg.finetune)?,
        Method::Sfada => run_two_step(h, &fs, TwoStepMethod::SourceOnly, &tohan)?,
        Method::Tfada => run_two_step(h, &fs, TwoStepMethod::TargetOnly, &tohan)?,
        Method::Stfada => run_two_step(h, &fs, TwoStepMethod::Combined, &tohan)?,
        Method::Tohan => train_tohan(h, &fs, &tohan)?,
    };
    Ok((accuracy(&model, target_test)?, trace))
}

fn trace_path(dir: &Path, method: Method, n_t: usize, seed: u64) -> PathBuf {
    dir.join(format!("{method}-n{n_t}-s{seed}.jsonl"))
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in trace {
        serde_json::to_writer(&mut out, r).map_err(|e| FhaError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// All runs of one seed: the source model is trained once and shared by every
/// method and shot count.
#[allow(clippy::too_many_arguments)]
fn run_seed(
    task: &str,
    data: &(Dataset, Dataset, Dataset),
    methods: &[Method],
    shots: &[usize],
    seed: u64,
    cfg: &MethodConfig,
    opts: &ExperimentOptions,
    sink: Option<&ResultSink>,
    out: &Mutex<Vec<RunOutcome>>,
) {
    let (source, target, target_test) = data;
    let fail = |method: Method, n_t: usize, error: String| RunError {
        method,
        task: task.to_string(),
        n_t,
        seed,
        error,
    };
    let emit = |outcome: RunOutcome| {
        if let Some(s) = sink {
            if let Err(e) = s.append(&RunRecord::from(&outcome)) {
                log::error!("result sink: {e}");
            }
        }
        out.lock().expect("results lock").push(outcome);
    };

    let h = train_source(source, &cfg.source, seed, task).and_then(|h| {
        let wa = eval_wa(&h, target_test)?;
        Ok((h, wa))
    });
    let (h, wa) = match h {
        Ok(v) => v,
        Err(e) => {
            log::error!("seed {seed}: source training failed: {e}");
            for &n_t in shots {
                for &m in methods {
                    emit(Err(fail(m, n_t, format!("source training: {e}"))));
                }
            }
            return;
        }
    };

    for &n_t in shots {
        for &method in methods {
            let start = Instant::now();
            let outcome = run_method(method, &h, target, target_test, n_t, seed, cfg);
            let wall_ms = start.elapsed().as_millis() as u64;
            let outcome = match outcome {
                Ok((accuracy, trace)) => {
                    if let Some(dir) = &opts.trace_dir {
                        if let Err(e) = write_trace(&trace_path(dir, method, n_t, seed), &trace) {
                            log::error!("trace for {method} n_t={n_t} seed={seed}: {e}");
                        }
                    }
                    log::info!("{method} n_t={n_t} seed={seed}: accuracy {accuracy:.4} ({wall_ms} ms)");
                    Ok(RunResult {
                        method,
                        task: task.to_string(),
                        n_t,
                        seed,
                        accuracy,
                        wa_accuracy: wa,
                        traces: if opts.discard_traces { Vec::new() } else { trace },
                        wall_ms,
                    })
                }
                Err(e) => {
                    log::error!("{method} n_t={n_t} seed={seed}: {e}");
                    Err(fail(method, n_t, e.to_string()))
                }
            };
            emit(outcome);
        }
    }
}

fn outcome_key(o: &RunOutcome) -> (u64, usize, Method) {
    match o {
        Ok(r) => (r.seed, r.n_t, r.method),
        Err(e) => (e.seed, e.n_t, e.method),
    }
}

/// Runs every `(method, n_t, seed)` combination on data generated once from
/// the task spec. See [`run_experiment_on`].
pub fn run_experiment(
    task: &TaskSpec,
    methods: &[Method],
    shots: &[usize],
    seeds: &[u64],
    cfg: &MethodConfig,
    opts: &ExperimentOptions,
    sink: Option<&ResultSink>,
) -> Result<Vec<RunOutcome>> {
    let data = make_synthetic_task(task)?;
    run_experiment_on(&task.name, &data, methods, shots, seeds, cfg, opts, sink)
}

/// Runs every `(method, n_t, seed)` combination on fixed `(source, target,
/// target_test)` data. Each seed drives source training, few-shot sampling
/// and trainer initialization. Records reach the sink in completion order;
/// the returned list is ordered by `(seed, n_t, method)`.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment_on(
    task: &str,
    data: &(Dataset, Dataset, Dataset),
    methods: &[Method],
    shots: &[usize],
    seeds: &[u64],
    cfg: &MethodConfig,
    opts: &ExperimentOptions,
    sink: Option<&ResultSink>,
) -> Result<Vec<RunOutcome>> {
    if methods.is_empty() || shots.is_empty() || seeds.is_empty() {
        return Err(FhaError::Config("methods, shots and seeds must be nonempty".into()));
    }
    cfg.source.validate()?;
    cfg.tohan.validate()?;
    if let Some(&n) = shots.iter().find(|&&n| n == 0 || n > crate::data::MAX_SHOTS) {
        return Err(FhaError::Protocol(format!(
            "n_t must lie in 1..={}, got {n}",
            crate::data::MAX_SHOTS
        )));
    }
    let (source, target, target_test) = data;
    if source.dim() != target.dim()
        || source.dim() != target_test.dim()
        || source.num_classes() != target.num_classes()
        || source.num_classes() != target_test.num_classes()
    {
        return Err(FhaError::shape("source and target datasets disagree in dimension or classes"));
    }
    if let Some(dir) = &opts.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let out = Mutex::new(Vec::with_capacity(methods.len() * shots.len() * seeds.len()));
    let next = AtomicUsize::new(0);
    let workers = opts.jobs.clamp(1, seeds.len());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&seed) = seeds.get(i) else { break };
        run_seed(task, data, methods, shots, seed, cfg, opts, sink, &out);
    };
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let mut results = out.into_inner().expect("results lock");
    results.sort_by_key(outcome_key);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ArchSpec, Head, Mlp};
    use crate::trainers::TargetModel;

    fn uniform_model(dim: usize, classes: usize) -> TargetModel {
        let enc = ArchSpec::mlp(&[dim, 3], Activation::Tanh, Head::Linear).unwrap();
        let cls = ArchSpec::mlp(&[3, classes], Activation::Identity, Head::Softmax).unwrap();
        TargetModel::new(
            Mlp::new(enc.clone(), vec![0.0; enc.param_len()]).unwrap(),
            Mlp::new(cls.clone(), vec![0.0; cls.param_len()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_model_predicts_class_zero() {
        let labels: Vec<u32> = (0..12).map(|i| i % 3).collect();
        let ds = Dataset::new(2, 3, vec![0.5; 24], labels).unwrap();
        let acc = accuracy(&uniform_model(2, 3), &ds).unwrap();
        assert_eq!(acc, 4.0 / 12.0);
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let ds = Dataset::new(2, 3, vec![], vec![]).unwrap();
        assert!(accuracy(&uniform_model(2, 3), &ds).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("fada".parse::<Method>().is_err());
    }
}
