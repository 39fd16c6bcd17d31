//! C ABI over `fha-core`.
//!
//! Every function returns an [`FhaStatus`]. On failure a message is kept in a
//! thread-local buffer that [`fha_last_error`] exposes until the next call on
//! the same thread. Handles are opaque heap objects; release each with its
//! `_free` function. Panics never unwind into C: they are caught and reported
//! as `FHA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fha_core::data::{self, Dataset, FewShotSet, TaskSpec};
use fha_core::harness::{accuracy, Method, MethodConfig};
use fha_core::nn::model_file::{ModelFile, MODEL_FORMAT};
use fha_core::nn::{Matrix, Mlp};
use fha_core::trainers::{
    run_two_step, train_ft, train_shot, train_source, train_tohan, FeatureClassifier, SourceConfig,
    SourceHypothesis, SourceMeta, TargetModel, TohanConfig, TwoStepMethod,
};
use fha_core::FhaError;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSpec = 3,
    Protocol = 4,
    InsufficientData = 5,
    Format = 6,
    Shape = 7,
    Numerical = 8,
    MissingClass = 9,
    QualityGate = 10,
    Config = 11,
    Io = 12,
    Panic = 13,
}

impl From<&FhaError> for FhaStatus {
    fn from(e: &FhaError) -> Self {
        match e {
            FhaError::InvalidSpec(_) => FhaStatus::InvalidSpec,
            FhaError::Protocol(_) => FhaStatus::Protocol,
            FhaError::InsufficientData { .. } => FhaStatus::InsufficientData,
            FhaError::Format(_) => FhaStatus::Format,
            FhaError::Shape(_) => FhaStatus::Shape,
            FhaError::Numerical(_) => FhaStatus::Numerical,
            FhaError::MissingClass(_) => FhaStatus::MissingClass,
            FhaError::InvalidArgument(_) => FhaStatus::InvalidArgument,
            FhaError::QualityGate { .. } => FhaStatus::QualityGate,
            FhaError::Config(_) => FhaStatus::Config,
            FhaError::Io(_) => FhaStatus::Io,
        }
    }
}

/// A labeled dataset.
pub struct FhaDataset(Dataset);

/// `n_t` labeled target samples per class.
pub struct FhaFewShot(FewShotSet);

/// A source hypothesis or an adapted target model.
pub struct FhaModel {
    kind: ModelKind,
    seed: u64,
}

enum ModelKind {
    Source(SourceHypothesis),
    Target(TargetModel),
}

impl FhaModel {
    fn classifier(&self) -> &dyn FeatureClassifier {
        match &self.kind {
            ModelKind::Source(h) => h,
            ModelKind::Target(m) => m,
        }
    }
}

struct Failure(FhaStatus, String);

impl From<FhaError> for Failure {
    fn from(e: FhaError) -> Self {
        Failure(FhaStatus::from(&e), e.to_string())
    }
}

type Res<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res) -> FhaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FhaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FhaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FhaStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FhaStatus::InvalidArgument, msg.into())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, what: &str) -> Res<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

fn check_out<T>(p: *mut *mut T, what: &str) -> Res {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(())
    }
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn from_json<T: serde::de::DeserializeOwned + Default>(json: Option<&str>, what: &str) -> Res<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| Failure(FhaStatus::Config, format!("{what}: {e}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fha_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next `fha_*` call on the same thread.
#[no_mangle]
pub extern "C" fn fha_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates `(source, target, target_test)` for a task. `task` is a preset
/// name such as `"rot40"` or a JSON task spec; `data_seed` replaces the
/// spec's seed.
///
/// # Safety
/// `task` must be a valid C string; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fha_task_generate(
    task: *const c_char,
    data_seed: u64,
    source_out: *mut *mut FhaDataset,
    target_out: *mut *mut FhaDataset,
    target_test_out: *mut *mut FhaDataset,
) -> FhaStatus {
    guard(|| {
        let task = text(task, "task")?;
        check_out(source_out, "source_out")?;
        check_out(target_out, "target_out")?;
        check_out(target_test_out, "target_test_out")?;
        let mut spec = if task.trim_start().starts_with('{') {
            serde_json::from_str::<TaskSpec>(task).map_err(|e| Failure(FhaStatus::InvalidSpec, e.to_string()))?
        } else {
            TaskSpec::preset(task)?
        };
        spec.seed = data_seed;
        let (s, t, tt) = data::make_synthetic_task(&spec)?;
        emit(source_out, FhaDataset(s));
        emit(target_out, FhaDataset(t));
        emit(target_test_out, FhaDataset(tt));
        Ok(())
    })
}

/// Builds a dataset from row-major `f32` features and `u32` labels.
///
/// # Safety
/// `features` must hold `rows * dim` values and `labels` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn fha_dataset_new(
    features: *const f32,
    labels: *const u32,
    rows: usize,
    dim: usize,
    num_classes: usize,
    out: *mut *mut FhaDataset,
) -> FhaStatus {
    guard(|| {
        check_out(out, "out")?;
        let n = rows.checked_mul(dim).ok_or_else(|| invalid("rows * dim overflows"))?;
        let (f, l) = if rows == 0 {
            (Vec::new(), Vec::new())
        } else {
            if features.is_null() {
                return Err(null("features"));
            }
            if labels.is_null() {
                return Err(null("labels"));
            }
            (
                std::slice::from_raw_parts(features, n).to_vec(),
                std::slice::from_raw_parts(labels, rows).to_vec(),
            )
        };
        emit(out, FhaDataset(Dataset::new(dim, num_classes, f, l)?));
        Ok(())
    })
}

/// Reads an FHD1 dataset file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fha_dataset_load(path: *const c_char, out: *mut *mut FhaDataset) -> FhaStatus {
    guard(|| {
        let path = text(path, "path")?;
        check_out(out, "out")?;
        emit(out, FhaDataset(data::load_dataset(Path::new(path))?));
        Ok(())
    })
}

/// Writes an FHD1 dataset file.
///
/// # Safety
/// `dataset` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fha_dataset_save(dataset: *const FhaDataset, path: *const c_char) -> FhaStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let path = text(path, "path")?;
        data::save_dataset(&ds.0, Path::new(path))?;
        Ok(())
    })
}

/// Number of samples, feature dimension and number of classes. Any of the
/// out pointers may be NULL.
///
/// # Safety
/// `dataset` must be a live handle; non-NULL out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fha_dataset_shape(
    dataset: *const FhaDataset,
    len: *mut usize,
    dim: *mut usize,
    num_classes: *mut usize,
) -> FhaStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        for (p, v) in [(len, ds.len()), (dim, ds.dim()), (num_classes, ds.num_classes())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fha_dataset_free(dataset: *mut FhaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Draws exactly `n_t` (1..=7) samples per class from `target`.
///
/// # Safety
/// `target` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fha_few_shot_sample(
    target: *const FhaDataset,
    n_t: usize,
    seed: u64,
    out: *mut *mut FhaFewShot,
) -> FhaStatus {
    guard(|| {
        let ds = handle(target, "target")?;
        check_out(out, "out")?;
        emit(out, FhaFewShot(data::sample_few_shot(&ds.0, n_t, seed)?));
        Ok(())
    })
}

/// The few-shot samples as a new dataset handle.
///
/// # Safety
/// `few_shot` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fha_few_shot_samples(few_shot: *const FhaFewShot, out: *mut *mut FhaDataset) -> FhaStatus {
    guard(|| {
        let fs = handle(few_shot, "few_shot")?;
        check_out(out, "out")?;
        emit(out, FhaDataset(fs.0.samples().clone()));
        Ok(())
    })
}

/// # Safety
/// `few_shot` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fha_few_shot_free(few_shot: *mut FhaFewShot) {
    if !few_shot.is_null() {
        drop(Box::from_raw(few_shot));
    }
}

/// Trains a source hypothesis. `config_json` is a source config object or
/// NULL for the defaults.
///
/// # Safety
/// `source` must be a live handle; `config_json` NULL or a valid C string;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fha_source_train(
    source: *const FhaDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut FhaModel,
) -> FhaStatus {
    guard(|| {
        let ds = handle(source, "source")?;
        let cfg: SourceConfig = from_json(optional_text(config_json, "config_json")?, "source config")?;
        check_out(out, "out")?;
        let h = train_source(&ds.0, &cfg, seed, "ffi")?;
        emit(
            out,
            FhaModel {
                kind: ModelKind::Source(h),
                seed,
            },
        );
        Ok(())
    })
}

/// Adapts a source hypothesis with one of `wa`, `ft`, `shot`, `sfada`,
/// `tfada`, `stfada`, `tohan`. `config_json` is an experiment config with
/// optional `source`, `finetune` and `tohan` sections, or NULL. `seed`
/// replaces the TOHAN seed.
///
/// # Safety
/// Handles must be live; strings valid or NULL where allowed; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fha_adapt(
    source_model: *const FhaModel,
    few_shot: *const FhaFewShot,
    method: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut FhaModel,
) -> FhaStatus {
    guard(|| {
        let model = handle(source_model, "source_model")?;
        let fs = &handle(few_shot, "few_shot")?.0;
        let method: Method = text(method, "method")?.parse()?;
        let cfg: MethodConfig = from_json(optional_text(config_json, "config_json")?, "method config")?;
        check_out(out, "out")?;
        let ModelKind::Source(h) = &model.kind else {
            return Err(invalid("adaptation needs a source hypothesis, got a target model"));
        };
        let tohan = TohanConfig {
            seed,
            ..cfg.tohan.clone()
        };
        let adapted = match method {
            Method::Wa => TargetModel::from_source(h),
            Method::Ft => train_ft(h, fs, &cfg.finetune)?.model,
            Method::Shot => train_shot(h, fs, &cfg.finetune)?.model,
            Method::Sfada => run_two_step(h, fs, TwoStepMethod::SourceOnly, &tohan)?.model,
            Method::Tfada => run_two_step(h, fs, TwoStepMethod::TargetOnly, &tohan)?.model,
            Method::Stfada => run_two_step(h, fs, TwoStepMethod::Combined, &tohan)?.model,
            Method::Tohan => train_tohan(h, fs, &tohan)?.model,
        };
        emit(
            out,
            FhaModel {
                kind: ModelKind::Target(adapted),
                seed,
            },
        );
        Ok(())
    })
}

/// Fraction of `dataset` classified correctly.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fha_model_accuracy(
    model: *const FhaModel,
    dataset: *const FhaDataset,
    out: *mut f64,
) -> FhaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = accuracy(m.classifier(), &ds.0)?;
        Ok(())
    })
}

/// Predicted class of each of `rows` row-major feature vectors.
///
/// # Safety
/// `features` must hold `rows * dim` values and `labels_out` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn fha_model_predict(
    model: *const FhaModel,
    features: *const f32,
    rows: usize,
    dim: usize,
    labels_out: *mut u32,
) -> FhaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if rows == 0 {
            return Ok(());
        }
        if features.is_null() {
            return Err(null("features"));
        }
        if labels_out.is_null() {
            return Err(null("labels_out"));
        }
        let n = rows.checked_mul(dim).ok_or_else(|| invalid("rows * dim overflows"))?;
        let x: Vec<f64> = std::slice::from_raw_parts(features, n).iter().map(|&v| f64::from(v)).collect();
        let pred = m.classifier().predict(&Matrix::from_vec(rows, dim, x)?)?;
        let out = std::slice::from_raw_parts_mut(labels_out, rows);
        for (o, p) in out.iter_mut().zip(pred) {
            *o = p as u32;
        }
        Ok(())
    })
}

/// Writes the model in the JSON model format used by the `fha` tool.
///
/// # Safety
/// `model` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fha_model_save(model: *const FhaModel, path: *const c_char) -> FhaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = text(path, "path")?;
        let (kind, meta) = match &m.kind {
            ModelKind::Source(h) => (
                "source",
                Some(serde_json::to_value(h.meta()).map_err(|e| Failure(FhaStatus::Format, e.to_string()))?),
            ),
            ModelKind::Target(_) => ("target", None),
        };
        let c = m.classifier();
        ModelFile {
            format: MODEL_FORMAT.into(),
            kind: kind.into(),
            seed: m.seed,
            encoder: c.encoder().into(),
            classifier: c.classifier().into(),
            meta,
        }
        .save(Path::new(path))?;
        Ok(())
    })
}

/// Reads a model file. Files of kind `source` load as source hypotheses
/// usable with [`fha_adapt`].
///
/// # Safety
/// `path` must be a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fha_model_load(path: *const c_char, out: *mut *mut FhaModel) -> FhaStatus {
    guard(|| {
        let path = text(path, "path")?;
        check_out(out, "out")?;
        let mf = ModelFile::load(Path::new(path))?;
        let encoder = Mlp::try_from(mf.encoder)?;
        let classifier = Mlp::try_from(mf.classifier)?;
        let kind = if mf.kind == "source" {
            let meta = match mf.meta {
                Some(v) => serde_json::from_value(v).map_err(|e| Failure(FhaStatus::Format, e.to_string()))?,
                None => SourceMeta {
                    task: String::new(),
                    seed: mf.seed,
                    train_accuracy: 0.0,
                    test_accuracy: 0.0,
                },
            };
            ModelKind::Source(SourceHypothesis::new(encoder, classifier, meta)?)
        } else {
            ModelKind::Target(TargetModel::new(encoder, classifier)?)
        };
        emit(out, FhaModel { kind, seed: mf.seed });
        Ok(())
    })
}

/// 1 for a source hypothesis, 0 for a target model.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fha_model_is_source(model: *const FhaModel, out: *mut i32) -> FhaStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = i32::from(matches!(m.kind, ModelKind::Source(_)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fha_model_free(model: *mut FhaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
