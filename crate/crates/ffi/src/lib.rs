//! C ABI over the `adaptdhm` crate.
//!
//! Models are opaque `AdhmModel` handles created by `adhm_model_new` or
//! `adhm_model_load` and released with `adhm_model_free`. Every fallible call
//! returns an `AdhmStatus`; on failure `adhm_last_error_message` describes the
//! most recent error on the calling thread.
//!
//! Instances cross the boundary as parallel arrays: `feature_ids` is
//! row-major `n × num_fields`, `domain_ids` and `labels` hold `n` entries.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use adaptdhm::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use adaptdhm::data::{DatasetSchema, FieldSpec, Instance};
use adaptdhm::metrics::{self, EvalRecord, MetricError};
use adaptdhm::model::{ModelConfig, ModelError, ModelKind, MultiBranchModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdhmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Model = 5,
    NonFinite = 6,
    NotAdaptdhm = 7,
    Metric = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct AdhmModel {
    inner: MultiBranchModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(AdhmStatus, String);

impl Failure {
    fn new(status: AdhmStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::NonFiniteLoss { .. } => AdhmStatus::NonFinite,
            ModelError::EmptyBatch
            | ModelError::FeatureCount { .. }
            | ModelError::DomainOutOfRange { .. }
            | ModelError::Nn(_)
            | ModelError::UnknownKind(_)
            | ModelError::Config(_) => AdhmStatus::InvalidArgument,
            ModelError::Routing(_) => AdhmStatus::Model,
        };
        Self(status, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::Io(_) => AdhmStatus::Io,
            CheckpointError::NonFinite => AdhmStatus::NonFinite,
            _ => AdhmStatus::Format,
        };
        Self(status, e.to_string())
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Self(AdhmStatus::Metric, e.to_string())
    }
}

/// Runs `f`, recording the error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdhmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdhmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdhmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(AdhmStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn model_ref<'a>(model: *const AdhmModel) -> Result<&'a MultiBranchModel, Failure> {
    non_null(model, "model")?;
    Ok(&(*model).inner)
}

unsafe fn model_mut<'a>(model: *mut AdhmModel) -> Result<&'a mut MultiBranchModel, Failure> {
    non_null(model, "model")?;
    Ok(&mut (*model).inner)
}

unsafe fn c_str<'a>(s: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(s, name)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::new(AdhmStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn array<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn array_mut<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts_mut(p, n))
}

/// Builds `n` instances; `labels` may be null when they are not needed.
unsafe fn instances(
    model: &MultiBranchModel,
    feature_ids: *const u32,
    domain_ids: *const usize,
    labels: *const u8,
    n: usize,
) -> Result<Vec<Instance>, Failure> {
    let fields = model.schema.fields.len();
    let ids = array(feature_ids, n * fields, "feature_ids")?;
    let domains = array(domain_ids, n, "domain_ids")?;
    let labels = if labels.is_null() {
        None
    } else {
        Some(array(labels, n, "labels")?)
    };
    Ok((0..n)
        .map(|i| Instance {
            label: labels.map_or(0, |l| l[i]),
            domain_id: domains[i],
            session_id: String::new(),
            feature_ids: ids[i * fields..(i + 1) * fields].to_vec(),
            planted_cluster: None,
        })
        .collect())
}

/// Message of the last failed call on this thread, or null. Release the
/// string with `adhm_string_free`.
#[no_mangle]
pub extern "C" fn adhm_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn adhm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a freshly initialized model with the default configuration.
/// `kind` is one of `adaptdhm`, `dnn`, `shared_bottom`, `star_by_domain`;
/// `vocab_sizes` holds one vocabulary size per feature field.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` receives the handle.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_new(
    kind: *const c_char,
    vocab_sizes: *const u32,
    num_fields: usize,
    num_clusters: usize,
    num_domains: usize,
    seed: u64,
    out: *mut *mut AdhmModel,
) -> AdhmStatus {
    guard(|| {
        non_null(out, "out")?;
        let kind: ModelKind = c_str(kind, "kind")?.parse()?;
        let vocab = array(vocab_sizes, num_fields, "vocab_sizes")?;
        let fields = vocab
            .iter()
            .enumerate()
            .map(|(i, &v)| FieldSpec::new(format!("f{i}"), v as usize))
            .collect();
        let schema = DatasetSchema::new(fields).map_err(|e| Failure::new(AdhmStatus::InvalidArgument, e.to_string()))?;
        let mut config = ModelConfig {
            kind,
            num_domains,
            seed,
            ..ModelConfig::default()
        };
        config.routing.num_clusters = num_clusters;
        config.routing.seed = seed;
        let model = MultiBranchModel::new(config, &schema)?;
        *out = Box::into_raw(Box::new(AdhmModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` receives the handle.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_load(path: *const c_char, out: *mut *mut AdhmModel) -> AdhmStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = load_checkpoint(c_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(AdhmModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_save(model: *const AdhmModel, path: *const c_char) -> AdhmStatus {
    guard(|| {
        save_checkpoint(model_ref(model)?, c_str(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from `adhm_model_new`/`adhm_model_load` or be null,
/// and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_free(model: *mut AdhmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model kind as a static string, or null for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_kind(model: *const AdhmModel) -> *const c_char {
    let Ok(m) = model_ref(model) else {
        return ptr::null();
    };
    let name: &'static CStr = match m.kind() {
        ModelKind::Adaptdhm => c"adaptdhm",
        ModelKind::Dnn => c"dnn",
        ModelKind::SharedBottom => c"shared_bottom",
        ModelKind::StarByDomain => c"star_by_domain",
    };
    name.as_ptr()
}

/// Number of feature fields each instance must carry, or 0 for null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_num_fields(model: *const AdhmModel) -> usize {
    model_ref(model).map_or(0, |m| m.schema.fields.len())
}

/// Number of branch groups (clusters or domains), or 0 for null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_num_groups(model: *const AdhmModel) -> usize {
    model_ref(model).map_or(0, |m| m.num_groups())
}

/// Click probabilities for `n` instances into `out_probs`.
///
/// # Safety
/// Arrays must hold `n` instances; `out_probs` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_predict(
    model: *const AdhmModel,
    feature_ids: *const u32,
    domain_ids: *const usize,
    n: usize,
    out_probs: *mut f64,
) -> AdhmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let batch = instances(m, feature_ids, domain_ids, ptr::null(), n)?;
        let probs = m.predict(&batch)?;
        array_mut(out_probs, n, "out_probs")?.copy_from_slice(&probs);
        Ok(())
    })
}

/// Branch group used for each of `n` instances: the routed cluster for
/// adaptdhm, the domain for domain-keyed models, 0 for dnn.
///
/// # Safety
/// Arrays must hold `n` instances; `out_groups` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_route(
    model: *const AdhmModel,
    feature_ids: *const u32,
    domain_ids: *const usize,
    n: usize,
    out_groups: *mut usize,
) -> AdhmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let batch = instances(m, feature_ids, domain_ids, ptr::null(), n)?;
        let prediction = m.predict_detailed(&batch)?;
        array_mut(out_groups, n, "out_groups")?.copy_from_slice(&prediction.groups);
        Ok(())
    })
}

/// Copies the `K × dim` cluster centers, row-major, into `out`. The sizes
/// are always written to `out_k` and `out_dim`; a short buffer returns
/// `BufferTooSmall`.
///
/// # Safety
/// `out` must hold `capacity` values; `out_k` and `out_dim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_centers(
    model: *const AdhmModel,
    out: *mut f64,
    capacity: usize,
    out_k: *mut usize,
    out_dim: *mut usize,
) -> AdhmStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out_k, "out_k")?;
        non_null(out_dim, "out_dim")?;
        let centers = m
            .centers
            .as_ref()
            .ok_or_else(|| Failure::new(AdhmStatus::NotAdaptdhm, format!("{} model has no cluster centers", m.kind())))?;
        *out_k = centers.num_clusters();
        *out_dim = centers.dim();
        let values = centers.centers.values();
        if capacity < values.len() {
            return Err(Failure::new(
                AdhmStatus::BufferTooSmall,
                format!("need {} values, buffer holds {capacity}", values.len()),
            ));
        }
        array_mut(out, values.len(), "out")?.copy_from_slice(values);
        Ok(())
    })
}

/// One optimizer step on `n` labelled instances; the batch loss goes to
/// `out_loss` (may be null). The model is unchanged on failure.
///
/// # Safety
/// Arrays must hold `n` instances.
#[no_mangle]
pub unsafe extern "C" fn adhm_model_train_step(
    model: *mut AdhmModel,
    feature_ids: *const u32,
    domain_ids: *const usize,
    labels: *const u8,
    n: usize,
    out_loss: *mut f64,
) -> AdhmStatus {
    guard(|| {
        let m = model_mut(model)?;
        non_null(labels, "labels")?;
        let batch = instances(m, feature_ids, domain_ids, labels, n)?;
        let report = m.train_step(&batch)?;
        if !out_loss.is_null() {
            *out_loss = report.loss;
        }
        Ok(())
    })
}

/// Area under the ROC curve of `n` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adhm_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> AdhmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = metrics::auc(array(scores, n, "scores")?, array(labels, n, "labels")?)?;
        Ok(())
    })
}

/// Impression-weighted mean of per-session AUCs; sessions are keyed by
/// `session_ids`.
///
/// # Safety
/// All arrays must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adhm_gauc(
    scores: *const f64,
    labels: *const u8,
    session_ids: *const u64,
    n: usize,
    out: *mut f64,
) -> AdhmStatus {
    guard(|| {
        non_null(out, "out")?;
        let scores = array(scores, n, "scores")?;
        let labels = array(labels, n, "labels")?;
        let keys: Vec<String> = array(session_ids, n, "session_ids")?.iter().map(u64::to_string).collect();
        let records: Vec<EvalRecord<'_>> = (0..n)
            .map(|i| EvalRecord {
                score: scores[i],
                label: labels[i],
                session_id: &keys[i],
            })
            .collect();
        *out = metrics::gauc(&records)?.value;
        Ok(())
    })
}
