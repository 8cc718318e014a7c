//! C ABI for the ades library: opaque handles, integer status codes, and a
//! thread-local last-error message. The header is generated by cbindgen into
//! `include/ades.h` at build time.
//!
//! Conventions:
//! - Every function returns [`AdesStatus`]; out-parameters are written only
//!   on `Ok`.
//! - Handles are created and released by this library (`*_free`); passing a
//!   handle after freeing it is undefined behavior, as usual for C APIs.
//! - `ades_last_error_message` describes the most recent failure on the
//!   calling thread; the pointer stays valid until the next failing call on
//!   that thread.

// Safety conventions (null handling, buffer sizes, handle lifetimes) are
// documented once in the module docs above rather than per function.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ades_core::attack::{pgd_attack, AttackConfig};
use ades_core::cues::assemble_cues;
use ades_core::data::{load_csv_dataset, make_blobs, Dataset};
use ades_core::error::Error;
use ades_core::eval::evaluate;
use ades_core::experiment::{run_experiment, ExperimentConfig};
use ades_core::gradcheck::run_suite;
use ades_core::models::{load_checkpoint, save_checkpoint, MlpClassifier, SchedulerNet};
use ades_core::rng::SeededRng;
use ades_core::tensor::Tensor;

/// Status code returned by every API function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdesStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ConfigError = 4,
    IoError = 5,
    ParseError = 6,
    ContractError = 7,
    CheckpointError = 8,
    DimensionError = 9,
    LabelError = 10,
    GradCheckFailed = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AdesStatus {
    match err {
        Error::DimensionMismatch { .. } => AdesStatus::DimensionError,
        Error::Config(_) => AdesStatus::ConfigError,
        Error::LabelOutOfRange { .. } => AdesStatus::LabelError,
        Error::Contract(_) => AdesStatus::ContractError,
        Error::Parse { .. } => AdesStatus::ParseError,
        Error::Io { .. } => AdesStatus::IoError,
        Error::Checkpoint(_) => AdesStatus::CheckpointError,
    }
}

fn fail(err: Error) -> AdesStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Run a closure with panic containment; panics become `AdesStatus::Panic`.
fn guarded(f: impl FnOnce() -> AdesStatus) -> AdesStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            AdesStatus::Panic
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, AdesStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(AdesStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".into());
        AdesStatus::InvalidUtf8
    })
}

macro_rules! nonnull {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(format!("null pointer argument: {}", stringify!($ptr)));
            return AdesStatus::NullPointer;
        }
    };
}

/// Opaque dataset handle.
pub struct AdesDataset {
    inner: Dataset,
}

/// Opaque model handle: the classifier plus its budget scheduler.
pub struct AdesModel {
    classifier: MlpClassifier,
    scheduler: SchedulerNet,
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn ades_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread, or null if none.
#[no_mangle]
pub extern "C" fn ades_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.as_ptr(),
        None => std::ptr::null(),
    })
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Gaussian-blob dataset in the unit hypercube: class centers on a circle for
/// d = 2, hypercube corners otherwise.
#[no_mangle]
pub unsafe extern "C" fn ades_dataset_blobs(
    n_per_class: usize,
    k: usize,
    d: usize,
    spread: f64,
    seed: u64,
    out: *mut *mut AdesDataset,
) -> AdesStatus {
    guarded(|| {
        nonnull!(out);
        match make_blobs(n_per_class, k, d, spread, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(AdesDataset { inner }));
                AdesStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a CSV dataset: feature columns in [0,1] then an integer label.
#[no_mangle]
pub unsafe extern "C" fn ades_dataset_load_csv(
    path: *const c_char,
    k: usize,
    out: *mut *mut AdesDataset,
) -> AdesStatus {
    guarded(|| {
        nonnull!(out);
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_csv_dataset(path, k) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(AdesDataset { inner }));
                AdesStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ades_dataset_len(ds: *const AdesDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.len()
}

#[no_mangle]
pub unsafe extern "C" fn ades_dataset_dim(ds: *const AdesDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.dim()
}

#[no_mangle]
pub unsafe extern "C" fn ades_dataset_classes(ds: *const AdesDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.num_classes
}

/// Copy the features (row-major, len*dim) and labels out of a dataset.
/// Buffers must hold at least len*dim and len entries respectively.
#[no_mangle]
pub unsafe extern "C" fn ades_dataset_copy(
    ds: *const AdesDataset,
    features_out: *mut f64,
    labels_out: *mut usize,
) -> AdesStatus {
    guarded(|| {
        nonnull!(ds);
        nonnull!(features_out);
        nonnull!(labels_out);
        let inner = &(*ds).inner;
        let data = inner.features.data();
        std::ptr::copy_nonoverlapping(data.as_ptr(), features_out, data.len());
        std::ptr::copy_nonoverlapping(inner.labels.as_ptr(), labels_out, inner.labels.len());
        AdesStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn ades_dataset_free(ds: *mut AdesDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ---------------------------------------------------------------------------
// Models and checkpoints
// ---------------------------------------------------------------------------

/// Fresh classifier + scheduler. `hidden` points to `n_hidden` hidden-layer
/// widths (may be 0 for a single affine layer).
#[no_mangle]
pub unsafe extern "C" fn ades_model_new(
    input_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    num_classes: usize,
    dropout: f64,
    scheduler_hidden: usize,
    seed: u64,
    out: *mut *mut AdesModel,
) -> AdesStatus {
    guarded(|| {
        nonnull!(out);
        if n_hidden > 0 && hidden.is_null() {
            set_error("null hidden-layer array with n_hidden > 0".into());
            return AdesStatus::NullPointer;
        }
        let mut sizes = vec![input_dim];
        if n_hidden > 0 {
            sizes.extend_from_slice(std::slice::from_raw_parts(hidden, n_hidden));
        }
        sizes.push(num_classes);
        let root = SeededRng::new(seed);
        let mut cls_rng = root.stream("cls-init");
        let classifier = match MlpClassifier::new(&sizes, dropout, &mut cls_rng) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let mut sched_rng = root.stream("sched-init");
        let scheduler = match SchedulerNet::new(scheduler_hidden, &mut sched_rng) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        *out = Box::into_raw(Box::new(AdesModel {
            classifier,
            scheduler,
        }));
        AdesStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn ades_model_load_checkpoint(
    model: *mut AdesModel,
    path: *const c_char,
) -> AdesStatus {
    guarded(|| {
        nonnull!(model);
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let m = &mut *model;
        match load_checkpoint(path, &mut m.classifier, &mut m.scheduler) {
            Ok(()) => AdesStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ades_model_save_checkpoint(
    model: *const AdesModel,
    path: *const c_char,
) -> AdesStatus {
    guarded(|| {
        nonnull!(model);
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let m = &*model;
        match save_checkpoint(path, &m.classifier, &m.scheduler) {
            Ok(()) => AdesStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ades_model_free(model: *mut AdesModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// Evaluation, attack, cues
// ---------------------------------------------------------------------------

/// Clean accuracy plus robust accuracy per budget under PGD.
/// `robust_out` must hold `n_budgets` doubles.
#[no_mangle]
pub unsafe extern "C" fn ades_model_evaluate(
    model: *const AdesModel,
    ds: *const AdesDataset,
    budgets: *const f64,
    n_budgets: usize,
    steps: usize,
    alpha: f64,
    random_start: bool,
    batch_size: usize,
    seed: u64,
    clean_out: *mut f64,
    robust_out: *mut f64,
) -> AdesStatus {
    guarded(|| {
        nonnull!(model);
        nonnull!(ds);
        nonnull!(clean_out);
        if n_budgets > 0 {
            nonnull!(budgets);
            nonnull!(robust_out);
        }
        let budgets = if n_budgets == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(budgets, n_budgets)
        };
        let cfg = AttackConfig {
            steps,
            alpha,
            random_start,
            domain: (0.0, 1.0),
        };
        let metrics = match evaluate(
            &(*model).classifier,
            &(*ds).inner,
            budgets,
            &cfg,
            batch_size,
            &SeededRng::new(seed).stream("ffi-eval"),
            1,
        ) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        *clean_out = metrics.clean_acc;
        for (i, v) in metrics.robust_acc.iter().enumerate() {
            *robust_out.add(i) = *v;
        }
        AdesStatus::Ok
    })
}

/// PGD on a raw batch: `features` is row-major b-by-d in [0,1], `eps` holds
/// one budget per sample, and `adv_out` receives b*d doubles.
#[no_mangle]
pub unsafe extern "C" fn ades_attack_batch(
    model: *const AdesModel,
    features: *const f64,
    labels: *const usize,
    b: usize,
    d: usize,
    eps: *const f64,
    steps: usize,
    alpha: f64,
    random_start: bool,
    seed: u64,
    adv_out: *mut f64,
) -> AdesStatus {
    guarded(|| {
        nonnull!(model);
        nonnull!(features);
        nonnull!(labels);
        nonnull!(eps);
        nonnull!(adv_out);
        let x = match Tensor::new(
            vec![b, d],
            std::slice::from_raw_parts(features, b * d).to_vec(),
        ) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let labels = std::slice::from_raw_parts(labels, b);
        let eps = std::slice::from_raw_parts(eps, b);
        let cfg = AttackConfig {
            steps,
            alpha,
            random_start,
            domain: (0.0, 1.0),
        };
        let adv = match pgd_attack(
            &(*model).classifier,
            &x,
            labels,
            eps,
            &cfg,
            &SeededRng::new(seed).stream("ffi-attack"),
        ) {
            Ok(a) => a,
            Err(e) => return fail(e),
        };
        std::ptr::copy_nonoverlapping(adv.data().as_ptr(), adv_out, b * d);
        AdesStatus::Ok
    })
}

/// Per-sample robustness cues for a raw batch. Both outputs are row-major
/// b-by-3 in (gradient norm, entropy, uncertainty) order: `raw_out` holds the
/// unnormalized signals, `normalized_out` the batch min-max scaled ones.
#[no_mangle]
pub unsafe extern "C" fn ades_cues_batch(
    model: *const AdesModel,
    features: *const f64,
    labels: *const usize,
    b: usize,
    d: usize,
    t_mc: usize,
    seed: u64,
    raw_out: *mut f64,
    normalized_out: *mut f64,
) -> AdesStatus {
    guarded(|| {
        nonnull!(model);
        nonnull!(features);
        nonnull!(labels);
        nonnull!(raw_out);
        nonnull!(normalized_out);
        let x = match Tensor::new(
            vec![b, d],
            std::slice::from_raw_parts(features, b * d).to_vec(),
        ) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let labels = std::slice::from_raw_parts(labels, b);
        let cues = match assemble_cues(
            &(*model).classifier,
            &x,
            labels,
            t_mc,
            &SeededRng::new(seed).stream("ffi-cues"),
        ) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        for i in 0..b {
            *raw_out.add(i * 3) = cues.raw.gradient_norm[i];
            *raw_out.add(i * 3 + 1) = cues.raw.entropy[i];
            *raw_out.add(i * 3 + 2) = cues.raw.uncertainty[i];
        }
        std::ptr::copy_nonoverlapping(cues.normalized.data().as_ptr(), normalized_out, b * 3);
        AdesStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// Experiments and verification
// ---------------------------------------------------------------------------

/// Run a full experiment from a JSON config file; writes metrics, checkpoints
/// and a config snapshot under the configured output directory.
#[no_mangle]
pub unsafe extern "C" fn ades_experiment_run(config_path: *const c_char) -> AdesStatus {
    guarded(|| {
        let path = match cstr_arg(config_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let cfg = match ExperimentConfig::from_path(PathBuf::from(path)) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match run_experiment(&cfg) {
            Ok(_) => AdesStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Finite-difference verification of every op and the composed networks.
/// Writes the worst relative error to `max_err_out` (may be null) and returns
/// `GradCheckFailed` if any check exceeds its tolerance.
#[no_mangle]
pub unsafe extern "C" fn ades_gradcheck(
    seed: u64,
    instances: usize,
    max_err_out: *mut f64,
) -> AdesStatus {
    guarded(|| {
        let checks = match run_suite(seed, instances) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let worst = checks.iter().map(|c| c.max_err).fold(0.0, f64::max);
        if !max_err_out.is_null() {
            *max_err_out = worst;
        }
        if checks.iter().all(|c| c.passed()) {
            AdesStatus::Ok
        } else {
            let failing: Vec<&str> = checks
                .iter()
                .filter(|c| !c.passed())
                .map(|c| c.name)
                .collect();
            set_error(format!("gradient checks failed: {}", failing.join(", ")));
            AdesStatus::GradCheckFailed
        }
    })
}
