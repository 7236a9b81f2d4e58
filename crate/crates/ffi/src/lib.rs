//! C ABI over the qwyc library.
//!
//! Objects cross the boundary as opaque heap handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`QwycStatus`]; on failure the message is available from
//! [`qwyc_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qwyc::cascade::{evaluate_matrix, evaluate_row};
use qwyc::ensemble::{load_score_matrix, CostVector, ScoreFile, ScoreMatrix, StoppingMode};
use qwyc::error::Error;
use qwyc::policy::Policy;
use qwyc::qwyc::{optimize_order, thresholds_for_fixed_order};

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QwycStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Internal = 5,
}

/// Score matrix with its per-model costs and decision threshold.
pub struct QwycScoreMatrix(ScoreFile);

/// A fitted early-stopping policy (threshold cascade or Fan).
pub struct QwycPolicy(Policy);

/// Aggregate metrics of a policy over a score matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QwycMetrics {
    pub mean_cost: f64,
    pub mean_models: f64,
    pub pct_diff: f64,
    /// Meaningful only when `has_accuracy` is non-zero.
    pub accuracy: f64,
    pub has_accuracy: c_int,
    pub n_examples: usize,
    pub disagreements: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Status(QwycStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(QwycStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure::Status(QwycStatus::InvalidArgument, message.into())
}

fn status_of(e: &Error) -> QwycStatus {
    match e {
        Error::Io { .. } => QwycStatus::Io,
        Error::Parse { .. } | Error::Json(_) => QwycStatus::Parse,
        Error::Validation(_) | Error::DimensionMismatch { .. } | Error::SearchTooLarge { .. } => {
            QwycStatus::InvalidArgument
        }
    }
}

/// Runs `f`, converting errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QwycStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QwycStatus::Ok,
        Ok(Err(Failure::Status(status, message))) => {
            set_error(message);
            status
        }
        Ok(Err(Failure::Lib(e))) => {
            let mut message = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                message.push_str(": ");
                message.push_str(&s.to_string());
                source = s.source();
            }
            set_error(message);
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".to_string());
            QwycStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn mode(two_sided: c_int) -> StoppingMode {
    if two_sided != 0 {
        StoppingMode::TwoSided
    } else {
        StoppingMode::FilterNegative
    }
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qwyc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a score CSV. `meta_path` may be null for unit costs and β = 0.
///
/// # Safety
/// `csv_path` and a non-null `meta_path` must be nul-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_matrix_load(
    csv_path: *const c_char,
    meta_path: *const c_char,
    out: *mut *mut QwycScoreMatrix,
) -> QwycStatus {
    guard(|| {
        let csv = str_arg(csv_path, "csv_path")?;
        let meta = if meta_path.is_null() { None } else { Some(str_arg(meta_path, "meta_path")?) };
        let file = load_score_matrix(Path::new(csv), meta.map(Path::new))?;
        put(out, QwycScoreMatrix(file))
    })
}

/// Builds a matrix from `n_examples * n_models` row-major scores. `labels`
/// (one byte per example, non-zero = positive) and `costs` (one per model)
/// may be null; null costs mean unit costs.
///
/// # Safety
/// Non-null pointers must reference arrays of the stated lengths; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_matrix_from_buffer(
    scores: *const f64,
    n_examples: usize,
    n_models: usize,
    labels: *const u8,
    costs: *const f64,
    beta: f64,
    out: *mut *mut QwycScoreMatrix,
) -> QwycStatus {
    guard(|| {
        if scores.is_null() {
            return Err(null("scores"));
        }
        let len = n_examples.checked_mul(n_models).ok_or_else(|| invalid("matrix size overflows"))?;
        let flat = std::slice::from_raw_parts(scores, len).to_vec();
        let mut sm = ScoreMatrix::from_flat(n_examples, n_models, flat)?;
        if !labels.is_null() {
            let labels = std::slice::from_raw_parts(labels, n_examples);
            sm = sm.with_labels(labels.iter().map(|&b| b != 0).collect())?;
        }
        let costs = if costs.is_null() {
            CostVector::uniform(n_models)
        } else {
            CostVector::new(std::slice::from_raw_parts(costs, n_models).to_vec())?
        };
        put(out, QwycScoreMatrix(ScoreFile { scores: sm, costs, beta }))
    })
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn qwyc_matrix_n_examples(m: *const QwycScoreMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.scores.n_examples())
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn qwyc_matrix_n_models(m: *const QwycScoreMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.scores.n_models())
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qwyc_matrix_free(m: *mut QwycScoreMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Greedy joint ordering and thresholds with disagreement budget `alpha`.
/// `two_sided = 0` stops only negatives.
///
/// # Safety
/// `m` must be a live matrix handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_optimize(
    m: *const QwycScoreMatrix,
    alpha: f64,
    two_sided: c_int,
    out: *mut *mut QwycPolicy,
) -> QwycStatus {
    guard(|| {
        let m = ref_arg(m, "matrix")?;
        let config = m.0.config(alpha, mode(two_sided))?;
        let policy = optimize_order(&m.0.scores, &m.0.costs, &config)?;
        put(out, QwycPolicy(policy.into()))
    })
}

/// Optimal thresholds for the given model order.
///
/// # Safety
/// `m` must be a live matrix handle, `order` must point to `len` indices and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_for_order(
    m: *const QwycScoreMatrix,
    order: *const usize,
    len: usize,
    alpha: f64,
    two_sided: c_int,
    out: *mut *mut QwycPolicy,
) -> QwycStatus {
    guard(|| {
        let m = ref_arg(m, "matrix")?;
        if order.is_null() {
            return Err(null("order"));
        }
        let order = std::slice::from_raw_parts(order, len);
        let config = m.0.config(alpha, mode(two_sided))?;
        let policy = thresholds_for_fixed_order(&m.0.scores, &m.0.costs, &config, order)?;
        put(out, QwycPolicy(policy.into()))
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_load(path: *const c_char, out: *mut *mut QwycPolicy) -> QwycStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, QwycPolicy(Policy::load(Path::new(path))?))
    })
}

/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_from_json(json: *const c_char, out: *mut *mut QwycPolicy) -> QwycStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        put(out, QwycPolicy(Policy::from_json(json)?))
    })
}

/// Serializes a policy. Release the string with [`qwyc_string_free`].
///
/// # Safety
/// `p` must be a live policy handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_to_json(p: *const QwycPolicy, out: *mut *mut c_char) -> QwycStatus {
    guard(|| {
        let p = ref_arg(p, "policy")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CString::new(p.0.to_json()).map_err(|_| invalid("policy JSON contains a nul byte"))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qwyc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of base models the policy expects per row.
///
/// # Safety
/// `p` must be null or a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_n_models(p: *const QwycPolicy) -> usize {
    use qwyc::cascade::StoppingRule;
    p.as_ref().map_or(0, |p| p.0.n_models())
}

/// Classifies one example. `row` holds the `n_models` base-model scores in
/// model-index order. Writes the decision (1 positive, 0 negative) and the
/// number of models evaluated.
///
/// # Safety
/// `p` must be a live policy handle, `row` must point to `n_models` values
/// and the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_evaluate_row(
    p: *const QwycPolicy,
    row: *const f64,
    n_models: usize,
    decision: *mut c_int,
    stop_stage: *mut usize,
) -> QwycStatus {
    use qwyc::cascade::StoppingRule;
    guard(|| {
        let p = ref_arg(p, "policy")?;
        if row.is_null() {
            return Err(null("row"));
        }
        if decision.is_null() || stop_stage.is_null() {
            return Err(null("out"));
        }
        if n_models != p.0.n_models() {
            return Err(invalid(format!("row has {n_models} scores, policy expects {}", p.0.n_models())));
        }
        let row = std::slice::from_raw_parts(row, n_models);
        let outcome = evaluate_row(&p.0, row, &CostVector::uniform(n_models));
        *decision = c_int::from(outcome.decision);
        *stop_stage = outcome.stop_stage;
        Ok(())
    })
}

/// Evaluates a policy on every row of a matrix against the full ensemble
/// at the matrix's β.
///
/// # Safety
/// `p` and `m` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_evaluate(
    p: *const QwycPolicy,
    m: *const QwycScoreMatrix,
    out: *mut QwycMetrics,
) -> QwycStatus {
    guard(|| {
        let p = ref_arg(p, "policy")?;
        let m = ref_arg(m, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let metrics = evaluate_matrix(&p.0, &m.0.scores, &m.0.costs, &m.0.reference())?;
        *out = QwycMetrics {
            mean_cost: metrics.mean_cost,
            mean_models: metrics.mean_models,
            pct_diff: metrics.pct_diff,
            accuracy: metrics.accuracy.unwrap_or(f64::NAN),
            has_accuracy: c_int::from(metrics.accuracy.is_some()),
            n_examples: metrics.n_examples,
            disagreements: metrics.disagreements,
        };
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qwyc_policy_free(p: *mut QwycPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}
