//! C ABI over the quantizer and latency tools.
//!
//! Every fallible function returns a [`BestrqStatus`]; on failure the
//! message is available from [`bestrq_last_error_message`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bestrq::data::FeatureSequence;
use bestrq::latency::{compare_hypotheses, parse_hypotheses};
use bestrq::quantizer::{load_quantizer, save_quantizer, Quantizer, RandomProjectionQuantizer, RpqSpec, SequenceLabeler};
use bestrq::{Error, ErrorCategory};

/// Result of every fallible call. Values 3 to 9 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BestrqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    UndefinedMetric = 7,
    Precondition = 8,
    InvalidInput = 9,
    Panic = 10,
}

impl From<&Error> for BestrqStatus {
    fn from(e: &Error) -> Self {
        match e.category() {
            ErrorCategory::Config => BestrqStatus::Config,
            ErrorCategory::Io => BestrqStatus::Io,
            ErrorCategory::Format => BestrqStatus::Format,
            ErrorCategory::Numeric => BestrqStatus::Numeric,
            ErrorCategory::UndefinedMetric => BestrqStatus::UndefinedMetric,
            ErrorCategory::Precondition => BestrqStatus::Precondition,
            ErrorCategory::InvalidInput => BestrqStatus::InvalidInput,
        }
    }
}

/// Opaque quantizer handle (random-projection or VQ-VAE).
pub struct BestrqQuantizer {
    inner: Quantizer,
}

/// Outcome of comparing two timed hypothesis files.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BestrqLatencyReport {
    pub relative_latency_ms: f64,
    pub matched_words: usize,
    pub utterances: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

struct Failure(BestrqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(BestrqStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BestrqStatus::NullArgument, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BestrqStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            BestrqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            BestrqStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BestrqStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn quantizer_ref<'a>(q: *const BestrqQuantizer) -> Result<&'a Quantizer, Failure> {
    q.as_ref().map(|h| &h.inner).ok_or_else(|| null("quantizer"))
}

fn publish(q: Quantizer, out: *mut *mut BestrqQuantizer) {
    let handle = Box::into_raw(Box::new(BestrqQuantizer { inner: q }));
    // SAFETY: callers check `out` for null before building the quantizer.
    unsafe { *out = handle };
}

/// Message of the last failed call on this thread, or null after a
/// successful one. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn bestrq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bestrq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a frozen random-projection quantizer.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bestrq_rpq_new(
    input_dim: usize,
    code_dim: usize,
    codebook_size: usize,
    seed: u64,
    l2_normalize: bool,
    out: *mut *mut BestrqQuantizer,
) -> BestrqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let q = RandomProjectionQuantizer::new(RpqSpec {
            input_dim,
            code_dim,
            codebook_size,
            seed,
            l2_normalize,
        })?;
        publish(Quantizer::RandomProjection(q), out);
        Ok(())
    })
}

/// Loads a quantizer file written by the CLI or [`bestrq_quantizer_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bestrq_quantizer_load(path: *const c_char, out: *mut *mut BestrqQuantizer) -> BestrqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        publish(load_quantizer(path)?, out);
        Ok(())
    })
}

/// Writes the quantizer to `path`. With `seed_only`, a random-projection
/// quantizer stores just its spec and is rebuilt from the seed on load.
///
/// # Safety
/// `q` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bestrq_quantizer_save(
    q: *const BestrqQuantizer,
    path: *const c_char,
    seed_only: bool,
) -> BestrqStatus {
    guard(|| {
        let q = quantizer_ref(q)?;
        let path = path_arg(path, "path")?;
        save_quantizer(q, path, seed_only)?;
        Ok(())
    })
}

/// Width of one input frame, or 0 for a null handle.
///
/// # Safety
/// `q` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bestrq_quantizer_input_dim(q: *const BestrqQuantizer) -> usize {
    q.as_ref().map_or(0, |h| h.inner.input_dim())
}

/// Number of labels, or 0 for a null handle.
///
/// # Safety
/// `q` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn bestrq_quantizer_codebook_size(q: *const BestrqQuantizer) -> usize {
    q.as_ref().map_or(0, |h| h.inner.vocab_size())
}

/// Labels `frames` row-major frames of width `dim` (which must equal the
/// quantizer input dim). Writes one label per frame into `labels`; frames
/// that cannot be labeled get -1.
///
/// # Safety
/// `data` must hold `frames * dim` floats and `labels` room for `frames`
/// values.
#[no_mangle]
pub unsafe extern "C" fn bestrq_quantizer_label_frames(
    q: *const BestrqQuantizer,
    data: *const f32,
    frames: usize,
    dim: usize,
    labels: *mut i64,
) -> BestrqStatus {
    guard(|| {
        let q = quantizer_ref(q)?;
        if frames == 0 {
            return Ok(());
        }
        if data.is_null() {
            return Err(null("data"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let len = frames
            .checked_mul(dim)
            .ok_or_else(|| Failure(BestrqStatus::InvalidInput, "frames * dim overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let seq = FeatureSequence::from_rows(frames, dim, values, 10.0)?;
        let out = std::slice::from_raw_parts_mut(labels, frames);
        for (slot, label) in out.iter_mut().zip(q.label_sequence(&seq)?) {
            *slot = label.map_or(-1, |l| l as i64);
        }
        Ok(())
    })
}

/// Releases a quantizer handle. Null is accepted and ignored.
///
/// # Safety
/// `q` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bestrq_quantizer_free(q: *mut BestrqQuantizer) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Mean start-time difference (compared minus baseline) over words that
/// align between two hypothesis JSONL files.
///
/// # Safety
/// Both paths must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bestrq_latency_compare(
    base_path: *const c_char,
    comp_path: *const c_char,
    out: *mut BestrqLatencyReport,
) -> BestrqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let base = parse_hypotheses(path_arg(base_path, "base_path")?)?;
        let comp = parse_hypotheses(path_arg(comp_path, "comp_path")?)?;
        let report = compare_hypotheses(&base, &comp)?;
        *out = BestrqLatencyReport {
            relative_latency_ms: report.relative_latency_ms,
            matched_words: report.matched_words,
            utterances: report.utterances,
        };
        Ok(())
    })
}
