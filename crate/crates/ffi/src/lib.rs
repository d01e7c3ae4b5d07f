//! C ABI over the medground core.
//!
//! Conventions:
//!
//! - Every fallible function returns an [`MgStatus`]; results go through
//!   out-pointers that are written only on success.
//! - Objects are opaque handles created by `mg_*_new` / producer functions
//!   and released with the matching `mg_*_free`. Freeing `NULL` is a no-op.
//! - On failure, `mg_last_error_message` returns a description that stays
//!   valid on the calling thread until the next failing call.
//! - Strings returned through `char **` are owned by the caller and must be
//!   released with `mg_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use medground::error::{Error, EvalError, GroundingError};
use medground::eval::{average_precision, evaluate_corpus, read_predictions, EvalResult};
use medground::export::CocoDocument;
use medground::geometry::{iou, BBox};
use medground::grounding::{
    aggregate_phrase_probs, alignment_scores, build_prompt, classification_loss, expand_targets, read_matrix,
    tokenize_prompt, Aggregation, ClsInput, GroundingPrompt, LossOptions, Matrix, PhraseSpanMap,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    MgOk = 0,
    MgNullPointer = 1,
    MgInvalidArgument = 2,
    MgShapeMismatch = 3,
    MgIoError = 4,
    MgParseError = 5,
    MgIdSpaceMismatch = 6,
    MgInternalError = 7,
}

/// Phrase aggregation rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgAggregation {
    MgAggregateMean = 0,
    MgAggregateMax = 1,
}

/// Dense row-major matrix of doubles.
pub struct MgMatrix {
    inner: Matrix,
}

/// Prompt with its token sequence and phrase spans.
pub struct MgSpanMap {
    prompt: GroundingPrompt,
    map: PhraseSpanMap,
}

/// Evaluation result.
pub struct MgEvalResult {
    inner: EvalResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: MgStatus, msg: impl Into<String>) -> MgStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> MgStatus {
    match e {
        Error::Grounding(GroundingError::ShapeMismatch(_) | GroundingError::DimMismatch { .. }) => {
            MgStatus::MgShapeMismatch
        }
        Error::Eval(EvalError::IdSpaceMismatch(_)) => MgStatus::MgIdSpaceMismatch,
        Error::Json { .. } | Error::Export(_) => MgStatus::MgParseError,
        _ if e.kind() == medground::ErrorKind::Io => MgStatus::MgIoError,
        _ => MgStatus::MgInvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MgStatus>) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::MgOk,
        Ok(Err(s)) => s,
        Err(_) => fail(MgStatus::MgInternalError, "internal panic"),
    }
}

fn check<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, MgStatus> {
    r.map_err(|e| {
        let e = e.into();
        fail(status_of(&e), e.to_string())
    })
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, MgStatus> {
    p.as_ref().ok_or_else(|| fail(MgStatus::MgNullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, MgStatus> {
    p.as_mut().ok_or_else(|| fail(MgStatus::MgNullPointer, format!("{what} is NULL")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, MgStatus> {
    if p.is_null() {
        return Err(fail(MgStatus::MgNullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MgStatus::MgInvalidArgument, format!("{what} is not UTF-8")))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul removed").into_raw()
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL.
#[no_mangle]
pub extern "C" fn mg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// IoU of two `[x, y, w, h]` boxes.
///
/// # Safety
/// `a` and `b` must point to 4 doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn mg_iou(a: *const f64, b: *const f64, out: *mut f64) -> MgStatus {
    guard(|| {
        let a = std::slice::from_raw_parts(deref(a, "a")?, 4);
        let b = std::slice::from_raw_parts(deref(b, "b")?, 4);
        let out = out_ptr(out, "out")?;
        let (a, b) = (BBox::new(a[0], a[1], a[2], a[3]), BBox::new(b[0], b[1], b[2], b[3]));
        if !a.is_valid() || !b.is_valid() {
            return Err(fail(MgStatus::MgInvalidArgument, "boxes need finite coordinates and non-negative size"));
        }
        *out = iou(&a, &b);
        Ok(())
    })
}

/// Copy `rows * cols` doubles (row-major) into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` doubles (or may be NULL when that is 0).
#[no_mangle]
pub unsafe extern "C" fn mg_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut MgMatrix) -> MgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(MgStatus::MgInvalidArgument, "shape overflows"))?;
        let values = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(deref(data, "data")?, n).to_vec()
        };
        *out = boxed(MgMatrix {
            inner: check(Matrix::new(rows, cols, values))?,
        });
        Ok(())
    })
}

/// Read a binary feature-matrix file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_matrix_read(path: *const c_char, out: *mut *mut MgMatrix) -> MgStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(MgMatrix {
            inner: check(read_matrix(Path::new(path)))?,
        });
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn mg_matrix_free(m: *mut MgMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn mg_matrix_rows(m: *const MgMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn mg_matrix_cols(m: *const MgMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copy the row-major values into `out`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mg_matrix_copy(m: *const MgMatrix, out: *mut f64, len: usize) -> MgStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        let data = m.inner.data();
        if len != data.len() {
            return Err(fail(
                MgStatus::MgShapeMismatch,
                format!("buffer holds {len} values, matrix has {}", data.len()),
            ));
        }
        if len > 0 {
            std::slice::from_raw_parts_mut(out_ptr(out, "out")?, len).copy_from_slice(data);
        }
        Ok(())
    })
}

/// `σ(F · Tᵀ)`.
///
/// # Safety
/// All pointers must be valid; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn mg_alignment_scores(
    regions: *const MgMatrix,
    tokens: *const MgMatrix,
    out: *mut *mut MgMatrix,
) -> MgStatus {
    guard(|| {
        let (f, t) = (deref(regions, "regions")?, deref(tokens, "tokens")?);
        let out = out_ptr(out, "out")?;
        *out = boxed(MgMatrix {
            inner: check(alignment_scores(&f.inner, &t.inner))?,
        });
        Ok(())
    })
}

/// Build the `Detect:` prompt from `n` concepts and tokenize it. Padding
/// tokens are appended up to `pad_to` (0 for none).
///
/// # Safety
/// `concepts` must point to `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mg_prompt_tokenize(
    concepts: *const *const c_char,
    n: usize,
    pad_to: usize,
    out: *mut *mut MgSpanMap,
) -> MgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mut list = Vec::with_capacity(n);
        if n > 0 {
            for (i, &p) in std::slice::from_raw_parts(deref(concepts, "concepts")?, n).iter().enumerate() {
                list.push(c_str(p, &format!("concepts[{i}]"))?.to_string());
            }
        }
        let prompt = check(build_prompt(&list))?;
        let map = tokenize_prompt(&prompt, None).pad_to(pad_to);
        *out = boxed(MgSpanMap { prompt, map });
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a live span-map handle.
#[no_mangle]
pub unsafe extern "C" fn mg_span_map_free(m: *mut MgSpanMap) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_span_map_token_count(m: *const MgSpanMap) -> usize {
    m.as_ref().map_or(0, |m| m.map.token_count())
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_span_map_phrase_count(m: *const MgSpanMap) -> usize {
    m.as_ref().map_or(0, |m| m.map.phrase_count())
}

/// Prompt text; free with `mg_string_free`.
///
/// # Safety
/// `m` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_span_map_prompt(m: *const MgSpanMap, out: *mut *mut c_char) -> MgStatus {
    guard(|| {
        let m = deref(m, "span map")?;
        *out_ptr(out, "out")? = to_c_string(m.prompt.text.clone());
        Ok(())
    })
}

/// Span map as JSON; free with `mg_string_free`.
///
/// # Safety
/// `m` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_span_map_to_json(m: *const MgSpanMap, out: *mut *mut c_char) -> MgStatus {
    guard(|| {
        let m = deref(m, "span map")?;
        *out_ptr(out, "out")? = to_c_string(m.map.to_json());
        Ok(())
    })
}

/// Phrase-level targets (N×c) to token-level targets (N×M).
///
/// # Safety
/// All pointers must be valid; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn mg_expand_targets(
    targets: *const MgMatrix,
    spans: *const MgSpanMap,
    out: *mut *mut MgMatrix,
) -> MgStatus {
    guard(|| {
        let (t, s) = (deref(targets, "targets")?, deref(spans, "spans")?);
        let out = out_ptr(out, "out")?;
        *out = boxed(MgMatrix {
            inner: check(expand_targets(&t.inner, &s.map))?,
        });
        Ok(())
    })
}

/// Token scores (N×M) to phrase probabilities (N×c).
///
/// # Safety
/// All pointers must be valid; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn mg_aggregate_phrase_probs(
    scores: *const MgMatrix,
    spans: *const MgSpanMap,
    how: MgAggregation,
    out: *mut *mut MgMatrix,
) -> MgStatus {
    guard(|| {
        let (s, m) = (deref(scores, "scores")?, deref(spans, "spans")?);
        let out = out_ptr(out, "out")?;
        let how = match how {
            MgAggregation::MgAggregateMean => Aggregation::Mean,
            MgAggregation::MgAggregateMax => Aggregation::Max,
        };
        *out = boxed(MgMatrix {
            inner: check(aggregate_phrase_probs(&s.inner, &m.map, how))?,
        });
        Ok(())
    })
}

/// Mean binary cross-entropy of `input` (logits when `is_logits` is
/// nonzero, else probabilities) against same-shaped `targets`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mg_classification_loss(
    input: *const MgMatrix,
    targets: *const MgMatrix,
    is_logits: i32,
    out: *mut f64,
) -> MgStatus {
    guard(|| {
        let (x, t) = (deref(input, "input")?, deref(targets, "targets")?);
        let out = out_ptr(out, "out")?;
        let input = if is_logits != 0 {
            ClsInput::Logits(&x.inner)
        } else {
            ClsInput::Probabilities(&x.inner)
        };
        *out = check(classification_loss(input, &t.inner, &LossOptions::default()))?.0;
        Ok(())
    })
}

/// 101-point interpolated AP of `n` TP (nonzero) / FP (zero) labels in
/// descending-confidence order, with `n_gt` ground truths.
///
/// # Safety
/// `labels` must point to `n` bytes (or may be NULL when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn mg_average_precision(labels: *const u8, n: usize, n_gt: usize, out: *mut f64) -> MgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let flags: Vec<bool> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(deref(labels, "labels")?, n).iter().map(|&b| b != 0).collect()
        };
        *out = average_precision(&flags, n_gt);
        Ok(())
    })
}

/// Evaluate a prediction file against a grounding document.
///
/// # Safety
/// Paths must be NUL-terminated; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn mg_evaluate_files(
    gt_path: *const c_char,
    pred_path: *const c_char,
    out: *mut *mut MgEvalResult,
) -> MgStatus {
    guard(|| {
        let gt = check(CocoDocument::read(Path::new(c_str(gt_path, "gt_path")?)))?;
        let preds = check(read_predictions(Path::new(c_str(pred_path, "pred_path")?)))?;
        let out = out_ptr(out, "out")?;
        *out = boxed(MgEvalResult {
            inner: check(evaluate_corpus(&preds, &gt))?,
        });
        Ok(())
    })
}

/// Pooled AP and AP50, or a modality's when `modality` is non-NULL.
///
/// # Safety
/// `r` must be a live handle; `ap` and `ap50` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mg_eval_result_ap(
    r: *const MgEvalResult,
    modality: *const c_char,
    ap: *mut f64,
    ap50: *mut f64,
) -> MgStatus {
    guard(|| {
        let r = &deref(r, "result")?.inner;
        let group = if modality.is_null() {
            &r.pooled
        } else {
            let name = c_str(modality, "modality")?;
            r.modality(name)
                .ok_or_else(|| fail(MgStatus::MgInvalidArgument, format!("no modality {name:?} in result")))?
        };
        *out_ptr(ap, "ap")? = group.ap;
        *out_ptr(ap50, "ap50")? = group.ap50;
        Ok(())
    })
}

/// Full result as JSON; free with `mg_string_free`.
///
/// # Safety
/// `r` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_eval_result_to_json(r: *const MgEvalResult, out: *mut *mut c_char) -> MgStatus {
    guard(|| {
        let r = deref(r, "result")?;
        *out_ptr(out, "out")? = to_c_string(r.inner.to_json());
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_eval_result_free(r: *mut MgEvalResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
