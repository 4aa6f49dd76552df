//! C ABI over the relation extraction core.
//!
//! Every fallible call returns an [`SlpStatus`]; on failure the message is
//! available from [`slp_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`slp_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use slp::annotation::cohen_kappa;
use slp::classifier::Model;
use slp::confidence::{confidence, Verdict};
use slp::corpus::{load_corpus, parse_corpus, span_head, EntityMention, EntityTag, ParsedSentence};
use slp::features::{shortest_dependency_path, DependencyGraph};
use slp::propagation::{schedule_size, Schedule};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    OutOfRange = 5,
    InvalidArgument = 6,
    NoPath = 7,
    Panic = 99,
}

/// Parsed sentences.
pub struct SlpCorpus {
    sentences: Vec<ParsedSentence>,
}

/// A trained per-relation classifier.
pub struct SlpModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: SlpStatus, message: impl Into<String>) -> SlpStatus {
    set_error(message);
    status
}

fn guard<F: FnOnce() -> SlpStatus>(f: F) -> SlpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SlpStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SlpStatus> {
    if p.is_null() {
        return Err(fail(SlpStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SlpStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

macro_rules! out_ptr {
    ($p:expr) => {
        if $p.is_null() {
            return fail(SlpStatus::NullPointer, concat!(stringify!($p), " is null"));
        }
    };
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn slp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn slp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses CoNLL text into a corpus handle.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_corpus_parse(text: *const c_char, out: *mut *mut SlpCorpus) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        let text = try_ffi!(str_arg(text, "text"));
        match parse_corpus(text) {
            Ok(sentences) => {
                *out = Box::into_raw(Box::new(SlpCorpus { sentences }));
                SlpStatus::Ok
            }
            Err(e) => fail(SlpStatus::Parse, e.to_string()),
        }
    })
}

/// Loads a CoNLL file into a corpus handle.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_corpus_load(path: *const c_char, out: *mut *mut SlpCorpus) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        let path = try_ffi!(str_arg(path, "path"));
        match load_corpus(Path::new(path)) {
            Ok(sentences) => {
                *out = Box::into_raw(Box::new(SlpCorpus { sentences }));
                SlpStatus::Ok
            }
            Err(e @ slp::corpus::CorpusError::Io { .. }) => fail(SlpStatus::Io, e.to_string()),
            Err(e) => fail(SlpStatus::Parse, e.to_string()),
        }
    })
}

/// Number of sentences; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slp_corpus_len(corpus: *const SlpCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.sentences.len())
}

/// Number of tokens of sentence `index` (0-based).
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_corpus_sentence_len(corpus: *const SlpCorpus, index: usize, out: *mut usize) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        let Some(c) = corpus.as_ref() else {
            return fail(SlpStatus::NullPointer, "corpus is null");
        };
        match c.sentences.get(index) {
            Some(s) => {
                *out = s.len();
                SlpStatus::Ok
            }
            None => fail(SlpStatus::OutOfRange, format!("sentence {index} of {}", c.sentences.len())),
        }
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slp_corpus_free(corpus: *mut SlpCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

fn mention(s: &ParsedSentence, first: usize, last: usize) -> Result<EntityMention, SlpStatus> {
    if first == 0 || first > last || last > s.len() {
        return Err(fail(
            SlpStatus::OutOfRange,
            format!("span {first}..{last} outside 1..{}", s.len()),
        ));
    }
    let head = span_head(s, first, last);
    let entity_type = s.token(head).map(|t| t.entity).unwrap_or(EntityTag::None);
    Ok(EntityMention {
        doc_id: s.doc_id.clone(),
        sentence_id: s.sentence_id,
        first,
        last,
        head,
        entity_type,
        kb_id: None,
    })
}

/// Shortest dependency path between two inclusive 1-based token spans of
/// sentence `index`. `collapse` replaces entity tokens on the path by
/// their type.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable. The string
/// written to `out` is released with [`slp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn slp_sdp(
    corpus: *const SlpCorpus,
    index: usize,
    subject_first: usize,
    subject_last: usize,
    object_first: usize,
    object_last: usize,
    collapse: bool,
    out: *mut *mut c_char,
) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        let Some(c) = corpus.as_ref() else {
            return fail(SlpStatus::NullPointer, "corpus is null");
        };
        let Some(s) = c.sentences.get(index) else {
            return fail(SlpStatus::OutOfRange, format!("sentence {index} of {}", c.sentences.len()));
        };
        let subj = try_ffi!(mention(s, subject_first, subject_last));
        let obj = try_ffi!(mention(s, object_first, object_last));
        if subj.overlaps(&obj) {
            return fail(SlpStatus::InvalidArgument, "subject and object spans overlap");
        }
        let graph = DependencyGraph::new(s);
        match shortest_dependency_path(s, &graph, &subj, &obj, collapse) {
            Ok(p) => {
                *out = CString::new(p.sdp).expect("no interior nul").into_raw();
                SlpStatus::Ok
            }
            Err(e) => fail(SlpStatus::NoPath, e.to_string()),
        }
    })
}

/// Smoothed pattern confidence `(pos + alpha) / (neg + alpha)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_confidence(pos: usize, neg: usize, alpha: f64, out: *mut f64) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        if alpha.is_nan() || alpha <= 0.0 {
            return fail(SlpStatus::InvalidArgument, "alpha must be positive");
        }
        *out = confidence(pos, neg, alpha);
        SlpStatus::Ok
    })
}

/// Training-set size at step `k` of `k_max`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_schedule_size(
    n_filtered: usize,
    n_ds: usize,
    k_max: usize,
    k: usize,
    out: *mut usize,
) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        match Schedule::new(n_filtered, n_ds, k_max, k) {
            Ok(s) => {
                *out = schedule_size(&s);
                SlpStatus::Ok
            }
            Err(e) => fail(SlpStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Cohen's kappa of two verdict sequences over the same `n` items.
/// Codes: 0 unlabeled, 1 accepted, 2 rejected.
///
/// # Safety
/// `a` and `b` must point to `n` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_kappa(a: *const u8, b: *const u8, n: usize, out: *mut f64) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        if a.is_null() || b.is_null() {
            return fail(SlpStatus::NullPointer, "verdict array is null");
        }
        let decode = |v: u8| match v {
            0 => Ok(Verdict::Unlabeled),
            1 => Ok(Verdict::Accepted),
            2 => Ok(Verdict::Rejected),
            x => Err(fail(SlpStatus::InvalidArgument, format!("verdict code {x}"))),
        };
        let (a, b) = (std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, n));
        let mut ma = BTreeMap::new();
        let mut mb = BTreeMap::new();
        for i in 0..n {
            let key = format!("{i:020}");
            ma.insert(key.clone(), try_ffi!(decode(a[i])));
            mb.insert(key, try_ffi!(decode(b[i])));
        }
        match cohen_kappa(&ma, &mb) {
            Ok(k) => {
                *out = k;
                SlpStatus::Ok
            }
            Err(e) => fail(SlpStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Loads a model file written by `slp train`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_model_load(path: *const c_char, out: *mut *mut SlpModel) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        let path = try_ffi!(str_arg(path, "path"));
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(SlpStatus::Io, format!("{path}: {e}")),
        };
        match serde_json::from_str::<Model>(&text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(SlpModel { model }));
                SlpStatus::Ok
            }
            Err(e) => fail(SlpStatus::Parse, format!("{path}: {e}")),
        }
    })
}

/// Probability that an instance with the given feature strings holds the
/// model's relation. Unknown features are ignored.
///
/// # Safety
/// `model` must be a live handle; `features` must point to `n` valid
/// nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slp_model_predict(
    model: *const SlpModel,
    features: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> SlpStatus {
    guard(|| {
        out_ptr!(out);
        let Some(m) = model.as_ref() else {
            return fail(SlpStatus::NullPointer, "model is null");
        };
        if features.is_null() && n > 0 {
            return fail(SlpStatus::NullPointer, "features is null");
        }
        let mut names = Vec::with_capacity(n);
        for i in 0..n {
            names.push(try_ffi!(str_arg(*features.add(i), "feature")).to_string());
        }
        *out = m.model.predict_proba(&names);
        SlpStatus::Ok
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slp_model_free(model: *mut SlpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
