//! C ABI for the anticipation models: opaque handles, status codes, and a
//! thread-local last-error message. The generated header lives at
//! `include/stepcast.h`.
//!
//! Ownership rules: every `*_new`/`*_load` pointer is freed by the matching
//! `*_free`; strings returned through out-parameters are freed with
//! `sc_string_free`. Handles are not thread-safe for concurrent mutation but
//! may be shared for concurrent reads.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use stepcast::corpus::{generate_corpus, procedure_from_json, write_corpus, Grammar};
use stepcast::encoders::Modality;
use stepcast::error::Error;
use stepcast::evaluate::{evaluate_corpus, EvalOptions};
use stepcast::model::{PredictRequest, PredictionMode};
use stepcast::train::Checkpoint;

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl From<&Error> for ScStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            1 => ScStatus::Usage,
            3 => ScStatus::Numeric,
            _ => ScStatus::Data,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(e: &Error) -> ScStatus {
    set_error(&e.to_string());
    ScStatus::from(e)
}

/// Opaque grammar handle.
pub struct ScGrammar {
    inner: Grammar,
}

/// Opaque model handle (a full checkpoint: parameters, frozen encoders,
/// grammar, configuration).
pub struct ScModel {
    inner: Checkpoint,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Error> {
    if ptr.is_null() {
        return Err(Error::usage(format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Error::usage(format!("{what} is not valid UTF-8")))
}

fn string_out(out: *mut *mut c_char, value: String) -> ScStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return ScStatus::Usage;
    }
    match CString::new(value) {
        Ok(s) => {
            unsafe { *out = s.into_raw() };
            ScStatus::Ok
        }
        Err(_) => {
            set_error("output contained an interior NUL byte");
            ScStatus::Data
        }
    }
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error on this thread; valid until the next failing
/// call. Never freed by the caller.
#[no_mangle]
pub extern "C" fn sc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string returned through an out-parameter.
///
/// # Safety
/// `s` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn sc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// The built-in desk-scale grammar.
#[no_mangle]
pub extern "C" fn sc_grammar_desk() -> *mut ScGrammar {
    Box::into_raw(Box::new(ScGrammar {
        inner: stepcast::corpus::desk_grammar(),
    }))
}

/// Loads a grammar document; returns null on failure (see `sc_last_error`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sc_grammar_load(path: *const c_char) -> *mut ScGrammar {
    let path = match unsafe { cstr_arg(path, "path") } {
        Ok(p) => p,
        Err(e) => {
            fail(&e);
            return ptr::null_mut();
        }
    };
    match stepcast::corpus::read_grammar(&PathBuf::from(path)) {
        Ok(g) => Box::into_raw(Box::new(ScGrammar { inner: g })),
        Err(e) => {
            fail(&e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `g` must come from `sc_grammar_desk`/`sc_grammar_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sc_grammar_free(g: *mut ScGrammar) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

/// Validates every grammar invariant.
///
/// # Safety
/// `g` must be a live grammar handle.
#[no_mangle]
pub unsafe extern "C" fn sc_grammar_validate(g: *const ScGrammar) -> ScStatus {
    let Some(g) = (unsafe { g.as_ref() }) else {
        set_error("grammar handle is null");
        return ScStatus::Usage;
    };
    match g.inner.validate() {
        Ok(()) => ScStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Samples `n` procedures with the given seed and writes them as a corpus
/// file.
///
/// # Safety
/// `g` must be a live grammar handle; `out_path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn sc_generate_corpus(
    g: *const ScGrammar,
    n: u64,
    seed: u64,
    out_path: *const c_char,
) -> ScStatus {
    let Some(g) = (unsafe { g.as_ref() }) else {
        set_error("grammar handle is null");
        return ScStatus::Usage;
    };
    let path = match unsafe { cstr_arg(out_path, "out_path") } {
        Ok(p) => PathBuf::from(p),
        Err(e) => return fail(&e),
    };
    if n == 0 {
        set_error("n must be at least 1");
        return ScStatus::Usage;
    }
    match generate_corpus(&g.inner, n as usize, seed)
        .and_then(|corpus| write_corpus(&path, &corpus, &g.inner.vocab))
    {
        Ok(()) => ScStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Loads a training checkpoint; returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sc_model_load(path: *const c_char) -> *mut ScModel {
    let path = match unsafe { cstr_arg(path, "path") } {
        Ok(p) => p,
        Err(e) => {
            fail(&e);
            return ptr::null_mut();
        }
    };
    match Checkpoint::load(&PathBuf::from(path)) {
        Ok(ckpt) => Box::into_raw(Box::new(ScModel { inner: ckpt })),
        Err(e) => {
            fail(&e);
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `m` must come from `sc_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sc_model_free(m: *mut ScModel) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

fn modality_arg(modality: c_int) -> Result<Modality, Error> {
    match modality {
        0 => Ok(Modality::Text),
        1 => Ok(Modality::Video),
        other => Err(Error::usage(format!(
            "modality must be 0 (text) or 1 (video), got {other}"
        ))),
    }
}

/// Predicts next-step candidates for one observed context.
///
/// `context_json` is a single corpus record (`recipe_type`, `ingredients`,
/// `steps`); its steps are all treated as observed. `k < 1` selects the
/// deterministic single prediction (the prior mean), `k >= 1` draws k
/// samples. The result is a JSON array of candidates written to `out_json`
/// (free with `sc_string_free`).
///
/// # Safety
/// `m` must be a live model handle; `context_json` a valid string; `out_json`
/// a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_model_predict_json(
    m: *const ScModel,
    context_json: *const c_char,
    modality: c_int,
    k: i64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> ScStatus {
    let Some(m) = (unsafe { m.as_ref() }) else {
        set_error("model handle is null");
        return ScStatus::Usage;
    };
    let context = match unsafe { cstr_arg(context_json, "context_json") } {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let modality = match modality_arg(modality) {
        Ok(mo) => mo,
        Err(e) => return fail(&e),
    };
    let ckpt = &m.inner;
    let proc = match procedure_from_json(context, &ckpt.grammar.vocab, ckpt.grammar.max_t) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let (mode, k) = if k < 1 {
        (PredictionMode::Single, 1)
    } else {
        (PredictionMode::Multi, k as usize)
    };
    let candidates = match ckpt.model.predict(&PredictRequest {
        ingredients: &proc.ingredients,
        steps: &proc.steps,
        modality,
        mode,
        k,
        nucleus_p: ckpt.config.decode.nucleus_p,
        corpus_seed: seed,
        proc_index: 0,
        sample_seed: seed,
    }) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let rendered: Vec<serde_json::Value> = candidates
        .iter()
        .map(|c| {
            serde_json::json!({
                "tokens": c.sentence.tokens.iter()
                    .map(|&t| ckpt.grammar.vocab.surface(t))
                    .collect::<Vec<_>>(),
                "logprob": c.sentence.logprob,
                "terminated": c.sentence.terminated,
            })
        })
        .collect();
    string_out(out_json, serde_json::Value::Array(rendered).to_string())
}

/// Evaluates a model on a corpus file and writes the metrics report JSON to
/// `out_json` (free with `sc_string_free`). `k < 1` selects single mode.
///
/// # Safety
/// `m` must be a live model handle; `corpus_path` a valid string; `out_json`
/// a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_model_eval_corpus(
    m: *const ScModel,
    corpus_path: *const c_char,
    modality: c_int,
    k: i64,
    corpus_seed: u64,
    out_json: *mut *mut c_char,
) -> ScStatus {
    let Some(m) = (unsafe { m.as_ref() }) else {
        set_error("model handle is null");
        return ScStatus::Usage;
    };
    let path = match unsafe { cstr_arg(corpus_path, "corpus_path") } {
        Ok(p) => PathBuf::from(p),
        Err(e) => return fail(&e),
    };
    let modality = match modality_arg(modality) {
        Ok(mo) => mo,
        Err(e) => return fail(&e),
    };
    let ckpt = &m.inner;
    let corpus = match stepcast::corpus::read_corpus(&path, &ckpt.grammar.vocab, ckpt.grammar.max_t)
    {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let (mode, k) = if k < 1 {
        (PredictionMode::Single, 1)
    } else {
        (PredictionMode::Multi, k as usize)
    };
    let report = match evaluate_corpus(
        &ckpt.model,
        &corpus,
        &ckpt.grammar.vocab,
        &EvalOptions {
            modality,
            mode,
            k,
            nucleus_p: ckpt.config.decode.nucleus_p,
            corpus_seed,
            sample_seed: ckpt.config.eval.seed,
        },
    ) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    match serde_json::to_string(&report) {
        Ok(json) => string_out(out_json, json),
        Err(e) => {
            set_error(&e.to_string());
            ScStatus::Data
        }
    }
}
