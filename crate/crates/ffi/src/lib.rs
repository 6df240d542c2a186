//! C ABI over the dialogue engine and the metric helpers.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an [`EmpStatus`];
//! on failure [`emp_last_error`] describes the error for the calling thread.
//! Strings returned through out-parameters must be released with
//! [`emp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use empathia::dialogue::scripted::{RecordingGenerator, ScriptedRecognizer};
use empathia::dialogue::{DialogueEngine, DialogueState, TemplateBank, TemplatePolicy};
use empathia::emotion::EmotionModel;
use empathia::evalkit;
use empathia::generator::{DecodeConfig, GeneratorModel};
use empathia::textproc::tokenize;
use empathia::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidInput = 5,
    Metric = 6,
    Internal = 7,
    Panic = 8,
}

/// Loaded models, template bank and decoding settings.
pub struct EmpEngine {
    engine: DialogueEngine,
}

/// One conversation driven by an engine.
pub struct EmpSession {
    engine: DialogueEngine,
    state: DialogueState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EmpStatus {
    match e {
        Error::Io { .. } => EmpStatus::Io,
        Error::Checkpoint(_) | Error::Parse { .. } => EmpStatus::Checkpoint,
        Error::Metric(_) => EmpStatus::Metric,
        Error::InvalidInput(_) | Error::TooLong { .. } | Error::Config(_) | Error::TemplateBank(_) | Error::Validation { .. } => {
            EmpStatus::InvalidInput
        }
        _ => EmpStatus::Internal,
    }
}

struct Fail(EmpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EmpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside empathia");
            EmpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(EmpStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EmpStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn null(name: &str) -> Fail {
    Fail(EmpStatus::NullArgument, format!("{name} is null"))
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn emp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn emp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load an engine from two checkpoints. `templates` may be null for the
/// built-in bank.
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emp_engine_load(
    emotion_ckpt: *const c_char,
    generator_ckpt: *const c_char,
    templates: *const c_char,
    out: *mut *mut EmpEngine,
) -> EmpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let e = EmotionModel::load(Path::new(str_arg(emotion_ckpt, "emotion_ckpt")?))?;
        let g = GeneratorModel::load(Path::new(str_arg(generator_ckpt, "generator_ckpt")?))?;
        let bank = if templates.is_null() {
            TemplateBank::default_bank()
        } else {
            TemplateBank::load(Path::new(str_arg(templates, "templates")?))?
        };
        let engine = DialogueEngine::new(Arc::new(e), Arc::new(g), Arc::new(bank), TemplatePolicy::Uniform, DecodeConfig::default());
        *out = Box::into_raw(Box::new(EmpEngine { engine }));
        Ok(())
    })
}

/// Engine backed by keyword rules and canned replies, for wiring tests.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emp_engine_scripted(out: *mut *mut EmpEngine) -> EmpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let engine = DialogueEngine::new(
            Arc::new(ScriptedRecognizer::default()),
            Arc::new(RecordingGenerator::default()),
            Arc::new(TemplateBank::default_bank()),
            TemplatePolicy::Uniform,
            DecodeConfig::greedy(),
        );
        *out = Box::into_raw(Box::new(EmpEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from an `emp_engine_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn emp_engine_free(engine: *mut EmpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Start a session. Sessions keep the engine alive independently.
///
/// # Safety
/// `engine` must be a live handle, `id` a valid string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emp_session_new(
    engine: *const EmpEngine,
    id: *const c_char,
    seed: u64,
    out: *mut *mut EmpSession,
) -> EmpStatus {
    guard(|| {
        if engine.is_null() {
            return Err(null("engine"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let id = str_arg(id, "id")?;
        let s = EmpSession { engine: (*engine).engine.clone(), state: DialogueState::new(id, seed) };
        *out = Box::into_raw(Box::new(s));
        Ok(())
    })
}

/// # Safety
/// `session` must come from `emp_session_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn emp_session_free(session: *mut EmpSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Advance the session by one user turn. On success `*reply_json` receives
/// `{"text": …, "meta": {label, probs, cause, strategy, phase, source}}`.
///
/// # Safety
/// `session` must be a live handle; `text` a valid string; `reply_json` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emp_session_step(
    session: *mut EmpSession,
    text: *const c_char,
    reply_json: *mut *mut c_char,
) -> EmpStatus {
    guard(|| {
        if session.is_null() {
            return Err(null("session"));
        }
        if reply_json.is_null() {
            return Err(null("reply_json"));
        }
        let text = str_arg(text, "text")?;
        let s = &mut *session;
        let reply = s.engine.step(&mut s.state, text)?;
        let json = serde_json::to_string(&reply).map_err(|e| Fail(EmpStatus::Internal, e.to_string()))?;
        *reply_json = CString::new(json).map_err(|e| Fail(EmpStatus::Internal, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Number of utterances recorded in the session.
///
/// # Safety
/// `session` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn emp_session_turns(session: *const EmpSession) -> usize {
    if session.is_null() {
        0
    } else {
        (*session).state.turns.len()
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn emp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `(up − down) / (up + down)`; fails with `Metric` when there are no votes.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emp_nsv(up: u64, down: u64, out: *mut f64) -> EmpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = evalkit::nsv(up, down)?;
        Ok(())
    })
}

/// Pooled distinct-n over `count` response strings, tokenized internally.
///
/// # Safety
/// `responses` must point to `count` valid strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn emp_distinct_n(
    responses: *const *const c_char,
    count: usize,
    n: usize,
    out: *mut f64,
) -> EmpStatus {
    guard(|| {
        if out.is_null() || (responses.is_null() && count > 0) {
            return Err(null("responses/out"));
        }
        let mut toks = Vec::with_capacity(count);
        for i in 0..count {
            toks.push(tokenize(str_arg(*responses.add(i), "response")?));
        }
        *out = evalkit::distinct_n(&toks, n)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    unsafe fn last_error() -> String {
        CStr::from_ptr(emp_last_error()).to_string_lossy().into_owned()
    }

    #[test]
    fn scripted_session_roundtrip() {
        unsafe {
            let mut engine = ptr::null_mut();
            assert_eq!(emp_engine_scripted(&mut engine), EmpStatus::Ok);
            let mut session = ptr::null_mut();
            assert_eq!(emp_session_new(engine, cstr("s1").as_ptr(), 7, &mut session), EmpStatus::Ok);
            emp_engine_free(engine);

            let mut reply = ptr::null_mut();
            assert_eq!(emp_session_step(session, cstr("I'm upset.").as_ptr(), &mut reply), EmpStatus::Ok);
            let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(reply).to_str().unwrap()).unwrap();
            emp_string_free(reply);
            assert_eq!(v["meta"]["phase"], "Probing");
            assert_eq!(v["meta"]["label"], "sad");
            assert_eq!(emp_session_turns(session), 2);

            assert_eq!(emp_session_step(session, cstr("  ").as_ptr(), &mut reply), EmpStatus::InvalidInput);
            assert!(last_error().contains("empty"));
            assert_eq!(emp_session_step(session, ptr::null(), &mut reply), EmpStatus::NullArgument);
            assert_eq!(emp_session_turns(session), 2);
            emp_session_free(session);
        }
    }

    #[test]
    fn load_failure_reports_error() {
        unsafe {
            let mut engine = ptr::null_mut();
            let missing = cstr("/nonexistent/e.ckpt");
            let st = emp_engine_load(missing.as_ptr(), missing.as_ptr(), ptr::null(), &mut engine);
            assert_eq!(st, EmpStatus::Io);
            assert!(engine.is_null());
            assert!(!last_error().is_empty());
        }
    }

    #[test]
    fn metric_wrappers() {
        unsafe {
            let mut x = 0.0;
            assert_eq!(emp_nsv(10, 5, &mut x), EmpStatus::Ok);
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(emp_nsv(0, 0, &mut x), EmpStatus::Metric);

            let rs = [cstr("a a b")];
            let ptrs: Vec<*const c_char> = rs.iter().map(|c| c.as_ptr()).collect();
            assert_eq!(emp_distinct_n(ptrs.as_ptr(), 1, 1, &mut x), EmpStatus::Ok);
            assert!((x - 2.0 / 3.0).abs() < 1e-15);
            assert_eq!(emp_distinct_n(ptrs.as_ptr(), 1, 5, &mut x), EmpStatus::Metric);
        }
    }

    #[test]
    fn version_is_set() {
        let v = unsafe { CStr::from_ptr(emp_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
