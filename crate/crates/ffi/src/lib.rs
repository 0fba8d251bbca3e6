//! C ABI over `loupe-core`.
//!
//! Every fallible call returns a [`LoupeStatus`]; on failure the message is
//! available from [`loupe_last_error_message`] on the same thread. Handles
//! are opaque and owned by the caller, who releases them with the matching
//! `_free` function. Strings returned by the library must be released with
//! [`loupe_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use loupe_core::provider::StubProvider;
use loupe_core::session::{start_session, FinetuneOutcome, Judgment, Query, Session};
use loupe_core::store::{read_corpus, Corpus};
use loupe_core::svm::SvmConfig;
use loupe_core::Error;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoupeStatus {
    Ok = 0,
    /// A required pointer was null or a string was not valid UTF-8.
    InvalidArgument = 1,
    Parse = 2,
    DimensionMismatch = 3,
    NotFound = 4,
    NotInPool = 5,
    ProviderUnavailable = 6,
    Provider = 7,
    Io = 8,
    /// Any other validation failure (bad limits, empty queries, config).
    Domain = 9,
    Panic = 10,
}

impl From<&Error> for LoupeStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::DuplicateId(_) | Error::ZeroVector(_) | Error::Csv(_) => LoupeStatus::Parse,
            Error::DimensionMismatch { .. } => LoupeStatus::DimensionMismatch,
            Error::NotFound(_) => LoupeStatus::NotFound,
            Error::NotInPool(_) => LoupeStatus::NotInPool,
            Error::ProviderUnavailable(_) => LoupeStatus::ProviderUnavailable,
            Error::Provider(_) => LoupeStatus::Provider,
            Error::Io(_) => LoupeStatus::Io,
            _ => LoupeStatus::Domain,
        }
    }
}

/// An immutable embedding corpus.
pub struct LoupeCorpus {
    corpus: Arc<Corpus>,
}

/// A feedback session bound to the corpus it was started on.
pub struct LoupeSession {
    session: Session,
    corpus: Arc<Corpus>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

struct Failure(LoupeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(LoupeStatus::from(&e), e.to_string())
    }
}

fn invalid(message: &str) -> Failure {
    Failure(LoupeStatus::InvalidArgument, message.to_owned())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LoupeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LoupeStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LoupeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("`{name}` is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("`{name}` is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(&format!("`{name}` is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// Loads a JSONL or binary store, with labels from `<path>.labels.csv` if
/// present.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn loupe_corpus_load(path: *const c_char, out: *mut *mut LoupeCorpus) -> LoupeStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let corpus = read_corpus(Path::new(path))?;
        let boxed = Box::new(LoupeCorpus {
            corpus: Arc::new(corpus),
        });
        write_out(out, Box::into_raw(boxed))
    })
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn loupe_corpus_len(corpus: *const LoupeCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.len())
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn loupe_corpus_dimension(corpus: *const LoupeCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.dimension())
}

/// Sessions keep their own reference, so the corpus may be freed first.
///
/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn loupe_corpus_free(corpus: *mut LoupeCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

unsafe fn start(
    corpus: *const LoupeCorpus,
    query: Query,
    provider: &StubProvider,
    retrieval_limit: usize,
    out: *mut *mut LoupeSession,
) -> Result<(), Failure> {
    let corpus = handle(corpus, "corpus")?.corpus.clone();
    let session = start_session(query, &corpus, provider, retrieval_limit)?;
    write_out(out, Box::into_raw(Box::new(LoupeSession { session, corpus })))
}

/// Starts a session from a text query encoded with the deterministic stub
/// encoder.
///
/// # Safety
/// `corpus` must be a live handle, `text` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_start_text(
    corpus: *const LoupeCorpus,
    text: *const c_char,
    prefix_enabled: bool,
    stub_seed: u64,
    retrieval_limit: usize,
    out: *mut *mut LoupeSession,
) -> LoupeStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let dimension = handle(corpus, "corpus")?.corpus.dimension();
        let provider = StubProvider {
            dimension,
            seed: stub_seed,
        };
        start(corpus, Query::text(text, prefix_enabled), &provider, retrieval_limit, out)
    })
}

/// Starts a session whose query is the stored vector of `image_id`.
///
/// # Safety
/// `corpus` must be a live handle, `image_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_start_image(
    corpus: *const LoupeCorpus,
    image_id: *const c_char,
    retrieval_limit: usize,
    out: *mut *mut LoupeSession,
) -> LoupeStatus {
    guard(|| {
        let id = str_arg(image_id, "image_id")?;
        let dimension = handle(corpus, "corpus")?.corpus.dimension();
        let provider = StubProvider { dimension, seed: 0 };
        start(corpus, Query::image_id(id), &provider, retrieval_limit, out)
    })
}

/// # Safety
/// `session` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_free(session: *mut LoupeSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Records `count` judgments. The batch is rejected as a whole if any id is
/// outside the session's candidate pool.
///
/// # Safety
/// `ids` and `relevant` must point to `count` elements each; every id must
/// be NUL-terminated. `accepted` may be null.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_feedback(
    session: *mut LoupeSession,
    ids: *const *const c_char,
    relevant: *const bool,
    count: usize,
    accepted: *mut usize,
) -> LoupeStatus {
    guard(|| {
        let s = handle_mut(session, "session")?;
        if count > 0 && (ids.is_null() || relevant.is_null()) {
            return Err(invalid("`ids` and `relevant` must be non-null when count > 0"));
        }
        let mut judgments = Vec::with_capacity(count);
        for i in 0..count {
            let id = str_arg(*ids.add(i), "ids[i]")?;
            judgments.push(Judgment::new(id, *relevant.add(i)));
        }
        let n = s.session.submit_feedback(&judgments)?;
        if !accepted.is_null() {
            accepted.write(n);
        }
        Ok(())
    })
}

/// Retrains on all judgments with default SVM settings and re-ranks the
/// pool. `retrained` is set to false when feedback lacks a relevant or a
/// non-relevant example; the ranking is then unchanged.
///
/// # Safety
/// `session` must be a live handle; `retrained` may be null.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_finetune(session: *mut LoupeSession, retrained: *mut bool) -> LoupeStatus {
    guard(|| {
        let s = handle_mut(session, "session")?;
        let outcome = s.session.finetune(&s.corpus, &SvmConfig::default())?;
        if !retrained.is_null() {
            retrained.write(matches!(outcome, FinetuneOutcome::Retrained { .. }));
        }
        Ok(())
    })
}

/// Completed feedback rounds, or 0 for a null handle.
///
/// # Safety
/// `session` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_round(session: *const LoupeSession) -> u32 {
    session.as_ref().map_or(0, |s| s.session.round())
}

/// Length of the current ranking, or 0 for a null handle.
///
/// # Safety
/// `session` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_result_count(session: *const LoupeSession) -> usize {
    session.as_ref().map_or(0, |s| s.session.current_ranking().len())
}

/// Entry `index` (0-based) of the current ranking. `image_id` receives a
/// newly allocated string.
///
/// # Safety
/// `session` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn loupe_session_result(
    session: *const LoupeSession,
    index: usize,
    image_id: *mut *mut c_char,
    score: *mut f64,
) -> LoupeStatus {
    guard(|| {
        let s = handle(session, "session")?;
        let entry = s.session.current_ranking().entries.get(index).ok_or_else(|| {
            Failure(
                LoupeStatus::NotFound,
                format!("result index {index} out of range"),
            )
        })?;
        if image_id.is_null() || score.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let id = CString::new(entry.id.as_str()).map_err(|_| invalid("id contains NUL"))?;
        score.write(entry.score);
        image_id.write(id.into_raw());
        Ok(())
    })
}

/// The last error raised on this thread as a newly allocated string, or
/// null if no call has failed.
#[no_mangle]
pub extern "C" fn loupe_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn loupe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
