//! C ABI over a loaded JCCE model.
//!
//! Handles are opaque; every fallible call returns a [`JcceStatus`] and, on
//! failure, leaves a message retrievable with [`jcce_last_error`] on the same
//! thread. The header is generated into `include/jcce.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use jcce::features::ContextQuery;
use jcce::model::ModelError;
use jcce::serve::{ServeError, Snapshot};

/// Bumped whenever a signature in this file changes.
pub const JCCE_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JcceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadModelFile = 4,
    UnknownAttribute = 5,
    Unencodable = 6,
    InvalidArgument = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// A loaded model with precomputed content embeddings.
pub struct JcceHandle {
    snapshot: Snapshot,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: JcceStatus, msg: impl Into<String>) -> JcceStatus {
    set_error(msg);
    status
}

fn status_of(e: &ServeError) -> JcceStatus {
    match e {
        ServeError::UnknownAttribute(_) => JcceStatus::UnknownAttribute,
        ServeError::Unencodable(_) => JcceStatus::Unencodable,
        ServeError::BadRequest(_) => JcceStatus::InvalidArgument,
        ServeError::Model(ModelError::Io(_)) => JcceStatus::Io,
        ServeError::Model(ModelError::Corrupt(_) | ModelError::Version { .. } | ModelError::Fingerprint { .. }) => {
            JcceStatus::BadModelFile
        }
        _ => JcceStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> JcceStatus) -> JcceStatus {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(JcceStatus::Internal, "panic inside jcce"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, JcceStatus> {
    if p.is_null() {
        return Err(fail(JcceStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(JcceStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

#[no_mangle]
pub extern "C" fn jcce_abi_version() -> u32 {
    JCCE_ABI_VERSION
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `jcce_*` call on the same thread.
#[no_mangle]
pub extern "C" fn jcce_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a model file and writes a new handle to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jcce_model_load(path: *const c_char, out: *mut *mut JcceHandle) -> JcceStatus {
    guard(|| {
        if out.is_null() {
            return fail(JcceStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Snapshot::load(Path::new(path)) {
            Ok(snapshot) => {
                *out = Box::into_raw(Box::new(JcceHandle { snapshot }));
                JcceStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `handle` must come from [`jcce_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn jcce_model_free(handle: *mut JcceHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of items in the model's catalog (0 for a null handle).
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jcce_catalog_size(handle: *const JcceHandle) -> usize {
    handle.as_ref().map_or(0, |h| h.snapshot.catalog_size())
}

/// Copies the NUL-terminated name of catalog item `index` into `buf`.
/// `*needed` receives the required size including the terminator, so a
/// call with `buf_len = 0` queries the size.
///
/// # Safety
/// `handle` must be live; `buf` must hold `buf_len` bytes; `needed` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn jcce_content_id(
    handle: *const JcceHandle,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> JcceStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(JcceStatus::NullPointer, "handle is null");
        };
        let Some(name) = h.snapshot.content_id(index) else {
            return fail(
                JcceStatus::InvalidArgument,
                format!("index {index} outside catalog of {}", h.snapshot.catalog_size()),
            );
        };
        let size = name.len() + 1;
        if !needed.is_null() {
            *needed = size;
        }
        if buf_len < size {
            return fail(JcceStatus::BufferTooSmall, format!("need {size} bytes, got {buf_len}"));
        }
        if buf.is_null() {
            return fail(JcceStatus::NullPointer, "buf is null");
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf as *mut u8, name.len());
        *buf.add(name.len()) = 0;
        JcceStatus::Ok
    })
}

/// Ranks the catalog for a context given as `n_attrs` parallel name/value
/// strings (multi-valued attributes separate members with `|`). Writes up to
/// `capacity` results, best first, into `out_ids` (catalog indices) and
/// `out_scores` (cosine similarities), and their count into `*out_len`.
///
/// # Safety
/// `names` and `values` must each point to `n_attrs` NUL-terminated strings;
/// `out_ids` and `out_scores` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn jcce_recommend(
    handle: *const JcceHandle,
    names: *const *const c_char,
    values: *const *const c_char,
    n_attrs: usize,
    capacity: usize,
    out_ids: *mut usize,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> JcceStatus {
    guard(|| {
        let Some(h) = handle.as_ref() else {
            return fail(JcceStatus::NullPointer, "handle is null");
        };
        if out_len.is_null() || (capacity > 0 && (out_ids.is_null() || out_scores.is_null())) {
            return fail(JcceStatus::NullPointer, "output pointer is null");
        }
        *out_len = 0;
        if n_attrs > 0 && (names.is_null() || values.is_null()) {
            return fail(JcceStatus::NullPointer, "attribute arrays are null");
        }
        let mut query = ContextQuery::new();
        for i in 0..n_attrs {
            let (name, value) = match (c_str(*names.add(i), "name"), c_str(*values.add(i), "value")) {
                (Ok(n), Ok(v)) => (n, v),
                (Err(s), _) | (_, Err(s)) => return s,
            };
            query.0.insert(name.to_string(), value.to_string());
        }
        let ranked = match h.snapshot.rank(&query) {
            Ok(r) => r,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        let n = capacity.min(ranked.len());
        for (i, r) in ranked.iter().take(n).enumerate() {
            *out_ids.add(i) = r.content_id;
            *out_scores.add(i) = r.score;
        }
        *out_len = n;
        JcceStatus::Ok
    })
}
