//! C interface over datasets, trained models and metrics.
//!
//! Every fallible function returns a [`ScidocStatus`]. On failure a message
//! is kept per thread and can be read with [`scidoc_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scidoc::eval::{group_inconsistency, macro_f1};
use scidoc::experiment::Classifier;
use scidoc::io::load_pages;
use scidoc::synth::{generate_corpus, CorpusConfig};
use scidoc::{Dataset, Error, GroupKind, LabelSet};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScidocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Config = 6,
    Model = 7,
    BufferTooSmall = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Group granularity selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScidocGroupKind {
    Line = 0,
    Block = 1,
}

/// Opaque collection of labelled pages.
pub struct ScidocDataset(Dataset);

/// Opaque trained model of any method.
pub struct ScidocModel(Classifier);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> ScidocStatus {
    match e {
        Error::Config { .. } => ScidocStatus::Config,
        Error::Parse { .. } | Error::InvalidPage { .. } | Error::Json(_) => ScidocStatus::Parse,
        Error::Io { .. } => ScidocStatus::Io,
        Error::Input(_) | Error::SequenceTooLong { .. } => ScidocStatus::InvalidInput,
        Error::Diverged { .. } | Error::Model(_) | Error::Checkpoint(_) => ScidocStatus::Model,
    }
}

/// Run `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (ScidocStatus, String)>) -> ScidocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScidocStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ScidocStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ScidocStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ScidocStatus, String) {
    (ScidocStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ScidocStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (ScidocStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn page_of<'a>(ds: *const ScidocDataset, page: usize) -> Result<&'a scidoc::Page, (ScidocStatus, String)> {
    let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
    ds.0.pages.get(page).ok_or_else(|| (ScidocStatus::OutOfRange, format!("page {page} of {}", ds.0.pages.len())))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scidoc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scidoc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a JSONL page file with a built-in label set (for example "default15").
///
/// # Safety
/// `path` and `label_set` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_dataset_load(path: *const c_char, label_set: *const c_char, out: *mut *mut ScidocDataset) -> ScidocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = read_str(path, "path")?;
        let labels = LabelSet::builtin(read_str(label_set, "label_set")?).map_err(lib_err)?;
        let ds = load_pages(Path::new(path), &labels).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ScidocDataset(ds)));
        Ok(())
    })
}

/// Generate a synthetic corpus with default settings apart from the seed
/// and the paper count.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_dataset_generate(seed: u64, n_papers: usize, out: *mut *mut ScidocDataset) -> ScidocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = generate_corpus(&CorpusConfig { seed, n_papers, ..Default::default() }).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ScidocDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scidoc_dataset_free(ds: *mut ScidocDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of pages, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scidoc_dataset_page_count(ds: *const ScidocDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.pages.len())
}

/// Token count of one page.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_dataset_token_count(ds: *const ScidocDataset, page: usize, out: *mut usize) -> ScidocStatus {
    guard(|| {
        let p = page_of(ds, page)?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.tokens.len();
        Ok(())
    })
}

/// Copy the gold label ids of one page into `labels`. `written` receives the
/// token count; with a short buffer nothing is copied and the status is
/// `BUFFER_TOO_SMALL`.
///
/// # Safety
/// `labels` must hold `capacity` entries; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_dataset_gold_labels(
    ds: *const ScidocDataset,
    page: usize,
    labels: *mut u32,
    capacity: usize,
    written: *mut usize,
) -> ScidocStatus {
    guard(|| {
        let p = page_of(ds, page)?;
        let gold = p.gold_labels().ok_or((ScidocStatus::InvalidInput, "page lacks gold labels".to_string()))?;
        copy_out(&gold, labels, capacity, written)
    })
}

unsafe fn copy_out(values: &[usize], dst: *mut u32, capacity: usize, written: *mut usize) -> Result<(), (ScidocStatus, String)> {
    *written.as_mut().ok_or_else(|| null("written"))? = values.len();
    if capacity < values.len() {
        return Err((ScidocStatus::BufferTooSmall, format!("need {} entries, have {capacity}", values.len())));
    }
    if dst.is_null() {
        return Err(null("labels"));
    }
    let out = std::slice::from_raw_parts_mut(dst, values.len());
    for (o, &v) in out.iter_mut().zip(values) {
        *o = v as u32;
    }
    Ok(())
}

/// Load a checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_model_load(path: *const c_char, out: *mut *mut ScidocModel) -> ScidocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = read_str(path, "path")?;
        let clf = Classifier::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ScidocModel(clf)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scidoc_model_free(model: *mut ScidocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predict one label id per token of a page, with the same buffer contract
/// as [`scidoc_dataset_gold_labels`].
///
/// # Safety
/// Handles must be live; `labels` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn scidoc_model_predict(
    model: *const ScidocModel,
    ds: *const ScidocDataset,
    page: usize,
    labels: *mut u32,
    capacity: usize,
    written: *mut usize,
) -> ScidocStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let p = page_of(ds, page)?;
        let pred = model.0.predict_tokens(p).map_err(lib_err)?;
        copy_out(&pred, labels, capacity, written)
    })
}

unsafe fn ids<'a>(p: *const u32, n: usize, what: &str) -> Result<Vec<usize>, (ScidocStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts::<'a, u32>(p, n).iter().map(|&v| v as usize).collect())
}

/// Macro F1 in [0, 1] over `n` aligned predictions and gold ids drawn from
/// `n_classes` classes; classes absent from gold are left out of the mean.
///
/// # Safety
/// `pred` and `gold` must hold `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_macro_f1(pred: *const u32, gold: *const u32, n: usize, n_classes: usize, out: *mut f64) -> ScidocStatus {
    guard(|| {
        let (p, g) = (ids(pred, n, "pred")?, ids(gold, n, "gold")?);
        let names = (0..n_classes).map(|i| format!("class{i}")).collect();
        let labels = LabelSet::new(names, 0).map_err(lib_err)?;
        let r = macro_f1(&p, &g, &labels).map_err(lib_err)?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.macro_f1;
        Ok(())
    })
}

/// Mean group entropy ×100 of `pred` over the stored groups of one page.
///
/// # Safety
/// `ds` must be live; `pred` must hold `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scidoc_group_inconsistency(
    ds: *const ScidocDataset,
    page: usize,
    kind: ScidocGroupKind,
    pred: *const u32,
    n: usize,
    out: *mut f64,
) -> ScidocStatus {
    guard(|| {
        let p = page_of(ds, page)?;
        if n != p.tokens.len() {
            return Err((ScidocStatus::InvalidInput, format!("{n} predictions for {} tokens", p.tokens.len())));
        }
        let kind = match kind {
            ScidocGroupKind::Line => GroupKind::Line,
            ScidocGroupKind::Block => GroupKind::Block,
        };
        let r = group_inconsistency(&ids(pred, n, "pred")?, p.groups(kind)).map_err(lib_err)?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.h_g;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_survives_until_read() {
        let mut out = ptr::null_mut();
        let path = CString::new("/nonexistent/pages.jsonl").unwrap();
        let labels = CString::new("default15").unwrap();
        let s = unsafe { scidoc_dataset_load(path.as_ptr(), labels.as_ptr(), &mut out) };
        assert_eq!(s, ScidocStatus::Io);
        assert!(out.is_null());
        let msg = unsafe { CStr::from_ptr(scidoc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("nonexistent"), "{msg}");
    }

    #[test]
    fn null_arguments_are_reported() {
        let s = unsafe { scidoc_dataset_load(ptr::null(), ptr::null(), ptr::null_mut()) };
        assert_eq!(s, ScidocStatus::NullPointer);
        assert_eq!(unsafe { scidoc_dataset_page_count(ptr::null()) }, 0);
        unsafe { scidoc_dataset_free(ptr::null_mut()) };
    }
}
