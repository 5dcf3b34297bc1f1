//! C ABI for the crossview toolkit: load a trained checkpoint, embed
//! images, and evaluate manifests from any language that can call C.
//!
//! Conventions: functions returning pointers yield NULL on failure;
//! functions returning [`CrossviewStatus`] yield `CROSSVIEW_STATUS_OK` on
//! success. The most recent error message for the calling thread is
//! available via [`crossview_last_error`]. Strings returned by this
//! library must be released with [`crossview_string_free`].

use crossview::dataset::{load_manifest, ManifestFormat, ResizePolicy, Split};
use crossview::eval::{embed_dataset, evaluate};
use crossview::imaging::{io as image_io, polar_transform, AerialImage, View};
use crossview::trainer::{load_checkpoint, LoadedCheckpoint};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let msg = CString::new(msg.to_string()).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

/// Status code of fallible calls.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CrossviewStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Failure = 4,
}

/// Which encoder branch an image feeds.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CrossviewView {
    Ground = 0,
    Aerial = 1,
}

/// Manifest layouts accepted by [`crossview_eval_manifest`].
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CrossviewManifestFormat {
    CvusaCsv = 0,
    DirectoryPairs = 1,
    VigorJson = 2,
}

/// Opaque handle to a loaded model checkpoint.
pub struct CrossviewModel {
    loaded: LoadedCheckpoint,
}

unsafe fn cstr_to_path<'a>(ptr: *const c_char) -> Result<&'a Path, CrossviewStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(CrossviewStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(CrossviewStatus::InvalidUtf8)
        }
    }
}

/// Message of the most recent error on this thread, or NULL when none.
/// The pointer stays valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn crossview_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Load a trained checkpoint archive. Returns NULL on failure; free the
/// handle with [`crossview_model_free`].
///
/// # Safety
/// `path` must be NULL or a valid NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn crossview_model_load(path: *const c_char) -> *mut CrossviewModel {
    let path = match unsafe { cstr_to_path(path) } {
        Ok(p) => p,
        Err(_) => return std::ptr::null_mut(),
    };
    match load_checkpoint(path) {
        Ok(loaded) => Box::into_raw(Box::new(CrossviewModel { loaded })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `model` must be a pointer previously returned by
/// [`crossview_model_load`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crossview_model_free(model: *mut CrossviewModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Length of the retrieval embedding produced by this model; 0 when
/// `model` is NULL.
///
/// # Safety
/// `model` must be NULL or a live handle from [`crossview_model_load`].
#[no_mangle]
pub unsafe extern "C" fn crossview_embedding_dim(model: *const CrossviewModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.loaded.model.config().embedding_dim()
}

/// Whether the checkpoint was trained with the aerial polar preprocessing.
///
/// # Safety
/// `model` must be NULL or a live handle from [`crossview_model_load`].
#[no_mangle]
pub unsafe extern "C" fn crossview_uses_polar(model: *const CrossviewModel) -> bool {
    if model.is_null() {
        return false;
    }
    unsafe { &*model }.loaded.config.polar
}

/// Embed one image file into `out` (length `out_len`, at least the
/// embedding dimension). Aerial images get the checkpoint's polar
/// preprocessing automatically.
///
/// # Safety
/// `model` must be a live handle from [`crossview_model_load`]; `out` must
/// point to at least `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn crossview_embed_image(
    model: *const CrossviewModel,
    image_path: *const c_char,
    view: CrossviewView,
    out: *mut f32,
    out_len: usize,
) -> CrossviewStatus {
    if model.is_null() || out.is_null() {
        set_error("null argument");
        return CrossviewStatus::NullArgument;
    }
    let model = unsafe { &*model };
    let path = match unsafe { cstr_to_path(image_path) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    let dim = model.loaded.model.config().embedding_dim();
    if out_len < dim {
        set_error(format!("buffer holds {out_len} floats, need {dim}"));
        return CrossviewStatus::BufferTooSmall;
    }

    let result = (|| -> crossview::Result<Vec<f32>> {
        let img = image_io::load_image(path)?;
        let (img, view) = match view {
            CrossviewView::Ground => (img, View::Ground),
            CrossviewView::Aerial => {
                let img = match model.loaded.config.polar_to() {
                    Some((h, w)) => polar_transform(&AerialImage::new(img)?, h, w)?.into_image(),
                    None => img,
                };
                (img, View::Aerial)
            }
        };
        Ok(model.loaded.model.embed(&img, view)?.to_vec())
    })();

    match result {
        Ok(embedding) => {
            unsafe {
                std::ptr::copy_nonoverlapping(embedding.as_ptr(), out, dim);
            }
            CrossviewStatus::Ok
        }
        Err(e) => {
            set_error(e);
            CrossviewStatus::Failure
        }
    }
}

/// Evaluate a manifest with this model and return the metrics report as a
/// JSON string in `out_json` (free it with [`crossview_string_free`]).
///
/// # Safety
/// `model` must be a live handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crossview_eval_manifest(
    model: *const CrossviewModel,
    manifest_path: *const c_char,
    format: CrossviewManifestFormat,
    out_json: *mut *mut c_char,
) -> CrossviewStatus {
    if model.is_null() || out_json.is_null() {
        set_error("null argument");
        return CrossviewStatus::NullArgument;
    }
    let model = unsafe { &*model };
    let path = match unsafe { cstr_to_path(manifest_path) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    let format = match format {
        CrossviewManifestFormat::CvusaCsv => ManifestFormat::CvusaCsv,
        CrossviewManifestFormat::DirectoryPairs => ManifestFormat::DirectoryPairs,
        CrossviewManifestFormat::VigorJson => ManifestFormat::VigorJson,
    };

    let result = (|| -> crossview::Result<String> {
        let manifest = load_manifest(path, format, Split::Test, ResizePolicy::Native)?;
        let queries = embed_dataset(&model.loaded.model, &manifest, View::Ground, None)?;
        let refs = embed_dataset(
            &model.loaded.model,
            &manifest,
            View::Aerial,
            model.loaded.config.polar_to(),
        )?;
        let report = evaluate(&model.loaded.model, &queries, &refs, &manifest)?;
        Ok(serde_json::to_string_pretty(&report)?)
    })();

    match result {
        Ok(json) => match CString::new(json) {
            Ok(cstring) => {
                unsafe { *out_json = cstring.into_raw() };
                CrossviewStatus::Ok
            }
            Err(e) => {
                set_error(e);
                CrossviewStatus::Failure
            }
        },
        Err(e) => {
            set_error(e);
            CrossviewStatus::Failure
        }
    }
}

/// Release a string allocated by this library.
///
/// # Safety
/// `s` must have been returned by a crossview function and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crossview_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
