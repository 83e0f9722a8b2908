//! C ABI over the translator: load a checkpoint, translate one image pair.
//!
//! Every fallible function returns a `TSIT_*` status code. On failure the
//! message is kept per thread and read with `tsit_last_error`. Panics never
//! cross the boundary; they surface as `TSIT_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use tsit::checkpoint::Checkpoint;
use tsit::data::{one_hot, LabelMap};
use tsit::networks::Translator;
use tsit::train::{load_translator, translate, RunConfig, TaskMode};
use tsit::{Error, Tensor};

pub const TSIT_OK: i32 = 0;
/// A required pointer argument was null.
pub const TSIT_ERR_NULL: i32 = 1;
pub const TSIT_ERR_CONFIG: i32 = 2;
/// Unreadable, corrupt or unsupported checkpoint.
pub const TSIT_ERR_CHECKPOINT: i32 = 3;
/// Input extents or buffer lengths do not fit the model.
pub const TSIT_ERR_SHAPE: i32 = 4;
/// Non-finite values or a failed numeric routine.
pub const TSIT_ERR_NUMERIC: i32 = 5;
/// Invalid input values, e.g. a class id out of range.
pub const TSIT_ERR_DATA: i32 = 6;
pub const TSIT_ERR_IO: i32 = 7;
pub const TSIT_ERR_PANIC: i32 = 8;
/// Argument not valid UTF-8 or otherwise malformed.
pub const TSIT_ERR_ARGUMENT: i32 = 9;

/// Opaque generator loaded from a checkpoint. Not safe for concurrent use;
/// distinct handles may be used from distinct threads.
pub struct TsitTranslator {
    config: RunConfig,
    net: Translator<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Config(_) => TSIT_ERR_CONFIG,
        Error::CorruptCheckpoint(_) | Error::CheckpointVersion { .. } => TSIT_ERR_CHECKPOINT,
        Error::Shape { .. } | Error::NonScalarLoss(_) => TSIT_ERR_SHAPE,
        Error::Numeric(_) | Error::NonFinite { .. } => TSIT_ERR_NUMERIC,
        Error::Data(_) | Error::Codec(_) => TSIT_ERR_DATA,
        Error::Io { .. } => TSIT_ERR_IO,
    }
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TSIT_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            TSIT_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TSIT_ERR_NULL, format!("{what} is null"))
}

fn checked_len(parts: &[usize], what: &str) -> Result<usize, Failure> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Failure(TSIT_ERR_SHAPE, format!("{what} extent overflows")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tsit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null after a success.
/// Valid until the next `tsit_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tsit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads the generator from a checkpoint file. On success `*out` owns a new
/// handle, released with `tsit_translator_free`; on failure `*out` is null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tsit_translator_load(path: *const c_char, out: *mut *mut TsitTranslator) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(TSIT_ERR_ARGUMENT, "path is not valid UTF-8".into()))?;
        let ckpt = Checkpoint::load(Path::new(path))?;
        let (config, net) = load_translator(&ckpt)?;
        *out = Box::into_raw(Box::new(TsitTranslator { config, net }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `t` must be null or a handle from `tsit_translator_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tsit_translator_free(t: *mut TsitTranslator) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Model geometry. `content_channels` is the class count for semantic models,
/// whose content input is a label map. Height and width passed to
/// `tsit_translate` must be multiples of `spatial_multiple`. Any out pointer
/// may be null.
///
/// # Safety
/// `t` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsit_translator_info(
    t: *const TsitTranslator,
    content_channels: *mut u32,
    style_channels: *mut u32,
    spatial_multiple: *mut u32,
    is_semantic: *mut u32,
) -> i32 {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("translator"))?;
        let net = &t.config.net;
        let put = |p: *mut u32, v: usize| {
            if let Some(p) = p.as_mut() {
                *p = v as u32;
            }
        };
        put(content_channels, net.content_channels);
        put(style_channels, net.style_channels);
        put(spatial_multiple, net.spatial_multiple());
        put(is_semantic, usize::from(t.config.train.task == TaskMode::SemanticSynthesis));
        Ok(())
    })
}

/// Translates one content image under one style image.
///
/// `content` is planar `[content_channels][height][width]` in [-1, 1], except
/// for semantic models where it is `[height][width]` class ids stored as
/// floats. `style` is planar `[style_channels][height][width]`. `out` receives
/// planar `[3][height][width]` and must hold `out_len` >= 3*height*width floats.
/// The same inputs and `noise_seed` always give the same output.
///
/// # Safety
/// `t` must be a live handle; `content`, `style` and `out` must point to at
/// least the lengths above.
#[no_mangle]
pub unsafe extern "C" fn tsit_translate(
    t: *mut TsitTranslator,
    content: *const f32,
    style: *const f32,
    height: u32,
    width: u32,
    noise_seed: u64,
    out: *mut f32,
    out_len: usize,
) -> i32 {
    guard(|| {
        let t = t.as_mut().ok_or_else(|| null("translator"))?;
        if content.is_null() {
            return Err(null("content"));
        }
        if style.is_null() {
            return Err(null("style"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let (h, w) = (height as usize, width as usize);
        let net = &t.config.net;
        let semantic = t.config.train.task == TaskMode::SemanticSynthesis;
        let out_need = checked_len(&[3, h, w], "output")?;
        if out_len < out_need {
            return Err(Failure(TSIT_ERR_SHAPE, format!("out_len {out_len} < {out_need}")));
        }
        let content_t = if semantic {
            let n = checked_len(&[h, w], "content")?;
            let ids = std::slice::from_raw_parts(content, n);
            let mut labels = Vec::with_capacity(n);
            for &v in ids {
                if !(v >= 0.0 && v.fract() == 0.0 && v <= 255.0) {
                    return Err(Failure(TSIT_ERR_DATA, format!("class id {v} is not an integer in 0..=255")));
                }
                labels.push(v as u8);
            }
            one_hot(&LabelMap { h, w, labels, source: "ffi".into() }, net.content_channels)?
        } else {
            let n = checked_len(&[net.content_channels, h, w], "content")?;
            Tensor::from_vec(&[1, net.content_channels, h, w], std::slice::from_raw_parts(content, n).to_vec())?
        };
        let n = checked_len(&[net.style_channels, h, w], "style")?;
        let style_t = Tensor::from_vec(&[1, net.style_channels, h, w], std::slice::from_raw_parts(style, n).to_vec())?;
        let y = translate(&mut t.net, &content_t, &style_t, noise_seed)?;
        std::slice::from_raw_parts_mut(out, out_need).copy_from_slice(&y.data()[..out_need]);
        Ok(())
    })
}
