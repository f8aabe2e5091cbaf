//! C ABI over `tse-core`.
//!
//! Models are loaded from the files the `tse` CLI writes and handed out as
//! opaque pointers that the caller releases with the matching `*_free`.
//! Every fallible call returns a [`TseStatus`]; on failure the message is
//! available from [`tse_last_error`] on the same thread. Output buffers are
//! caller-allocated: pass the capacity, receive the length actually needed,
//! and retry with a larger buffer on `TSE_STATUS_BUFFER_TOO_SMALL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tse_core::audio::Waveform;
use tse_core::embedder::EmbedderModel;
use tse_core::lda::LdaTransform;
use tse_core::metrics::si_sdr;
use tse_core::separator::SeparatorModel;
use tse_core::TseError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Speaker embedding extractor.
pub struct TseEmbedder(EmbedderModel);

/// Fitted LDA projection.
pub struct TseLda(LdaTransform);

/// Cue-conditioned extraction network.
pub struct TseSeparator(SeparatorModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &TseError) -> TseStatus {
    match e {
        TseError::InvalidArgument(_) | TseError::Config(_) | TseError::Shape { .. } | TseError::TooShort { .. } => {
            TseStatus::InvalidArgument
        }
        TseError::Numerical(_) | TseError::Domain { .. } | TseError::Graph(_) => TseStatus::Numerical,
        _ => TseStatus::Data,
    }
}

struct Fail(TseStatus, String);

impl From<TseError> for Fail {
    fn from(e: TseError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TseStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            TseStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TseStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(TseStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null(what))
}

/// Copies `data` into the caller buffer, always reporting the needed length.
unsafe fn write_out(data: &[f64], out: *mut f64, capacity: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = data.len();
    if capacity < data.len() {
        return Err(Fail(TseStatus::BufferTooSmall, format!("buffer holds {capacity} values, {} needed", data.len())));
    }
    if !data.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    }
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tse_embedder_load(path: *const c_char, out: *mut *mut TseEmbedder) -> TseStatus {
    guard(|| {
        let m = EmbedderModel::load(path_arg(path)?)?;
        store(out, TseEmbedder(m))
    })
}

/// Embedding dimension, 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tse_embedder_dim(h: *const TseEmbedder) -> usize {
    h.as_ref().map_or(0, |h| h.0.config().embed_dim)
}

/// Embeds a mono waveform of `len` samples.
///
/// # Safety
/// `samples` must hold `len` values, `out` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn tse_embedder_embed(
    h: *const TseEmbedder,
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TseStatus {
    guard(|| {
        let h = handle(h, "embedder")?;
        let w = Waveform::new(slice_arg(samples, len, "samples")?.to_vec(), sample_rate)?;
        write_out(&h.0.embed_vector(&w)?, out, capacity, out_len)
    })
}

/// # Safety
/// `h` must be null or a handle from [`tse_embedder_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tse_embedder_free(h: *mut TseEmbedder) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tse_lda_load(path: *const c_char, out: *mut *mut TseLda) -> TseStatus {
    guard(|| {
        let m = LdaTransform::load(path_arg(path)?)?;
        store(out, TseLda(m))
    })
}

/// Input and output dimensions.
///
/// # Safety
/// `h` must be a live handle; `dim_in` and `dim_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn tse_lda_dims(h: *const TseLda, dim_in: *mut usize, dim_out: *mut usize) -> TseStatus {
    guard(|| {
        let h = handle(h, "lda")?;
        if let Some(d) = dim_in.as_mut() {
            *d = h.0.dim_in;
        }
        if let Some(d) = dim_out.as_mut() {
            *d = h.0.dim_out;
        }
        Ok(())
    })
}

/// Projects one embedding.
///
/// # Safety
/// `embedding` must hold `len` values, `out` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn tse_lda_transform(
    h: *const TseLda,
    embedding: *const f64,
    len: usize,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TseStatus {
    guard(|| {
        let h = handle(h, "lda")?;
        let y = h.0.transform(slice_arg(embedding, len, "embedding")?)?;
        write_out(&y, out, capacity, out_len)
    })
}

/// # Safety
/// `h` must be null or a handle from [`tse_lda_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tse_lda_free(h: *mut TseLda) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Loads a checkpoint written by `train-tse` (`best.ckpt` or `last.ckpt`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tse_separator_load(path: *const c_char, out: *mut *mut TseSeparator) -> TseStatus {
    guard(|| {
        let m = SeparatorModel::load(path_arg(path)?)?;
        store(out, TseSeparator(m))
    })
}

/// Cue dimension the separator expects, 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tse_separator_cue_dim(h: *const TseSeparator) -> usize {
    h.as_ref().map_or(0, |h| h.0.config().cue_dim)
}

/// Extracts the cued speaker from a mixture; the output has the mixture's length.
///
/// # Safety
/// `mixture` must hold `len` values, `cue` `cue_len`, `out` `capacity`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tse_separator_extract(
    h: *const TseSeparator,
    mixture: *const f64,
    len: usize,
    sample_rate: u32,
    cue: *const f64,
    cue_len: usize,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TseStatus {
    guard(|| {
        let h = handle(h, "separator")?;
        let w = Waveform::new(slice_arg(mixture, len, "mixture")?.to_vec(), sample_rate)?;
        let est = h.0.extract(&w, slice_arg(cue, cue_len, "cue")?)?;
        write_out(est.samples(), out, capacity, out_len)
    })
}

/// # Safety
/// `h` must be null or a handle from [`tse_separator_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tse_separator_free(h: *mut TseSeparator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Scale-invariant SDR in dB of `estimate` against `reference`.
///
/// # Safety
/// Both arrays must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tse_si_sdr(reference: *const f64, estimate: *const f64, len: usize, out: *mut f64) -> TseStatus {
    guard(|| {
        let r = slice_arg(reference, len, "reference")?;
        let e = slice_arg(estimate, len, "estimate")?;
        let v = si_sdr(r, e)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = v;
        Ok(())
    })
}
