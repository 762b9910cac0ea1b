//! C ABI over the detector, texture diversity and SRM residuals.
//!
//! Every function returns a [`PpStatus`]. On failure a message is kept per
//! thread and can be read with [`pp_last_error`]. Panics never cross the
//! boundary; they surface as [`PpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use patchprint::harness::{load_detector, HarnessError};
use patchprint::image::{load_image, Image, ImageError};
use patchprint::models::{Detector, ScoreMode};
use patchprint::patch::diversity_of;
use patchprint::srm::extract_fingerprint;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Model = 5,
    Panic = 6,
}

/// Scoring pipeline selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PpScoreMode {
    Ssp = 0,
    Essp = 1,
}

/// Opaque detector handle.
pub struct PpDetector {
    inner: Detector,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Failure(PpStatus, String);

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match &e {
            HarnessError::Io { .. } => PpStatus::Io,
            HarnessError::Image(ImageError::Io(_) | ImageError::FileNotFound(_)) => PpStatus::Io,
            HarnessError::BadMagic | HarnessError::VersionMismatch { .. } | HarnessError::Checkpoint(_) => PpStatus::Format,
            HarnessError::Image(_) => PpStatus::Format,
            _ => PpStatus::Model,
        };
        Failure(status, e.to_string())
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        HarnessError::from(e).into()
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording the error message and mapping panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PpStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(PpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn mode(m: u32) -> Result<ScoreMode, Failure> {
    match m {
        0 => Ok(ScoreMode::Ssp),
        1 => Ok(ScoreMode::Essp),
        _ => Err(invalid(format!("unknown score mode {m}"))),
    }
}

/// Checked `height * width * channels` for caller-provided buffers.
fn extent(height: usize, width: usize, channels: usize) -> Result<usize, Failure> {
    if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
        return Err(invalid(format!("bad image shape {height}x{width}x{channels}")));
    }
    height.checked_mul(width).and_then(|n| n.checked_mul(channels)).ok_or_else(|| invalid("image too large"))
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` owns a handle to release with
/// [`pp_detector_free`]; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pp_detector_load(path: *const c_char, out: *mut *mut PpDetector) -> PpStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let (inner, _) = load_detector(path)?;
        *out = Box::into_raw(Box::new(PpDetector { inner }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `det` must be null or a handle from [`pp_detector_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pp_detector_free(det: *mut PpDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Whether the handle carries the enhancement front end needed by
/// `PP_SCORE_MODE_ESSP`.
///
/// # Safety
/// `det` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pp_detector_has_front(det: *const PpDetector, out: *mut bool) -> PpStatus {
    guard(|| {
        non_null(det, "det")?;
        non_null(out, "out")?;
        *out = (*det).inner.front.is_some();
        Ok(())
    })
}

fn score(det: &Detector, img: &Image, m: u32) -> Result<f32, Failure> {
    det.score(img, mode(m)?).map_err(|e| HarnessError::from(e).into())
}

/// Probability that the image file at `path` is real. `mode` is a
/// [`PpScoreMode`] value.
///
/// # Safety
/// `det` must be a live handle, `path` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pp_detector_score_file(
    det: *const PpDetector,
    path: *const c_char,
    mode: u32,
    out: *mut f32,
) -> PpStatus {
    guard(|| {
        non_null(det, "det")?;
        non_null(out, "out")?;
        let img = load_image(path_arg(path, "path")?)?;
        *out = score(&(*det).inner, &img, mode)?;
        Ok(())
    })
}

/// Probability that an 8-bit interleaved image (row-major, 1 or 3 channels)
/// is real.
///
/// # Safety
/// `det` must be a live handle, `pixels` must hold
/// `height * width * channels` bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pp_detector_score_pixels(
    det: *const PpDetector,
    pixels: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    mode: u32,
    out: *mut f32,
) -> PpStatus {
    guard(|| {
        non_null(det, "det")?;
        non_null(pixels, "pixels")?;
        non_null(out, "out")?;
        let n = extent(height, width, channels)?;
        let img = Image::from_u8(height, width, channels, std::slice::from_raw_parts(pixels, n))?;
        *out = score(&(*det).inner, &img, mode)?;
        Ok(())
    })
}

/// Texture diversity of an interleaved `m * m * channels` float patch, in
/// the units of its values.
///
/// # Safety
/// `values` must hold `m * m * channels` floats and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pp_texture_diversity(values: *const f32, m: usize, channels: usize, out: *mut f64) -> PpStatus {
    guard(|| {
        non_null(values, "values")?;
        non_null(out, "out")?;
        if m == 0 || channels == 0 {
            return Err(invalid("m and channels must be positive"));
        }
        let n = m.checked_mul(m).and_then(|n| n.checked_mul(channels)).ok_or_else(|| invalid("patch too large"))?;
        *out = diversity_of(std::slice::from_raw_parts(values, n), m, channels);
        Ok(())
    })
}

/// Writes the three residual planes (channel-major, `3 * height * width`
/// floats) of an 8-bit interleaved image into `out`.
///
/// # Safety
/// `pixels` must hold `height * width * channels` bytes and `out` must have
/// room for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn pp_srm_fingerprint(
    pixels: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f32,
    out_len: usize,
) -> PpStatus {
    guard(|| {
        non_null(pixels, "pixels")?;
        non_null(out, "out")?;
        let n = extent(height, width, channels)?;
        let need = 3 * height * width;
        if out_len < need {
            return Err(invalid(format!("output holds {out_len} floats, {need} needed")));
        }
        let img = Image::from_u8(height, width, channels, std::slice::from_raw_parts(pixels, n))?;
        let fp = extract_fingerprint(&img);
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(fp.data());
        Ok(())
    })
}
