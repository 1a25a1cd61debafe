//! C ABI for the `haspn` library.
//!
//! Every fallible function returns an `int32_t` status. On failure the
//! message is available from [`haspn_last_error`] on the same thread until the
//! next failing call. Images are row-major `double` buffers of `height *
//! width` intensities in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use haspn::dataio::{undersample_columns, Image};
use haspn::frequency::decompose;
use haspn::metrics::{psnr, ssim, SsimMode, SsimParams};
use haspn::model::{interpolation_params, ModelConfig};
use haspn::trainer::{self, super_resolve, BicubicBaseline, Checkpoint, Reconstructor};
use haspn::Error;

pub const HASPN_OK: i32 = 0;
/// A required pointer was null or an argument was out of range.
pub const HASPN_ERR_ARGUMENT: i32 = 1;
pub const HASPN_ERR_CONFIG: i32 = 2;
/// Image, dimension or shape errors.
pub const HASPN_ERR_DATA: i32 = 3;
pub const HASPN_ERR_CHECKPOINT: i32 = 4;
/// The output buffer is smaller than the result.
pub const HASPN_ERR_BUFFER: i32 = 5;
/// An internal panic was caught at the boundary.
pub const HASPN_ERR_INTERNAL: i32 = 6;

pub const HASPN_SSIM_GLOBAL: i32 = 0;
pub const HASPN_SSIM_WINDOWED: i32 = 1;

/// Opaque handle to a loaded network.
pub struct HaspnModel {
    inner: trainer::HaspnModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => HASPN_ERR_CONFIG,
            Error::Checkpoint(_) | Error::State(_) => HASPN_ERR_CHECKPOINT,
            _ => HASPN_ERR_DATA,
        };
        Failure(code, e.to_string())
    }
}

fn argument(msg: &str) -> Failure {
    Failure(HASPN_ERR_ARGUMENT, msg.to_string())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HASPN_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            HASPN_ERR_INTERNAL
        }
    }
}

unsafe fn read_image(data: *const f64, height: usize, width: usize) -> Result<Image, Failure> {
    if data.is_null() {
        return Err(argument("image pointer is null"));
    }
    let len = height
        .checked_mul(width)
        .ok_or_else(|| argument("image size overflows"))?;
    let pixels = std::slice::from_raw_parts(data, len).to_vec();
    Ok(Image::new(height, width, pixels)?)
}

unsafe fn write_image(img: &Image, out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(argument("output pointer is null"));
    }
    let px = img.pixels();
    if out_len < px.len() {
        return Err(Failure(
            HASPN_ERR_BUFFER,
            format!("output holds {out_len} values, {} needed", px.len()),
        ));
    }
    ptr::copy_nonoverlapping(px.as_ptr(), out, px.len());
    Ok(())
}

unsafe fn write_scalar<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(argument("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn haspn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn haspn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a handle to release with
/// [`haspn_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn haspn_model_load(path: *const c_char, out: *mut *mut HaspnModel) -> i32 {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(argument("path and out must not be null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| argument("path is not valid UTF-8"))?;
        let ck = Checkpoint::load(path)?;
        let inner = trainer::HaspnModel::new(ck.run.model.clone(), &ck.params)?;
        out.write(Box::into_raw(Box::new(HaspnModel { inner })));
        Ok(())
    })
}

/// Builds a network whose output is bilinear column interpolation of the
/// input, useful as a reference and for testing integrations.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn haspn_model_interpolation(scale: u32, out: *mut *mut HaspnModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(argument("out must not be null"));
        }
        let cfg = ModelConfig::tiny(scale as usize);
        let params = interpolation_params(&cfg)?;
        let inner = trainer::HaspnModel::new(cfg, &params)?;
        out.write(Box::into_raw(Box::new(HaspnModel { inner })));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn haspn_model_free(model: *mut HaspnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Column up-sampling factor of the network, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn haspn_model_scale(model: *const HaspnModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.scale() as u32)
}

/// Super-resolves a `height x width` image into `out`, which receives
/// `height * width * scale` values clamped to `[0, 1]`.
///
/// # Safety
/// `lr` must hold `height * width` values and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn haspn_model_infer(
    model: *const HaspnModel,
    lr: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| argument("model is null"))?;
        let img = read_image(lr, height, width)?;
        let sr = super_resolve(&model.inner, &img)?;
        write_image(&sr, out, out_len)
    })
}

/// Bicubic column interpolation by `scale`, clamped to `[0, 1]`. Input column
/// `i` reappears unchanged at output column `i * scale`.
///
/// # Safety
/// `lr` must hold `height * width` values and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn haspn_bicubic(
    lr: *const f64,
    height: usize,
    width: usize,
    scale: u32,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let img = read_image(lr, height, width)?;
        let sr = super_resolve(&BicubicBaseline::new(scale as usize), &img)?;
        write_image(&sr, out, out_len)
    })
}

/// Keeps every `factor`-th column; `out` receives `height * width / factor`
/// values.
///
/// # Safety
/// `img` must hold `height * width` values and `out` at least `out_len`.
#[no_mangle]
pub unsafe extern "C" fn haspn_undersample(
    img: *const f64,
    height: usize,
    width: usize,
    factor: u32,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let img = read_image(img, height, width)?;
        write_image(&undersample_columns(&img, factor as usize)?, out, out_len)
    })
}

/// Splits an image into its Gaussian-blurred part and the high-frequency
/// residual. Each output holds `height * width` values.
///
/// # Safety
/// `img`, `blurred` and `residual` must each hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn haspn_decompose(
    img: *const f64,
    height: usize,
    width: usize,
    blurred: *mut f64,
    residual: *mut f64,
) -> i32 {
    guard(|| {
        let img = read_image(img, height, width)?;
        let d = decompose(&img)?;
        let n = height * width;
        write_image(&d.blurred, blurred, n)?;
        write_image(&d.residual, residual, n)
    })
}

/// Peak signal-to-noise ratio in dB; identical images give infinity.
///
/// # Safety
/// `sr` and `hr` must hold `height * width` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn haspn_psnr(
    sr: *const f64,
    hr: *const f64,
    height: usize,
    width: usize,
    peak: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let a = read_image(sr, height, width)?;
        let b = read_image(hr, height, width)?;
        write_scalar(out, psnr(&a, &b, peak)?)
    })
}

/// Structural similarity with the default constants and an 11x11, sigma 1.5
/// window. `mode` is [`HASPN_SSIM_GLOBAL`] or [`HASPN_SSIM_WINDOWED`].
///
/// # Safety
/// `sr` and `hr` must hold `height * width` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn haspn_ssim(
    sr: *const f64,
    hr: *const f64,
    height: usize,
    width: usize,
    mode: i32,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let mode = match mode {
            HASPN_SSIM_GLOBAL => SsimMode::Global,
            HASPN_SSIM_WINDOWED => SsimMode::Windowed,
            other => return Err(argument(&format!("unknown ssim mode {other}"))),
        };
        let a = read_image(sr, height, width)?;
        let b = read_image(hr, height, width)?;
        write_scalar(out, ssim(&a, &b, &SsimParams::default(), mode)?)
    })
}
