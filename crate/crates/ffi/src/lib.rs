//! C ABI over the `nucprior` core.
//!
//! Every function returns a [`NucpriorStatus`]. On failure a message is
//! available from [`nucprior_last_error`] on the same thread. Images are
//! row-major `double` arrays; centers are `(row, col)` pairs of `size_t`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nucprior::detect_eval::{detect, match_golden, prf1, DetectionConfig, EvalConfig};
use nucprior::edges::{canny, CannyConfig};
use nucprior::network::{forward, NetworkParams};
use nucprior::numerics::Grid2D;
use nucprior::shapes::{
    cw_ssim, group_shapes, ssim, CwSsimConfig, Shape, SsimConfig,
};
use nucprior::Error;

/// Opaque trained model.
pub struct NucpriorModel {
    params: NetworkParams,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NucpriorStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Precision/recall/F1 of one image.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NucpriorReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> NucpriorStatus {
    match err {
        Error::Dimension(_) | Error::OutOfBounds { .. } => NucpriorStatus::Dimension,
        Error::InvalidArgument(_) => NucpriorStatus::InvalidArgument,
        Error::NonFinite { .. } | Error::Diverged { .. } => NucpriorStatus::NonFinite,
        Error::Parse { .. } => NucpriorStatus::Parse,
        Error::Io { .. } | Error::Image { .. } => NucpriorStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NucpriorStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NucpriorStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            NucpriorStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            NucpriorStatus::Panic
        }
    }
}

unsafe fn grid(data: *const f64, h: usize, w: usize, what: &'static str) -> Result<Grid2D, Failure> {
    if data.is_null() {
        return Err(Failure::Null(what));
    }
    let n = h.checked_mul(w).ok_or_else(|| Error::Dimension("size overflow".into()))?;
    let values = std::slice::from_raw_parts(data, n).to_vec();
    Ok(Grid2D::new(h, w, values)?)
}

unsafe fn centers(data: *const usize, n: usize, what: &'static str) -> Result<Vec<(usize, usize)>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if data.is_null() {
        return Err(Failure::Null(what));
    }
    let flat = std::slice::from_raw_parts(data, 2 * n);
    Ok(flat.chunks(2).map(|p| (p[0], p[1])).collect())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nucprior_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a JSON checkpoint. On success `*out` owns a model to be released
/// with [`nucprior_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nucprior_model_load(path: *const c_char, out: *mut *mut NucpriorModel) -> NucpriorStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
        let params = NetworkParams::load(Path::new(p))?;
        *out = Box::into_raw(Box::new(NucpriorModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`nucprior_model_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn nucprior_model_free(model: *mut NucpriorModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of convolution layers of the model.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nucprior_model_depth(model: *const NucpriorModel, out: *mut usize) -> NucpriorStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = m.params.layers.len();
        Ok(())
    })
}

/// Predicted center map of an `h` x `w` image into `out` (same size).
///
/// # Safety
/// `image` and `out` must each hold `h * w` doubles.
#[no_mangle]
pub unsafe extern "C" fn nucprior_forward(
    model: *const NucpriorModel,
    image: *const f64,
    h: usize,
    w: usize,
    out: *mut f64,
) -> NucpriorStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let x = grid(image, h, w, "image")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let y = forward(&x, &m.params)?;
        std::slice::from_raw_parts_mut(out, h * w).copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Peaks of a center map above `threshold`. Writes up to `capacity` pairs to
/// `out_rc` and the total number found to `out_count`.
///
/// # Safety
/// `yhat` must hold `h * w` doubles, `out_rc` room for `2 * capacity` values.
#[no_mangle]
pub unsafe extern "C" fn nucprior_detect(
    yhat: *const f64,
    h: usize,
    w: usize,
    threshold: f64,
    nms_radius: usize,
    out_rc: *mut usize,
    capacity: usize,
    out_count: *mut usize,
) -> NucpriorStatus {
    guard(|| {
        let y = grid(yhat, h, w, "yhat")?;
        let cfg = DetectionConfig {
            threshold,
            nms_radius,
        };
        cfg.validate()?;
        let count = out_count.as_mut().ok_or(Failure::Null("out_count"))?;
        let found = detect(&y, &cfg);
        *count = found.len();
        if capacity > 0 {
            if out_rc.is_null() {
                return Err(Failure::Null("out_rc"));
            }
            let dst = std::slice::from_raw_parts_mut(out_rc, 2 * capacity);
            for (k, &(r, c)) in found.iter().take(capacity).enumerate() {
                dst[2 * k] = r;
                dst[2 * k + 1] = c;
            }
        }
        Ok(())
    })
}

/// Binary Canny edge map (0/1) of an image.
///
/// # Safety
/// `image` and `out` must each hold `h * w` values.
#[no_mangle]
pub unsafe extern "C" fn nucprior_canny(
    image: *const f64,
    h: usize,
    w: usize,
    blur_sigma: f64,
    low_threshold: f64,
    high_threshold: f64,
    out: *mut u8,
) -> NucpriorStatus {
    guard(|| {
        let x = grid(image, h, w, "image")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cfg = CannyConfig {
            blur_sigma,
            low_threshold,
            high_threshold,
        };
        let e = canny(&x, &cfg)?;
        let dst = std::slice::from_raw_parts_mut(out, h * w);
        for (d, v) in dst.iter_mut().zip(e.grid().as_slice()) {
            *d = *v as u8;
        }
        Ok(())
    })
}

/// Mean SSIM (8x8 uniform window) of two equally sized images.
///
/// # Safety
/// `a` and `b` must each hold `h * w` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nucprior_ssim(a: *const f64, b: *const f64, h: usize, w: usize, out: *mut f64) -> NucpriorStatus {
    guard(|| {
        let (a, b) = (grid(a, h, w, "a")?, grid(b, h, w, "b")?);
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = ssim(&a, &b, &SsimConfig::default())?;
        Ok(())
    })
}

/// Complex-wavelet SSIM of two equally sized images (default pyramid).
///
/// # Safety
/// `a` and `b` must each hold `h * w` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn nucprior_cw_ssim(a: *const f64, b: *const f64, h: usize, w: usize, out: *mut f64) -> NucpriorStatus {
    guard(|| {
        let (a, b) = (grid(a, h, w, "a")?, grid(b, h, w, "b")?);
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = cw_ssim(&a, &b, &CwSsimConfig::default())?;
        Ok(())
    })
}

/// Greedy CW-SSIM grouping of `count` square shapes stored back to back.
/// Writes the index of each kept representative to `out_indices` (room for
/// `count`) and their number to `out_count`.
///
/// # Safety
/// `shapes` must hold `count * side * side` doubles.
#[no_mangle]
pub unsafe extern "C" fn nucprior_eliminate_shapes(
    shapes: *const f64,
    count: usize,
    side: usize,
    threshold: f64,
    out_indices: *mut usize,
    out_count: *mut usize,
) -> NucpriorStatus {
    guard(|| {
        if shapes.is_null() {
            return Err(Failure::Null("shapes"));
        }
        if out_indices.is_null() {
            return Err(Failure::Null("out_indices"));
        }
        let n_out = out_count.as_mut().ok_or(Failure::Null("out_count"))?;
        let per = side * side;
        let set = (0..count)
            .map(|k| Ok(Shape::new(grid(shapes.add(k * per), side, side, "shapes")?)?))
            .collect::<Result<Vec<_>, Failure>>()?;
        let groups = group_shapes(&set, threshold, &CwSsimConfig::default())?;
        let dst = std::slice::from_raw_parts_mut(out_indices, count);
        for (d, g) in dst.iter_mut().zip(&groups) {
            *d = g[0];
        }
        *n_out = groups.len();
        Ok(())
    })
}

/// Golden-region matching of detections against ground truth.
///
/// # Safety
/// `detections` must hold `2 * n_detections` values and `gt` `2 * n_gt`.
#[no_mangle]
pub unsafe extern "C" fn nucprior_evaluate(
    detections: *const usize,
    n_detections: usize,
    gt: *const usize,
    n_gt: usize,
    golden_radius: f64,
    out: *mut NucpriorReport,
) -> NucpriorStatus {
    guard(|| {
        let d = centers(detections, n_detections, "detections")?;
        let g = centers(gt, n_gt, "gt")?;
        let cfg = EvalConfig { golden_radius };
        cfg.validate()?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let r = prf1(match_golden(&d, &g, &cfg).counts);
        *out = NucpriorReport {
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        };
        Ok(())
    })
}
