//! C ABI over the spine3d geometry pipeline and generator.
//!
//! Every fallible function returns a [`Spine3dStatus`]. On failure the
//! message is available from [`spine3d_last_error`] on the same thread until
//! the next failing call. Handles are opaque and must be released with the
//! matching `_free` function; passing null to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spine3d::cobb::{grade, CobbResult, SeverityLevel};
use spine3d::euformer::checkpoint::load_generator;
use spine3d::euformer::Generator;
use spine3d::pipeline::{assess_maps, GeometryOptions};
use spine3d::tensor::{Shape, Tensor};
use spine3d::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spine3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    EmptyCurve = 4,
    InsufficientOverlap = 5,
    Io = 6,
    Format = 7,
    Config = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spine3dSeverity {
    NormalMild = 0,
    Moderate = 1,
    Severe = 2,
}

impl From<SeverityLevel> for Spine3dSeverity {
    fn from(s: SeverityLevel) -> Self {
        match s {
            SeverityLevel::NormalMild => Spine3dSeverity::NormalMild,
            SeverityLevel::Moderate => Spine3dSeverity::Moderate,
            SeverityLevel::Severe => Spine3dSeverity::Severe,
        }
    }
}

/// Curve-extraction and fitting options for [`spine3d_assess_maps`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct Spine3dGeometryOptions {
    pub threshold: f64,
    pub degree: usize,
    pub samples: usize,
    pub include_sagittal: bool,
}

impl From<Spine3dGeometryOptions> for GeometryOptions {
    fn from(o: Spine3dGeometryOptions) -> Self {
        GeometryOptions {
            threshold: o.threshold,
            degree: o.degree,
            samples: o.samples,
            include_sagittal: o.include_sagittal,
        }
    }
}

/// Opaque 3D Cobb result.
pub struct Spine3dCobbResult {
    inner: CobbResult,
}

/// Opaque loaded generator.
pub struct Spine3dGenerator {
    inner: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Spine3dStatus {
    match e {
        Error::Shape { .. } | Error::Divisibility { .. } | Error::NonScalarLoss(_) => Spine3dStatus::Shape,
        Error::EmptyCurve { .. } => Spine3dStatus::EmptyCurve,
        Error::InsufficientOverlap { .. } => Spine3dStatus::InsufficientOverlap,
        Error::Io(_) => Spine3dStatus::Io,
        Error::Format { .. } | Error::Json(_) => Spine3dStatus::Format,
        Error::Config(_) | Error::EmptyDataset => Spine3dStatus::Config,
        Error::Underdetermined { .. } | Error::NegativeAngle(_) | Error::InvalidArgument(_) => {
            Spine3dStatus::InvalidArgument
        }
    }
}

struct Failure(Spine3dStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(Spine3dStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Spine3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Spine3dStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            Spine3dStatus::Panic
        }
    }
}

/// # Safety
/// `data` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn checked_len(h: usize, w: usize, c: usize) -> Result<usize, Failure> {
    h.checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure(Spine3dStatus::InvalidArgument, format!("invalid image size {h}x{w}x{c}")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spine3d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spine3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default extraction threshold 0.5, degree 6, 256 samples, coronal landmarks only.
#[no_mangle]
pub extern "C" fn spine3d_geometry_options_default() -> Spine3dGeometryOptions {
    let d = GeometryOptions::default();
    Spine3dGeometryOptions {
        threshold: d.threshold,
        degree: d.degree,
        samples: d.samples,
        include_sagittal: d.include_sagittal,
    }
}

/// Severity grade of a Cobb angle in degrees.
///
/// # Safety
/// `out` must be null or valid for writing one value.
#[no_mangle]
pub unsafe extern "C" fn spine3d_grade(angle_deg: f64, out: *mut Spine3dSeverity) -> Spine3dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let level = grade(angle_deg)?;
        *out = level.into();
        Ok(())
    })
}

/// Measure the 3D Cobb angle from two `h x w` row-major curve maps with
/// values in `[0, 1]`. `options` may be null for the defaults. On success
/// `*out` receives a handle to release with [`spine3d_cobb_result_free`].
///
/// # Safety
/// `pa_map` and `lat_map` must point to `h * w` readable doubles, `options`
/// must be null or valid, and `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn spine3d_assess_maps(
    pa_map: *const f64,
    lat_map: *const f64,
    h: usize,
    w: usize,
    options: *const Spine3dGeometryOptions,
    out: *mut *mut Spine3dCobbResult,
) -> Spine3dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let n = checked_len(h, w, 1)?;
        let shape = Shape::hwc(h, w, 1);
        let pa = Tensor::new(shape, slice(pa_map, n, "pa_map")?.to_vec())?;
        let lat = Tensor::new(shape, slice(lat_map, n, "lat_map")?.to_vec())?;
        let opts = if options.is_null() {
            GeometryOptions::default()
        } else {
            (*options).into()
        };
        let report = assess_maps(&pa, &lat, &opts)?;
        *out = Box::into_raw(Box::new(Spine3dCobbResult { inner: report.cobb3d }));
        Ok(())
    })
}

/// # Safety
/// `result` must be a live handle from [`spine3d_assess_maps`].
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_max_angle(result: *const Spine3dCobbResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.max_angle_deg)
}

/// # Safety
/// `result` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_severity(
    result: *const Spine3dCobbResult,
    out: *mut Spine3dSeverity,
) -> Spine3dStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = r.inner.severity.into();
        Ok(())
    })
}

/// Whether the maximum angle lies on a grade boundary (20 or 40 degrees).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_boundary_case(result: *const Spine3dCobbResult) -> bool {
    result.as_ref().is_some_and(|r| r.inner.boundary_case)
}

/// Number of landmarks, curve endpoints included.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_landmark_count(result: *const Spine3dCobbResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.landmarks_z.len())
}

/// Copy up to `cap` landmark heights (normalized z) into `buf`; returns the
/// total number available.
///
/// # Safety
/// `result` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_landmarks(
    result: *const Spine3dCobbResult,
    buf: *mut f64,
    cap: usize,
) -> usize {
    result.as_ref().map_or(0, |r| copy_out(&r.inner.landmarks_z, buf, cap))
}

/// Number of segment angles (landmarks minus one).
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_segment_count(result: *const Spine3dCobbResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.segment_angles_deg.len())
}

/// Copy up to `cap` segment angles in degrees into `buf`; returns the total
/// number available.
///
/// # Safety
/// `result` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_segment_angles(
    result: *const Spine3dCobbResult,
    buf: *mut f64,
    cap: usize,
) -> usize {
    result.as_ref().map_or(0, |r| copy_out(&r.inner.segment_angles_deg, buf, cap))
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, cap: usize) -> usize {
    if !buf.is_null() {
        let n = values.len().min(cap);
        ptr::copy_nonoverlapping(values.as_ptr(), buf, n);
    }
    values.len()
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spine3d_cobb_result_free(result: *mut Spine3dCobbResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Load a generator checkpoint from a NUL-terminated UTF-8 path.
///
/// # Safety
/// `path` must be a valid C string and `out` valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn spine3d_generator_load(path: *const c_char, out: *mut *mut Spine3dGenerator) -> Spine3dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(Spine3dStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = load_generator(Path::new(path))?;
        *out = Box::into_raw(Box::new(Spine3dGenerator { inner }));
        Ok(())
    })
}

/// Run the generator on an `h x w` RGB image (row-major, interleaved
/// channels, values in `[0, 1]`), writing the `h x w` curve map to `out_map`.
///
/// # Safety
/// `generator` must be a live handle, `rgb` must point to `h * w * 3`
/// readable doubles and `out_map` to `h * w` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spine3d_generator_forward(
    generator: *const Spine3dGenerator,
    rgb: *const f64,
    h: usize,
    w: usize,
    out_map: *mut f64,
) -> Spine3dStatus {
    guard(|| {
        let g = generator.as_ref().ok_or_else(|| null("generator"))?;
        if out_map.is_null() {
            return Err(null("out_map"));
        }
        let c = g.inner.config().input_channels;
        let n = checked_len(h, w, c)?;
        let x = Tensor::new(Shape::hwc(h, w, c), slice(rgb, n, "rgb")?.to_vec())?;
        let y = g.inner.forward(&x)?;
        ptr::copy_nonoverlapping(y.data().as_ptr(), out_map, y.numel());
        Ok(())
    })
}

/// # Safety
/// `generator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spine3d_generator_free(generator: *mut Spine3dGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}
