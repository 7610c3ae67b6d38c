//! C ABI over `fusiondet`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns an [`FdStatus`]; the message of the most recent failure on
//! the calling thread is available from [`fd_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fusiondet::adverse::CorruptionTag;
use fusiondet::dataset::{lidar_representation, read_calibration, read_point_cloud};
use fusiondet::frame::{LidarKind, RgbImage, SensorFrame};
use fusiondet::geometry::{project_point, CameraIntrinsics, Extrinsics, Point3};
use fusiondet::lidar_repr::{densify, DepthImage, RangeGeometry};
use fusiondet::model::{load_checkpoint, DecodeParams, Detector};
use fusiondet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed input data (calibration text, point cloud, checkpoint).
    InvalidData = 3,
    Io = 4,
    /// Point at zero camera depth.
    NotProjectable = 5,
    BufferTooSmall = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdLidarKind {
    Range = 0,
    Sparse = 1,
    Dense = 2,
}

fn lidar_kind(raw: u32) -> Result<LidarKind, FdStatus> {
    match raw {
        0 => Ok(LidarKind::Range),
        1 => Ok(LidarKind::Sparse),
        2 => Ok(LidarKind::Dense),
        _ => Err(fail(FdStatus::InvalidArgument, format!("unknown lidar kind {raw}"))),
    }
}

/// Axis-aligned detection in image pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    pub score: f64,
}

/// Camera model plus lidar-to-camera transform.
pub struct FdCalibration {
    intrinsics: CameraIntrinsics,
    extrinsics: Extrinsics,
}

/// Single-channel float image; non-returns are `+inf`.
pub struct FdDepthImage(DepthImage);

pub struct FdDetector(Detector<f32>);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> FdStatus {
    match e {
        Error::Io { .. } => FdStatus::Io,
        Error::DegenerateDepth { .. } => FdStatus::NotProjectable,
        Error::InvalidConfig(_) | Error::InvalidWindow(_) | Error::IncompatibleCombination(_) => FdStatus::InvalidArgument,
        Error::ShapeMismatch(_) | Error::SpatialMismatch { .. } | Error::Diverged { .. } => FdStatus::Internal,
        _ => FdStatus::InvalidData,
    }
}

fn fail(status: FdStatus, msg: impl Into<String>) -> FdStatus {
    set_error(msg);
    status
}

/// Runs `f`, records its error and converts panics into [`FdStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), FdStatus>) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(FdStatus::Panic, "panic inside fusiondet"),
    }
}

fn lib<T>(r: fusiondet::Result<T>) -> Result<T, FdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, FdStatus> {
    p.as_ref().ok_or_else(|| fail(FdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, FdStatus> {
    p.as_mut().ok_or_else(|| fail(FdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, FdStatus> {
    if p.is_null() {
        return Err(fail(FdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies the last error message (NUL-terminated, truncated to fit) into
/// `buf` and returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fd_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses KITTI calibration text (left color camera) for an image of the
/// given size.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fd_calibration_from_kitti(
    text: *const c_char,
    width: u32,
    height: u32,
    out: *mut *mut FdCalibration,
) -> FdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = c_str(text, "text")?;
        let (intrinsics, extrinsics) = lib(read_calibration(text, width as usize, height as usize))?;
        *out = Box::into_raw(Box::new(FdCalibration { intrinsics, extrinsics }));
        Ok(())
    })
}

/// Builds a calibration from explicit parameters. `rotation` is row-major
/// 3x3, `kappa` holds five distortion coefficients.
///
/// # Safety
/// `kappa` must point to 5 doubles, `rotation` to 9 and `translation` to 3.
#[no_mangle]
pub unsafe extern "C" fn fd_calibration_new(
    fx: f64,
    fy: f64,
    ox: f64,
    oy: f64,
    skew: f64,
    kappa: *const f64,
    width: u32,
    height: u32,
    rotation: *const f64,
    translation: *const f64,
    out: *mut *mut FdCalibration,
) -> FdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let kappa: [f64; 5] = *(deref(kappa, "kappa")? as *const f64 as *const [f64; 5]);
        let r: [f64; 9] = *(deref(rotation, "rotation")? as *const f64 as *const [f64; 9]);
        let t: [f64; 3] = *(deref(translation, "translation")? as *const f64 as *const [f64; 3]);
        let intrinsics = lib(CameraIntrinsics::new(fx, fy, ox, oy, skew, kappa, width as usize, height as usize))?;
        let rot = [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]];
        let extrinsics = lib(Extrinsics::new(rot, t))?;
        *out = Box::into_raw(Box::new(FdCalibration { intrinsics, extrinsics }));
        Ok(())
    })
}

/// # Safety
/// `calib` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fd_calibration_free(calib: *mut FdCalibration) {
    if !calib.is_null() {
        drop(Box::from_raw(calib));
    }
}

/// Projects a lidar-frame point to distorted pixel coordinates.
///
/// # Safety
/// `calib` must be a live handle; `u` and `v` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fd_project_point(
    calib: *const FdCalibration,
    x: f64,
    y: f64,
    z: f64,
    u: *mut f64,
    v: *mut f64,
) -> FdStatus {
    guard(|| {
        let c = deref(calib, "calib")?;
        let (u, v) = (out_ptr(u, "u")?, out_ptr(v, "v")?);
        let p = c.extrinsics.apply(&Point3::new(x, y, z));
        (*u, *v) = lib(project_point(&p, &c.intrinsics))?;
        Ok(())
    })
}

/// Builds a lidar representation from `count` points laid out as
/// `x, y, z, intensity` float quadruples (the Velodyne `.bin` layout).
/// `kind` is an [`FdLidarKind`] value; `window` is the densify
/// neighborhood and is ignored for other kinds.
///
/// # Safety
/// `points` must point to `4 * count` floats; `calib` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_depth_from_points(
    calib: *const FdCalibration,
    points: *const f32,
    count: usize,
    kind: u32,
    window: u32,
    out: *mut *mut FdDepthImage,
) -> FdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let c = deref(calib, "calib")?;
        let kind = lidar_kind(kind)?;
        let bytes: &[u8] = if count == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(deref(points, "points")? as *const f32 as *const u8, count * 16)
        };
        let cloud = lib(read_point_cloud(bytes))?;
        let img = lib(lidar_representation(
            &cloud,
            kind,
            &c.intrinsics,
            &c.extrinsics,
            &RangeGeometry::velodyne64(),
            window as usize,
        ))?;
        *out = Box::into_raw(Box::new(FdDepthImage(img)));
        Ok(())
    })
}

/// Wraps a caller-owned row-major buffer; the values are copied.
///
/// # Safety
/// `data` must point to `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn fd_depth_image_new(
    data: *const f32,
    width: u32,
    height: u32,
    out: *mut *mut FdDepthImage,
) -> FdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let n = width as usize * height as usize;
        let values = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(deref(data, "data")?, n).to_vec()
        };
        *out = Box::into_raw(Box::new(FdDepthImage(DepthImage {
            width: width as usize,
            height: height as usize,
            data: values,
        })));
        Ok(())
    })
}

/// Fills empty pixels with the mean of the finite values in a `window`
/// square around them.
///
/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fd_depth_densify(img: *const FdDepthImage, window: u32, out: *mut *mut FdDepthImage) -> FdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let img = deref(img, "img")?;
        let dense = lib(densify(&img.0, window as usize))?;
        *out = Box::into_raw(Box::new(FdDepthImage(dense)));
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fd_depth_image_dims(img: *const FdDepthImage, width: *mut u32, height: *mut u32) -> FdStatus {
    guard(|| {
        let img = deref(img, "img")?;
        *out_ptr(width, "width")? = img.0.width as u32;
        *out_ptr(height, "height")? = img.0.height as u32;
        Ok(())
    })
}

/// Borrowed pointer to `width * height` row-major floats, valid until the
/// handle is freed. Null for a null handle.
///
/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_depth_image_data(img: *const FdDepthImage) -> *const f32 {
    match img.as_ref() {
        Some(i) => i.0.data.as_ptr(),
        None => ptr::null(),
    }
}

/// # Safety
/// `img` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fd_depth_image_free(img: *mut FdDepthImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Loads a detector checkpoint written by `fusiondet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fd_detector_load(path: *const c_char, out: *mut *mut FdDetector) -> FdStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let d = lib(load_checkpoint(Path::new(path)))?;
        *out = Box::into_raw(Box::new(FdDetector(d)));
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fd_detector_free(det: *mut FdDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Number of object classes the detector predicts.
///
/// # Safety
/// `det` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fd_detector_num_classes(det: *const FdDetector) -> u32 {
    det.as_ref().map_or(0, |d| d.0.classes.len() as u32)
}

/// Runs detection on an interleaved RGB8 image and a lidar image of the
/// detector's representation (may be null for camera-only detectors).
/// Writes at most `cap` boxes and stores the total in `count`; returns
/// [`FdStatus::BufferTooSmall`] when `cap` was insufficient.
///
/// # Safety
/// `rgb` must point to `3 * width * height` bytes, `boxes` to `cap` slots
/// (or be null with `cap == 0`), and `count` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fd_detector_detect(
    det: *const FdDetector,
    rgb: *const u8,
    width: u32,
    height: u32,
    lidar: *const FdDepthImage,
    score_threshold: f64,
    boxes: *mut FdBox,
    cap: usize,
    count: *mut usize,
) -> FdStatus {
    guard(|| {
        let d = &deref(det, "det")?.0;
        let count = out_ptr(count, "count")?;
        *count = 0;
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 {
            return Err(fail(FdStatus::InvalidArgument, "image is empty"));
        }
        let rgb = std::slice::from_raw_parts(deref(rgb, "rgb")?, 3 * w * h).to_vec();
        let lidar = match lidar.as_ref() {
            Some(l) => l.0.clone(),
            None if !d.uses_lidar() => DepthImage::empty(w, h),
            None => return Err(fail(FdStatus::NullPointer, "this detector needs a lidar image")),
        };
        let frame = SensorFrame {
            rgb: RgbImage { width: w, height: h, data: rgb },
            lidar,
            lidar_kind: d.config.repr,
            boxes: Vec::new(),
            tag: CorruptionTag::clean(),
        };
        let decode = DecodeParams {
            score_threshold,
            ..DecodeParams::default()
        };
        let found = lib(d.detect(&frame, &decode))?;
        *count = found.len();
        if found.len() > cap {
            return Err(fail(
                FdStatus::BufferTooSmall,
                format!("{} detections, buffer holds {cap}", found.len()),
            ));
        }
        if !found.is_empty() {
            let dst = std::slice::from_raw_parts_mut(out_ptr(boxes, "boxes")?, cap);
            for (slot, b) in dst.iter_mut().zip(&found) {
                *slot = FdBox {
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                    class_id: b.class_id as u32,
                    score: b.score,
                };
            }
        }
        Ok(())
    })
}
