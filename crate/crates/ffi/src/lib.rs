//! C ABI over checkpoints, attribution and alignment metrics.
//!
//! Every fallible call returns a [`MixStatus`]; on failure the message is
//! available from [`mix_last_error_message`] on the same thread. Images are
//! channel-first `f32` buffers; maps are row-major `height × width`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mixinterp::alignment::{self, BoxSet, EhrNumerator, ThresholdGrid};
use mixinterp::attribution::{gradcam, AttributionMap, Method};
use mixinterp::harness::{ModelCheckpoint, ScoreOracle};
use mixinterp::{Error, Image, Rect};

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    MissingArtifact = 4,
    Format = 5,
    NumericFailure = 6,
    NoData = 7,
    Panic = 8,
}

/// Opaque loaded model.
pub struct MixCheckpoint {
    inner: ModelCheckpoint,
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MixRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MixStatus {
    match e {
        Error::InvalidArgument(_) => MixStatus::InvalidArgument,
        Error::Config(_) => MixStatus::Config,
        Error::MissingArtifact { .. } => MixStatus::MissingArtifact,
        Error::Format { .. } | Error::Io(_) | Error::Json(_) => MixStatus::Format,
        Error::NoData(_) | Error::InsufficientSamples { .. } => MixStatus::NoData,
        Error::TrainingFailure { .. } | Error::AttributionFailure { .. } | Error::OracleFailure { .. } => {
            MixStatus::NumericFailure
        }
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MixStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MixStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MixStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MixStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(nonnull(p, what)?, len))
}

unsafe fn checkpoint<'a>(h: *const MixCheckpoint) -> Result<&'a ModelCheckpoint, Fail> {
    Ok(&(*nonnull(h, "checkpoint")?).inner)
}

unsafe fn map_and_boxes(
    map: *const f32,
    height: usize,
    width: usize,
    boxes: *const MixRect,
    n_boxes: usize,
) -> Result<(AttributionMap, BoxSet), Fail> {
    let values = slice(map, height * width, "map")?.to_vec();
    // The method label is irrelevant to the metrics.
    let map = AttributionMap::new(height, width, values, 0, Method::Gradcam)?;
    let rects = slice(boxes, n_boxes, "boxes")?
        .iter()
        .map(|b| Rect::new(b.x0, b.y0, b.x1, b.y1))
        .collect();
    Ok((map, BoxSet::new(rects, width, height)?))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mix_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a handle to be released
/// with [`mix_checkpoint_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mix_checkpoint_load(path: *const c_char, out: *mut *mut MixCheckpoint) -> MixStatus {
    guard(|| {
        let path = CStr::from_ptr(nonnull(path, "path")?);
        let out = nonnull(out, "out")? as *mut *mut MixCheckpoint;
        let path = path
            .to_str()
            .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
        let inner = ModelCheckpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MixCheckpoint { inner }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `handle` must come from [`mix_checkpoint_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mix_checkpoint_free(handle: *mut MixCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Input shape and class count of a checkpoint.
///
/// # Safety
/// `handle` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mix_checkpoint_shape(
    handle: *const MixCheckpoint,
    channels: *mut usize,
    image_size: *mut usize,
    num_classes: *mut usize,
) -> MixStatus {
    guard(|| {
        let ck = checkpoint(handle)?;
        let arch = ck.arch();
        *(nonnull(channels, "channels")? as *mut usize) = arch.in_channels;
        *(nonnull(image_size, "image_size")? as *mut usize) = arch.image_size;
        *(nonnull(num_classes, "num_classes")? as *mut usize) = arch.num_classes;
        Ok(())
    })
}

/// Softmax probability of `class` for `n_images` images stored back to back.
///
/// # Safety
/// `images` must hold `n_images × C × S × S` floats and `out` `n_images`.
#[no_mangle]
pub unsafe extern "C" fn mix_scores(
    handle: *const MixCheckpoint,
    images: *const f32,
    n_images: usize,
    class: usize,
    out: *mut f32,
) -> MixStatus {
    guard(|| {
        let ck = checkpoint(handle)?;
        let a = ck.arch();
        let per = a.in_channels * a.image_size * a.image_size;
        let data = slice(images, n_images * per, "images")?;
        let imgs = data
            .chunks(per)
            .map(|c| Image::new(a.in_channels, a.image_size, a.image_size, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let s = ck.scores(&imgs, class)?;
        if n_images > 0 {
            std::slice::from_raw_parts_mut(nonnull(out, "out")? as *mut f32, n_images).copy_from_slice(&s);
        }
        Ok(())
    })
}

/// Grad-CAM map for `class` at the last convolutional layer, upsampled to the
/// input size and scaled to `[0, 1]`.
///
/// # Safety
/// `image` must hold `C × S × S` floats and `out_map` `S × S`.
#[no_mangle]
pub unsafe extern "C" fn mix_gradcam(
    handle: *const MixCheckpoint,
    image: *const f32,
    class: usize,
    out_map: *mut f32,
) -> MixStatus {
    guard(|| {
        let ck = checkpoint(handle)?;
        let a = ck.arch();
        let n = a.in_channels * a.image_size * a.image_size;
        let img = Image::new(a.in_channels, a.image_size, a.image_size, slice(image, n, "image")?.to_vec())?;
        let map = gradcam(&ck.network, &img, class)?;
        let out = std::slice::from_raw_parts_mut(nonnull(out_map, "out_map")? as *mut f32, map.values.len());
        out.copy_from_slice(&map.values);
        Ok(())
    })
}

/// Share of non-negative map mass inside the union of the boxes.
///
/// # Safety
/// `map` must hold `height × width` floats, `boxes` `n_boxes` entries.
#[no_mangle]
pub unsafe extern "C" fn mix_energy_pg(
    map: *const f32,
    height: usize,
    width: usize,
    boxes: *const MixRect,
    n_boxes: usize,
    out: *mut f64,
) -> MixStatus {
    guard(|| {
        let (m, b) = map_and_boxes(map, height, width, boxes, n_boxes)?;
        *(nonnull(out, "out")? as *mut f64) = alignment::energy_pg(&m, &b)?;
        Ok(())
    })
}

/// Effective heat ratio over `n_thresholds` evenly spaced thresholds in
/// `[0, max_threshold]`. The map must lie in `[0, 1]`.
///
/// # Safety
/// As for [`mix_energy_pg`].
#[no_mangle]
pub unsafe extern "C" fn mix_ehr(
    map: *const f32,
    height: usize,
    width: usize,
    boxes: *const MixRect,
    n_boxes: usize,
    n_thresholds: usize,
    max_threshold: f32,
    out: *mut f64,
) -> MixStatus {
    guard(|| {
        let (m, b) = map_and_boxes(map, height, width, boxes, n_boxes)?;
        let grid = ThresholdGrid::linspace(0.0, max_threshold, n_thresholds)?;
        *(nonnull(out, "out")? as *mut f64) = alignment::ehr(&m, &b, &grid, EhrNumerator::SuperThreshold)?.score;
        Ok(())
    })
}

/// IoU of the box around pixels above `threshold` with the best ground-truth
/// box.
///
/// # Safety
/// As for [`mix_energy_pg`].
#[no_mangle]
pub unsafe extern "C" fn mix_wsol_iou(
    map: *const f32,
    height: usize,
    width: usize,
    boxes: *const MixRect,
    n_boxes: usize,
    threshold: f32,
    out: *mut f64,
) -> MixStatus {
    guard(|| {
        let (m, b) = map_and_boxes(map, height, width, boxes, n_boxes)?;
        *(nonnull(out, "out")? as *mut f64) = alignment::wsol_iou(&m, &b, threshold)?.iou;
        Ok(())
    })
}
