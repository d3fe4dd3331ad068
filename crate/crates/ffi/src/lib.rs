//! C interface to trained depth networks and the classical baselines.
//!
//! Every fallible call returns a [`BdffStatus`]. On failure a message is kept
//! per thread and can be read with [`bdff_last_error`]. Models are opaque
//! handles created by [`bdff_model_load`] and released with
//! [`bdff_model_free`].
//!
//! Images cross the boundary as `f32` arrays in `[0, 1]`, row-major with
//! interleaved channels. A focal stack is its slices stored back to back.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bdff::cli::load_train_config;
use bdff::error::Error;
use bdff::image::Image;
use bdff::infer::{infer_depth, infer_edof, load_model};
use bdff::lightfield::classical_dff;
use bdff::networks::{NetKind, WidthConfig};
use bdff::nn::Model;
use bdff::optics::lens::{coc_diameter, LensConfig};
use bdff::train::TrainConfig;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Domain = 5,
    Checkpoint = 6,
    Io = 7,
    Format = 8,
    NonFinite = 9,
    Panic = 10,
}

impl From<&Error> for BdffStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) | Error::ShapeMismatch { .. } => BdffStatus::Shape,
            Error::Config(_) => BdffStatus::Config,
            Error::Domain(_) => BdffStatus::Domain,
            Error::Usage(_) => BdffStatus::InvalidArgument,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } => BdffStatus::NonFinite,
            Error::MissingBlocks(_) | Error::Checkpoint(_) => BdffStatus::Checkpoint,
            Error::Io { .. } => BdffStatus::Io,
            Error::Format { .. } | Error::Json(_) | Error::Image(_) => BdffStatus::Format,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(BdffStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(BdffStatus::from(&e), e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> BdffStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BdffStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            BdffStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(BdffStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(BdffStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Splits a packed stack into per-slice images.
fn unpack_stack(data: &[f32], slices: usize, width: usize, height: usize, channels: usize) -> Result<Vec<Image>, Failure> {
    let n = width * height * channels;
    if slices == 0 || n == 0 {
        return Err(invalid("empty focal stack"));
    }
    data.chunks(n)
        .take(slices)
        .map(|c| Image::from_vec(width, height, channels, c.to_vec()).map_err(Failure::from))
        .collect()
}

fn interleaved(img: &Image) -> &[f32] {
    img.data()
}

/// Opaque trained network.
pub struct BdffModel {
    kind: NetKind,
    width: WidthConfig,
    model: Model<f32>,
    edof: Option<Model<f32>>,
}

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(s) => s,
    Err(_) => panic!("version string"),
};

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bdff_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn bdff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a network. `net` is one of `edof`, `focus`, `focus2`, `stereo`,
/// `bdff`. `config_path` (nullable) names a training configuration or a run's
/// `config.json`; without it the default widths are used.
#[no_mangle]
pub unsafe extern "C" fn bdff_model_load(
    net: *const c_char,
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut BdffModel,
) -> BdffStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let kind: NetKind = str_arg(net, "net")?.parse()?;
        let ckpt = PathBuf::from(str_arg(checkpoint_path, "checkpoint_path")?);
        let cfg = if config_path.is_null() {
            TrainConfig::default()
        } else {
            load_train_config(&PathBuf::from(str_arg(config_path, "config_path")?))?
        };
        let model = load_model(kind, &cfg.width, &ckpt)?;
        *out = Box::into_raw(Box::new(BdffModel {
            kind,
            width: cfg.width,
            model,
            edof: None,
        }));
        Ok(())
    })
}

/// Attaches the EDoFNet a StereoNet handle uses to turn stacks into images.
#[no_mangle]
pub unsafe extern "C" fn bdff_model_attach_edof(model: *mut BdffModel, edof_checkpoint_path: *const c_char) -> BdffStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let path = PathBuf::from(str_arg(edof_checkpoint_path, "edof_checkpoint_path")?);
        m.edof = Some(load_model(NetKind::Edof, &m.width, &path)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bdff_model_free(model: *mut BdffModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Focal slices per stack the network expects, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn bdff_model_slices(model: *const BdffModel) -> usize {
    model.as_ref().map_or(0, |m| m.width.slices)
}

/// Input extents are cropped to multiples of this, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn bdff_model_multiple(model: *const BdffModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.graph().spatial_multiple)
}

/// Predicts normalised disparity in `[0, 1]` from RGB focal stacks of
/// `bdff_model_slices` slices each. `right` is required for StereoNet and
/// BDfFNet and ignored otherwise. The output is cropped at the bottom and
/// right to multiples of `bdff_model_multiple`; `out_depth` must hold
/// `width·height` values and receives `out_width·out_height` of them.
#[no_mangle]
pub unsafe extern "C" fn bdff_model_infer(
    model: *const BdffModel,
    left: *const f32,
    right: *const f32,
    width: usize,
    height: usize,
    out_depth: *mut f32,
    out_width: *mut usize,
    out_height: *mut usize,
) -> BdffStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if m.kind == NetKind::Edof {
            return Err(invalid("EDoFNet predicts colour; use bdff_model_edof"));
        }
        let n = m.width.slices;
        let len = n * width * height * 3;
        let l = unpack_stack(slice_arg(left, len, "left")?, n, width, height, 3)?;
        let r = if right.is_null() {
            None
        } else {
            Some(unpack_stack(slice_arg(right, len, "right")?, n, width, height, 3)?)
        };
        let depth = infer_depth(m.kind, &m.model, &m.width, &l, r.as_deref(), m.edof.as_ref())?;
        let dst = slice_mut_arg(out_depth, width * height, "out_depth")?;
        dst[..depth.data().len()].copy_from_slice(depth.data());
        if let Some(w) = out_width.as_mut() {
            *w = depth.width();
        }
        if let Some(h) = out_height.as_mut() {
            *h = depth.height();
        }
        Ok(())
    })
}

/// All-in-focus RGB image from an EDoFNet handle. `out_rgb` must hold
/// `width·height·3` values; cropping follows [`bdff_model_infer`].
#[no_mangle]
pub unsafe extern "C" fn bdff_model_edof(
    model: *const BdffModel,
    stack: *const f32,
    width: usize,
    height: usize,
    out_rgb: *mut f32,
    out_width: *mut usize,
    out_height: *mut usize,
) -> BdffStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if m.kind != NetKind::Edof {
            return Err(invalid("not an EDoFNet handle"));
        }
        let n = m.width.slices;
        let s = unpack_stack(slice_arg(stack, n * width * height * 3, "stack")?, n, width, height, 3)?;
        let img = infer_edof(&m.model, &m.width, &s)?;
        let dst = slice_mut_arg(out_rgb, width * height * 3, "out_rgb")?;
        let src = interleaved(&img);
        dst[..src.len()].copy_from_slice(src);
        if let Some(w) = out_width.as_mut() {
            *w = img.width();
        }
        if let Some(h) = out_height.as_mut() {
            *h = img.height();
        }
        Ok(())
    })
}

/// Thin-lens blur-circle diameter in pixels of a point at `depth_mm`.
#[no_mangle]
pub unsafe extern "C" fn bdff_coc_diameter(
    focal_length_mm: f64,
    aperture_mm: f64,
    sensor_distance_mm: f64,
    pixel_pitch_mm: f64,
    depth_mm: f64,
    out_px: *mut f64,
) -> BdffStatus {
    guard(|| {
        let out = out_px.as_mut().ok_or_else(|| null("out_px"))?;
        let lens = LensConfig::new(focal_length_mm, aperture_mm, sensor_distance_mm, pixel_pitch_mm)?;
        *out = coc_diameter(&lens, depth_mm)?;
        Ok(())
    })
}

/// Classical depth from focus on a packed stack of `slices` images with
/// `channels` channels. Writes the sharpest slice per pixel to `out_index`
/// and, when non-null, its confidence to `out_confidence` (`width·height`
/// values each).
#[no_mangle]
pub unsafe extern "C" fn bdff_classical_dff(
    stack: *const f32,
    slices: usize,
    width: usize,
    height: usize,
    channels: usize,
    out_index: *mut u32,
    out_confidence: *mut f32,
) -> BdffStatus {
    guard(|| {
        let data = slice_arg(stack, slices * width * height * channels, "stack")?;
        let images = unpack_stack(data, slices, width, height, channels)?;
        let dff = classical_dff(&images)?;
        let idx = slice_mut_arg(out_index, width * height, "out_index")?;
        for (d, &s) in idx.iter_mut().zip(&dff.index) {
            *d = s as u32;
        }
        if !out_confidence.is_null() {
            slice_mut_arg(out_confidence, width * height, "out_confidence")?.copy_from_slice(&dff.confidence);
        }
        Ok(())
    })
}
