//! C ABI for loading scenes and models, rasterizing descriptors and rendering.
//!
//! Every function returns an [`NpbgStatus`]; on failure the message is
//! available from [`npbg_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Images are
//! channels-first `float` arrays (`[C][H][W]`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use convert::{camera_from_c, camera_to_c};
use npbg::fitting::render_view;
use npbg::raster::{rasterize, DescriptorSet};
use npbg::rendernet::RenderNetParams;
use npbg::sceneio::{load_scene, SceneDataset};
use npbg::tensor::Tensor;
use npbg::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpbgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Autodiff = 5,
    InvalidRotation = 6,
    InvalidCamera = 7,
    Config = 8,
    MissingFile = 9,
    Malformed = 10,
    Extent = 11,
    Diverged = 12,
    Io = 13,
    Image = 14,
    Panic = 15,
}

impl From<&Error> for NpbgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => NpbgStatus::Shape,
            Error::NonFinite { .. } => NpbgStatus::NonFinite,
            Error::Autodiff(_) => NpbgStatus::Autodiff,
            Error::InvalidRotation(_) => NpbgStatus::InvalidRotation,
            Error::InvalidCamera(_) => NpbgStatus::InvalidCamera,
            Error::Config(_) => NpbgStatus::Config,
            Error::MissingFile(_) => NpbgStatus::MissingFile,
            Error::Malformed { .. } => NpbgStatus::Malformed,
            Error::Extent(_) => NpbgStatus::Extent,
            Error::Diverged { .. } => NpbgStatus::Diverged,
            Error::Io { .. } => NpbgStatus::Io,
            Error::Image { .. } => NpbgStatus::Image,
        }
    }
}

/// Pinhole camera; `rotation` is row-major world-to-camera, `p_cam = R p + t`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NpbgCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
}

/// A loaded scene directory.
pub struct NpbgScene {
    scene: SceneDataset,
}

/// A loaded rendering network.
pub struct NpbgModel {
    params: RenderNetParams<f32>,
}

mod convert {
    use super::NpbgCamera;
    use npbg::geometry::{Camera, CameraJson};

    pub fn camera_from_c(c: &NpbgCamera) -> npbg::Result<Camera> {
        Camera::try_from(CameraJson {
            width: c.width as usize,
            height: c.height as usize,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: c.rotation,
            translation: c.translation,
        })
    }

    pub fn camera_to_c(cam: &Camera) -> NpbgCamera {
        let j = cam.to_json();
        NpbgCamera {
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            rotation: j.rotation,
            translation: j.translation,
            width: j.width as u32,
            height: j.height as u32,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior NUL"));
}

enum Fail {
    Status(NpbgStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(NpbgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NpbgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NpbgStatus::Ok
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(format!("{}: {e}", e.code()));
            NpbgStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic");
            NpbgStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(NpbgStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn descriptor_arg(
    scene: &SceneDataset,
    data: *const f32,
    rows: usize,
    cols: usize,
) -> Result<DescriptorSet<f32>, Fail> {
    if data.is_null() {
        return Err(null("descriptors"));
    }
    if rows != scene.cloud.len() {
        return Err(Fail::Lib(Error::Extent(format!(
            "{rows} descriptor rows for {} points",
            scene.cloud.len()
        ))));
    }
    let values = std::slice::from_raw_parts(data, rows * cols).to_vec();
    Ok(DescriptorSet::from_tensor(Tensor::from_vec(&[rows, cols], values)?)?)
}

/// Message for the last failed call on this thread (empty after success).
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn npbg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn npbg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a scene directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn npbg_scene_load(dir: *const c_char, out: *mut *mut NpbgScene) -> NpbgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scene = load_scene(&path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(NpbgScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from [`npbg_scene_load`] (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn npbg_scene_free(scene: *mut NpbgScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn npbg_scene_point_count(scene: *const NpbgScene, out: *mut usize) -> NpbgStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.scene.cloud.len();
        Ok(())
    })
}

/// # Safety
/// `scene` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn npbg_scene_view_count(scene: *const NpbgScene, out: *mut usize) -> NpbgStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.scene.views.len();
        Ok(())
    })
}

/// Camera of view `index`.
///
/// # Safety
/// `scene` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn npbg_scene_view_camera(
    scene: *const NpbgScene,
    index: usize,
    out: *mut NpbgCamera,
) -> NpbgStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let v = s.scene.views.get(index).ok_or_else(|| {
            Fail::Status(
                NpbgStatus::InvalidArgument,
                format!("view {index} out of range ({} views)", s.scene.views.len()),
            )
        })?;
        *out = camera_to_c(&v.camera);
        Ok(())
    })
}

/// Loads a checkpoint (and its `.json` config sidecar) into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn npbg_model_load(path: *const c_char, out: *mut *mut NpbgModel) -> NpbgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = RenderNetParams::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(NpbgModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`npbg_model_load`] (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn npbg_model_free(model: *mut NpbgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Descriptor width `M` the model expects.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn npbg_model_in_channels(model: *const NpbgModel, out: *mut usize) -> NpbgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.params.config().in_channels;
        Ok(())
    })
}

/// Z-buffer rasterization of `descriptors` (`rows x cols`, row-major, one row
/// per scene point). Writes `cols * H * W` floats to `out_channels` and, if
/// `out_winner` is not null, `H * W` winner indices (`UINT32_MAX` = empty).
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn npbg_rasterize(
    scene: *const NpbgScene,
    descriptors: *const f32,
    rows: usize,
    cols: usize,
    camera: *const NpbgCamera,
    out_channels: *mut f32,
    out_winner: *mut u32,
) -> NpbgStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.scene;
        let cam = camera_from_c(camera.as_ref().ok_or_else(|| null("camera"))?)?;
        if out_channels.is_null() {
            return Err(null("out_channels"));
        }
        let desc = descriptor_arg(s, descriptors, rows, cols)?;
        let raw = rasterize(&s.cloud, &desc, &cam)?;
        std::slice::from_raw_parts_mut(out_channels, raw.channels.len()).copy_from_slice(raw.channels.data());
        if !out_winner.is_null() {
            std::slice::from_raw_parts_mut(out_winner, raw.winner.len()).copy_from_slice(&raw.winner);
        }
        Ok(())
    })
}

/// Renders an RGB image (`3 * H * W` floats in `(0, 1)`) through the
/// network. `descriptors` may be null to use the scene's own descriptors, or
/// zeros if it has none. `aa` is 1, 2 or 4.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn npbg_render(
    model: *const NpbgModel,
    scene: *const NpbgScene,
    descriptors: *const f32,
    rows: usize,
    cols: usize,
    camera: *const NpbgCamera,
    aa: u32,
    out_rgb: *mut f32,
) -> NpbgStatus {
    guard(|| {
        let params = &model.as_ref().ok_or_else(|| null("model"))?.params;
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.scene;
        let cam = camera_from_c(camera.as_ref().ok_or_else(|| null("camera"))?)?;
        if out_rgb.is_null() {
            return Err(null("out_rgb"));
        }
        let desc = if descriptors.is_null() {
            s.descriptors
                .clone()
                .unwrap_or_else(|| DescriptorSet::zeros(s.cloud.len(), params.config().in_channels))
        } else {
            descriptor_arg(s, descriptors, rows, cols)?
        };
        if ![1, 2, 4].contains(&aa) {
            return Err(Fail::Status(NpbgStatus::InvalidArgument, format!("aa must be 1, 2 or 4, got {aa}")));
        }
        let rgb = render_view(params, &s.cloud, &desc, &cam, aa as usize)?;
        std::slice::from_raw_parts_mut(out_rgb, rgb.len()).copy_from_slice(rgb.data());
        Ok(())
    })
}
