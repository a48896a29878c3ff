//! C ABI for scenekit: opaque scene and image handles, status codes, and a
//! thread-local last-error message.
//!
//! Every function returns an [`SkStatus`]; on failure [`sk_last_error`]
//! describes the cause until the next call on the same thread. Strings
//! returned through `char **` are owned by the caller and released with
//! [`sk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use scenekit::edit::{apply_placement_edit, EditError, EditRequest};
use scenekit::field::FieldRegistry;
use scenekit::guidance::{select_guidance, GuidanceConfig, GuidanceHandle, NullGuidance};
use scenekit::math::Vec3;
use scenekit::render::{render_composed, render_object, Camera, Image, RenderError, RenderOptions};
use scenekit::scene::{parse_scene, save_scene, template_scene, validate_scene, SceneDescription, SceneError};
use scenekit::train::{RunRecorder, TrainConfig, TrainError, Trainer};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    UnknownId = 6,
    InvalidArgument = 7,
    Render = 8,
    Train = 9,
    Panic = 10,
}

/// A scene with its loaded fields.
pub struct SkScene {
    scene: SceneDescription,
    fields: FieldRegistry<f32>,
    base_dir: PathBuf,
}

/// A rendered image: row-major, interleaved channels, plus per-pixel opacity.
pub struct SkImage(Image<f32>);

/// Pinhole camera at `eye` looking at `target`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SkCamera {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view, radians.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
}

/// `stratified == 0` samples interval midpoints; otherwise `seed` drives
/// stratified jitter.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SkRenderOptions {
    pub n_samples: u32,
    pub stratified: u8,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SkStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SkStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            SkStatus::Panic
        }
    }
}

fn fail<T>(status: SkStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        let status = match e {
            SceneError::Io { .. } => SkStatus::Io,
            SceneError::Parse { .. } => SkStatus::Parse,
            SceneError::Invalid(_) => SkStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

impl From<RenderError> for Failure {
    fn from(e: RenderError) -> Self {
        let status = match e {
            RenderError::UnknownField(_) => SkStatus::UnknownId,
            RenderError::InvalidCamera(_) | RenderError::InvalidOptions(_) => SkStatus::InvalidArgument,
            _ => SkStatus::Render,
        };
        Failure(status, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let status = match e {
            TrainError::InvalidConfig(_) | TrainError::InvalidScene(_) => SkStatus::Validation,
            TrainError::UnknownField(_) | TrainError::UnknownGroup(_) => SkStatus::UnknownId,
            TrainError::Io(_) => SkStatus::Io,
            _ => SkStatus::Train,
        };
        Failure(status, e.to_string())
    }
}

impl From<EditError> for Failure {
    fn from(e: EditError) -> Self {
        let status = match e {
            EditError::UnknownProxy(_) | EditError::UnknownField(_) => SkStatus::UnknownId,
            EditError::Invalid(_) => SkStatus::Validation,
            _ => SkStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(SkStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(SkStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

/// # Safety
/// `p` is null or valid for reads of `T`.
unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(SkStatus::NullArgument, format!("{name} is null")))
}

/// # Safety
/// `p` is null or valid for writes of `T`.
unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(SkStatus::NullArgument, format!("{name} is null")))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn load_fields(scene: SceneDescription, base_dir: PathBuf) -> Result<Box<SkScene>, Failure> {
    let fields = FieldRegistry::load_for_scene(&scene, &base_dir).map_err(|e| Failure(SkStatus::Io, e.to_string()))?;
    Ok(Box::new(SkScene { scene, fields, base_dir }))
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a scene file; checkpoints resolve relative to its directory.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_load(path: *const c_char, out: *mut *mut SkScene) -> SkStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let text = std::fs::read_to_string(path).or_else(|e| fail(SkStatus::Io, format!("{}: {e}", path.display())))?;
        let scene = parse_scene(&text, path)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_owned();
        *out = Box::into_raw(load_fields(scene, base)?);
        Ok(())
    })
}

/// Parses scene JSON; `base_dir` (nullable, default ".") resolves relative paths.
///
/// # Safety
/// `json` is a NUL-terminated string, `base_dir` is null or one; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_from_json(json: *const c_char, base_dir: *const c_char, out: *mut *mut SkScene) -> SkStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let base = PathBuf::from(opt_str_arg(base_dir, "base_dir")?.unwrap_or("."));
        let out = out_arg(out, "out")?;
        let scene = parse_scene(json, Path::new("<json>"))?;
        *out = Box::into_raw(load_fields(scene, base)?);
        Ok(())
    })
}

/// The two-object template scene with freshly initialized fields.
///
/// # Safety
/// `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_template(out: *mut *mut SkScene) -> SkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(load_fields(template_scene(), PathBuf::from("."))?);
        Ok(())
    })
}

/// # Safety
/// `scene` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_free(scene: *mut SkScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Counts the violations in scene JSON without loading fields. Malformed
/// JSON is a parse error; a nonzero count is still `Ok`.
///
/// # Safety
/// `json` is a NUL-terminated string; `n_violations` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_validate_json(json: *const c_char, n_violations: *mut usize) -> SkStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let n = out_arg(n_violations, "n_violations")?;
        let scene: SceneDescription = serde_json::from_str(json).or_else(|e| fail(SkStatus::Parse, e.to_string()))?;
        let bad = validate_scene(&scene);
        *n = bad.len();
        if !bad.is_empty() {
            set_error(&bad.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "));
        }
        Ok(())
    })
}

/// # Safety
/// `scene` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_to_json(scene: *const SkScene, out: *mut *mut c_char) -> SkStatus {
    guard(|| {
        let s = ref_arg(scene, "scene")?;
        let out = out_arg(out, "out")?;
        let text = serde_json::to_string_pretty(&s.scene).or_else(|e| fail(SkStatus::Parse, e.to_string()))?;
        *out = to_c_string(text);
        Ok(())
    })
}

/// Number of proxies, or 0 for a null handle.
///
/// # Safety
/// `scene` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_proxy_count(scene: *const SkScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.proxies.len())
}

/// SHA-256 hex digest of every neural field's parameters.
///
/// # Safety
/// `scene` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_checksum(scene: *const SkScene, out: *mut *mut c_char) -> SkStatus {
    guard(|| {
        let s = ref_arg(scene, "scene")?;
        *out_arg(out, "out")? = to_c_string(s.fields.checksum());
        Ok(())
    })
}

/// Applies a move, remove or duplicate edit request given as JSON.
///
/// # Safety
/// `scene` is a live handle; `edit_json` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_apply_edit(scene: *mut SkScene, edit_json: *const c_char) -> SkStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| Failure(SkStatus::NullArgument, "scene is null".into()))?;
        let edit: EditRequest =
            serde_json::from_str(str_arg(edit_json, "edit_json")?).or_else(|e| fail(SkStatus::Parse, e.to_string()))?;
        if !edit.is_placement() {
            return fail(SkStatus::InvalidArgument, "only move, remove and duplicate edits are supported here");
        }
        s.scene = apply_placement_edit(&s.scene, &edit)?;
        Ok(())
    })
}

/// Writes `dir/scene.json` and `dir/checkpoints/<field>.stsf`.
///
/// # Safety
/// `scene` is a live handle; `dir` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sk_scene_save(scene: *const SkScene, dir: *const c_char) -> SkStatus {
    guard(|| {
        let s = ref_arg(scene, "scene")?;
        let dir = Path::new(str_arg(dir, "dir")?);
        let io = |e: &dyn std::fmt::Display| Failure(SkStatus::Io, e.to_string());
        let saved = s.fields.save_checkpoints(&dir.join("checkpoints")).map_err(|e| io(&e))?;
        let mut scene = s.scene.clone();
        for (id, path) in saved {
            if let Some(spec) = scene.fields.get_mut(&id) {
                spec.checkpoint = Some(std::path::absolute(path).map_err(|e| io(&e))?);
            }
        }
        save_scene(&scene, dir.join("scene.json"))?;
        Ok(())
    })
}

fn camera(c: &SkCamera) -> Result<Camera, Failure> {
    let v = |a: [f64; 3]| Vec3::new(a[0], a[1], a[2]);
    let (eye, target, up) = (v(c.eye), v(c.target), v(c.up));
    if !(eye.is_finite() && target.is_finite() && up.is_finite()) || (target - eye).norm() == 0.0 {
        return fail(SkStatus::InvalidArgument, "camera eye and target must be finite and distinct");
    }
    let cam = Camera::look_at(eye, target, up, c.fov_y, c.width as usize, c.height as usize);
    cam.validate()?;
    Ok(cam)
}

fn options(o: Option<&SkRenderOptions>) -> Result<RenderOptions, Failure> {
    let opts = match o {
        None => RenderOptions::default(),
        Some(o) if o.stratified != 0 => RenderOptions::stratified(o.n_samples as usize, o.seed),
        Some(o) => RenderOptions::midpoint(o.n_samples as usize),
    };
    opts.validate()?;
    Ok(opts)
}

/// Composed render of every proxy. `options` may be null (64 midpoint samples).
///
/// # Safety
/// `scene` and `camera` are valid; `options` is null or valid; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_render(
    scene: *const SkScene,
    camera_: *const SkCamera,
    options_: *const SkRenderOptions,
    out: *mut *mut SkImage,
) -> SkStatus {
    guard(|| {
        let s = ref_arg(scene, "scene")?;
        let cam = camera(ref_arg(camera_, "camera")?)?;
        let opts = options(options_.as_ref())?;
        let out = out_arg(out, "out")?;
        let img = render_composed(&s.scene, &s.fields, &cam, &opts)?;
        *out = Box::into_raw(Box::new(SkImage(img)));
        Ok(())
    })
}

/// One field alone in its canonical frame.
///
/// # Safety
/// As [`sk_render`]; `field_id` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sk_render_object(
    scene: *const SkScene,
    field_id: *const c_char,
    camera_: *const SkCamera,
    options_: *const SkRenderOptions,
    out: *mut *mut SkImage,
) -> SkStatus {
    guard(|| {
        let s = ref_arg(scene, "scene")?;
        let id = str_arg(field_id, "field_id")?;
        let cam = camera(ref_arg(camera_, "camera")?)?;
        let opts = options(options_.as_ref())?;
        let out = out_arg(out, "out")?;
        let field = s.fields.get(id).ok_or_else(|| Failure(SkStatus::UnknownId, format!("unknown field '{id}'")))?;
        let img = render_object(field, &cam, &s.scene.object_bounds, &opts)?;
        *out = Box::into_raw(Box::new(SkImage(img)));
        Ok(())
    })
}

/// Trains the scene's fields in place. `config_json` (nullable) holds
/// training config overrides; `guidance` (nullable, default `none`) uses the
/// command-line form; `out_dir` (nullable) receives the event log.
///
/// # Safety
/// `scene` is a live handle; string arguments are null or NUL-terminated;
/// `iters_done` is null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_train(
    scene: *mut SkScene,
    config_json: *const c_char,
    guidance: *const c_char,
    out_dir: *const c_char,
    iters_done: *mut u64,
) -> SkStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| Failure(SkStatus::NullArgument, "scene is null".into()))?;
        let cfg: TrainConfig = match opt_str_arg(config_json, "config_json")? {
            Some(j) => serde_json::from_str(j).or_else(|e| fail(SkStatus::Parse, e.to_string()))?,
            None => TrainConfig::default(),
        };
        let handle = match opt_str_arg(guidance, "guidance")? {
            None => GuidanceHandle::new(Arc::new(NullGuidance), "none"),
            Some(flag) => {
                let c = GuidanceConfig::parse_flag(flag, None).or_else(|e| fail(SkStatus::InvalidArgument, e.to_string()))?;
                select_guidance(&c, &s.base_dir).or_else(|e| fail(SkStatus::InvalidArgument, e.to_string()))?
            }
        };
        let mut trainer = Trainer::new(s.scene.clone(), s.fields.clone(), cfg.clone(), handle, &s.base_dir)?;
        let summary = match opt_str_arg(out_dir, "out_dir")? {
            Some(dir) => trainer.train(&mut RunRecorder::create(dir, &cfg)?)?,
            None => trainer.train(&mut ())?,
        };
        s.fields = trainer.into_fields();
        if let Some(n) = iters_done.as_mut() {
            *n = summary.iters;
        }
        Ok(())
    })
}

/// # Safety
/// `image` is null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sk_image_free(image: *mut SkImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Width, height and channel count; any output pointer may be null.
///
/// # Safety
/// `image` is a live handle; non-null outputs are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_image_shape(image: *const SkImage, width: *mut u32, height: *mut u32, channels: *mut u32) -> SkStatus {
    guard(|| {
        let img = &ref_arg(image, "image")?.0;
        for (p, v) in [(width, img.width), (height, img.height), (channels, img.channels)] {
            if let Some(p) = p.as_mut() {
                *p = v as u32;
            }
        }
        Ok(())
    })
}

/// Borrowed color data, `width·height·channels` floats, valid until the
/// image is freed.
///
/// # Safety
/// `image` is a live handle; `data` and `len` are valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sk_image_data(image: *const SkImage, data: *mut *const f32, len: *mut usize) -> SkStatus {
    guard(|| {
        let img = &ref_arg(image, "image")?.0;
        *out_arg(data, "data")? = img.data.as_ptr();
        *out_arg(len, "len")? = img.data.len();
        Ok(())
    })
}

/// Borrowed opacity, `width·height` floats.
///
/// # Safety
/// As [`sk_image_data`].
#[no_mangle]
pub unsafe extern "C" fn sk_image_opacity(image: *const SkImage, data: *mut *const f32, len: *mut usize) -> SkStatus {
    guard(|| {
        let img = &ref_arg(image, "image")?.0;
        *out_arg(data, "data")? = img.opacity.as_ptr();
        *out_arg(len, "len")? = img.opacity.len();
        Ok(())
    })
}

/// Writes PNG or PFM, chosen by the path's extension.
///
/// # Safety
/// `image` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sk_image_write(image: *const SkImage, path: *const c_char) -> SkStatus {
    guard(|| {
        let img = &ref_arg(image, "image")?.0;
        let path = Path::new(str_arg(path, "path")?);
        let res = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => img.write_png(path),
            Some("pfm") => img.write_pfm(path),
            _ => return fail(SkStatus::InvalidArgument, "path must end in .png or .pfm"),
        };
        res.or_else(|e| fail(SkStatus::Io, e.to_string()))
    })
}
