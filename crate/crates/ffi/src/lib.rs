//! C interface to the pose estimator.
//!
//! Every function returns a [`DpnStatus`]; on failure the message is
//! available from [`dpn_last_error_message`] on the same thread. Arrays are
//! flat `f64` buffers, rotations are row-major 3×3.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use dualposenet::geometry::{rotation_error, umeyama, Mat3, Pose, SymmetrySpec, Vec3};
use dualposenet::metrics::{iou3d, OrientedBox};
use dualposenet::model::{refine, DualPoseNet, RefineConfig};
use dualposenet::synthdata::{Category, Crop};
use dualposenet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Degenerate = 5,
    Numeric = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpnMode {
    /// Explicit decoder output.
    Direct = 0,
    /// Similarity alignment of the implicit decoder output.
    Align = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DpnPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub size: [f64; 3],
}

/// Opaque trained model.
pub struct DpnModel {
    net: DualPoseNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DpnStatus {
    match e {
        Error::Io { .. } => DpnStatus::Io,
        Error::ParseError { .. } | Error::Checkpoint(_) => DpnStatus::Format,
        Error::DegenerateInput(_)
        | Error::DegenerateScale(_)
        | Error::DegenerateView
        | Error::AlignmentUnderdetermined(_) => DpnStatus::Degenerate,
        Error::NonFinite { .. } | Error::RefineFault(_) | Error::InvalidRotation(_) => DpnStatus::Numeric,
        Error::Config(_) | Error::InvalidCategory(_) | Error::ShapeMismatch(_) => DpnStatus::InvalidArgument,
        _ => DpnStatus::Internal,
    }
}

struct Fail(DpnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null() -> Fail {
    Fail(DpnStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DpnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DpnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DpnStatus::Internal
        }
    }
}

unsafe fn vecs<'a>(ptr: *const f64, n: usize) -> Result<&'a [f64], Fail> {
    if ptr.is_null() {
        return Err(null());
    }
    Ok(slice::from_raw_parts(ptr, n * 3))
}

fn to_points(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

unsafe fn crop(points: *const f64, colors: *const f64, n: usize) -> Result<Crop, Fail> {
    let p = vecs(points, n)?;
    let c = vecs(colors, n)?;
    Ok(Crop {
        id: String::new(),
        category: Category::Box,
        instance: 0,
        points: to_points(p),
        colors: c.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

fn mat_from(r: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(r)
}

fn mat_to(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = m[(i, j)];
        }
    }
    out
}

fn pose_to(p: &Pose) -> DpnPose {
    DpnPose {
        rotation: mat_to(&p.rotation),
        translation: p.translation.into(),
        size: p.size.into(),
    }
}

fn pose_from(p: &DpnPose) -> Pose {
    Pose::new(mat_from(&p.rotation), Vec3::from(p.translation), Vec3::from(p.size))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dpn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint written by the `train` command (its `.json`
/// configuration sidecar must sit next to it).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dpn_model_load(path: *const c_char, out: *mut *mut DpnModel) -> DpnStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(DpnStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let net = dualposenet::cli::load_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(DpnModel { net }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dpn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpn_model_free(model: *mut DpnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Pose of one object crop of `n` points with RGB colors in `[0, 1]`.
///
/// # Safety
/// `points` and `colors` must hold `3n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpn_predict(
    model: *const DpnModel,
    points: *const f64,
    colors: *const f64,
    n: usize,
    mode: DpnMode,
    out: *mut DpnPose,
) -> DpnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let c = crop(points, colors, n)?;
        let pose = match mode {
            DpnMode::Direct => model.net.predict(&c)?,
            DpnMode::Align => model.net.predict_via_alignment(&c)?,
        };
        *out = pose_to(&pose);
        Ok(())
    })
}

/// Test-time refinement of the encoder on one crop. The model is not
/// modified. `iterations` and `loss` may be null.
///
/// # Safety
/// As for [`dpn_predict`].
#[no_mangle]
pub unsafe extern "C" fn dpn_refine(
    model: *const DpnModel,
    points: *const f64,
    colors: *const f64,
    n: usize,
    lr: f64,
    eps: f64,
    max_iters: usize,
    out: *mut DpnPose,
    iterations: *mut usize,
    loss: *mut f64,
) -> DpnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let c = crop(points, colors, n)?;
        let cfg = RefineConfig { lr, tolerance: eps, max_iters };
        cfg.validate()?;
        let r = refine(&model.net, &c, &cfg)?;
        *out = pose_to(&r.pose);
        if let Some(it) = iterations.as_mut() {
            *it = r.iterations;
        }
        if let Some(l) = loss.as_mut() {
            *l = r.loss;
        }
        Ok(())
    })
}

/// Least-squares similarity with `dst ≈ scale·R·src + t`.
///
/// # Safety
/// `src` and `dst` must hold `3n` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpn_umeyama(
    src: *const f64,
    dst: *const f64,
    n: usize,
    rotation: *mut [f64; 9],
    translation: *mut [f64; 3],
    scale: *mut f64,
) -> DpnStatus {
    guard(|| {
        let (r_out, t_out, s_out) = (
            rotation.as_mut().ok_or_else(null)?,
            translation.as_mut().ok_or_else(null)?,
            scale.as_mut().ok_or_else(null)?,
        );
        let s = umeyama(&to_points(vecs(src, n)?), &to_points(vecs(dst, n)?))?;
        *r_out = mat_to(&s.rotation);
        *t_out = s.translation.into();
        *s_out = s.scale;
        Ok(())
    })
}

/// Intersection over union of two oriented boxes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dpn_iou3d(a: *const DpnPose, b: *const DpnPose, out: *mut f64) -> DpnStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(null)?, b.as_ref().ok_or_else(null)?);
        let out = out.as_mut().ok_or_else(null)?;
        *out = iou3d(&OrientedBox::from_pose(&pose_from(a)), &OrientedBox::from_pose(&pose_from(b)));
        Ok(())
    })
}

/// Rotation error in degrees; `axis` is null for asymmetric objects or the
/// canonical symmetry axis otherwise.
///
/// # Safety
/// `r1`, `r2` and `out` must be valid; `axis` may be null.
#[no_mangle]
pub unsafe extern "C" fn dpn_rotation_error(
    r1: *const [f64; 9],
    r2: *const [f64; 9],
    axis: *const [f64; 3],
    out: *mut f64,
) -> DpnStatus {
    guard(|| {
        let (r1, r2) = (r1.as_ref().ok_or_else(null)?, r2.as_ref().ok_or_else(null)?);
        let out = out.as_mut().ok_or_else(null)?;
        let sym = match axis.as_ref() {
            None => SymmetrySpec::None,
            Some(a) => SymmetrySpec::axial(Vec3::from(*a))?,
        };
        *out = rotation_error(&mat_from(r1), &mat_from(r2), &sym);
        Ok(())
    })
}
