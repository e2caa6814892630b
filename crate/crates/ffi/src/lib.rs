//! C interface: opaque model and clip handles, status codes, and a per-thread
//! last-error message.
//!
//! Every function returns a [`PsStatus`] (or a plain value for infallible
//! queries). Objects returned through out-pointers are owned by the caller and
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use partstyle::eval::{fmd, msd_metric};
use partstyle::motion::features::to_world;
use partstyle::motion::{read_clip, write_clip, MotionClip, NormStats, Skeleton, DOF, N_JOINTS};
use partstyle::net::{read_checkpoint, Model};
use partstyle::stylize::{PartAssignment, PartSource, Stylizer};
use partstyle::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments violate a documented precondition (sizes, ranges, UTF-8).
    InvalidArgument = 2,
    /// Non-finite values appeared during computation.
    Numeric = 3,
    Io = 4,
    /// Malformed file contents or a version mismatch.
    Format = 5,
    /// A clip length or layout the network cannot consume.
    Shape = 6,
    /// An unexpected internal failure; the message holds details.
    Internal = 7,
}

/// A loaded checkpoint: inference parameters plus normalization statistics.
pub struct PsModel {
    model: Model<f32>,
    norm: NormStats,
}

/// A pose-feature clip of `frames × 21 × 15` values.
pub struct PsClip {
    clip: MotionClip,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::Numeric(_) => PsStatus::Numeric,
        Error::Io(_) => PsStatus::Io,
        Error::Format(_) | Error::Parse { .. } => PsStatus::Format,
        Error::Shape(_) | Error::Dimension { .. } => PsStatus::Shape,
        _ => PsStatus::InvalidArgument,
    }
}

struct Fail(PsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PsStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            PsStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PsStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PsStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint; inference uses the averaged parameters when present.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_load(path: *const c_char, out: *mut *mut PsModel) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = read_checkpoint(&path_arg(path, "path")?)?;
        put(
            out,
            PsModel {
                model: ck.inference_model(),
                norm: ck.norm,
            },
        );
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`ps_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_model_num_parameters(model: *const PsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_parameters())
}

/// Reads an `.mpz` clip.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_load(path: *const c_char, out: *mut *mut PsClip) -> PsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let clip = read_clip(&path_arg(path, "path")?)?;
        put(out, PsClip { clip });
        Ok(())
    })
}

/// Builds a clip from `frames × 21 × 15` row-major features.
///
/// # Safety
/// `data` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_from_features(
    frames: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut PsClip,
) -> PsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let clip = MotionClip::new(frames, std::slice::from_raw_parts(data, len).to_vec())?;
        put(out, PsClip { clip });
        Ok(())
    })
}

/// Writes a clip as `.mpz`.
///
/// # Safety
/// `clip` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_save(clip: *const PsClip, path: *const c_char) -> PsStatus {
    guard(|| {
        let clip = clip.as_ref().ok_or_else(|| null("clip"))?;
        write_clip(&path_arg(path, "path")?, &clip.clip)?;
        Ok(())
    })
}

/// Frame count, or 0 for a null handle.
///
/// # Safety
/// `clip` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_frames(clip: *const PsClip) -> usize {
    clip.as_ref().map_or(0, |c| c.clip.frames())
}

/// Copies the features into `out`, which must hold exactly `frames × 21 × 15` doubles.
///
/// # Safety
/// `clip` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_features(
    clip: *const PsClip,
    out: *mut f64,
    len: usize,
) -> PsStatus {
    guard(|| {
        let clip = clip.as_ref().ok_or_else(|| null("clip"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let data = clip.clip.data();
        if len != data.len() {
            return Err(Fail(
                PsStatus::InvalidArgument,
                format!("buffer holds {len} values, clip has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `clip` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_clip_free(clip: *mut PsClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// Stylizes `source` part by part.
///
/// `styles` holds five clip pointers in part order (left leg, right leg, spine,
/// left arm, right arm); a null entry, or a null `styles`, keeps the source style
/// for that part. `alpha` is null (all 1) or five weights in [0, 1].
///
/// # Safety
/// All non-null pointers must be valid for the documented element counts.
#[no_mangle]
pub unsafe extern "C" fn ps_stylize(
    model: *const PsModel,
    source: *const PsClip,
    styles: *const *const PsClip,
    alpha: *const f64,
    out: *mut *mut PsClip,
) -> PsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let src = source.as_ref().ok_or_else(|| null("source"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut assignment = PartAssignment::default();
        let mut refs: Vec<&MotionClip> = Vec::new();
        if !styles.is_null() {
            for (p, &s) in std::slice::from_raw_parts(styles, 5).iter().enumerate() {
                if let Some(c) = s.as_ref() {
                    // each part gets its own name so identical pointers still resolve in order
                    assignment.parts[p] = PartSource::Clip(format!("part{p}"));
                    refs.push(&c.clip);
                }
            }
        }
        let alpha: [f64; 5] = if alpha.is_null() {
            [1.0; 5]
        } else {
            std::slice::from_raw_parts(alpha, 5)
                .try_into()
                .expect("five weights")
        };
        let st = Stylizer {
            model: &m.model,
            norm: &m.norm,
        };
        let clip = st.stylize(&src.clip, &assignment, &refs, alpha)?;
        put(out, PsClip { clip });
        Ok(())
    })
}

/// Encodes and decodes `source` with its own style.
///
/// # Safety
/// `model` and `source` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_reconstruct(
    model: *const PsModel,
    source: *const PsClip,
    out: *mut *mut PsClip,
) -> PsStatus {
    ps_stylize(model, source, ptr::null(), ptr::null(), out)
}

/// Per-joint mean squared displacement (21 values) between the world
/// trajectories of two equally long clips, normalized by the stock skeleton height.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must point to 21 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_msd(a: *const PsClip, b: *const PsClip, out: *mut f64) -> PsStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("a"))?;
        let b = b.as_ref().ok_or_else(|| null("b"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = msd_metric(
            &to_world(&a.clip),
            &to_world(&b.clip),
            Skeleton::standard().height(),
        )?;
        ptr::copy_nonoverlapping(m.as_ptr(), out, N_JOINTS);
        Ok(())
    })
}

/// Fréchet distance between two sets of `dim`-dimensional row vectors.
///
/// # Safety
/// `a` must hold `na × dim` doubles, `b` `nb × dim`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_fmd(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("a, b or out"));
        }
        if dim == 0 {
            return Err(Fail(
                PsStatus::InvalidArgument,
                "dim must be positive".into(),
            ));
        }
        let rows = |p: *const f64, n: usize| -> Vec<Vec<f64>> {
            std::slice::from_raw_parts(p, n * dim)
                .chunks(dim)
                .map(<[f64]>::to_vec)
                .collect()
        };
        *out = fmd(&rows(a, na), &rows(b, nb))?;
        Ok(())
    })
}

/// Values per frame of a clip (21 joints × 15 features).
#[no_mangle]
pub extern "C" fn ps_frame_width() -> usize {
    N_JOINTS * DOF
}
