//! C ABI over `chancepred`: load trained predictor bundles, calibrators and
//! conformal bounds, then score windows of frames from any language.
//!
//! Every fallible function returns a [`CpStatus`]. On failure the message is
//! available from [`cp_last_error`] on the same thread. Handles are opaque and
//! must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use chancepred::calib::Calibrator;
use chancepred::conformal::{
    adaptive_binning, conformal_calibrate, interval_predict, ConformalBounds, ConformalParams, QuantileRule,
};
use chancepred::metrics::ece_mce;
use chancepred::predictors::LabelPredictor;
use chancepred::sim::{render_observation, Action, Observation, SystemState, PIXELS};
use chancepred::Error;

/// Result of every fallible call. Values other than `Ok` and the two
/// FFI-only codes match the command-line tool's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    InvalidArgument = 2,
    MissingInput = 3,
    Io = 4,
    Malformed = 5,
    Numerical = 6,
    Data = 7,
    Dimension = 8,
    /// A required pointer argument was null, or a string was not UTF-8.
    BadPointer = 9,
    /// An internal panic was caught at the boundary.
    Panic = 10,
}

/// Quantile rule selector for the bounds functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpQuantileRule {
    Standard = 0,
    Paper = 1,
}

/// A trained label predictor for one window length and horizon.
pub struct CpPredictor(LabelPredictor);

/// A fitted score calibrator.
pub struct CpCalibrator(Calibrator);

/// Per-bin conformal bounds.
pub struct CpBounds(ConformalBounds);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CpStatus {
    match e.exit_code() {
        2 => CpStatus::InvalidArgument,
        3 => CpStatus::MissingInput,
        4 => CpStatus::Io,
        5 => CpStatus::Malformed,
        6 => CpStatus::Numerical,
        7 => CpStatus::Data,
        _ => CpStatus::Dimension,
    }
}

enum Fail {
    Core(Error),
    Pointer(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, recording any error or panic for [`cp_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Pointer(what))) => {
            set_error(format!("bad pointer argument: {what}"));
            CpStatus::BadPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            CpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Pointer("path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Pointer("path is not UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Pointer(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Pointer(what))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Pointer("handle is null"))
}

fn rule_of(rule: u32) -> Result<QuantileRule, Fail> {
    match rule {
        0 => Ok(QuantileRule::Standard),
        1 => Ok(QuantileRule::Paper),
        r => Err(Error::InvalidParameter(format!("quantile rule {r} (expected 0 or 1)")).into()),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Pixels per frame (row-major, intensity in [0, 1], 1 = white).
#[no_mangle]
pub extern "C" fn cp_frame_pixels() -> usize {
    PIXELS
}

/// Renders the state `[cart_pos, cart_vel, pole_angle, pole_angvel]` into
/// `out`, which must hold `cp_frame_pixels()` floats.
///
/// # Safety
/// `state` must point to 4 doubles and `out` to `cp_frame_pixels()` floats.
#[no_mangle]
pub unsafe extern "C" fn cp_render(state: *const f64, out: *mut f32) -> CpStatus {
    guard(|| {
        let s = slice_arg(state, 4, "state is null")?;
        if out.is_null() {
            return Err(Fail::Pointer("out is null"));
        }
        let obs = render_observation(&SystemState::new(s[0], s[1], s[2], s[3]));
        std::slice::from_raw_parts_mut(out, PIXELS).copy_from_slice(obs.pixels());
        Ok(())
    })
}

/// Loads a predictor bundle written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_predictor_load(path: *const c_char, out: *mut *mut CpPredictor) -> CpStatus {
    guard(|| {
        let out = out_arg(out, "out is null")?;
        let p = LabelPredictor::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CpPredictor(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`cp_predictor_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cp_predictor_free(p: *mut CpPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Window length `m` the predictor expects; 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_predictor_window(p: *const CpPredictor) -> usize {
    p.as_ref().map_or(0, |p| p.0.m())
}

/// Prediction horizon `k`; 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_predictor_horizon(p: *const CpPredictor) -> usize {
    p.as_ref().map_or(0, |p| p.0.k())
}

/// Whether the predictor needs the window's actions (controller-independent).
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_predictor_uses_actions(p: *const CpPredictor) -> bool {
    p.as_ref().is_some_and(|p| !p.0.controller_specific())
}

/// Uncalibrated chance that the system is safe `k` steps after the last frame.
/// `frames` holds `n_frames * cp_frame_pixels()` floats, oldest frame first.
/// `actions` holds one `-1`/`+1` per frame, or is null when not needed.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn cp_predictor_score(
    p: *const CpPredictor,
    frames: *const f32,
    n_frames: usize,
    actions: *const i8,
    n_actions: usize,
    out: *mut f64,
) -> CpStatus {
    guard(|| {
        let p = handle(p)?;
        let out = out_arg(out, "out is null")?;
        let pixels = slice_arg(frames, n_frames * PIXELS, "frames is null")?;
        let window = pixels
            .chunks(PIXELS)
            .map(|f| Observation::from_pixels(f.to_vec()).map(Arc::new))
            .collect::<chancepred::Result<Vec<_>>>()?;
        let acts: Option<Vec<Action>> = if actions.is_null() {
            None
        } else {
            let a = slice_arg(actions, n_actions, "actions is null")?;
            Some(a.iter().map(|&v| Action::from_sign(f64::from(v))).collect())
        };
        *out = p.0.predict_score(&window, acts.as_deref())?;
        Ok(())
    })
}

/// Loads a calibrator written by the `calibrate` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_calibrator_load(path: *const c_char, out: *mut *mut CpCalibrator) -> CpStatus {
    guard(|| {
        let out = out_arg(out, "out is null")?;
        let c = Calibrator::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CpCalibrator(c)));
        Ok(())
    })
}

/// # Safety
/// `c` must come from [`cp_calibrator_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cp_calibrator_free(c: *mut CpCalibrator) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Calibrated score in [0, 1].
///
/// # Safety
/// `c` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_calibrator_apply(c: *const CpCalibrator, score: f64, out: *mut f64) -> CpStatus {
    guard(|| {
        let c = handle(c)?;
        if !score.is_finite() {
            return Err(Error::InvalidParameter("score is not finite".into()).into());
        }
        *out_arg(out, "out is null")? = c.0.apply(score);
        Ok(())
    })
}

/// Fits bounds from `n` calibrated validation scores and 0/1 labels.
/// `rule` is a [`CpQuantileRule`] value.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cp_bounds_fit(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    bins: usize,
    alpha: f64,
    resamples: usize,
    resample_size: usize,
    rule: u32,
    seed: u64,
    out: *mut *mut CpBounds,
) -> CpStatus {
    guard(|| {
        let out = out_arg(out, "out is null")?;
        let s = slice_arg(scores, n, "scores is null")?;
        let l = slice_arg(labels, n, "labels is null")?;
        if l.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("labels must be 0 or 1".into()).into());
        }
        let pairs: Vec<(f64, u8)> = s.iter().copied().zip(l.iter().copied()).collect();
        let params = ConformalParams {
            alpha,
            resamples,
            resample_size,
            rule: rule_of(rule)?,
            seed,
        };
        let b = conformal_calibrate(&adaptive_binning(&pairs, bins)?, &params)?;
        *out = Box::into_raw(Box::new(CpBounds(b)));
        Ok(())
    })
}

/// Loads a bounds CSV written by the `calibrate` command. The remaining
/// arguments are the parameters it was computed with.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_bounds_load(
    path: *const c_char,
    alpha: f64,
    resamples: usize,
    resample_size: usize,
    rule: u32,
    out: *mut *mut CpBounds,
) -> CpStatus {
    guard(|| {
        let out = out_arg(out, "out is null")?;
        let meta = ConformalParams {
            alpha,
            resamples,
            resample_size,
            rule: rule_of(rule)?,
            seed: 0,
        };
        let b = ConformalBounds::load_csv(path_arg(path)?, &meta)?;
        *out = Box::into_raw(Box::new(CpBounds(b)));
        Ok(())
    })
}

/// # Safety
/// `b` must come from a bounds constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cp_bounds_free(b: *mut CpBounds) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Number of bins; 0 for a null handle.
///
/// # Safety
/// `b` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_bounds_bins(b: *const CpBounds) -> usize {
    b.as_ref().map_or(0, |b| b.0.q())
}

/// Bound `c_j` of bin `j`.
///
/// # Safety
/// `b` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_bounds_get(b: *const CpBounds, j: usize, out: *mut f64) -> CpStatus {
    guard(|| {
        let b = handle(b)?;
        let c = b.0.c.get(j).ok_or_else(|| {
            Error::InvalidParameter(format!("bin {j} out of range (have {})", b.0.q()))
        })?;
        *out_arg(out, "out is null")? = *c;
        Ok(())
    })
}

/// Interval `[lo, hi]` around calibrated score `g`, clipped to [0, 1], and the bin used.
/// `bin` may be null.
///
/// # Safety
/// `b` must be a live handle; `lo` and `hi` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cp_bounds_interval(
    b: *const CpBounds,
    g: f64,
    lo: *mut f64,
    hi: *mut f64,
    bin: *mut usize,
) -> CpStatus {
    guard(|| {
        let b = handle(b)?;
        if !g.is_finite() {
            return Err(Error::InvalidParameter("score is not finite".into()).into());
        }
        let iv = interval_predict(&b.0, g);
        *out_arg(lo, "lo is null")? = iv.lo;
        *out_arg(hi, "hi is null")? = iv.hi;
        if let Some(j) = bin.as_mut() {
            *j = iv.bin;
        }
        Ok(())
    })
}

/// Expected and maximum calibration error over `bins` equal-count bins.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `ece` and `mce` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cp_calibration_error(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    bins: usize,
    ece: *mut f64,
    mce: *mut f64,
) -> CpStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores is null")?;
        let l = slice_arg(labels, n, "labels is null")?;
        let (e, m) = ece_mce(s, l, bins)?;
        *out_arg(ece, "ece is null")? = e;
        *out_arg(mce, "mce is null")? = m;
        Ok(())
    })
}
