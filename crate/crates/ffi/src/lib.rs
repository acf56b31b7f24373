//! C ABI over `trajint`.
//!
//! Conventions:
//! - every fallible function returns a [`TrajintStatus`]; results go through
//!   out-pointers, which are left untouched on failure;
//! - the message of the most recent failure on the calling thread is
//!   available from [`trajint_last_error_message`];
//! - handles are opaque and must be released with their `_free` function;
//! - points are interleaved `x, y` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trajint::io::records::{from_line, to_line};
use trajint::labeler::{label_scene, min_pairwise_distance, LabelConfig, PairReason, SceneLabels};
use trajint::loss::{cross_entropy, smooth_l1};
use trajint::metrics::{min_fde, PredictionSet};
use trajint::pretext::{closest_distance_bin, direction_bin};
use trajint::trajectory::{normalize_scene, AgentId, Scene, TrajKind, Trajectory};
use trajint::{Error, Vec2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajintStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed record or schema version mismatch.
    Parse = 3,
    /// Input violates a data invariant (non-finite, too short, ...).
    InvalidData = 4,
    NotFound = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajintPairReason {
    DistancePass = 0,
    FilteredOncoming = 1,
    RetainedOncomingLeftTurn = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajintLabelConfig {
    pub d_th: f64,
    pub min_traj_len: usize,
    pub oncoming_angle: f64,
    pub turn_heading_delta: f64,
    pub waiting_speed: f64,
    pub lane_change_lateral: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajintPair {
    pub d_min: f64,
    pub oncoming: bool,
    pub retained: bool,
    pub reason: TrajintPairReason,
}

/// Opaque scene handle.
pub struct TrajintScene {
    scene: Scene,
}

/// Opaque label-set handle.
pub struct TrajintLabels {
    labels: SceneLabels,
    other_ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TrajintStatus {
    match e {
        Error::MalformedRecord { .. } | Error::SchemaVersionMismatch { .. } => TrajintStatus::Parse,
        Error::UnknownAgent(_) | Error::MissingPrediction(_) | Error::NoScenes(_) => TrajintStatus::NotFound,
        Error::Io(_) => TrajintStatus::Io,
        Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::LabelOutOfRange { .. } | Error::TooFewClasses { .. } => {
            TrajintStatus::InvalidArgument
        }
        _ => TrajintStatus::InvalidData,
    }
}

fn fail(status: TrajintStatus, msg: &str) -> TrajintStatus {
    set_last_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), (TrajintStatus, String)>) -> TrajintStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TrajintStatus::Ok
        }
        Ok(Err((s, msg))) => fail(s, &msg),
        Err(_) => fail(TrajintStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> (TrajintStatus, String) {
    (status_of(&e), format!("{}: {e}", e.kind()))
}

fn null(what: &str) -> (TrajintStatus, String) {
    (TrajintStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must point to `2 * len` readable doubles, or be null with `len == 0`.
unsafe fn points(ptr: *const f64, len: usize, what: &str) -> Result<Vec<Vec2>, (TrajintStatus, String)> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    let flat: &[f64] = std::slice::from_raw_parts(ptr, 2 * len);
    Ok(flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (TrajintStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TrajintStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn future(id: &str, xy: &[Vec2]) -> Result<Trajectory, (TrajintStatus, String)> {
    Trajectory::new(AgentId::from(id), TrajKind::Future, 1, xy).map_err(lib_err)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trajint_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn trajint_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn trajint_label_config_default() -> TrajintLabelConfig {
    let c = LabelConfig::default();
    TrajintLabelConfig {
        d_th: c.d_th,
        min_traj_len: c.min_traj_len,
        oncoming_angle: c.oncoming_angle,
        turn_heading_delta: c.turn_heading_delta,
        waiting_speed: c.waiting_speed,
        lane_change_lateral: c.lane_change_lateral,
    }
}

/// Cross-time minimum distance between two trajectories given as `len`
/// interleaved points each.
///
/// # Safety
/// `a` and `b` must point to `2 * a_len` and `2 * b_len` doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_min_pairwise_distance(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    out: *mut f64,
) -> TrajintStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ta = future("a", &points(a, a_len, "a")?)?;
        let tb = future("b", &points(b, b_len, "b")?)?;
        *out = min_pairwise_distance(&ta, &tb).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `value` and `grad` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_smooth_l1(pred: f64, target: f64, value: *mut f64, grad: *mut f64) -> TrajintStatus {
    guard(|| {
        if value.is_null() || grad.is_null() {
            return Err(null("out"));
        }
        let r = smooth_l1(pred, target);
        *value = r.value;
        *grad = r.grad[0];
        Ok(())
    })
}

/// Cross-entropy of `n` logits against `label`; `grad` receives `n`
/// gradient entries and may be null.
///
/// # Safety
/// `logits` must point to `n` doubles, `grad` to `n` writable doubles or
/// null, `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_cross_entropy(
    logits: *const f64,
    n: usize,
    label: usize,
    value: *mut f64,
    grad: *mut f64,
) -> TrajintStatus {
    guard(|| {
        if value.is_null() || (logits.is_null() && n > 0) {
            return Err(null("logits/value"));
        }
        let l = if n == 0 { &[][..] } else { std::slice::from_raw_parts(logits, n) };
        let r = cross_entropy(l, label).map_err(lib_err)?;
        *value = r.value;
        if !grad.is_null() {
            std::slice::from_raw_parts_mut(grad, n).copy_from_slice(&r.grad);
        }
        Ok(())
    })
}

/// Minimum final displacement error over `k` modes of `n` points each,
/// against an `n`-point ground truth.
///
/// # Safety
/// `modes` must point to `k * n * 2` doubles, `gt` to `n * 2`, `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_min_fde(
    modes: *const f64,
    k: usize,
    n: usize,
    gt: *const f64,
    out: *mut f64,
) -> TrajintStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let flat = points(modes, k * n, "modes")?;
        let modes: Vec<Vec<Vec2>> = if n == 0 { vec![Vec::new(); k] } else { flat.chunks(n).map(<[Vec2]>::to_vec).collect() };
        let set = PredictionSet::new(AgentId::from("agent"), modes, vec![1.0; k]).map_err(lib_err)?;
        let gt = future("agent", &points(gt, n, "gt")?)?;
        *out = min_fde(&set, &gt).map_err(lib_err)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn trajint_closest_distance_bin(d: f64) -> u8 {
    closest_distance_bin(d)
}

#[no_mangle]
pub extern "C" fn trajint_direction_bin(dir: f64) -> u8 {
    direction_bin(dir)
}

/// Parses one scene record line (as written by the `gen`/`curate` stages).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_scene_from_json(json: *const c_char, out: *mut *mut TrajintScene) -> TrajintStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(json, "json")?;
        let scene: Scene = from_line(text.trim(), 1).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(TrajintScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trajint_scene_free(scene: *mut TrajintScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn trajint_scene_agent_count(scene: *const TrajintScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.agents.len())
}

/// Rewrites the scene into the target-centric frame.
///
/// # Safety
/// `scene` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn trajint_scene_normalize(scene: *mut TrajintScene) -> TrajintStatus {
    guard(|| {
        let s = scene.as_mut().ok_or_else(|| null("scene"))?;
        s.scene = normalize_scene(&s.scene).map_err(lib_err)?;
        Ok(())
    })
}

/// Labels the target's interacting pairs. `cfg` may be null for defaults.
///
/// # Safety
/// `scene` must be a live handle, `cfg` valid or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_label_scene(
    scene: *const TrajintScene,
    cfg: *const TrajintLabelConfig,
    out: *mut *mut TrajintLabels,
) -> TrajintStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = match cfg.as_ref() {
            Some(c) => LabelConfig {
                d_th: c.d_th,
                min_traj_len: c.min_traj_len,
                oncoming_angle: c.oncoming_angle,
                turn_heading_delta: c.turn_heading_delta,
                waiting_speed: c.waiting_speed,
                lane_change_lateral: c.lane_change_lateral,
            },
            None => LabelConfig::default(),
        };
        cfg.validate().map_err(lib_err)?;
        let labels = label_scene(&s.scene, &cfg);
        let other_ids = labels
            .pairs
            .iter()
            .map(|p| CString::new(p.other_id.0.replace('\0', " ")).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(TrajintLabels { labels, other_ids }));
        Ok(())
    })
}

/// # Safety
/// `labels` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trajint_labels_free(labels: *mut TrajintLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// Number of candidate pairs (retained and filtered).
///
/// # Safety
/// `labels` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn trajint_labels_pair_count(labels: *const TrajintLabels) -> usize {
    labels.as_ref().map_or(0, |l| l.labels.pairs.len())
}

/// # Safety
/// `labels` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_labels_pair(labels: *const TrajintLabels, index: usize, out: *mut TrajintPair) -> TrajintStatus {
    guard(|| {
        let l = labels.as_ref().ok_or_else(|| null("labels"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = l
            .labels
            .pairs
            .get(index)
            .ok_or_else(|| (TrajintStatus::InvalidArgument, format!("pair index {index} out of range")))?;
        *out = TrajintPair {
            d_min: p.d_min,
            oncoming: p.oncoming,
            retained: p.retained,
            reason: match p.reason {
                PairReason::DistancePass => TrajintPairReason::DistancePass,
                PairReason::FilteredOncoming => TrajintPairReason::FilteredOncoming,
                PairReason::RetainedOncomingLeftTurn => TrajintPairReason::RetainedOncomingLeftTurn,
            },
        };
        Ok(())
    })
}

/// Other agent's id of pair `index`, owned by `labels`; null when out of
/// range.
///
/// # Safety
/// `labels` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn trajint_labels_pair_other_id(labels: *const TrajintLabels, index: usize) -> *const c_char {
    labels
        .as_ref()
        .and_then(|l| l.other_ids.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Serializes the label set as one record line. Release with
/// [`trajint_string_free`].
///
/// # Safety
/// `labels` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn trajint_labels_to_json(labels: *const TrajintLabels, out: *mut *mut c_char) -> TrajintStatus {
    guard(|| {
        let l = labels.as_ref().ok_or_else(|| null("labels"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let line = to_line(&l.labels).map_err(lib_err)?;
        *out = CString::new(line).map_err(|e| (TrajintStatus::InvalidData, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trajint_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
