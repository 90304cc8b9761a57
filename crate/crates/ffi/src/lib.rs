//! C ABI over the simulator, the verb oracles and average precision.
//!
//! Every function returns a [`TvStatus`]; results are written through out
//! pointers. Episodes are opaque [`TvEpisode`] handles created by
//! [`tv_episode_generate`] and released with [`tv_episode_free`]. After a
//! failure, [`tv_last_error`] returns a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use trajverb::eval::{average_precision, EvalError};
use trajverb::oracle::{label_clip, Clip, OracleConfig, Verb};
use trajverb::sim::{generate_episode, Episode, SceneConfig};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Simulation = 4,
    OutOfRange = 5,
    NoPositives = 6,
    Panic = 7,
}

/// Opaque simulated episode.
pub struct TvEpisode {
    inner: Episode,
}

/// One simulation frame. `contact` is 0 none, 1 counter, 2 floor, 3 hand.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TvFrame {
    pub t_index: u32,
    pub hand_pos: [f64; 3],
    pub obj_pos: [f64; 3],
    /// XYZW.
    pub obj_rot: [f64; 4],
    pub obj_vel: [f64; 3],
    pub obj_angvel: [f64; 3],
    pub contact: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: TvStatus, msg: impl Into<String>) -> TvStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TvStatus) -> TvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TvStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, TvStatus> {
    if p.is_null() {
        return Err(fail(TvStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(TvStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Message describing the last failure on this thread; empty if none. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Simulate one episode. `scene_json` may be null for the default scene or
/// hold a JSON object with any subset of the scene fields.
///
/// # Safety
/// `scene_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tv_episode_generate(seed: u64, scene_json: *const c_char, out: *mut *mut TvEpisode) -> TvStatus {
    guard(|| {
        if out.is_null() {
            return fail(TvStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let scene = if scene_json.is_null() {
            SceneConfig::default()
        } else {
            let text = match str_arg(scene_json, "scene_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str::<SceneConfig>(text) {
                Ok(c) => c,
                Err(e) => return fail(TvStatus::InvalidConfig, e.to_string()),
            }
        };
        if let Err(e) = scene.validate() {
            return fail(TvStatus::InvalidConfig, e.to_string());
        }
        match generate_episode(seed, &scene) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TvEpisode { inner }));
                TvStatus::Ok
            }
            Err(e) => fail(TvStatus::Simulation, e.to_string()),
        }
    })
}

/// Release an episode. Null is ignored.
///
/// # Safety
/// `episode` must be null or a handle from [`tv_episode_generate`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn tv_episode_free(episode: *mut TvEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

/// Number of frames in an episode.
///
/// # Safety
/// `episode` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_episode_frame_count(episode: *const TvEpisode, out: *mut usize) -> TvStatus {
    guard(|| {
        if episode.is_null() || out.is_null() {
            return fail(TvStatus::NullPointer, "episode or out is null");
        }
        *out = (*episode).inner.frames.len();
        TvStatus::Ok
    })
}

/// Copy frame `index` into `out`.
///
/// # Safety
/// `episode` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_episode_frame(episode: *const TvEpisode, index: usize, out: *mut TvFrame) -> TvStatus {
    guard(|| {
        if episode.is_null() || out.is_null() {
            return fail(TvStatus::NullPointer, "episode or out is null");
        }
        let ep = &*episode;
        let Some(f) = ep.inner.frames.get(index) else {
            return fail(TvStatus::OutOfRange, format!("frame {index} out of range"));
        };
        *out = TvFrame {
            t_index: f.t_index,
            hand_pos: f.hand_pos.to_array(),
            obj_pos: f.obj_pos.to_array(),
            obj_rot: f.obj_rot.to_array(),
            obj_vel: f.obj_vel.to_array(),
            obj_angvel: f.obj_angvel.to_array(),
            contact: f.contact.code(),
        };
        TvStatus::Ok
    })
}

/// Oracle label (default thresholds) for `verb` on the 90-frame clip
/// starting at `start`. `verb` is a lowercase verb name such as `"fall"`.
///
/// # Safety
/// `episode` must be a live handle, `verb` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_episode_label_clip(
    episode: *const TvEpisode,
    start: usize,
    verb: *const c_char,
    out: *mut bool,
) -> TvStatus {
    guard(|| {
        if episode.is_null() || out.is_null() {
            return fail(TvStatus::NullPointer, "episode or out is null");
        }
        let name = match str_arg(verb, "verb") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let Ok(v) = name.parse::<Verb>() else {
            return fail(TvStatus::InvalidArgument, format!("unknown verb {name}"));
        };
        let ep = &*episode;
        let Some(clip) = Clip::at(&ep.inner, start) else {
            return fail(TvStatus::OutOfRange, format!("clip at {start} does not fit the episode"));
        };
        *out = label_clip(&clip, v, &OracleConfig::default());
        TvStatus::Ok
    })
}

/// Average precision of `n` scores against 0/1 labels; ties keep input order.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements and `out` to
/// writable storage.
#[no_mangle]
pub unsafe extern "C" fn tv_average_precision(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> TvStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return fail(TvStatus::NullPointer, "scores, labels or out is null");
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&x| x != 0).collect();
        match average_precision(s, &l) {
            Ok(ap) => {
                *out = ap;
                TvStatus::Ok
            }
            Err(EvalError::NoPositives) => fail(TvStatus::NoPositives, "no positive labels"),
            Err(e) => fail(TvStatus::InvalidArgument, e.to_string()),
        }
    })
}
