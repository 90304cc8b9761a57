use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use trajverb_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tv_last_error()) }.to_string_lossy().into_owned()
}

fn generate(seed: u64, scene: Option<&str>) -> (TvStatus, *mut TvEpisode) {
    let json = scene.map(|s| CString::new(s).unwrap());
    let mut ep = std::ptr::null_mut();
    let status = unsafe { tv_episode_generate(seed, json.as_ref().map_or(std::ptr::null(), |c| c.as_ptr()), &mut ep) };
    (status, ep)
}

#[test]
fn episode_handle_round_trip() {
    let (status, ep) = generate(7, None);
    assert_eq!(status, TvStatus::Ok);
    let expected = trajverb::sim::generate_episode(7, &Default::default()).unwrap();
    let mut n = 0usize;
    assert_eq!(unsafe { tv_episode_frame_count(ep, &mut n) }, TvStatus::Ok);
    assert_eq!(n, expected.frames.len());
    let mut f = TvFrame::default();
    for i in [0, n / 2, n - 1] {
        assert_eq!(unsafe { tv_episode_frame(ep, i, &mut f) }, TvStatus::Ok);
        assert_eq!(f.t_index, expected.frames[i].t_index);
        assert_eq!(f.obj_pos, expected.frames[i].obj_pos.to_array());
        assert_eq!(f.obj_rot, expected.frames[i].obj_rot.to_array());
    }
    assert_eq!(unsafe { tv_episode_frame(ep, n, &mut f) }, TvStatus::OutOfRange);
    assert!(last_error().contains("out of range"));

    let verb = CString::new("fall").unwrap();
    let mut label = false;
    assert_eq!(unsafe { tv_episode_label_clip(ep, 0, verb.as_ptr(), &mut label) }, TvStatus::Ok);
    let clip = trajverb::oracle::Clip::at(&expected, 0).unwrap();
    assert_eq!(label, trajverb::oracle::label_clip(&clip, trajverb::oracle::Verb::Fall, &Default::default()));
    let bad = CString::new("hover").unwrap();
    assert_eq!(unsafe { tv_episode_label_clip(ep, 0, bad.as_ptr(), &mut label) }, TvStatus::InvalidArgument);
    unsafe { tv_episode_free(ep) };
    unsafe { tv_episode_free(std::ptr::null_mut()) };
}

#[test]
fn scene_json_is_validated() {
    let (status, ep) = generate(1, Some(r#"{"friction_mu": 0.1, "object_shape": "cube"}"#));
    assert_eq!(status, TvStatus::Ok);
    unsafe { tv_episode_free(ep) };
    let (status, ep) = generate(1, Some(r#"{"friction_mu": 5.0}"#));
    assert_eq!(status, TvStatus::InvalidConfig);
    assert!(ep.is_null());
    assert!(last_error().contains("friction_mu"));
    let (status, _) = generate(1, Some("{not json"));
    assert_eq!(status, TvStatus::InvalidConfig);
}

#[test]
fn null_pointers_are_reported() {
    let mut n = 0usize;
    assert_eq!(unsafe { tv_episode_frame_count(std::ptr::null(), &mut n) }, TvStatus::NullPointer);
    assert_eq!(unsafe { tv_episode_generate(1, std::ptr::null(), std::ptr::null_mut()) }, TvStatus::NullPointer);
    let mut ap = 0.0;
    assert_eq!(unsafe { tv_average_precision(std::ptr::null(), std::ptr::null(), 0, &mut ap) }, TvStatus::NullPointer);
}

#[test]
fn average_precision_matches_core() {
    let scores = [0.9, 0.5, 0.1];
    let labels = [1u8, 0, 1];
    let mut ap = 0.0;
    assert_eq!(unsafe { tv_average_precision(scores.as_ptr(), labels.as_ptr(), 3, &mut ap) }, TvStatus::Ok);
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    let none = [0u8; 3];
    assert_eq!(unsafe { tv_average_precision(scores.as_ptr(), none.as_ptr(), 3, &mut ap) }, TvStatus::NoPositives);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/trajverb.h")).unwrap();
    for name in [
        "tv_last_error",
        "tv_episode_generate",
        "tv_episode_free",
        "tv_episode_frame_count",
        "tv_episode_frame",
        "tv_episode_label_clip",
        "tv_average_precision",
        "typedef struct TvEpisode TvEpisode",
        "TV_STATUS_NO_POSITIVES = 6",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compile the C smoke program against the static library when a C
/// compiler is available.
#[test]
fn c_program_links_and_runs() {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps.parent().unwrap().join("libtrajverb_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or cc not available");
        return;
    }
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let exe = dir.join("trajverb_smoke");
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.trim_end().ends_with("0.833333"), "{text}");
}
