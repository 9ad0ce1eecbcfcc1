use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use edvo::synthetic::benchmark_sequence;
use edvo_ffi::*;

fn intrinsics(k: &edvo::geometry::CameraIntrinsics) -> EdvoIntrinsics {
    EdvoIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width as u32,
        height: k.height as u32,
    }
}

fn last_error() -> String {
    let p = edvo_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn stamped(traj: &edvo::evaluation::Trajectory) -> Vec<EdvoStampedPose> {
    traj.entries()
        .iter()
        .map(|(t, p)| EdvoStampedPose {
            timestamp: *t,
            pose: EdvoPose {
                translation: [p.translation.x, p.translation.y, p.translation.z],
                quaternion: p.quaternion(),
            },
        })
        .collect()
}

#[test]
fn tracks_synthetic_sequence_through_the_c_abi() {
    let seq = benchmark_sequence(12, 0.1, 0.0, 2).unwrap();
    let gt = seq.groundtruth.as_ref().unwrap();
    let k = intrinsics(&seq.intrinsics);
    let cfg = edvo_config_default();
    assert_eq!(cfg.keyframe_interval, 4);
    assert!(cfg.use_motion_prior);

    let mut tracker: *mut EdvoTracker = ptr::null_mut();
    assert_eq!(unsafe { edvo_tracker_new(&k, &cfg, &mut tracker) }, EdvoStatus::Ok);
    assert!(!tracker.is_null());

    let mut estimated = Vec::new();
    for frame in &seq.frames {
        let gray: Vec<f32> = frame.gray.data().iter().map(|v| *v as f32).collect();
        let depth: Vec<f32> = frame.depth.data().iter().map(|v| *v as f32).collect();
        let mut out = std::mem::MaybeUninit::<EdvoFrameResult>::uninit();
        let status = unsafe {
            edvo_tracker_track(
                tracker,
                frame.timestamp,
                gray.as_ptr(),
                depth.as_ptr(),
                k.width,
                k.height,
                out.as_mut_ptr(),
            )
        };
        assert_eq!(status, EdvoStatus::Ok);
        let out = unsafe { out.assume_init() };
        assert!(!out.lost);
        estimated.push(EdvoStampedPose {
            timestamp: frame.timestamp,
            pose: out.world_pose,
        });
    }
    unsafe { edvo_tracker_free(tracker) };

    // Frame i's estimate against ground truth re-expressed relative to frame 0.
    let first = gt.entries()[0].1.inverse();
    for ((_, g), e) in gt.entries().iter().zip(&estimated) {
        let g = &first * g;
        let t = nalgebra::Vector3::from(e.pose.translation);
        assert!((t - g.translation).norm() < 2e-3, "{t:?} vs {:?}", g.translation);
    }

    let gt_c = stamped(gt);
    let mut ate = f64::NAN;
    assert_eq!(
        unsafe { edvo_ate(gt_c.as_ptr(), gt_c.len(), estimated.as_ptr(), estimated.len(), &mut ate) },
        EdvoStatus::Ok
    );
    assert!(ate < 1e-3, "ate {ate}");
}

#[test]
fn metrics_match_the_library() {
    let seq = benchmark_sequence(40, 0.1, 0.0, 1).unwrap();
    let gt = seq.groundtruth.as_ref().unwrap();
    let drift = edvo::geometry::PoseSE3::from_translation(nalgebra::Vector3::new(0.01, 0.0, 0.0));
    let est = edvo::evaluation::Trajectory::new(
        gt.entries()
            .iter()
            .enumerate()
            .map(|(i, (t, p))| {
                let mut q = p * &drift;
                q.translation.x += 0.001 * i as f64;
                (*t, q)
            })
            .collect(),
    )
    .unwrap();
    let cfg = edvo::evaluation::EvalConfig {
        delta_t: 0.5,
        ..Default::default()
    };
    let want_rpe = edvo::evaluation::rpe(gt, &est, &cfg).unwrap().rmse;
    let want_ate = edvo::evaluation::ate(gt, &est, &Default::default()).unwrap().rmse;

    let (g, e) = (stamped(gt), stamped(&est));
    let (mut got_rpe, mut got_ate) = (0.0, 0.0);
    unsafe {
        assert_eq!(edvo_rpe(g.as_ptr(), g.len(), e.as_ptr(), e.len(), 0.5, &mut got_rpe), EdvoStatus::Ok);
        assert_eq!(edvo_ate(g.as_ptr(), g.len(), e.as_ptr(), e.len(), &mut got_ate), EdvoStatus::Ok);
    }
    // Quaternion round trips perturb the poses at the 1e-16 level.
    assert!((got_rpe - want_rpe).abs() < 1e-9);
    assert!((got_ate - want_ate).abs() < 1e-9);
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let k = EdvoIntrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 159.5,
        cy: 119.5,
        width: 320,
        height: 240,
    };
    unsafe {
        assert_eq!(edvo_tracker_new(&k, ptr::null(), ptr::null_mut()), EdvoStatus::NullPointer);
        assert!(last_error().contains("out"));

        let mut tracker: *mut EdvoTracker = ptr::null_mut();
        let bad = EdvoIntrinsics { fx: -1.0, ..k };
        assert_eq!(edvo_tracker_new(&bad, ptr::null(), &mut tracker), EdvoStatus::InvalidArgument);
        assert!(tracker.is_null());

        let cfg = EdvoConfig {
            pyramid_levels: 9,
            ..edvo_config_default()
        };
        assert_eq!(edvo_tracker_new(&k, &cfg, &mut tracker), EdvoStatus::InvalidArgument);
        assert!(last_error().contains("pyramid_levels"));

        assert_eq!(edvo_tracker_new(&k, ptr::null(), &mut tracker), EdvoStatus::Ok);
        let (w, h) = (k.width, k.height);
        let n = (w * h) as usize;
        let gray = vec![0.5f32; n];
        let depth = vec![1.0f32; n];
        let mut out = std::mem::zeroed::<EdvoFrameResult>();
        let status = edvo_tracker_track(tracker, 0.0, gray.as_ptr(), depth.as_ptr(), w, h, &mut out);
        assert_eq!(status, EdvoStatus::Ok, "{}", last_error());
        assert!(out.became_keyframe);
        assert_eq!(
            edvo_tracker_track(tracker, 0.1, gray.as_ptr(), depth.as_ptr(), w / 2, h / 2, &mut out),
            EdvoStatus::DimensionMismatch
        );
        assert_eq!(
            edvo_tracker_track(tracker, 0.1, ptr::null(), depth.as_ptr(), w, h, &mut out),
            EdvoStatus::NullPointer
        );
        let nan_depth = vec![f32::NAN; n];
        assert_eq!(
            edvo_tracker_track(tracker, 0.1, gray.as_ptr(), nan_depth.as_ptr(), w, h, &mut out),
            EdvoStatus::InvalidArgument
        );
        // A featureless frame is flagged lost, not an error.
        let status = edvo_tracker_track(tracker, 0.1, gray.as_ptr(), depth.as_ptr(), w, h, &mut out);
        assert_eq!(status, EdvoStatus::Ok, "{}", last_error());
        assert!(out.lost);
        edvo_tracker_free(tracker);
        edvo_tracker_free(ptr::null_mut());

        let mut rmse = 0.0;
        let one = [EdvoStampedPose {
            timestamp: 0.0,
            pose: EdvoPose {
                translation: [0.0; 3],
                quaternion: [0.0, 0.0, 0.0, 1.0],
            },
        }];
        let far = [EdvoStampedPose {
            timestamp: 100.0,
            ..one[0]
        }];
        assert_eq!(edvo_ate(one.as_ptr(), 1, far.as_ptr(), 1, &mut rmse), EdvoStatus::DataError);
        assert_eq!(edvo_rpe(ptr::null(), 3, one.as_ptr(), 1, 1.0, &mut rmse), EdvoStatus::NullPointer);
        let zero_q = [EdvoStampedPose {
            pose: EdvoPose {
                quaternion: [0.0; 4],
                ..one[0].pose
            },
            ..one[0]
        }];
        assert_eq!(edvo_ate(zero_q.as_ptr(), 1, one.as_ptr(), 1, &mut rmse), EdvoStatus::InvalidArgument);
    }
    let version = unsafe { CStr::from_ptr(edvo_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/edvo.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["edvo_tracker_new", "edvo_tracker_free", "edvo_tracker_track", "edvo_rpe", "edvo_ate", "EDVO_STATUS_OK"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"edvo.h\"\nint main(void) {\n  EdvoConfig c = edvo_config_default();\n  EdvoTracker *t = 0;\n  EdvoStatus s = edvo_tracker_new(0, &c, &t);\n  edvo_tracker_free(t);\n  return s == EDVO_STATUS_OK;\n}\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "C compiler rejected the header"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
