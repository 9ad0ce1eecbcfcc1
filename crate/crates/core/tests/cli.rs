use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn edvo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edvo")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, frames: usize, seed: u64) {
    let o = edvo(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--frames",
        &frames.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_writes_a_tum_directory_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 10, 4);
    synth(&b, 10, 4);
    for sub in ["rgb", "depth"] {
        assert_eq!(fs::read_dir(a.join(sub)).unwrap().count(), 10);
    }
    let gt = fs::read_to_string(a.join("groundtruth.txt")).unwrap();
    assert_eq!(gt.lines().filter(|l| !l.starts_with('#')).count(), 10);
    for file in ["rgb.txt", "depth.txt", "groundtruth.txt", "camera.txt"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let mut names: Vec<_> = fs::read_dir(a.join("rgb")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        for sub in ["rgb", "depth"] {
            assert_eq!(fs::read(a.join(sub).join(&name)).unwrap(), fs::read(b.join(sub).join(&name)).unwrap());
        }
    }
}

#[test]
fn run_then_eval_recovers_the_synthetic_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("seq");
    synth(&dir, 40, 1);
    let est = tmp.path().join("est.txt");
    let diag = tmp.path().join("diag.csv");
    let o = edvo(&["run", p(&dir), "--out", p(&est), "--diag", p(&diag)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(&diag).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# edvo-diagnostics v"));
    assert_eq!(lines[1], "frame_ts,level0_iters,level1_iters,level2_iters,error,inliers,pixels,latency_ms,lost");
    assert_eq!(lines.len(), 2 + 40);

    let gt = dir.join("groundtruth.txt");
    let o = edvo(&["eval", "--gt", p(&gt), "--est", p(&est), "--metric", "ate"]);
    assert!(o.status.success());
    let ate: f64 = stdout(&o).trim().parse().unwrap();
    assert!(ate < 0.01, "ate {ate}");

    let samples = tmp.path().join("rpe.csv");
    let o = edvo(&["eval", "--gt", p(&gt), "--est", p(&est), "--delta", "0.5", "--csv", p(&samples)]);
    assert!(o.status.success());
    let text = stdout(&o);
    let printed = text.trim();
    assert_eq!(printed.split('.').nth(1).map(str::len), Some(5), "{printed}");
    assert!(fs::read_to_string(&samples).unwrap().starts_with("timestamp,translation_error,rotation_error"));

    let o = edvo(&["eval", "--gt", p(&gt), "--est", p(&gt)]);
    assert_eq!(stdout(&o).trim(), "0.00000");
}

#[test]
fn keyframe_one_and_zero_match_and_detectors_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("seq");
    synth(&dir, 6, 2);
    let run = |extra: &[&str], name: &str| {
        let out = tmp.path().join(format!("{name}.txt"));
        let diag = tmp.path().join(format!("{name}.csv"));
        let mut args = vec!["run", p(&dir), "--out", p(&out), "--diag", p(&diag)];
        args.extend_from_slice(extra);
        let o = edvo(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read_to_string(out).unwrap(), fs::read_to_string(diag).unwrap())
    };
    let (k0, _) = run(&["--keyframe", "0"], "k0");
    let (k1, _) = run(&["--keyframe", "1"], "k1");
    assert_eq!(k0, k1);

    let pixels = |csv: &str| -> Vec<String> { csv.lines().skip(2).map(|l| l.split(',').nth(6).unwrap().to_string()).collect() };
    let (_, canny) = run(&["--edge", "canny"], "canny");
    let (_, sobel) = run(&["--edge", "sobel"], "sobel");
    assert_ne!(pixels(&canny), pixels(&sobel));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("seq");
    synth(&dir, 5, 3);
    let cfg = tmp.path().join("edvo.cfg");
    fs::write(&cfg, "# frame to frame with Sobel\nedge = sobel\nkeyframe = 0\n").unwrap();
    let out = |name: &str, extra: &[&str]| {
        let path = tmp.path().join(name);
        let mut args = vec!["run", p(&dir), "--config", p(&cfg), "--out", p(&path)];
        args.extend_from_slice(extra);
        assert!(edvo(&args).status.success());
        fs::read_to_string(path).unwrap()
    };
    let from_file = out("file.txt", &[]);
    let overridden = out("flag.txt", &["--edge", "canny", "--keyframe", "0"]);
    let explicit = {
        let path = tmp.path().join("explicit.txt");
        assert!(edvo(&["run", p(&dir), "--keyframe", "0", "--out", p(&path)]).status.success());
        fs::read_to_string(path).unwrap()
    };
    assert_eq!(overridden, explicit);
    assert_ne!(from_file, explicit);

    fs::write(&cfg, "speed = 11\n").unwrap();
    assert_eq!(edvo(&["run", p(&dir), "--config", p(&cfg)]).status.code(), Some(1));
}

#[test]
fn ablate_emits_one_row_per_mode_and_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("seq");
    synth(&dir, 8, 1);
    let csv = tmp.path().join("ablation.csv");
    let o = edvo(&["ablate", p(&dir), "--fractions", "0.5,1.0", "--runs", "2", "--delta", "0.1", "--out", p(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(text.lines().next().unwrap(), "mode,fraction,seed_count,rpe_mps,pixels_mean,latency_ms_mean");
    assert_eq!(rows.len(), 4);
    let px = |mode: &str, f: &str| -> f64 {
        rows.iter().find(|r| r[0] == mode && r[1] == f).unwrap()[4].parse().unwrap()
    };
    assert_eq!(px("edges-subset", "1"), px("random-pixels", "1"));
    assert!((px("edges-subset", "0.5") - px("edges-subset", "1") / 2.0).abs() <= 1.0);
    assert!(rows.iter().all(|r| r[2] == "2"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    assert_eq!(edvo(&[]).status.code(), Some(1));
    assert_eq!(edvo(&["run"]).status.code(), Some(1));
    assert_eq!(edvo(&["run", p(&missing)]).status.code(), Some(2));
    assert_eq!(edvo(&["eval", "--gt", p(&missing), "--est", p(&missing)]).status.code(), Some(2));

    // Two trajectories with no common timestamps.
    let (a, b) = (tmp.path().join("a.txt"), tmp.path().join("b.txt"));
    fs::write(&a, "0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n").unwrap();
    fs::write(&b, "50 0 0 0 0 0 0 1\n51 0 0 0 0 0 0 1\n").unwrap();
    let o = edvo(&["eval", "--gt", p(&a), "--est", p(&b)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap"));

    // A featureless sequence: every frame is lost, nothing is tracked.
    let dir = tmp.path().join("flat");
    let seq = {
        use edvo::imaging::{DepthImage, GrayImage};
        use edvo::tracker::Frame;
        let k = edvo::synthetic::benchmark_intrinsics();
        let frames = (0..3)
            .map(|i| {
                Frame::new(
                    i as f64 / 30.0,
                    GrayImage::constant(k.width, k.height, 0.5),
                    DepthImage::constant(k.width, k.height, 2.0),
                )
                .unwrap()
            })
            .collect();
        edvo::sequence::InMemorySequence::new(k, frames, None).unwrap()
    };
    edvo::synthetic::write_tum_sequence(&seq, &dir).unwrap();
    let out = tmp.path().join("flat.txt");
    assert_eq!(edvo(&["run", p(&dir), "--out", p(&out)]).status.code(), Some(3));
}
