use std::path::Path;
use std::process::{Command, Output};

use stdepth::dataset::Manifest;
use stdepth::geometry::PoseSE3;
use stdepth::grid::Grid;
use stdepth::io::{read_json, read_npy, read_pfm, write_npy, write_trajectory, TrajectoryFormat};
use stdepth::metrics::Trajectory;

fn stdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stdepth"))
        .args(args)
        .env_remove("STDEPTH_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_RUN: &str = "seed = 5\nscene = slanted\nwidth = 20\nheight = 14\nsteps = 6\nlr = 0.01\n";

#[test]
fn gen_writes_manifest_and_consistent_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    ok(&stdepth(&["gen", "--scene", "two-planes", "--seed", "2", "--width", "24", "--height", "16", "--out", p(&out)]));
    let m: Manifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!((m.scene.width, m.scene.height), (24, 16));
    for f in &m.files {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let z = read_npy(&out.join("gt_depth.npy")).unwrap();
    let d = read_npy(&out.join("gt_disp_l.npy")).unwrap();
    let bf = m.baseline * m.gt_intrinsics.fx;
    for (zi, di) in z.data().iter().zip(d.data()) {
        assert!((di - bf / zi).abs() <= 1e-9 * di.abs().max(1.0), "{di} vs {}", bf / zi);
    }
    let zp = read_pfm(&out.join("gt_depth.pfm")).unwrap();
    for (a, b) in zp.data().iter().zip(z.data()) {
        assert!((a - b).abs() <= 1e-6 * b);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    // Same output paths for both runs, since the saved config records them.
    let o = dir.path().join("run");
    for run in ["a", "b"] {
        ok(&stdepth(&["--threads", "1", "gen", "--seed", "5", "--width", "20", "--height", "14", "--out", p(&o.join("gen"))]));
        ok(&stdepth(&["--threads", "1", "optimize", p(&cfg), "--output", p(&o.join("opt"))]));
        std::fs::rename(&o, dir.path().join(run)).unwrap();
    }
    let mut compared = 0;
    for sub in ["gen", "opt"] {
        let a = dir.path().join("a").join(sub);
        for entry in std::fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            let x = std::fs::read(a.join(&name)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(sub).join(&name)).unwrap();
            assert!(x == y, "{sub}/{name:?} differs");
            compared += 1;
        }
    }
    assert!(compared >= 20);
}

#[test]
fn optimize_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let o = dir.path().join("out");
    ok(&stdepth(&["optimize", p(&cfg), "--output", p(&o)]));
    for f in ["config.txt", "report.json", "trace.csv", "pose.json", "intrinsics.json", "depth.pfm", "depth.npy", "depth.png"] {
        assert!(o.join(f).is_file(), "missing {f}");
    }
    let trace = std::fs::read_to_string(o.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("step,total,photo_left"));
    assert_eq!(lines.count(), 6);
    let report: serde_json::Value = read_json(&o.join("report.json")).unwrap();
    assert_eq!(report["optimization"]["status"]["status"], "completed");
    assert!(report["evaluation"]["depth"]["abs_rel"].is_f64());
    // The saved config reproduces itself.
    let saved = std::fs::read_to_string(o.join("config.txt")).unwrap();
    let reparsed = stdepth::config::RunConfig::parse(&saved).unwrap();
    assert_eq!(reparsed.to_text(), saved);
}

#[test]
fn optimize_reads_generated_input() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("gen");
    ok(&stdepth(&["gen", "--scene", "plane", "--seed", "1", "--width", "16", "--height", "12", "--out", p(&g)]));
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nsteps = 2\n").unwrap();
    let o = dir.path().join("out");
    ok(&stdepth(&["optimize", p(&cfg), "--input", p(&g), "--output", p(&o)]));
    let depth = read_npy(&o.join("depth.npy")).unwrap();
    assert_eq!((depth.width(), depth.height()), (16, 12));
}

#[test]
fn frozen_truth_gives_constant_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "seed = 0\nwidth = 20\nheight = 14\nsteps = 5\ninit_from_truth = true\n\
         freeze_disparity = true\nfreeze_pose = true\nfreeze_intrinsics = true\n",
    )
    .unwrap();
    let o = dir.path().join("out");
    ok(&stdepth(&["optimize", p(&cfg), "--output", p(&o)]));
    let trace = std::fs::read_to_string(o.join("trace.csv")).unwrap();
    let totals: Vec<&str> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(totals.len(), 5);
    assert!(totals.windows(2).all(|w| w[0] == w[1]), "{totals:?}");
}

#[test]
fn env_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let o = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_stdepth"))
        .args(["optimize", p(&cfg), "--output", p(&o)])
        .env("STDEPTH_STEPS", "3")
        .env("STDEPTH_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    let saved = std::fs::read_to_string(o.join("config.txt")).unwrap();
    assert!(saved.lines().any(|l| l == "steps = 3"), "{saved}");
}

#[test]
fn eval_depth_on_scaled_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let gt = Grid::from_fn(5, 4, 1, |u, v, _| 2.0 + u as f64 + 0.5 * v as f64);
    let pred = gt.map(|z| 1.3 * z);
    write_npy(&dir.path().join("gt.npy"), &gt).unwrap();
    write_npy(&dir.path().join("pred.npy"), &pred).unwrap();
    let o = dir.path().join("m");
    let stdout = ok(&stdepth(&[
        "eval-depth",
        p(&dir.path().join("pred.npy")),
        p(&dir.path().join("gt.npy")),
        "--out",
        p(&o),
    ]));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["abs_rel"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(v["delta1"].as_f64().unwrap(), 0.0);
    assert_eq!(v["delta2"].as_f64().unwrap(), 1.0);
    let csv = std::fs::read_to_string(o.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("abs_rel,sq_rel,"));
    assert!(o.join("metrics.json").is_file());

    let scaled = ok(&stdepth(&[
        "eval-depth",
        p(&dir.path().join("pred.npy")),
        p(&dir.path().join("gt.npy")),
        "--median-scale",
    ]));
    let v: serde_json::Value = serde_json::from_str(&scaled).unwrap();
    assert!(v["abs_rel"].as_f64().unwrap() < 1e-12);
}

#[test]
fn eval_pose_rigid_offset_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gt: Vec<PoseSE3> = (0..6)
        .map(|i| PoseSE3::new([0.0, 0.05 * i as f64, 0.01], [i as f64, 0.3 * (i * i) as f64, -0.2 * i as f64]))
        .collect();
    let offset = PoseSE3::new([0.1, -0.2, 0.3], [4.0, -1.0, 2.0]);
    let pred: Vec<PoseSE3> = gt.iter().map(|g| stdepth::geometry::pose_compose(&offset, g)).collect();
    let (a, b) = (dir.path().join("pred.txt"), dir.path().join("gt.txt"));
    write_trajectory(&a, &Trajectory::from_poses(pred), TrajectoryFormat::TimestampQuaternion).unwrap();
    write_trajectory(&b, &Trajectory::from_poses(gt), TrajectoryFormat::Matrix3x4).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&stdepth(&["eval-pose", p(&a), p(&b)]))).unwrap();
    assert!(v["t_ate"].as_f64().unwrap() < 1e-9, "{v}");
}

#[test]
fn observability_reports_identifiability() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.json");
    let base = ["observability", "--fx", "300", "--width", "512", "--height", "128", "--trials", "6"];
    let mut args = base.to_vec();
    args.extend(["--rotation", "0.03,-0.05,0.01", "--out", p(&path)]);
    let v: serde_json::Value = serde_json::from_str(&ok(&stdepth(&args))).unwrap();
    assert_eq!(v["uniqueness"]["status"], "identifiable");
    assert!(v["conjugacy"]["residual_rotation"].as_f64().unwrap() == 0.0);
    let dfx = v["focal_tolerance"]["delta_fx"].as_f64().unwrap();
    assert!((dfx - 2.0 * 300.0 * 300.0 / (512.0 * 512.0 * 0.05)).abs() < 1e-9);
    let saved: serde_json::Value = read_json(&path).unwrap();
    assert_eq!(saved, v);

    let mut args = base.to_vec();
    args.extend(["--rotation", "0,0,0"]);
    let v: serde_json::Value = serde_json::from_str(&ok(&stdepth(&args))).unwrap();
    assert_eq!(v["uniqueness"]["status"], "not_identifiable");
    assert!(v["focal_tolerance"]["delta_fx"].is_null());
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| stdepth(args).status.code().unwrap();

    assert_eq!(code(&["optimize", p(&dir.path().join("missing.cfg"))]), 4);
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "seed = 1\nlearning_rate = 3\n").unwrap();
    assert_eq!(code(&["optimize", p(&bad)]), 2);
    std::fs::write(&bad, "steps = 3\n").unwrap();
    assert_eq!(code(&["optimize", p(&bad)]), 2);
    assert_eq!(code(&["gen", "--seed", "1", "--scene", "moon", "--out", p(dir.path())]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["--threads", "0", "gen", "--seed", "1", "--out", p(dir.path())]), 2);

    let (a, b) = (dir.path().join("a.npy"), dir.path().join("b.npy"));
    write_npy(&a, &Grid::filled(3, 2, 1, 1.0)).unwrap();
    write_npy(&b, &Grid::filled(2, 3, 1, 1.0)).unwrap();
    assert_eq!(code(&["eval-depth", p(&a), p(&b)]), 4);
    assert_eq!(code(&["eval-depth", p(&a), p(&a), "--cap", "0.5"]), 3);
    std::fs::write(&b, b"not an npy file").unwrap();
    assert_eq!(code(&["eval-depth", p(&a), p(&b)]), 4);
}

#[test]
fn joint_run_reports_intrinsics_within_focal_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 2\nscene = slanted\nsteps = 40\nlr = 0.01\n").unwrap();
    let o = dir.path().join("out");
    ok(&stdepth(&["optimize", p(&cfg), "--output", p(&o)]));
    let r: serde_json::Value = read_json(&o.join("report.json")).unwrap();
    let err = r["evaluation"]["intrinsics_abs_error"][0].as_f64().unwrap();
    let tol = r["evaluation"]["focal_tolerance"]["delta_fx"].as_f64().unwrap();
    assert!(err < tol, "fx error {err} vs tolerance {tol}");
    let k: stdepth::geometry::Intrinsics = read_json(&o.join("intrinsics.json")).unwrap();
    assert!((k.fx - r["gt_intrinsics"]["fx"].as_f64().unwrap()).abs() == err);
}
