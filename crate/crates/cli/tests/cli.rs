use std::path::Path;
use std::process::{Command, Output};

use quatmotion::motiondata::{load_bvh, load_dataset, save_bvh, save_dataset, synth_corpus, MotionClip};
use quatmotion::rotmath::UnitQuaternion;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quatmotion")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

fn corpus(dir: &Path, clips: usize, seconds: f64, rate: f64, seed: u64) {
    save_dataset(&synth_corpus(clips, seconds, rate, seed, 12).unwrap(), dir).unwrap();
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&["convert"])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["evaluate", "--checkpoint", "missing.ckpt", "--data", ".", "--out", s(&out)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn convert_downsamples_and_round_trips_bvh() {
    let tmp = tempfile::tempdir().unwrap();
    let bvh_dir = tmp.path().join("bvh");
    std::fs::create_dir(&bvh_dir).unwrap();
    let clip = synth_corpus(1, 2.0, 120.0, 3, 12).unwrap().remove(0);
    save_bvh(&clip, bvh_dir.join("walk_1.bvh")).unwrap();

    let out = tmp.path().join("c");
    let o = run(&["convert", "--in", s(&bvh_dir), "--out", s(&out), "--downsample", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("manifest.json").exists());
    let clips = load_dataset(&out).unwrap();
    assert_eq!(clips.len(), 4);
    for c in &clips {
        assert_eq!((c.frame_rate, c.action.as_str()), (30.0, "walk_1"));
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["clips"], 4);

    let back = tmp.path().join("b");
    let o = run(&["convert", "--in", s(&out), "--out", s(&back), "--format", "bvh", "--mirror", "auto"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let again = load_bvh(back.join("clip_00000.bvh")).unwrap();
    let original = &clips[0];
    let pa = again.positions().unwrap();
    let pb = original.positions().unwrap();
    let worst = pa
        .iter()
        .flatten()
        .zip(pb.iter().flatten())
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
    assert_eq!(std::fs::read_dir(&back).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bvh")).count(), 8);
}

#[test]
fn empty_input_reports_no_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = run(&["convert", "--in", s(&empty), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no clips found"));
}

#[test]
fn bad_bvh_reports_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("bad.bvh");
    write(&f, "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0\n");
    let o = run(&["convert", "--in", s(&f), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("bad.bvh") && err.contains("line"), "{err}");
}

#[test]
fn missing_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    write(&cfg, "data = nowhere\nout = out\nepochs = 1\n");
    let o = run(&["train-pose", "--config", s(&cfg)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists());
    write(&cfg, "data = nowhere\nout = out\nepochz = 1\n");
    let o = run(&["train-pose", "--config", s(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochz"));
}

fn log_without_wall_time(path: &Path) -> Vec<Vec<String>> {
    csv_rows(path)
        .into_iter()
        .map(|mut r| {
            r.remove(6);
            r
        })
        .collect()
}

#[test]
fn training_resumes_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, 4.0, 25.0, 1);
    let cfg = |epochs: usize| {
        format!(
            "data = data\nepochs = {epochs}\nbatch_size = 4\ncondition = 6\npredict = 4\nepisodes_per_epoch = 8\nvalidation = data\nvalidation_episodes = 4\nseed = 3\n"
        )
    };
    write(&tmp.path().join("two.cfg"), &cfg(2));
    write(&tmp.path().join("one.cfg"), &cfg(1));
    let full = tmp.path().join("full");
    let o = run(&["train-pose", "--config", s(&tmp.path().join("two.cfg")), "--out", s(&full)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["manifest.json", "pose.ckpt", "train_log.csv"] {
        assert!(full.join(f).exists(), "{f}");
    }

    let part = tmp.path().join("part");
    assert_eq!(code(&run(&["train-pose", "--config", s(&tmp.path().join("one.cfg")), "--out", s(&part)])), 0);
    assert_eq!(csv_rows(&part.join("train_log.csv")).len(), 1);
    let resumed = tmp.path().join("resumed");
    let o = run(&[
        "train-pose",
        "--config",
        s(&tmp.path().join("two.cfg")),
        "--out",
        s(&resumed),
        "--resume",
        s(&part.join("pose.ckpt")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(log_without_wall_time(&resumed.join("train_log.csv")), log_without_wall_time(&full.join("train_log.csv")));
    let tensors = |d: &Path| quatmotion::models::Checkpoint::load(&d.join("pose.ckpt")).unwrap().tensors;
    assert_eq!(tensors(&resumed), tensors(&full));

    // Prediction and evaluation with the trained model.
    let pred = tmp.path().join("pred");
    let o = run(&["predict", "--checkpoint", s(&full.join("pose.ckpt")), "--data", s(&data), "--horizon-ms", "400", "--out", s(&pred), "--bvh"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&pred.join("metrics.csv"));
    assert_eq!(rows.len(), 4 * 10);
    assert!(pred.join("predictions/clip_00000.qmc").exists() && pred.join("predictions/clip_00000.bvh").exists());
    let eval = tmp.path().join("eval");
    let o = run(&["evaluate", "--checkpoint", s(&full.join("pose.ckpt")), "--data", s(&data), "--protocol", "S=2", "--out", s(&eval)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!csv_rows(&eval.join("report.csv")).is_empty());

    // A different skeleton is refused.
    let other = tmp.path().join("other");
    save_dataset(&[quatmotion::motiondata::synth_chain(4, 100, 25.0, 0).unwrap()], &other).unwrap();
    let o = run(&["predict", "--checkpoint", s(&full.join("pose.ckpt")), "--data", s(&other), "--horizon-ms", "80", "--out", s(&tmp.path().join("p2"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("skeleton mismatch"), "{}", stderr(&o));
}

#[test]
fn zero_velocity_on_constant_clips_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let base = synth_corpus(1, 1.0, 25.0, 0, 12).unwrap().remove(0);
    let q = UnitQuaternion::from_axis_angle([0.0, 1.0, 0.0], 0.7);
    let frames = 90;
    let constant = MotionClip::new(
        base.skeleton.clone(),
        25.0,
        vec![[0.0, 1.0, 0.0]; frames],
        vec![vec![q; base.skeleton.len()]; frames],
    )
    .unwrap()
    .with_labels("s", "idle");
    save_dataset(&[constant], &data).unwrap();
    for kind in ["zerovel", "runavg2", "runavg4"] {
        let out = tmp.path().join(kind);
        let o = run(&["baseline", "--kind", kind, "--data", s(&data), "--out", s(&out), "--protocol", "proposed"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let rows = csv_rows(&out.join("report.csv"));
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!(r[0], "idle");
            assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
            assert_eq!(r[5], "128");
        }
        assert!(out.join("manifest.json").exists() && out.join("report.txt").exists());
    }
    let o = run(&["baseline", "--kind", "zerovel", "--data", s(&data), "--out", s(&tmp.path().join("x")), "--protocol", "S=0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes_on_a_fresh_desk_model() {
    let tmp = tempfile::tempdir().unwrap();
    let t0 = std::time::Instant::now();
    let o = run(&["gradcheck", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(t0.elapsed().as_secs() < 60);
    let rows = csv_rows(&tmp.path().join("gradcheck.csv"));
    assert!(rows.len() > 30);
    assert!(rows.iter().all(|r| r[5] == "true"));
}

#[test]
fn generation_covers_the_spline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 6, 8.0, 30.0, 7);
    write(
        &tmp.path().join("pose.cfg"),
        "data = data\nout = pose\ncontrolled = true\nloss = positional\nepochs = 3\nepisodes_per_epoch = 16\n",
    );
    write(&tmp.path().join("pace.cfg"), "data = data\nout = pace\nepochs = 5\n");
    let o = run(&["train-pose", "--config", s(&tmp.path().join("pose.cfg"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["train-pace", "--config", s(&tmp.path().join("pace.cfg"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&tmp.path().join("pace/pace_log.csv")).len(), 5);
    let spline = tmp.path().join("line.csv");
    write(&spline, "x,z\n0,0\n0,5\n0,10\n");
    let out = tmp.path().join("gen");
    let o = run(&[
        "generate",
        "--pose",
        s(&tmp.path().join("pose/pose.ckpt")),
        "--pace",
        s(&tmp.path().join("pace/pace.ckpt")),
        "--spline",
        s(&spline),
        "--speed",
        "1.4",
        "--frames",
        "214",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--bvh",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = &csv_rows(&out.join("metrics.csv"))[0];
    let length: f64 = m[1].parse().unwrap();
    let travelled: f64 = m[2].parse().unwrap();
    // The fitted spline drops any leftover shorter than one segment.
    assert!(length > 9.5 && length <= 10.0 + 1e-9, "{length}");
    assert!((travelled - length).abs() <= 0.05 * length, "travelled {travelled} of {length}");
    assert_eq!(csv_rows(&out.join("trajectory.csv")).len(), 214);
    assert!(out.join("generated.qmc").exists() && out.join("generated.bvh").exists());
}
