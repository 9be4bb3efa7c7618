use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use siren_core::scene_sim::io::write_wav;
use siren_core::scene_sim::SAMPLE_RATE;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn siren(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siren"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn tone_wav(path: &Path, channels: usize, seconds: f64) {
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let ch: Vec<f32> = (0..n)
        .map(|i| 0.1 * (i as f32 * 1000.0 * std::f32::consts::TAU / SAMPLE_RATE as f32).sin())
        .collect();
    write_wav(path, &vec![ch; channels]).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(siren(&["--help"]).status.code(), Some(0));
    assert_eq!(siren(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(siren(&[]).status.code(), Some(1));
    assert_eq!(siren(&["simulate"]).status.code(), Some(1));
    assert_eq!(siren(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "out_dir = \"x\"\nbogus = 3\n");
    let o = siren(&["simulate", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_two() {
    let o = siren(&["simulate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn short_session_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "[[simulate.batches]]\nscenario = \"intersection\"\nseed_start = 1\nduration = 4.0\n\n\
         [[simulate.batches]]\nscenario = \"negative_only\"\nseed_start = 2\nduration = 1.0\n",
    );
    let o = siren(&["simulate", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn simulate_is_deterministic_and_seed_shifts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[[simulate.batches]]\nscenario = \"intersection\"\nseed_start = 5\nduration = 2.0\n",
    );
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--config", path(&cfg), "--out", path(&out)];
        args.extend_from_slice(extra);
        let o = siren(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out.join("sessions")
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--seed", "3"]);
    let wav = |d: &Path, tag: &str| fs::read(d.join(tag).join("audio.wav")).unwrap();
    assert_eq!(wav(&a, "intersection-0005"), wav(&b, "intersection-0005"));
    assert!(c.join("intersection-0008").is_dir());
    assert_ne!(wav(&a, "intersection-0005"), wav(&c, "intersection-0008"));
}

#[test]
fn smoke_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = smoke_config();
    let step = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--config", path(&cfg), "--out", path(&out)]);
        let o = siren(&all);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    step(&["simulate"]);
    step(&["label"]);
    assert!(out.join("labels/labels.txt").is_file());

    step(&["train"]);
    let mut model_files: Vec<String> = fs::read_dir(out.join("model"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    model_files.sort();
    assert_eq!(model_files, ["best.ckpt", "history.csv"]);
    let history = fs::read_to_string(out.join("model/history.csv")).unwrap();
    assert!(history.starts_with("epoch,lr,train_loss,"));
    assert_eq!(history.lines().count(), 3);

    let summary = step(&["eval"]);
    assert!(summary.contains("latency_median_ms"), "{summary}");
    let metrics = fs::read_to_string(out.join("eval/metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "metric,0-10,10-20,20-30,30-40,40-50,50-60,60-70,70-80,80-90,90-100"
    );
    for f in ["summary.txt", "angle_box.svg", "distance_box.svg"] {
        assert!(out.join("eval").join(f).is_file(), "{f}");
    }
    let ckpt = out.join("model/best.ckpt");

    let o = siren(&["eval", "--config", path(&cfg), "--out", path(&out), "--threshold", "1.5"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    // 10 s of audio at the default 1.5 s window and 0.17 s stride: 51 ticks
    let wav = dir.path().join("ten.wav");
    tone_wav(&wav, 8, 10.0);
    let records = dir.path().join("infer.txt");
    let o = siren(&[
        "infer", "--config", path(&cfg), "--checkpoint", path(&ckpt), "--out", path(&records), path(&wav),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&records).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# t p_siren theta_deg distance_m latency_ms"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 51);
    assert!((rows[0][0] - 1.5).abs() < 1e-9);
    for r in &rows {
        assert_eq!(r.len(), 5);
        assert!((0.0..=1.0).contains(&r[1]));
        assert!((-180.0..=180.0).contains(&r[2]));
        assert!(r[3] >= 0.0);
    }
    assert!(stderr(&o).contains("51 ticks"), "{}", stderr(&o));

    let stereo = dir.path().join("stereo.wav");
    tone_wav(&stereo, 2, 3.0);
    let o = siren(&["infer", "--config", path(&cfg), "--checkpoint", path(&ckpt), path(&stereo)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = siren(&["infer", "--config", path(&cfg), "--checkpoint", path(&dir.path().join("none.ckpt")), path(&wav)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
