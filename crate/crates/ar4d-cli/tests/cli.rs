//! End-to-end exercises of the `ar4d` binary: exit codes, artifact layout,
//! render determinism, and the gradient audit.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ar4d_core::oracle::{SceneConfig, ScenePreset};
use ar4d_core::pipeline::{eval_png_path, RunConfig};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ar4d"))
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Three-frame static pulser at 16x16 with a handful of iterations per
/// stage: big enough to exercise every artifact, small enough to run in
/// well under a second per invocation.
fn mini_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::new(dir);
    c.seed = 11;
    c.scene = SceneConfig {
        preset: ScenePreset::Pulser,
        n_splats: 6,
        angular_velocity_deg: 10.0,
        amplitude: 0.0,
        phase: 0.0,
        frames: 3,
    };
    c.train_size = 16;
    c.eval_size = 16;
    c.stages.init.iters = 4;
    c.stages.generation.iters_per_frame = 10;
    c.stages.generation.mlp_lr.total_steps = 10;
    c.stages.refinement.iters = 10;
    c.stages.refinement.mlp_lr.total_steps = 10;
    c
}

fn write_config(config: &RunConfig, path: &Path) {
    fs::write(path, serde_json::to_string_pretty(config).unwrap()).unwrap();
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let mut v = serde_json::to_value(mini_config(&tmp.path().join("run"))).unwrap();
    v.as_object_mut().unwrap().insert("learning_rate_typo".into(), 1.0.into());
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, serde_json::to_string_pretty(&v).unwrap()).unwrap();

    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("learning_rate_typo"), "{}", stderr_of(&out));
}

#[test]
fn run_render_eval_roundtrip() {
    let tmp = TempDir::new().unwrap();
    let run_dir = tmp.path().join("run");
    let cfg = tmp.path().join("config.json");
    write_config(&mini_config(&run_dir), &cfg);

    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    for name in [
        "config.json",
        "stage1.cloud",
        "stage1_loss.csv",
        "frame_0002.cloud",
        "frame_0003.cloud",
        "refine.cloud",
        "refine.mlp",
        "refine_loss.csv",
        "metrics.csv",
    ] {
        assert!(run_dir.join(name).exists(), "{name} missing after run");
    }

    // A second run over the populated directory must refuse, not clobber.
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("already contains artifacts"), "{}", stderr_of(&out));

    // Rendering the same checkpoints twice yields byte-identical PNGs.
    let render_a = tmp.path().join("render_a");
    let render_b = tmp.path().join("render_b");
    for out_dir in [&render_a, &render_b] {
        let out = bin()
            .arg("render")
            .arg("--checkpoint-dir")
            .arg(&run_dir)
            .args(["--azimuths", "0,-45"])
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    }
    let mut pngs = 0;
    for k in 1..=3 {
        for az in [0.0, -45.0] {
            let a = fs::read(eval_png_path(&render_a, k, az)).unwrap();
            let b = fs::read(eval_png_path(&render_b, k, az)).unwrap();
            assert_eq!(a, b, "render of frame {k} az {az} not reproducible");
            pngs += 1;
        }
    }
    assert_eq!(pngs, 6, "expected frames x azimuths pngs");

    // Eval recomputes the metrics CSV on stdout, summary row included.
    let out = bin()
        .arg("eval")
        .arg("--run")
        .arg(&run_dir)
        .arg("--scene")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("frame,azimuth,psnr_db,ssim\n"), "{stdout}");
    assert!(stdout.contains("\nmean,all,"), "{stdout}");

    // A torn checkpoint is reported by name, not rendered.
    let victim = run_dir.join("refine.cloud");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0..4].copy_from_slice(b"XXXX");
    fs::write(&victim, &bytes).unwrap();
    let out = bin()
        .arg("render")
        .arg("--checkpoint-dir")
        .arg(&run_dir)
        .args(["--azimuths", "0"])
        .arg("--out")
        .arg(tmp.path().join("render_c"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("bad checkpoint magic"), "{}", stderr_of(&out));
}

#[test]
fn halted_run_resumes_to_completion() {
    let tmp = TempDir::new().unwrap();
    let run_dir = tmp.path().join("run");
    let cfg = tmp.path().join("config.json");
    write_config(&mini_config(&run_dir), &cfg);

    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .args(["--halt-after-frame", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("halted after frame 2"));
    assert!(run_dir.join("frame_0002.cloud").exists());
    assert!(!run_dir.join("metrics.csv").exists());

    let out = bin().arg("run").arg("--config").arg(&cfg).arg("--resume").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(run_dir.join("metrics.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("run complete"));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let out = bin().args(["gradcheck", "--seed", "17", "--size", "12"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("renderer:"), "{stdout}");
    assert!(stdout.contains("max rel err"), "{stdout}");
    assert!(stdout.contains("all audits passed"), "{stdout}");

    let out = bin()
        .args(["gradcheck", "--seed", "17", "--size", "12", "--corrupt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "corrupted gradients must fail the audit");
}
