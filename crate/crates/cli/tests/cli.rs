//! Command-level behavior of the `gsprop` binary on a small synthetic dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gsprop_core::export::{export_annotated_ply, AnnotatedScene, SceneProvenance};
use gsprop_core::scene_io::PlyEncoding;
use gsprop_core::synthetic::SyntheticScene;
use gsprop_core::{MaterialLibrary, PropertyField};
use tempfile::TempDir;

fn gsprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsprop"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .env_remove("GSPROP_LMM_TOKEN")
        .env_remove("GSPROP_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A coarse synthetic dataset; returns (tempdir, config path).
fn dataset() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let o = gsprop(&["synth", "--out", ds.to_str().unwrap(), "--spacing", "0.012"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (tmp, ds.join("gsprop.toml"))
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut full = vec!["--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()];
    full.extend_from_slice(args);
    gsprop(&full)
}

fn count(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().to_string_lossy().into_owned();
            name.ends_with(ext) && !name.ends_with(&format!(".preview{ext}"))
        })
        .count()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&gsprop(&["no-such-command"])), 1);
    assert_eq!(code(&gsprop(&["--help"])), 0);
    assert_eq!(code(&gsprop(&["lift", "--workers", "0"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    // No scene configured.
    let o = gsprop(&["--output", out.to_str().unwrap(), "segment"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert_eq!(code(&gsprop(&["--config", "/nonexistent.toml", "lift"])), 1);
}

#[test]
fn fixture_run_writes_ten_maps_and_is_idempotent() {
    let (tmp, config) = dataset();
    let out = tmp.path().join("out");
    let o = run(&config, &out, &["segment"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let masks_before = std::fs::read(out.join("masks/view_03.png")).unwrap();
    let source = std::fs::read(config.parent().unwrap().join("masks/view_03.png")).unwrap();
    assert_eq!(masks_before, source, "fixture masks pass through unchanged");

    let o = run(&config, &out, &["annotate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(count(&out.join("annotations"), ".png"), 10);
    let first = std::fs::read(out.join("annotations/view_05.png")).unwrap();
    let o = run(&config, &out, &["annotate"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(out.join("annotations/view_05.png")).unwrap(), first);

    let o = run(&config, &out, &["lift"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("scene/manifest.toml")).unwrap();
    let hash_line = manifest.lines().find(|l| l.starts_with("config_hash")).expect("hash recorded");
    assert!(hash_line.len() > 70, "{hash_line}");
    let ply = std::fs::read(out.join("scene/annotated.ply")).unwrap();
    assert_eq!(code(&run(&config, &out, &["lift"])), 0);
    assert_eq!(std::fs::read(out.join("scene/annotated.ply")).unwrap(), ply);
}

#[test]
fn dump_intermediates_writes_depth_and_votes() {
    let (tmp, config) = dataset();
    let out = tmp.path().join("out");
    for stage in ["segment", "annotate"] {
        assert_eq!(code(&run(&config, &out, &[stage])), 0);
    }
    assert!(!out.join("debug").exists());
    let o = run(&config, &out, &["--dump-intermediates", "lift"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(count(&out.join("debug/depth"), ".depth"), 10);
    let votes = std::fs::read_to_string(out.join("debug/votes.txt")).unwrap();
    assert!(votes.lines().count() > 100);
}

#[test]
fn evaluate_and_render() {
    let (tmp, config) = dataset();
    let out = tmp.path().join("out");
    let o = run(&config, &out, &["pipeline", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(count(&out.join("renders"), ".png"), 10);
    let csv = std::fs::read_to_string(out.join("eval/view_00.csv")).unwrap();
    // Header plus one row per ground-truth class (wood and metal).
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let summary = std::fs::read_to_string(out.join("eval/summary.csv")).unwrap();
    let mean: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("mean,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean > 0.8, "{summary}");

    let o = run(&config, &out, &["render-materials", "--view", "view_02"]);
    assert_eq!(code(&o), 0);
    let o = run(&config, &out, &["render-materials", "--view", "nope"]);
    assert_eq!(code(&o), 1);

    // Ground truth of the wrong size is a data error.
    let gt = tmp.path().join("gt");
    std::fs::create_dir_all(&gt).unwrap();
    gsprop_core::LabelMap::new(7, 5).write(&gt.join("view_00.png")).unwrap();
    let o = run(&config, &out, &["--ground-truth", gt.to_str().unwrap(), "evaluate", "--view", "view_00"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn predicted_equals_ground_truth_scores_one() {
    let (tmp, config) = dataset();
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&config, &out, &["pipeline", "run"])), 0);
    // Use the renders themselves as ground truth. The dataset legend would
    // remap their ordinals, so drop it.
    let renders = out.join("renders");
    let cfg = std::fs::read_to_string(&config).unwrap().replace("legend = \"gt/legend.txt\"\n", "");
    let plain = config.with_file_name("plain.toml");
    std::fs::write(&plain, cfg).unwrap();
    let o = run(&plain, &out, &["--ground-truth", renders.to_str().unwrap(), "evaluate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("eval/summary.csv")).unwrap();
    assert!(summary.contains("mean,1.000000"), "{summary}");
}

#[test]
fn missing_inputs_are_reported() {
    let (tmp, config) = dataset();
    let out = tmp.path().join("out");
    for stage in ["segment", "annotate", "lift"] {
        assert_eq!(code(&run(&config, &out, &[stage])), 0);
    }
    let plain = config.with_file_name("nogripper.toml");
    let cfg = std::fs::read_to_string(&config).unwrap().replace("gripper = \"gripper.toml\"\n", "");
    std::fs::write(&plain, cfg).unwrap();
    let o = run(&plain, &out, &["physics"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("gripper"));
    let o = run(&config, &out, &["--gripper", "/nonexistent/gripper.toml", "physics"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&config, &out, &["--library", "/nonexistent/library.toml", "annotate"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn live_mode_needs_token_and_images() {
    let (tmp, config) = dataset();
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&config, &out, &["segment"])), 0);
    let o = run(&config, &out, &["--mode", "live", "annotate"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("GSPROP_LMM_TOKEN"));
    let empty = tmp.path().join("no-images");
    std::fs::create_dir_all(&empty).unwrap();
    let o = run(&config, &out, &["--mode", "live", "--images", empty.to_str().unwrap(), "segment"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn physics_reports_cube_mass() {
    let lib = MaterialLibrary::seed();
    let cube = SyntheticScene::solid_cube(0.1, 0.005, "aluminum");
    let field = PropertyField::uniform(cube.cloud.len(), "aluminum", &lib).unwrap();
    let scene = AnnotatedScene {
        cloud: &cube.cloud,
        field: &field,
        library: &lib,
        provenance: SceneProvenance::default(),
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    std::fs::create_dir_all(out.join("scene")).unwrap();
    std::fs::write(
        out.join("scene/annotated.ply"),
        export_annotated_ply(&scene, PlyEncoding::BinaryLittleEndian).unwrap(),
    )
    .unwrap();
    let gripper = tmp.path().join("gripper.toml");
    let rows: String = (15..=100).step_by(5).map(|n| format!("{n} {}\n", 0.4 * n as f64)).collect();
    std::fs::write(
        &gripper,
        format!("force_range = [6.0, 40.0]\neta = 0.1\npoly_degree = 1\ncalibration = \"\"\"\n{rows}\"\"\"\n"),
    )
    .unwrap();
    let config = tmp.path().join("c.toml");
    std::fs::write(&config, "[grasp]\nthickness = 0.002\n").unwrap();
    let o = run(&config, &out, &["--gripper", gripper.to_str().unwrap(), "physics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: toml::Table = std::fs::read_to_string(out.join("physics/grasp.toml")).unwrap().parse().unwrap();
    let mass = report["total_mass"].as_float().unwrap();
    assert!((mass - 2.7).abs() <= 0.05 * 2.7, "{mass}");
    let summary = std::fs::read_to_string(out.join("physics/summary.txt")).unwrap();
    assert!(summary.contains("aluminum"), "{summary}");
}
