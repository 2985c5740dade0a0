//! `gsprop synth`: a self-contained two-box dataset for trying the pipeline
//! offline and for the end-to-end tests.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use gsprop_core::scene_io::{write_gaussian_ply, write_mask_set, write_transforms_json, PlyEncoding};
use gsprop_core::synthetic::{SceneParams, SyntheticScene};
use log::info;

use crate::UsageError;

const CONFIG: &str = r#"# Fixture-mode run over the synthetic two-box scene.
mode = "fixture"

[paths]
scene = "scene.ply"
cameras = "cameras.json"
images = "images"
masks = "masks"
annotations = "annotations"
gripper = "gripper.toml"
ground_truth = "gt"
legend = "gt/legend.txt"
output = "out"
"#;

fn gripper_profile() -> String {
    // A linear gripper, F = 0.4 N per command unit.
    let mut rows = String::new();
    for n in (15..=100).step_by(5) {
        let _ = writeln!(rows, "{n} {}", 0.4 * n as f64);
    }
    format!(
        "name = \"synthetic-linear\"\nforce_range = [6.0, 40.0]\neta = 0.1\ntheta = 0.0\n\
         poly_degree = 1\ninput_range = [15.0, 100.0]\ncalibration = \"\"\"\n{rows}\"\"\"\n"
    )
}

fn put(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_dataset(out: &Path, spacing: Option<f64>, views: Option<usize>) -> Result<()> {
    let mut params = SceneParams::default();
    if let Some(s) = spacing {
        if !(s > 0.0 && s.is_finite()) {
            anyhow::bail!(UsageError(format!("--spacing must be positive, got {s}")));
        }
        params.spacing = s;
    }
    if let Some(v) = views {
        if v == 0 {
            anyhow::bail!(UsageError("--views must be at least 1".into()));
        }
        params.views = v;
    }
    let scene = SyntheticScene::two_boxes(&params);
    put(
        &out.join("scene.ply"),
        write_gaussian_ply(&scene.cloud, &[], PlyEncoding::BinaryLittleEndian)?,
    )?;
    put(&out.join("cameras.json"), write_transforms_json(&scene.cameras))?;
    // Ground truth uses its own numbering (box index) plus a legend.
    let legend: String = scene
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let family = if b.material == "pine" { "wood" } else { "metal" };
            format!("{} {family}\n", i + 1)
        })
        .collect();
    put(&out.join("gt").join("legend.txt"), legend)?;
    for cam in &scene.cameras {
        let img = out.join("images").join(format!("{}.png", cam.view_id));
        std::fs::create_dir_all(img.parent().expect("has parent"))?;
        scene
            .image(cam)
            .save(&img)
            .with_context(|| format!("writing {}", img.display()))?;
        write_mask_set(&scene.mask_set(cam), &out.join("masks"))?;
        put(
            &out.join("annotations").join(format!("{}.txt", cam.view_id)),
            scene.fixture_text(),
        )?;
        scene.segment_map(cam).write(&out.join("gt").join(format!("{}.png", cam.view_id)))?;
    }
    put(&out.join("gripper.toml"), gripper_profile())?;
    put(&out.join("gsprop.toml"), CONFIG)?;
    info!(
        "stage=synth gaussians={} views={} out={}",
        scene.cloud.len(),
        scene.cameras.len(),
        out.display()
    );
    Ok(())
}
