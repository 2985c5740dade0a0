//! One method per command. Every stage reads its inputs from the configured
//! paths or from earlier stages' files under the output directory, so stages
//! can be run one at a time or chained by `pipeline run`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use gsprop_core::evaluation::{miou, miou_csv, miou_text, parse_legend, remap_ground_truth, render_labels};
use gsprop_core::export::{
    export_annotated_ply, export_summary, manifest, parse_annotated_ply, AnnotatedScene, ContentHash, SceneProvenance,
};
use gsprop_core::lifting::{lift, render_depth, votes_text, LiftConfig, SplatParams};
use gsprop_core::perception::{
    annotate_view, annotations_text, AnnotateConfig, FixtureStore, HttpLmm, MaterialSource, PerceptionError,
    SegmentationClient,
};
use gsprop_core::physics::{estimate_volumes, hardness_at, plan_from_parts, GraspOverrides, GripperProfile, HardnessReading, VolumeOptions};
use gsprop_core::scene_io::{
    load_mask_set, parse_cameras, parse_gaussian_ply, write_mask_set, CameraSource, MaskSource, PlyEncoding,
};
use gsprop_core::{CameraModel, GaussianCloud, LabelMap, MaterialLibrary, PropertyField};
use image::RgbImage;
use log::{info, warn};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{select_views, Mode, PipelineConfig};
use crate::{RunOptions, UsageError};

pub struct Context {
    config: PipelineConfig,
    opts: RunOptions,
    out: PathBuf,
}

/// Logs the stage's wall time once it finishes.
fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    info!("stage={stage} status=start");
    let r = f().with_context(|| format!("stage {stage}"));
    let ms = start.elapsed().as_millis();
    match &r {
        Ok(_) => info!("stage={stage} status=done elapsed_ms={ms}"),
        Err(_) => info!("stage={stage} status=failed elapsed_ms={ms}"),
    }
    r
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| UsageError(format!("paths.{key} is not set (config file or --{})", key.replace('_', "-"))).into())
}

/// `<dir>/<image_name>`, then `<dir>/<view>.png`, then `.jpg`.
fn load_image(dir: &Path, cam: &CameraModel) -> Result<RgbImage> {
    let mut candidates = Vec::new();
    if let Some(name) = &cam.image_name {
        candidates.push(dir.join(name));
        if let Some(base) = Path::new(name).file_name() {
            candidates.push(dir.join(base));
        }
    }
    candidates.push(dir.join(format!("{}.png", cam.view_id)));
    candidates.push(dir.join(format!("{}.jpg", cam.view_id)));
    let path = candidates
        .iter()
        .find(|p| p.is_file())
        .ok_or_else(|| anyhow!("no image for view `{}` in {}", cam.view_id, dir.display()))?;
    Ok(image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8())
}

/// Preview colors by family ordinal; index 0 is background.
const PALETTE: [[u8; 3]; 11] = [
    [0, 0, 0],
    [166, 118, 29],
    [160, 168, 180],
    [228, 26, 28],
    [126, 200, 227],
    [152, 78, 163],
    [255, 237, 111],
    [240, 240, 230],
    [247, 129, 191],
    [128, 128, 128],
    [90, 50, 30],
];

fn preview(labels: &LabelMap) -> RgbImage {
    RgbImage::from_fn(labels.width, labels.height, |x, y| {
        let c = labels.get(x, y) as usize;
        image::Rgb(PALETTE.get(c).copied().unwrap_or([255, 255, 255]))
    })
}

#[derive(Serialize)]
struct ProbeReport<'a> {
    view: &'a str,
    x: u32,
    y: u32,
    #[serde(flatten)]
    reading: HardnessReading,
}

#[derive(Serialize)]
struct HardnessReport<'a> {
    probe: Vec<ProbeReport<'a>>,
}

impl Context {
    pub fn new(config: PipelineConfig, opts: RunOptions) -> Result<Self> {
        let out = config.output();
        std::fs::create_dir_all(&out)
            .map_err(|e| UsageError(format!("output directory {} is not writable: {e}", out.display())))?;
        Ok(Self { config, opts, out })
    }

    fn library_text(&self) -> Result<String> {
        match &self.config.paths.library {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading material library {}", p.display())),
            None => Ok(MaterialLibrary::seed_text().to_string()),
        }
    }

    fn library(&self) -> Result<MaterialLibrary> {
        let text = self.library_text()?;
        MaterialLibrary::load(text.as_bytes()).context("material library")
    }

    /// Raw camera file bytes (plus COLMAP images.txt when configured).
    fn camera_bytes(&self) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
        let cams = read(required(&self.config.paths.cameras, "cameras")?)?;
        let images = self.config.paths.colmap_images.as_deref().map(read).transpose()?;
        Ok((cams, images))
    }

    fn all_cameras(&self) -> Result<Vec<CameraModel>> {
        let (cams, images) = self.camera_bytes()?;
        let source = match &images {
            Some(images) => CameraSource::ColmapText {
                cameras: &cams,
                images,
            },
            None => CameraSource::TransformsJson(&cams),
        };
        parse_cameras(source).context("camera file")
    }

    fn selected_cameras(&self) -> Result<Vec<CameraModel>> {
        let all = self.all_cameras()?;
        let ids: Vec<String> = all.iter().map(|c| c.view_id.clone()).collect();
        let picked = select_views(&ids, &self.config.views)?;
        Ok(picked.into_iter().map(|i| all[i].clone()).collect())
    }

    /// The selected views, or just `view` when given.
    fn cameras_for(&self, view: Option<&str>) -> Result<Vec<CameraModel>> {
        match view {
            None => self.selected_cameras(),
            Some(v) => {
                let cam = self
                    .all_cameras()?
                    .into_iter()
                    .find(|c| c.view_id == v)
                    .ok_or_else(|| UsageError(format!("view `{v}` is not in the camera file")))?;
                Ok(vec![cam])
            }
        }
    }

    fn splat(&self) -> SplatParams {
        SplatParams {
            dilation: self.config.thresholds.dilation,
            front_threshold: self.config.thresholds.front_threshold,
        }
    }

    fn masks_dir(&self) -> PathBuf {
        self.out.join("masks")
    }

    fn annotations_dir(&self) -> PathBuf {
        self.out.join("annotations")
    }

    fn annotated_ply(&self) -> PathBuf {
        self.out.join("scene").join("annotated.ply")
    }

    pub fn segment(&self) -> Result<()> {
        timed("segment", || {
            let cams = self.selected_cameras()?;
            let dir = self.masks_dir();
            match self.config.mode {
                Mode::Fixture => {
                    let src_dir = required(&self.config.paths.masks, "masks")?;
                    for cam in &cams {
                        let src = MaskSource::discover(src_dir, &cam.view_id)
                            .ok_or_else(|| anyhow!("no masks for view `{}` in {}", cam.view_id, src_dir.display()))?;
                        let set = load_mask_set(&src, &cam.view_id, Some((cam.width, cam.height)))?;
                        write_mask_set(&set, &dir)?;
                        info!("stage=segment view={} masks={}", cam.view_id, set.len());
                    }
                }
                Mode::Live => {
                    let images = required(&self.config.paths.images, "images")?;
                    let client = SegmentationClient::from_env(&self.config.segmentation);
                    let filter = self.config.thresholds.filter();
                    for cam in &cams {
                        let img = load_image(images, cam)?;
                        let set = client
                            .segment(&cam.view_id, &img, &filter)
                            .with_context(|| format!("segmenting view `{}`", cam.view_id))?;
                        write_mask_set(&set, &dir)?;
                        info!("stage=segment view={} masks={}", cam.view_id, set.len());
                    }
                }
            }
            Ok(())
        })
    }

    pub fn annotate(&self) -> Result<()> {
        timed("annotate", || {
            let library = self.library()?;
            let cams = self.selected_cameras()?;
            let mask_dir = self.masks_dir();
            if !mask_dir.is_dir() {
                bail!(UsageError(format!("{} does not exist; run `gsprop segment` first", mask_dir.display())));
            }
            let store;
            let lmm;
            let source = match self.config.mode {
                Mode::Fixture => {
                    store = FixtureStore::from_dir(required(&self.config.paths.annotations, "annotations")?)?;
                    MaterialSource::Fixture(&store)
                }
                Mode::Live => {
                    lmm = HttpLmm::from_env(&self.config.lmm)?;
                    MaterialSource::Live {
                        transport: &lmm,
                        retry_max: self.config.lmm.retry_max,
                    }
                }
            };
            let annotate_config = AnnotateConfig {
                min_area_fraction: self.config.thresholds.min_area_fraction,
                max_in_flight: self.config.lmm.max_in_flight,
            };
            let dir = self.annotations_dir();
            let mut usable = 0;
            for cam in &cams {
                let src = MaskSource::discover(&mask_dir, &cam.view_id)
                    .ok_or_else(|| anyhow!("no masks for view `{}`; run `gsprop segment` first", cam.view_id))?;
                let masks = load_mask_set(&src, &cam.view_id, Some((cam.width, cam.height)))?;
                let image = match self.config.mode {
                    Mode::Live => Some(load_image(required(&self.config.paths.images, "images")?, cam)?),
                    Mode::Fixture => None,
                };
                let png = dir.join(format!("{}.png", cam.view_id));
                match annotate_view(&cam.view_id, image.as_ref(), &masks, &library, &source, &annotate_config) {
                    Ok(view) => {
                        write(&png, view.material_map.encode_png()?)?;
                        write(&dir.join(format!("{}.txt", cam.view_id)), annotations_text(&view))?;
                        if !view.description.is_empty() {
                            write(&dir.join(format!("{}.description.txt", cam.view_id)), &view.description)?;
                        }
                        usable += 1;
                        info!("stage=annotate view={} segments={}", cam.view_id, view.annotations.len());
                    }
                    Err(PerceptionError::ViewUnusable(v)) => {
                        warn!("stage=annotate view={v} status=unusable reason=\"no segment resolved\"");
                        if png.exists() {
                            std::fs::remove_file(&png).with_context(|| format!("removing stale {}", png.display()))?;
                        }
                    }
                    Err(e) => return Err(anyhow::Error::new(e).context(format!("annotating view `{}`", cam.view_id))),
                }
            }
            if usable == 0 {
                bail!("no view produced a material map");
            }
            Ok(())
        })
    }

    pub fn lift(&self) -> Result<()> {
        timed("lift", || {
            let library_text = self.library_text()?;
            let library = MaterialLibrary::load(library_text.as_bytes()).context("material library")?;
            let scene_bytes = read(required(&self.config.paths.scene, "scene")?)?;
            let cloud = parse_gaussian_ply(&scene_bytes).context("scene PLY")?;
            let (cam_bytes, colmap_images) = self.camera_bytes()?;
            let mut hash = ContentHash::new()
                .add("config", self.config.canonical().as_bytes())
                .add("library", library_text.as_bytes())
                .add("scene", &scene_bytes)
                .add("cameras", &cam_bytes);
            if let Some(images) = &colmap_images {
                hash = hash.add("colmap_images", images);
            }

            let dir = self.annotations_dir();
            let mut cams = Vec::new();
            let mut maps = Vec::new();
            for cam in self.selected_cameras()? {
                let path = dir.join(format!("{}.png", cam.view_id));
                if !path.exists() {
                    warn!("stage=lift view={} status=skipped reason=\"no material map\"", cam.view_id);
                    continue;
                }
                let bytes = read(&path)?;
                hash = hash.add(&format!("map:{}", cam.view_id), &bytes);
                maps.push(LabelMap::decode_png(&bytes).with_context(|| format!("decoding {}", path.display()))?);
                cams.push(cam);
            }
            if maps.is_empty() {
                bail!(UsageError(format!("no material maps in {}; run `gsprop annotate` first", dir.display())));
            }

            let config = LiftConfig {
                splat: self.splat(),
                tol_rel: self.config.thresholds.tol_rel,
                propagate_k: self.config.thresholds.propagate_k,
            };
            let result = lift(&cloud, &cams, &maps, &library, &config)?;
            let voted = result.votes.iter().filter(|v| v.winner.is_some()).count();
            info!(
                "stage=lift gaussians={} views={} voted={} resolved={}",
                cloud.len(),
                cams.len(),
                voted,
                result.field.len() - result.field.unresolved().count()
            );

            let scene = AnnotatedScene {
                cloud: &cloud,
                field: &result.field,
                library: &library,
                provenance: SceneProvenance::new(cams.iter().map(|c| c.view_id.clone()).collect(), hash.finish()),
            };
            let scene_dir = self.out.join("scene");
            write(&scene_dir.join("annotated.ply"), export_annotated_ply(&scene, PlyEncoding::BinaryLittleEndian)?)?;
            write(&scene_dir.join("manifest.toml"), manifest(&scene)?)?;
            write(&scene_dir.join("summary.txt"), export_summary(&result.field, &library, None))?;

            if self.opts.dump_intermediates {
                let debug = self.out.join("debug");
                for d in &result.depths {
                    let mut bytes = Vec::new();
                    d.write_binary(&mut bytes)?;
                    write(&debug.join("depth").join(format!("{}.depth", d.view_id)), bytes)?;
                }
                write(&debug.join("votes.txt"), votes_text(&result.votes))?;
            }
            Ok(())
        })
    }

    fn load_annotated(&self, library: &MaterialLibrary) -> Result<(GaussianCloud, PropertyField)> {
        let path = self.annotated_ply();
        if !path.exists() {
            bail!(UsageError(format!("{} does not exist; run `gsprop lift` first", path.display())));
        }
        let (cloud, annotations) = parse_annotated_ply(&read(&path)?).with_context(|| format!("{}", path.display()))?;
        let field = annotations.to_field(library)?;
        Ok((cloud, field))
    }

    pub fn render_materials(&self, view: Option<&str>) -> Result<()> {
        timed("render-materials", || {
            let library = self.library()?;
            let (cloud, field) = self.load_annotated(&library)?;
            let cams = self.cameras_for(view)?;
            let splat = self.splat();
            let renders: Vec<_> = cams
                .par_iter()
                .map(|cam| render_labels(&cloud, &field, cam, &library, &splat))
                .collect();
            let dir = self.out.join("renders");
            for r in &renders {
                write(&dir.join(format!("{}.png", r.view_id)), r.labels.encode_png()?)?;
                let path = dir.join(format!("{}.preview.png", r.view_id));
                preview(&r.labels)
                    .save(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            info!("stage=render-materials views={}", renders.len());
            Ok(())
        })
    }

    pub fn physics(&self) -> Result<()> {
        timed("physics", || {
            let gripper_path = required(&self.config.paths.gripper, "gripper")?;
            let gripper = GripperProfile::load(gripper_path)?;
            let library = self.library()?;
            let (cloud, field) = self.load_annotated(&library)?;
            let g = &self.config.grasp;
            let volume = VolumeOptions {
                fill_enclosed: g.fill_enclosed,
                ..VolumeOptions::with_voxel(self.config.thresholds.voxel_size)
            };
            let parts = estimate_volumes(&cloud, &field, &volume)?;
            let overrides = GraspOverrides {
                contact_point: g.contact_point.map(Vector3::from),
                force_bearing_part: g.force_bearing_part,
                grasp_axis: g.grasp_axis,
                area: g.area,
                thickness: g.thickness,
                kappa_max: g.kappa_max,
                theta: g.theta,
            };
            let plan = plan_from_parts(&cloud, &parts, &library, &gripper, &overrides)?;
            info!(
                "stage=physics parts={} mass_kg={:.6} f_min={:.4} f_max={:.4} f_star={:.4} feasible={}",
                parts.parts.len(),
                plan.total_mass,
                plan.f_min(),
                plan.f_max(),
                plan.f_star(),
                plan.feasible()
            );
            let dir = self.out.join("physics");
            write(&dir.join("grasp.toml"), plan.to_text())?;
            write(&dir.join("summary.txt"), export_summary(&field, &library, Some(&parts)))?;

            if !g.hardness.is_empty() {
                let cams = self.all_cameras()?;
                let mut probes = Vec::new();
                for p in &g.hardness {
                    let cam = cams
                        .iter()
                        .find(|c| c.view_id == p.view)
                        .ok_or_else(|| UsageError(format!("hardness probe view `{}` is not in the camera file", p.view)))?;
                    let depth = render_depth(&cloud, cam, &self.splat());
                    let reading = hardness_at(p.x, p.y, &depth, &field, &library)
                        .with_context(|| format!("hardness probe {} ({}, {})", p.view, p.x, p.y))?;
                    probes.push(ProbeReport {
                        view: &p.view,
                        x: p.x,
                        y: p.y,
                        reading,
                    });
                }
                let text = toml::to_string(&HardnessReport { probe: probes }).context("hardness report")?;
                write(&dir.join("hardness.toml"), text)?;
            }
            Ok(())
        })
    }

    pub fn evaluate(&self, view: Option<&str>) -> Result<()> {
        timed("evaluate", || {
            let gt_dir = required(&self.config.paths.ground_truth, "ground_truth")?;
            let library = self.library()?;
            let legend = match &self.config.paths.legend {
                Some(p) => Some(parse_legend(&String::from_utf8_lossy(&read(p)?))?),
                None => None,
            };
            let (cloud, field) = self.load_annotated(&library)?;
            let splat = self.splat();
            let dir = self.out.join("eval");
            let mut summary = String::from("view_id,miou\n");
            let mut scores = Vec::new();
            for cam in self.cameras_for(view)? {
                let gt_path = gt_dir.join(format!("{}.png", cam.view_id));
                if !gt_path.exists() {
                    if view.is_some() {
                        bail!("no ground truth for view `{}` at {}", cam.view_id, gt_path.display());
                    }
                    warn!("stage=evaluate view={} status=skipped reason=\"no ground truth\"", cam.view_id);
                    continue;
                }
                let mut gt = LabelMap::read(&gt_path)?;
                if let Some(legend) = &legend {
                    gt = remap_ground_truth(&gt, legend, &library);
                }
                let pred = render_labels(&cloud, &field, &cam, &library, &splat);
                let report = miou(&pred.labels, &gt).with_context(|| format!("view `{}`", cam.view_id))?;
                write(&dir.join(format!("{}.txt", cam.view_id)), miou_text(&cam.view_id, &report, &library))?;
                write(&dir.join(format!("{}.csv", cam.view_id)), miou_csv(&report, &library))?;
                summary.push_str(&format!("{},{:.6}\n", cam.view_id, report.miou));
                info!("stage=evaluate view={} miou={:.4}", cam.view_id, report.miou);
                scores.push(report.miou);
            }
            if scores.is_empty() {
                bail!("no ground-truth images found in {}", gt_dir.display());
            }
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            summary.push_str(&format!("mean,{mean:.6}\n"));
            write(&dir.join("summary.csv"), summary)?;
            info!("stage=evaluate views={} mean_miou={mean:.4}", scores.len());
            Ok(())
        })
    }

    pub fn pipeline(&self) -> Result<()> {
        timed("pipeline", || {
            self.segment()?;
            self.annotate()?;
            self.lift()?;
            self.render_materials(None)?;
            if self.config.paths.gripper.is_some() {
                self.physics()?;
            }
            if self.config.paths.ground_truth.is_some() {
                self.evaluate(None)?;
            }
            Ok(())
        })
    }
}
