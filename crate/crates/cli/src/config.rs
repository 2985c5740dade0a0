//! Pipeline configuration: a TOML file with `${VAR}` interpolation, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gsprop_core::perception::{FilterThresholds, LmmConfig, SegmentationConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Masks and material answers come from files on disk.
    #[default]
    Fixture,
    /// Masks and material answers come from the configured endpoints.
    Live,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Pretrained Gaussian PLY.
    pub scene: Option<PathBuf>,
    /// transforms JSON, or COLMAP `cameras.txt` when `colmap_images` is set.
    pub cameras: Option<PathBuf>,
    /// COLMAP `images.txt`.
    pub colmap_images: Option<PathBuf>,
    /// Directory of view images.
    pub images: Option<PathBuf>,
    /// Fixture masks (label PNG + `.meta.txt` per view).
    pub masks: Option<PathBuf>,
    /// Fixture answers, `<view>.txt` with `segment material [confidence]` rows.
    pub annotations: Option<PathBuf>,
    /// Material library TOML; the built-in library when unset.
    pub library: Option<PathBuf>,
    pub gripper: Option<PathBuf>,
    /// Ground-truth label PNGs, `<view>.png`.
    pub ground_truth: Option<PathBuf>,
    /// `ordinal family` rows for the ground-truth PNGs.
    pub legend: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub iou_min: f64,
    pub stability_min: f64,
    pub overlap_max: f64,
    pub min_area_fraction: f64,
    pub tol_rel: f64,
    pub front_threshold: f64,
    pub dilation: f64,
    pub propagate_k: usize,
    pub voxel_size: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let f = FilterThresholds::default();
        Self {
            iou_min: f.iou_min,
            stability_min: f.stability_min,
            overlap_max: f.overlap_max,
            min_area_fraction: 0.001,
            tol_rel: 0.01,
            front_threshold: 0.5,
            dilation: 0.3,
            propagate_k: 8,
            voxel_size: 0.005,
        }
    }
}

impl Thresholds {
    fn validate(&self) -> Result<()> {
        let unit = [
            ("iou_min", self.iou_min),
            ("stability_min", self.stability_min),
            ("overlap_max", self.overlap_max),
            ("min_area_fraction", self.min_area_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                bail!(UsageError(format!("thresholds.{name} = {v} is outside [0, 1]")));
            }
        }
        if !(self.front_threshold > 0.0 && self.front_threshold < 1.0) {
            bail!(UsageError(format!("thresholds.front_threshold = {} is outside (0, 1)", self.front_threshold)));
        }
        for (name, v) in [("tol_rel", self.tol_rel), ("dilation", self.dilation)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(UsageError(format!("thresholds.{name} = {v} must be a finite value >= 0")));
            }
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            bail!(UsageError(format!("thresholds.voxel_size = {} must be positive", self.voxel_size)));
        }
        Ok(())
    }

    pub fn filter(&self) -> FilterThresholds {
        FilterThresholds {
            iou_min: self.iou_min,
            stability_min: self.stability_min,
            overlap_max: self.overlap_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Views {
    /// How many views to use, spread evenly over the camera list.
    pub count: usize,
    /// Explicit view ids; overrides `count` when non-empty.
    pub ids: Vec<String>,
}

impl Default for Views {
    fn default() -> Self {
        Self {
            count: 10,
            ids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardnessProbe {
    pub view: String,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grasp {
    pub contact_point: Option<[f64; 3]>,
    pub force_bearing_part: Option<u32>,
    pub grasp_axis: Option<usize>,
    pub area: Option<f64>,
    pub thickness: Option<f64>,
    pub kappa_max: Option<f64>,
    pub theta: Option<f64>,
    pub fill_enclosed: bool,
    pub hardness: Vec<HardnessProbe>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub views: Views,
    pub grasp: Grasp,
    pub lmm: LmmConfig,
    pub segmentation: SegmentationConfig,
}

/// Replaces `${NAME}` with the environment variable's value; `$$` is a
/// literal `$`. Unset variables are an error.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find('$') {
        out.push_str(&rest[..i]);
        let tail = &rest[i + 1..];
        if let Some(t) = tail.strip_prefix('$') {
            out.push('$');
            rest = t;
        } else if let Some(t) = tail.strip_prefix('{') {
            let end = t
                .find('}')
                .ok_or_else(|| UsageError("unterminated `${` in config".into()))?;
            let name = &t[..end];
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                bail!(UsageError(format!("invalid variable name `{name}` in config")));
            }
            let value = lookup(name)
                .ok_or_else(|| UsageError(format!("config references ${{{name}}} but it is not set")))?;
            out.push_str(&value);
            rest = &t[end + 1..];
        } else {
            out.push('$');
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let text = interpolate(text, |k| std::env::var(k).ok())?;
        let config: Self = toml::from_str(&text).map_err(|e| UsageError(format!("config: {e}")))?;
        Ok(config)
    }

    /// Loads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.rebase(base);
        if let Some(dir) = &mut config.lmm.cache_dir {
            *dir = base.join(&*dir);
        }
        if let Some(dir) = &mut config.segmentation.cache_dir {
            *dir = base.join(&*dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.views.count == 0 && self.views.ids.is_empty() {
            bail!(UsageError("views.count must be at least 1".into()));
        }
        if let Some(a) = self.grasp.grasp_axis {
            if a > 2 {
                bail!(UsageError(format!("grasp.grasp_axis = {a} must be 0, 1 or 2")));
            }
        }
        Ok(())
    }

    pub fn output(&self) -> PathBuf {
        self.paths.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Canonical text of every setting that can change outputs. Paths are
    /// left out: the bytes they point at are hashed instead, so a moved
    /// dataset keeps its hash. Concurrency does not change outputs either.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.lmm.max_in_flight = LmmConfig::default().max_in_flight;
        c.lmm.cache_dir = None;
        c.segmentation.cache_dir = None;
        toml::to_string(&c).expect("config serializes")
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.scene,
            &mut self.cameras,
            &mut self.colmap_images,
            &mut self.images,
            &mut self.masks,
            &mut self.annotations,
            &mut self.library,
            &mut self.gripper,
            &mut self.ground_truth,
            &mut self.legend,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
    }
}

/// Picks `count` views spread evenly over `all` (in camera order), or the
/// named ids.
pub fn select_views(all: &[String], views: &Views) -> Result<Vec<usize>> {
    if !views.ids.is_empty() {
        return views
            .ids
            .iter()
            .map(|id| {
                all.iter()
                    .position(|v| v == id)
                    .ok_or_else(|| UsageError(format!("view `{id}` is not in the camera file")).into())
            })
            .collect();
    }
    let n = all.len();
    let k = views.count.min(n);
    Ok((0..k).map(|i| i * n / k).collect())
}
