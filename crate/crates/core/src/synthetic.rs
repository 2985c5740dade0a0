//! Procedural scenes with known ground truth, used for tests and demos.
//!
//! Box surfaces are sampled on a regular grid and every sample becomes a flat
//! Gaussian disk lying in its face. Ground-truth label images come from exact ray/box
//! intersection, independent of the splat renderer.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};

use crate::materials::MaterialLibrary;
use crate::scene_io::{mask_set_from_labels, CameraModel, GaussianCloud, LabelMap, MaskSet};

/// SH band-0 constant used by 3DGS color encoding.
const SH_C0: f64 = 0.282_094_791_773_878_1;

#[derive(Debug, Clone, PartialEq)]
pub struct SolidBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub material: String,
    pub color: [u8; 3],
}

impl SolidBox {
    /// Ray parameter of the first intersection with `t > 0`, plus the hit normal axis.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut near, mut far) = ((self.min[a] - origin[a]) / dir[a], (self.max[a] - origin[a]) / dir[a]);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            if near > t0 {
                t0 = near;
                axis = a;
            }
            t1 = t1.min(far);
        }
        (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
    }

    pub fn volume(&self) -> f64 {
        (self.max - self.min).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// Surface sampling step, meters.
    pub spacing: f64,
    /// In-plane Gaussian standard deviation as a fraction of `spacing`.
    pub sigma_factor: f64,
    /// Standard deviation along the face normal as a fraction of the in-plane one.
    pub flatness: f64,
    /// Distance from a face edge to the outermost sample row, as a fraction
    /// of `spacing`. Splats reach past their centers, so rows sit slightly
    /// inside the edge to keep rendered silhouettes on the true outline.
    pub edge_inset: f64,
    pub opacity: f64,
    pub views: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Camera distance from the look-at target, meters.
    pub distance: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            spacing: 0.0065,
            sigma_factor: 0.5,
            flatness: 0.1,
            edge_inset: 1.0,
            opacity: 0.9,
            views: 10,
            width: 320,
            height: 240,
            focal: 300.0,
            distance: 1.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: GaussianCloud,
    pub boxes: Vec<SolidBox>,
    /// Index into `boxes` for each Gaussian.
    pub owner: Vec<usize>,
    pub cameras: Vec<CameraModel>,
}

impl SyntheticScene {
    /// Two 0.3 m cubes side by side on the ground plane: pine at `x < 0`,
    /// aluminum at `x > 0`. Only the outer surface of the pair is sampled.
    pub fn two_boxes(params: &SceneParams) -> Self {
        let s = 0.3;
        let boxes = vec![
            SolidBox {
                min: Vector3::new(-s, -s / 2.0, 0.0),
                max: Vector3::new(0.0, s / 2.0, s),
                material: "pine".into(),
                color: [168, 116, 62],
            },
            SolidBox {
                min: Vector3::new(0.0, -s / 2.0, 0.0),
                max: Vector3::new(s, s / 2.0, s),
                material: "aluminum".into(),
                color: [180, 184, 192],
            },
        ];
        let mut scene = Self {
            cloud: GaussianCloud::default(),
            boxes,
            owner: Vec::new(),
            cameras: Vec::new(),
        };
        // Skip the touching faces (box 0 max-x, box 1 min-x).
        scene.sample_surfaces(0, params, &[(0, 1)]);
        scene.sample_surfaces(1, params, &[(0, 0)]);
        scene.cameras = hemisphere_cameras(params, Vector3::new(0.0, 0.0, s / 2.0));
        scene
    }

    /// A solid cube of `side` meters centered at the origin, filled with a
    /// regular grid of Gaussians at `spacing`.
    pub fn solid_cube(side: f64, spacing: f64, material: &str) -> Self {
        let n = (side / spacing).round() as usize;
        let step = side / n as f64;
        let mut cloud = GaussianCloud::default();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let p = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * step
                        - Vector3::repeat(side / 2.0);
                    cloud.push(p, 0.9, Vector3::repeat(step / 2.0), [1.0, 0.0, 0.0, 0.0]);
                }
            }
        }
        let len = cloud.len();
        Self {
            cloud,
            boxes: vec![SolidBox {
                min: Vector3::repeat(-side / 2.0),
                max: Vector3::repeat(side / 2.0),
                material: material.into(),
                color: [128, 128, 128],
            }],
            owner: vec![0; len],
            cameras: Vec::new(),
        }
    }

    /// `skip` lists `(axis, side)` faces to leave unsampled; side 0 = min, 1 = max.
    fn sample_surfaces(&mut self, b: usize, params: &SceneParams, skip: &[(usize, usize)]) {
        let bx = self.boxes[b].clone();
        let size = bx.max - bx.min;
        let sigma = params.sigma_factor * params.spacing;
        let dc = bx.color.map(|c| (c as f64 / 255.0 - 0.5) / SH_C0);
        let inset = params.edge_inset * params.spacing;
        let grid = |lo: f64, len: f64, i: usize, n: usize, inset: f64| {
            if n < 2 {
                lo + len / 2.0
            } else {
                lo + inset + i as f64 * (len - 2.0 * inset) / (n - 1) as f64
            }
        };
        for axis in 0..3 {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            let nu = (size[ua] / params.spacing).ceil() as usize;
            let nv = (size[va] / params.spacing).ceil() as usize;
            for side in 0..2 {
                if skip.contains(&(axis, side)) {
                    continue;
                }
                let fixed = if side == 0 { bx.min[axis] } else { bx.max[axis] };
                // Faces are axis-aligned, so flat disks need no rotation.
                let mut scale = Vector3::repeat(sigma);
                scale[axis] *= params.flatness;
                for i in 0..nu {
                    for j in 0..nv {
                        let mut p = Vector3::zeros();
                        p[axis] = fixed;
                        p[ua] = grid(bx.min[ua], size[ua], i, nu, inset);
                        p[va] = grid(bx.min[va], size[va], j, nv, inset);
                        self.cloud.push(p, params.opacity, scale, [1.0, 0.0, 0.0, 0.0]);
                        *self.cloud.sh.dc.last_mut().unwrap() = dc;
                        self.owner.push(b);
                    }
                }
            }
        }
    }

    /// Per-pixel index (1-based) of the first box hit by the pixel-center ray.
    pub fn segment_map(&self, cam: &CameraModel) -> LabelMap {
        let k_inv = cam.intrinsics.try_inverse().expect("valid intrinsics");
        let c2w: Matrix3<f64> = cam.rotation.transpose();
        let origin = cam.center();
        let mut map = LabelMap::new(cam.width, cam.height);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let dir = c2w * (k_inv * Vector3::new(x as f64, y as f64, 1.0));
                if let Some((b, _)) = self.first_hit(&origin, &dir) {
                    map.set(x, y, b as u16 + 1);
                }
            }
        }
        map
    }

    fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(usize, usize)> {
        self.boxes
            .iter()
            .enumerate()
            .filter_map(|(b, bx)| bx.intersect(origin, dir).map(|(t, axis)| (t, b, axis)))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .map(|(_, b, axis)| (b, axis))
    }

    /// Ground-truth segmentation masks (one segment per box).
    pub fn mask_set(&self, cam: &CameraModel) -> MaskSet {
        let meta: Vec<(u32, f64, f64)> = (1..=self.boxes.len() as u32).map(|i| (i, 1.0, 1.0)).collect();
        mask_set_from_labels(&self.segment_map(cam), &meta, &cam.view_id)
    }

    /// Fixture annotation lines `segment_id material_id`, valid for every view.
    pub fn fixture_text(&self) -> String {
        self.boxes
            .iter()
            .enumerate()
            .map(|(i, b)| format!("{} {}\n", i + 1, b.material))
            .collect()
    }

    /// Per-pixel material ordinals.
    pub fn material_map(&self, cam: &CameraModel, library: &MaterialLibrary) -> LabelMap {
        let ords: Vec<u16> = self.boxes.iter().map(|b| library.ordinal(&b.material).unwrap_or(0)).collect();
        self.relabel(cam, &ords)
    }

    /// Per-pixel family ordinals, the ground truth for segmentation scoring.
    pub fn family_map(&self, cam: &CameraModel, library: &MaterialLibrary) -> LabelMap {
        let ords: Vec<u16> = self
            .boxes
            .iter()
            .map(|b| {
                library
                    .family_of(&b.material)
                    .ok()
                    .and_then(|f| library.family_ordinal(f))
                    .unwrap_or(0)
            })
            .collect();
        self.relabel(cam, &ords)
    }

    fn relabel(&self, cam: &CameraModel, ords: &[u16]) -> LabelMap {
        let mut map = self.segment_map(cam);
        for v in &mut map.data {
            if *v != 0 {
                *v = ords[*v as usize - 1];
            }
        }
        map
    }

    /// Ground-truth material ordinal of every Gaussian.
    pub fn gaussian_ordinals(&self, library: &MaterialLibrary) -> Vec<u16> {
        let ords: Vec<u16> = self.boxes.iter().map(|b| library.ordinal(&b.material).unwrap_or(0)).collect();
        self.owner.iter().map(|&b| ords[b]).collect()
    }

    /// Flat-shaded color image of a view.
    pub fn image(&self, cam: &CameraModel) -> RgbImage {
        let k_inv = cam.intrinsics.try_inverse().expect("valid intrinsics");
        let c2w: Matrix3<f64> = cam.rotation.transpose();
        let origin = cam.center();
        let shade = [0.75, 0.85, 1.0];
        RgbImage::from_fn(cam.width, cam.height, |x, y| {
            let dir = c2w * (k_inv * Vector3::new(x as f64, y as f64, 1.0));
            match self.first_hit(&origin, &dir) {
                Some((b, axis)) => Rgb(self.boxes[b].color.map(|c| (c as f64 * shade[axis]) as u8)),
                None => Rgb([235, 235, 235]),
            }
        })
    }
}

/// `n` cameras on a hemisphere around `target`, spread by the golden angle in
/// azimuth with elevations between 20° and 60°.
pub fn hemisphere_cameras(params: &SceneParams, target: Vector3<f64>) -> Vec<CameraModel> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = params.views;
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let elevation = (20.0 + 40.0 * t).to_radians();
            let azimuth = 0.3 + i as f64 * golden;
            let dir = Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
            CameraModel::from_intrinsics(
                format!("view_{i:02}"),
                params.focal,
                params.focal,
                (params.width as f64 - 1.0) / 2.0,
                (params.height as f64 - 1.0) / 2.0,
                params.width,
                params.height,
            )
            .looking_at(target + params.distance * dir, target, Vector3::z())
        })
        .collect()
}
