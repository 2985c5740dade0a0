//! Reference splat rasterizer: EWA footprints composited front to back.

use std::io::{Read, Write};

use nalgebra::{Matrix2x3, Matrix3};
use rayon::prelude::*;

use super::project::Z_NEAR;
use crate::scene_io::{CameraModel, GaussianCloud};

/// Alpha values below this are skipped, matching common splatting practice.
const ALPHA_MIN: f64 = 1.0 / 255.0;
const ALPHA_MAX: f64 = 0.99;
/// Pixels whose transmittance falls below this stop accepting splats.
const T_MIN: f64 = 1e-4;
/// Footprints are cut at this Mahalanobis radius (3σ).
const CUTOFF_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatParams {
    /// Isotropic screen-space variance (px²) added to every footprint so
    /// sub-pixel Gaussians still cover a pixel.
    pub dilation: f64,
    /// Accumulated opacity at which a pixel's surface is reached.
    pub front_threshold: f64,
}

impl Default for SplatParams {
    fn default() -> Self {
        Self {
            dilation: 0.3,
            front_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Splat {
    index: usize,
    u: f64,
    v: f64,
    z: f64,
    /// Inverse 2-D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

fn prepare(cloud: &GaussianCloud, cam: &CameraModel, dilation: f64) -> Vec<Splat> {
    let k = &cam.intrinsics;
    let (fx, fy, s) = (k[(0, 0)], k[(1, 1)], k[(0, 1)]);
    let (w, h) = (cam.width as f64, cam.height as f64);
    // Guard band for the Jacobian, as in tile rasterizers: clamp the
    // tangent to 1.3x the half field of view.
    let lim_x = 1.3 * (w.max(k[(0, 2)]) / fx);
    let lim_y = 1.3 * (h.max(k[(1, 2)]) / fy);

    let mut splats: Vec<Splat> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| {
            let xc = cam.rotation * cloud.positions[i] + cam.translation;
            if xc.z <= Z_NEAR || cloud.opacities[i] < ALPHA_MIN {
                return None;
            }
            let z = xc.z;
            let u = (fx * xc.x + s * xc.y) / z + k[(0, 2)];
            let v = fy * xc.y / z + k[(1, 2)];
            let tx = (xc.x / z).clamp(-lim_x, lim_x) * z;
            let ty = (xc.y / z).clamp(-lim_y, lim_y) * z;
            let j = Matrix2x3::new(
                fx / z,
                s / z,
                -(fx * tx + s * ty) / (z * z),
                0.0,
                fy / z,
                -fy * ty / (z * z),
            );
            let cov_cam: Matrix3<f64> = cam.rotation * cloud.covariance(i) * cam.rotation.transpose();
            let cov2 = j * cov_cam * j.transpose();
            let (a, b, c) = (cov2[(0, 0)] + dilation, cov2[(0, 1)], cov2[(1, 1)] + dilation);
            let det = a * c - b * b;
            if !(det > 0.0) {
                return None;
            }
            let mid = 0.5 * (a + c);
            let lambda = mid + (mid * mid - det).max(0.0).sqrt();
            let r = CUTOFF_SIGMA * lambda.sqrt();
            let (x0, x1) = ((u - r).ceil().max(0.0), (u + r).floor().min(w - 1.0));
            let (y0, y1) = ((v - r).ceil().max(0.0), (v + r).floor().min(h - 1.0));
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            Some(Splat {
                index: i,
                u,
                v,
                z,
                conic: [c / det, -b / det, a / det],
                opacity: cloud.opacities[i],
                x0: x0 as u32,
                x1: x1 as u32,
                y0: y0 as u32,
                y1: y1 as u32,
            })
        })
        .collect();
    splats.sort_by(|p, q| p.z.total_cmp(&q.z).then(p.index.cmp(&q.index)));
    splats
}

/// One accepted splat contribution at a pixel.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    /// Row-major pixel index.
    pub pixel: usize,
    pub gaussian: usize,
    pub z: f64,
    /// Compositing weight `α·T` before this splat.
    pub weight: f64,
    /// Accumulated opacity `1 − T` after this splat.
    pub accumulated: f64,
}

/// Composites `cloud` into `cam` front to back, calling `visit` for every
/// contribution in depth order per pixel. Returns per-pixel accumulated opacity.
pub fn composite(
    cloud: &GaussianCloud,
    cam: &CameraModel,
    params: &SplatParams,
    mut visit: impl FnMut(Contribution),
) -> Vec<f64> {
    let width = cam.width as usize;
    let mut transmittance = vec![1.0f64; cam.pixel_count()];
    for sp in prepare(cloud, cam, params.dilation) {
        let [ca, cb, cc] = sp.conic;
        for y in sp.y0..=sp.y1 {
            let dy = y as f64 - sp.v;
            let row = y as usize * width;
            for x in sp.x0..=sp.x1 {
                let pixel = row + x as usize;
                let t = transmittance[pixel];
                if t < T_MIN {
                    continue;
                }
                let dx = x as f64 - sp.u;
                let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
                if q > CUTOFF_SIGMA * CUTOFF_SIGMA {
                    continue;
                }
                let alpha = (sp.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                if alpha < ALPHA_MIN {
                    continue;
                }
                let after = t * (1.0 - alpha);
                transmittance[pixel] = after;
                visit(Contribution {
                    pixel,
                    gaussian: sp.index,
                    z: sp.z,
                    weight: alpha * t,
                    accumulated: 1.0 - after,
                });
            }
        }
    }
    transmittance.into_iter().map(|t| 1.0 - t).collect()
}

/// First-surface depth per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub view_id: String,
    pub width: u32,
    pub height: u32,
    /// Camera-frame z in meters, `+∞` where no surface was reached.
    pub depth: Vec<f64>,
    pub opacity_accum: Vec<f64>,
    /// Gaussian at which the surface threshold was crossed.
    pub front_index: Vec<Option<u32>>,
}

impl DepthMap {
    pub fn empty(view_id: impl Into<String>, width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            view_id: view_id.into(),
            width,
            height,
            depth: vec![f64::INFINITY; n],
            opacity_accum: vec![0.0; n],
            front_index: vec![None; n],
        }
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    pub fn front_at(&self, x: u32, y: u32) -> Option<usize> {
        self.front_index[y as usize * self.width as usize + x as usize].map(|i| i as usize)
    }

    /// Binary dump: `GSDEPTH1`, width and height as u32 LE, then row-major
    /// f32 LE depths (`inf` for empty pixels).
    pub fn write_binary(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(DEPTH_MAGIC)?;
        out.write_all(&self.width.to_le_bytes())?;
        out.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.depth.len() * 4);
        for d in &self.depth {
            buf.extend_from_slice(&(*d as f32).to_le_bytes());
        }
        out.write_all(&buf)
    }

    /// Reads a dump written by [`DepthMap::write_binary`] (depth only).
    pub fn read_binary(view_id: impl Into<String>, mut input: impl Read) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut head = [0u8; 16];
        input.read_exact(&mut head)?;
        if &head[..8] != DEPTH_MAGIC {
            return Err(bad("not a depth dump"));
        }
        let width = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let height = u32::from_le_bytes(head[12..16].try_into().unwrap());
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        let n = width as usize * height as usize;
        if body.len() != n * 4 {
            return Err(bad("depth payload length does not match header"));
        }
        let mut map = Self::empty(view_id, width, height);
        for (d, chunk) in map.depth.iter_mut().zip(body.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        Ok(map)
    }
}

const DEPTH_MAGIC: &[u8; 8] = b"GSDEPTH1";

/// Renders first-surface depth: the z of the Gaussian at which accumulated
/// opacity first reaches `params.front_threshold`.
pub fn render_depth(cloud: &GaussianCloud, cam: &CameraModel, params: &SplatParams) -> DepthMap {
    let mut map = DepthMap::empty(cam.view_id.clone(), cam.width, cam.height);
    let threshold = params.front_threshold;
    let (depth, front) = (&mut map.depth, &mut map.front_index);
    map.opacity_accum = composite(cloud, cam, params, |c| {
        if front[c.pixel].is_none() && c.accumulated >= threshold {
            depth[c.pixel] = c.z;
            front[c.pixel] = Some(c.gaussian as u32);
        }
    });
    map
}
