//! Pinhole cameras from transforms-style JSON or COLMAP text exports.
//!
//! Stored extrinsics are always world→camera (`x_cam = R·x_world + t`) with
//! the camera looking down +z, +y down (the COLMAP/OpenCV convention).

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::Deserialize;

use super::SceneIoError;

/// Rotations further than this from orthonormal are rejected.
const ORTHONORMAL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub view_id: String,
    /// `[[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`, pixels.
    pub intrinsics: Matrix3<f64>,
    /// World→camera rotation.
    pub rotation: Matrix3<f64>,
    /// World→camera translation, meters.
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
    /// Image file name as referenced by the camera file, if any.
    pub image_name: Option<String>,
}

impl CameraModel {
    pub fn from_intrinsics(
        view_id: impl Into<String>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Self {
        Self {
            view_id: view_id.into(),
            intrinsics: Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0),
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            width,
            height,
            image_name: None,
        }
    }

    /// Sets the pose from a camera→world rotation and camera center.
    pub fn with_camera_to_world(mut self, rotation: Matrix3<f64>, center: Vector3<f64>) -> Self {
        self.rotation = rotation.transpose();
        self.translation = -(self.rotation * center);
        self
    }

    /// Places the camera at `eye` looking at `target`; `up` is the world up
    /// direction used to fix the roll.
    pub fn looking_at(self, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let c2w = Matrix3::from_columns(&[right, down, forward]);
        self.with_camera_to_world(c2w, eye)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }

    pub fn validate(&self) -> Result<(), SceneIoError> {
        let invalid = |reason: String| SceneIoError::InvalidCamera {
            view: self.view_id.clone(),
            reason,
        };
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image dimensions must be positive".into()));
        }
        let k = &self.intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(invalid("intrinsics must be upper-triangular with K[2][2] = 1".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(invalid("focal lengths must be positive".into()));
        }
        let deviation = self.orthonormality_error();
        if !(deviation <= ORTHONORMAL_TOLERANCE) {
            return Err(SceneIoError::NonOrthonormal {
                view: self.view_id.clone(),
                deviation,
            });
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(invalid("translation is not finite".into()));
        }
        Ok(())
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraFormat {
    TransformsJson,
    ColmapText,
}

impl std::str::FromStr for CameraFormat {
    type Err = SceneIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transforms_json" | "transforms" | "json" => Ok(Self::TransformsJson),
            "colmap_text" | "colmap" => Ok(Self::ColmapText),
            other => Err(SceneIoError::UnknownCameraFormat(other.to_string())),
        }
    }
}

/// Raw camera file contents.
#[derive(Debug, Clone, Copy)]
pub enum CameraSource<'a> {
    TransformsJson(&'a [u8]),
    ColmapText { cameras: &'a [u8], images: &'a [u8] },
}

impl CameraSource<'_> {
    pub fn format(&self) -> CameraFormat {
        match self {
            Self::TransformsJson(_) => CameraFormat::TransformsJson,
            Self::ColmapText { .. } => CameraFormat::ColmapText,
        }
    }
}

pub fn parse_cameras(source: CameraSource<'_>) -> Result<Vec<CameraModel>, SceneIoError> {
    let cams = match source {
        CameraSource::TransformsJson(bytes) => parse_transforms(bytes)?,
        CameraSource::ColmapText { cameras, images } => parse_colmap(cameras, images)?,
    };
    for (i, c) in cams.iter().enumerate() {
        c.validate()?;
        if cams[..i].iter().any(|o| o.view_id == c.view_id) {
            return Err(SceneIoError::InvalidCamera {
                view: c.view_id.clone(),
                reason: "duplicate view id".into(),
            });
        }
    }
    Ok(cams)
}

#[derive(Deserialize, Default, Clone, Copy)]
struct Intrinsics {
    fl_x: Option<f64>,
    fl_y: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
    w: Option<f64>,
    h: Option<f64>,
    camera_angle_x: Option<f64>,
}

impl Intrinsics {
    fn overlay(self, base: Intrinsics) -> Intrinsics {
        Intrinsics {
            fl_x: self.fl_x.or(base.fl_x),
            fl_y: self.fl_y.or(base.fl_y),
            cx: self.cx.or(base.cx),
            cy: self.cy.or(base.cy),
            w: self.w.or(base.w),
            h: self.h.or(base.h),
            camera_angle_x: self.camera_angle_x.or(base.camera_angle_x),
        }
    }
}

#[derive(Deserialize)]
struct Frame {
    file_path: Option<String>,
    view_id: Option<String>,
    transform_matrix: Option<Vec<Vec<f64>>>,
    #[serde(flatten)]
    intrinsics: Intrinsics,
}

#[derive(Deserialize)]
struct TransformsFile {
    /// `opencv` (default: +z forward, +y down) or `opengl` (−z forward, +y up).
    convention: Option<String>,
    #[serde(flatten)]
    intrinsics: Intrinsics,
    frames: Option<Vec<Frame>>,
}

fn parse_transforms(bytes: &[u8]) -> Result<Vec<CameraModel>, SceneIoError> {
    let file: TransformsFile = serde_json::from_slice(bytes)?;
    let flip = match file.convention.as_deref() {
        None | Some("opencv") => false,
        Some("opengl") => true,
        Some(other) => {
            return Err(SceneIoError::InvalidCamera {
                view: String::new(),
                reason: format!("unknown convention `{other}`"),
            })
        }
    };
    let frames = file.frames.ok_or_else(|| SceneIoError::MissingField("frames".into()))?;
    let mut out = Vec::with_capacity(frames.len());
    for (idx, frame) in frames.into_iter().enumerate() {
        let view_id = frame
            .view_id
            .clone()
            .or_else(|| frame.file_path.as_deref().map(file_stem))
            .unwrap_or_else(|| format!("{idx:04}"));
        let intr = frame.intrinsics.overlay(file.intrinsics);
        let w = intr.w.ok_or_else(|| SceneIoError::MissingField("w".into()))?;
        let h = intr.h.ok_or_else(|| SceneIoError::MissingField("h".into()))?;
        let fx = match (intr.fl_x, intr.camera_angle_x) {
            (Some(f), _) => f,
            (None, Some(angle)) => 0.5 * w / (0.5 * angle).tan(),
            (None, None) => return Err(SceneIoError::MissingField("fl_x".into())),
        };
        let fy = intr.fl_y.unwrap_or(fx);
        let cx = intr.cx.unwrap_or(w / 2.0);
        let cy = intr.cy.unwrap_or(h / 2.0);
        let m = frame
            .transform_matrix
            .ok_or_else(|| SceneIoError::MissingField("transform_matrix".into()))?;
        if m.len() < 3 || m.iter().take(4).any(|row| row.len() != 4) {
            return Err(SceneIoError::InvalidCamera {
                view: view_id,
                reason: "transform_matrix must be 4x4 (or 3x4)".into(),
            });
        }
        let c2w = Matrix4::from_fn(|r, c| if r < m.len() { m[r][c] } else if c == 3 { 1.0 } else { 0.0 });
        if m.len() == 4 && (c2w.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).amax() > 1e-9 {
            return Err(SceneIoError::InvalidCamera {
                view: view_id,
                reason: "transform_matrix bottom row must be (0, 0, 0, 1)".into(),
            });
        }
        let mut rot = c2w.fixed_view::<3, 3>(0, 0).into_owned();
        if flip {
            rot *= Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        }
        let center = c2w.fixed_view::<3, 1>(0, 3).into_owned();
        let deviation = orthonormality_error(&rot);
        if !(deviation <= ORTHONORMAL_TOLERANCE) {
            return Err(SceneIoError::NonOrthonormal { view: view_id, deviation });
        }
        let dim = |v: f64, name: &str| -> Result<u32, SceneIoError> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(SceneIoError::InvalidCamera {
                    view: view_id.clone(),
                    reason: format!("{name} = {v} is not a positive integer"),
                })
            }
        };
        let (width, height) = (dim(w, "w")?, dim(h, "h")?);
        let mut cam = CameraModel::from_intrinsics(view_id, fx, fy, cx, cy, width, height)
            .with_camera_to_world(rot, center);
        cam.image_name = frame.file_path;
        out.push(cam);
    }
    Ok(out)
}

/// Serializes cameras as transforms-style JSON in the OpenCV convention,
/// readable by [`parse_cameras`].
pub fn write_transforms_json(cameras: &[CameraModel]) -> String {
    let frames: Vec<serde_json::Value> = cameras
        .iter()
        .map(|c| {
            let c2w = c.rotation.transpose();
            let center = c.center();
            let row = |r: usize| [c2w[(r, 0)], c2w[(r, 1)], c2w[(r, 2)], center[r]];
            let mut frame = serde_json::json!({
                "view_id": c.view_id,
                "w": c.width,
                "h": c.height,
                "fl_x": c.intrinsics[(0, 0)],
                "fl_y": c.intrinsics[(1, 1)],
                "cx": c.intrinsics[(0, 2)],
                "cy": c.intrinsics[(1, 2)],
                "transform_matrix": [row(0), row(1), row(2), [0.0, 0.0, 0.0, 1.0]],
            });
            if let Some(name) = &c.image_name {
                frame["file_path"] = name.clone().into();
            }
            frame
        })
        .collect();
    let doc = serde_json::json!({ "convention": "opencv", "frames": frames });
    serde_json::to_string_pretty(&doc).expect("JSON value serializes") + "\n"
}

fn file_stem(path: &str) -> String {
    std::path::Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

struct ColmapCamera {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn content_lines(bytes: &[u8]) -> Result<Vec<(usize, &str)>, SceneIoError> {
    let text = std::str::from_utf8(bytes).map_err(|_| SceneIoError::Syntax {
        line: 0,
        reason: "not valid UTF-8".into(),
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
        .collect())
}

fn parse_colmap(cameras: &[u8], images: &[u8]) -> Result<Vec<CameraModel>, SceneIoError> {
    let syntax = |line: usize, reason: String| SceneIoError::Syntax { line, reason };
    let mut intrinsics = std::collections::HashMap::new();
    for (line, text) in content_lines(cameras)? {
        if text.is_empty() {
            continue;
        }
        let tok: Vec<&str> = text.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(syntax(line, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| syntax(line, format!("bad number `{s}`")));
        let params = tok[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        let (fx, fy, cx, cy) = match (tok[1], params.as_slice()) {
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            (model, _) => return Err(syntax(line, format!("unsupported or malformed camera model `{model}`"))),
        };
        let dim = |s: &str| s.parse::<u32>().map_err(|_| syntax(line, format!("bad dimension `{s}`")));
        intrinsics.insert(
            tok[0].to_string(),
            ColmapCamera {
                width: dim(tok[2])?,
                height: dim(tok[3])?,
                fx,
                fy,
                cx,
                cy,
            },
        );
    }

    let lines = content_lines(images)?;
    let mut out = Vec::new();
    // Each image is an IMAGE line followed by a (possibly empty) POINTS2D line.
    let mut i = 0;
    while i < lines.len() {
        let (line, text) = lines[i];
        if text.is_empty() && out.is_empty() {
            i += 1;
            continue;
        }
        if text.is_empty() {
            break;
        }
        let tok: Vec<&str> = text.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(syntax(line, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| syntax(line, format!("bad number `{s}`")));
        let q = Quaternion::new(num(tok[1])?, num(tok[2])?, num(tok[3])?, num(tok[4])?);
        if (q.norm() - 1.0).abs() > 1e-3 {
            return Err(syntax(line, format!("quaternion norm {} is not unit", q.norm())));
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        let translation = Vector3::new(num(tok[5])?, num(tok[6])?, num(tok[7])?);
        let cam = intrinsics
            .get(tok[8])
            .ok_or_else(|| syntax(line, format!("unknown CAMERA_ID {}", tok[8])))?;
        let name = tok[9..].join(" ");
        let mut model = CameraModel::from_intrinsics(file_stem(&name), cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height);
        model.rotation = rotation;
        model.translation = translation;
        model.image_name = Some(name);
        out.push(model);
        i += 2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_writer_round_trips() {
        let cam = CameraModel::from_intrinsics("v3", 310.0, 305.0, 160.5, 119.5, 320, 240).looking_at(
            Vector3::new(1.0, -0.4, 0.8),
            Vector3::new(0.0, 0.0, 0.15),
            Vector3::z(),
        );
        let text = write_transforms_json(std::slice::from_ref(&cam));
        let back = parse_cameras(CameraSource::TransformsJson(text.as_bytes())).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].view_id, "v3");
        assert_eq!(back[0].intrinsics, cam.intrinsics);
        assert!((back[0].rotation - cam.rotation).amax() < 1e-12);
        assert!((back[0].translation - cam.translation).amax() < 1e-12);
    }
    use approx::assert_relative_eq;

    #[test]
    fn identity_pose_transforms() {
        let json = br#"{"fl_x": 100, "fl_y": 100, "cx": 50, "cy": 50, "w": 100, "h": 100,
            "frames": [{"file_path": "images/a.png",
                        "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#;
        let cams = parse_cameras(CameraSource::TransformsJson(json)).unwrap();
        assert_eq!(cams.len(), 1);
        let c = &cams[0];
        assert_eq!(c.intrinsics, Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0));
        assert_eq!(c.rotation, Matrix3::identity());
        assert_eq!(c.translation, Vector3::zeros());
        assert_eq!(c.view_id, "a");
        assert_eq!((c.width, c.height), (100, 100));
    }

    #[test]
    fn camera_to_world_is_inverted() {
        let json = br#"{"fl_x": 100, "w": 100, "h": 100,
            "frames": [{"transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,-2],[0,0,0,1]]},
                       {"transform_matrix": [[0,-1,0,1],[1,0,0,2],[0,0,1,3],[0,0,0,1]]}]}"#;
        let cams = parse_cameras(CameraSource::TransformsJson(json)).unwrap();
        assert_eq!(cams[0].translation, Vector3::new(0.0, 0.0, 2.0));
        assert_ne!(cams[0].view_id, cams[1].view_id);
        // Hand inversion: R_w2c = R_c2wᵀ, t = −R_c2wᵀ·c.
        let r = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(cams[1].rotation, r);
        assert_relative_eq!(cams[1].translation, Vector3::new(-2.0, 1.0, -3.0));
        assert_relative_eq!(cams[1].center(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn opengl_convention_flips_axes() {
        let json = br#"{"convention": "opengl", "fl_x": 100, "w": 100, "h": 100,
            "frames": [{"transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,2],[0,0,0,1]]}]}"#;
        let cam = &parse_cameras(CameraSource::TransformsJson(json)).unwrap()[0];
        // Origin is in front of a camera at z=2 looking down −z.
        let p = cam.rotation * Vector3::zeros() + cam.translation;
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn rejects_non_orthonormal_and_missing_fields() {
        let json = br#"{"fl_x": 100, "w": 100, "h": 100,
            "frames": [{"transform_matrix": [[1.01,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#;
        assert!(matches!(
            parse_cameras(CameraSource::TransformsJson(json)).unwrap_err(),
            SceneIoError::NonOrthonormal { .. }
        ));
        let json = br#"{"fl_x": 100, "w": 100, "frames": [{"transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#;
        assert!(matches!(
            parse_cameras(CameraSource::TransformsJson(json)).unwrap_err(),
            SceneIoError::MissingField(f) if f == "h"
        ));
        assert!(matches!("npz".parse::<CameraFormat>(), Err(SceneIoError::UnknownCameraFormat(_))));
    }

    #[test]
    fn camera_angle_gives_focal() {
        let angle = 2.0 * (0.5f64).atan();
        let json = format!(r#"{{"camera_angle_x": {angle}, "w": 100, "h": 80, "frames": [{{"transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}}]}}"#);
        let cam = &parse_cameras(CameraSource::TransformsJson(json.as_bytes())).unwrap()[0];
        assert_relative_eq!(cam.intrinsics[(0, 0)], 100.0, epsilon = 1e-9);
        assert_eq!(cam.intrinsics[(1, 2)], 40.0);
    }

    #[test]
    fn colmap_text_pair() {
        let cameras = b"# Camera list\n1 PINHOLE 640 480 500 510 320 240\n2 SIMPLE_PINHOLE 100 100 80 50 50\n";
        let images = b"# Image list\n1 1 0 0 0 0.1 0.2 0.3 1 left.jpg\n10 20 -1\n2 0.7071067811865476 0 0.7071067811865476 0 0 0 2 2 right.jpg\n\n";
        let cams = parse_cameras(CameraSource::ColmapText { cameras, images }).unwrap();
        assert_eq!(cams.len(), 2);
        assert_eq!(cams[0].view_id, "left");
        assert_eq!(cams[0].translation, Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(cams[0].intrinsics[(1, 1)], 510.0);
        assert_eq!(cams[1].intrinsics[(0, 0)], 80.0);
        assert!(cams[1].orthonormality_error() <= 1e-4);
        // 90° about y maps world +x to camera −z.
        assert_relative_eq!(cams[1].rotation * Vector3::x(), -Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn colmap_rejects_distortion_models() {
        let cameras = b"1 OPENCV 640 480 500 500 320 240 0.1 0 0 0\n";
        let images = b"1 1 0 0 0 0 0 0 1 a.jpg\n\n";
        assert!(matches!(
            parse_cameras(CameraSource::ColmapText { cameras, images }).unwrap_err(),
            SceneIoError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn look_at_points_forward() {
        let cam = CameraModel::from_intrinsics("v", 100.0, 100.0, 50.0, 50.0, 100, 100).looking_at(
            Vector3::new(0.0, -3.0, 1.0),
            Vector3::zeros(),
            Vector3::z(),
        );
        assert!(cam.orthonormality_error() < 1e-12);
        let p = cam.rotation * Vector3::zeros() + cam.translation;
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 10f64.sqrt()), epsilon = 1e-12);
        assert_relative_eq!(cam.center(), Vector3::new(0.0, -3.0, 1.0), epsilon = 1e-12);
    }
}
