use nalgebra::Vector3;

use crate::scene_io::CameraModel;

/// Points closer than this to the image plane are treated as behind the camera.
pub const Z_NEAR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth, meters.
    pub z: f64,
    pub behind: bool,
}

impl Projection {
    /// Nearest pixel, if the projection is in front of the camera and inside
    /// the image. Pixel centers sit at integer coordinates.
    pub fn pixel(&self, cam: &CameraModel) -> Option<(u32, u32)> {
        if self.behind {
            return None;
        }
        let (x, y) = (self.u.round(), self.v.round());
        (x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64).then_some((x as u32, y as u32))
    }
}

/// Pinhole projection `x_c = R p + t`, `(u, v) = (K x_c) / z_c`.
pub fn project_point(p: &Vector3<f64>, cam: &CameraModel) -> Projection {
    let xc = cam.rotation * p + cam.translation;
    let z = xc.z;
    let behind = z <= Z_NEAR;
    let k = &cam.intrinsics;
    let (u, v) = if behind {
        (f64::NAN, f64::NAN)
    } else {
        (
            (k[(0, 0)] * xc.x + k[(0, 1)] * xc.y) / z + k[(0, 2)],
            k[(1, 1)] * xc.y / z + k[(1, 2)],
        )
    };
    Projection { u, v, z, behind }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::from_intrinsics("0", 100.0, 100.0, 50.0, 50.0, 100, 100)
    }

    #[test]
    fn principal_axis() {
        let p = project_point(&Vector3::new(0.0, 0.0, 2.0), &cam());
        assert_eq!((p.u, p.v, p.z, p.behind), (50.0, 50.0, 2.0, false));
    }

    #[test]
    fn off_axis() {
        let p = project_point(&Vector3::new(0.5, 0.0, 1.0), &cam());
        assert_eq!((p.u, p.v, p.z), (100.0, 50.0, 1.0));
        assert_eq!(p.pixel(&cam()), None);
    }

    #[test]
    fn behind_camera() {
        let p = project_point(&Vector3::new(0.0, 0.0, -1.0), &cam());
        assert!(p.behind);
        assert_eq!(p.pixel(&cam()), None);
    }
}
