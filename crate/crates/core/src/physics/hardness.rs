use serde::Serialize;

use super::PhysicsError;
use crate::lifting::{DepthMap, PropertyField};
use crate::materials::{MaterialLibrary, ShoreHardness, ShoreScale};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardnessReading {
    pub gaussian: usize,
    pub material_id: String,
    pub scale: ShoreScale,
    /// Range on the material's own scale.
    pub min: f64,
    pub max: f64,
    /// Range midpoint on the unified axis: Shore A on 0-100, Shore D on 100-200.
    pub unified: f64,
}

/// Shore hardness of the front surface seen through pixel `(x, y)`.
pub fn hardness_at(
    x: u32,
    y: u32,
    depth: &DepthMap,
    field: &PropertyField,
    library: &MaterialLibrary,
) -> Result<HardnessReading, PhysicsError> {
    if x >= depth.width || y >= depth.height {
        return Err(PhysicsError::PixelOutOfBounds { x, y });
    }
    let g = depth.front_at(x, y).ok_or(PhysicsError::EmptyPixel { x, y })?;
    let ordinal = *field.ordinals.get(g).ok_or(PhysicsError::CountMismatch {
        cloud: g + 1,
        field: field.len(),
    })?;
    if ordinal == 0 {
        return Err(PhysicsError::Unresolved { index: g });
    }
    let record = library.by_ordinal(ordinal).ok_or(PhysicsError::UnknownMaterial(ordinal))?;
    Ok(reading(g, &record.id, &record.shore_hardness))
}

fn reading(gaussian: usize, id: &str, h: &ShoreHardness) -> HardnessReading {
    HardnessReading {
        gaussian,
        material_id: id.to_string(),
        scale: h.scale,
        min: h.min,
        max: h.max,
        unified: h.unified_midpoint(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{render_depth, SplatParams};
    use crate::scene_io::{CameraModel, GaussianCloud};
    use nalgebra::Vector3;

    #[test]
    fn midpoints_on_unified_axis() {
        let a = ShoreHardness {
            scale: ShoreScale::A,
            min: 60.0,
            max: 80.0,
        };
        assert_eq!(reading(0, "x", &a).unified, 70.0);
        let d = ShoreHardness {
            scale: ShoreScale::D,
            min: 40.0,
            max: 60.0,
        };
        assert_eq!(reading(0, "x", &d).unified, 150.0);
    }

    #[test]
    fn front_surface_decides_and_background_errors() {
        let lib = MaterialLibrary::seed();
        let mut cloud = GaussianCloud::default();
        cloud.push(Vector3::new(0.0, 0.0, 2.0), 0.99, Vector3::repeat(0.05), [1.0, 0.0, 0.0, 0.0]);
        cloud.push(Vector3::new(0.0, 0.0, 3.0), 0.99, Vector3::repeat(0.05), [1.0, 0.0, 0.0, 0.0]);
        let cam = CameraModel::from_intrinsics("v", 100.0, 100.0, 50.0, 50.0, 100, 100);
        let depth = render_depth(&cloud, &cam, &SplatParams::default());
        let (rubber, steel) = (lib.ordinal("natural_rubber").unwrap(), lib.ordinal("steel").unwrap());
        let field = PropertyField::from_ordinals(
            vec![rubber, steel],
            vec![crate::lifting::Provenance::Voted { observations: 1 }; 2],
            &lib,
        )
        .unwrap();
        let r = hardness_at(50, 50, &depth, &field, &lib).unwrap();
        assert_eq!(r.gaussian, 0);
        assert_eq!(r.material_id, "natural_rubber");
        assert_eq!(r.scale, ShoreScale::A);
        assert!(matches!(
            hardness_at(0, 0, &depth, &field, &lib),
            Err(PhysicsError::EmptyPixel { .. })
        ));
        assert!(matches!(
            hardness_at(100, 0, &depth, &field, &lib),
            Err(PhysicsError::PixelOutOfBounds { .. })
        ));
    }
}
