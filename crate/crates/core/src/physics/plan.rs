use nalgebra::Vector3;
use serde::Serialize;

use super::grasp::{f_max, f_min, f_star, Fmax, ForceChoice, SurfaceParams};
use super::gripper::GripperProfile;
use super::parts::{estimate_volumes, part_masses, PartDecomposition, VolumeOptions};
use super::PhysicsError;
use crate::lifting::PropertyField;
use crate::materials::MaterialLibrary;
use crate::scene_io::GaussianCloud;
use crate::spatial::PointIndex;

/// Values that replace the estimates `plan_grasp` would otherwise derive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraspOverrides {
    /// Where the fingers touch; defaults to the cloud centroid.
    pub contact_point: Option<Vector3<f64>>,
    pub force_bearing_part: Option<u32>,
    /// 0 = x, 1 = y, 2 = z. Defaults to the part's narrowest axis.
    pub grasp_axis: Option<usize>,
    pub area: Option<f64>,
    pub thickness: Option<f64>,
    pub kappa_max: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartSummary {
    pub part_id: u32,
    pub material_id: String,
    pub gaussians: usize,
    /// m³
    pub volume: f64,
    /// kg
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspPlan {
    pub parts: Vec<PartSummary>,
    pub total_mass: f64,
    pub force_bearing_part: u32,
    pub force_bearing_material: String,
    pub friction_mu: f64,
    pub theta: f64,
    pub grasp_axis: usize,
    pub surface: SurfaceParams,
    pub f_max_detail: Fmax,
    pub force: ForceChoice,
    /// F_min at the low and high ends of every part's density range.
    pub f_min_band: (f64, f64),
    /// F_max at the low and high ends of the force-bearing Young's modulus range.
    pub f_max_band: (f64, f64),
    pub eta: f64,
    pub gripper_range: (f64, f64),
    pub normalized_command: f64,
}

impl GraspPlan {
    pub fn f_min(&self) -> f64 {
        self.force.f_min
    }

    pub fn f_max(&self) -> f64 {
        self.force.f_max
    }

    pub fn f_star(&self) -> f64 {
        self.force.f_star
    }

    pub fn feasible(&self) -> bool {
        self.force.feasible
    }

    /// TOML report with every intermediate quantity.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }
}

/// Volumes, masses and the commanded grip force for an annotated cloud.
pub fn plan_grasp(
    cloud: &GaussianCloud,
    field: &PropertyField,
    library: &MaterialLibrary,
    gripper: &GripperProfile,
    volume: &VolumeOptions,
    overrides: &GraspOverrides,
) -> Result<GraspPlan, PhysicsError> {
    let parts = estimate_volumes(cloud, field, volume)?;
    plan_from_parts(cloud, &parts, library, gripper, overrides)
}

pub fn plan_from_parts(
    cloud: &GaussianCloud,
    parts: &PartDecomposition,
    library: &MaterialLibrary,
    gripper: &GripperProfile,
    overrides: &GraspOverrides,
) -> Result<GraspPlan, PhysicsError> {
    let curve = gripper.force_curve()?;
    let masses = part_masses(parts, library)?;
    let record = |o: u16| library.by_ordinal(o).ok_or(PhysicsError::UnknownMaterial(o));

    let s = match overrides.force_bearing_part {
        Some(id) => parts.part(id).ok_or(PhysicsError::NoSuchPart(id))?,
        None => {
            let contact = overrides
                .contact_point
                .unwrap_or_else(|| cloud.positions.iter().sum::<Vector3<f64>>() / cloud.len().max(1) as f64);
            let (nearest, _) = PointIndex::new(&cloud.positions)
                .nearest(&contact, 1)
                .into_iter()
                .next()
                .ok_or(PhysicsError::EmptyField)?;
            parts
                .parts
                .iter()
                .find(|p| p.gaussians.binary_search(&nearest).is_ok())
                .expect("every Gaussian belongs to a part")
        }
    };
    let s_rec = record(s.material)?;

    let h = parts.voxel_size;
    let extent = |axis: usize| {
        let lo = s.voxels.iter().map(|v| v[axis]).min().unwrap_or(0);
        let hi = s.voxels.iter().map(|v| v[axis]).max().unwrap_or(-1);
        (hi - lo + 1) as f64 * h
    };
    let grasp_axis = match overrides.grasp_axis {
        Some(a) if a < 3 => a,
        Some(a) => return Err(PhysicsError::Gripper(format!("grasp axis {a} is not 0, 1 or 2"))),
        None => (0..3).min_by(|&a, &b| extent(a).total_cmp(&extent(b))).unwrap(),
    };
    let surface = SurfaceParams {
        area: overrides.area.unwrap_or(gripper.tip_area),
        thickness: overrides.thickness.unwrap_or_else(|| extent(grasp_axis)),
        kappa_max: overrides.kappa_max.unwrap_or(gripper.kappa_max),
    };
    let theta = overrides.theta.unwrap_or(gripper.theta);
    let mu = s_rec.friction_mu;

    let fmin = f_min(&masses, mu, theta)?;
    let fmax = f_max(&surface, s_rec.youngs_modulus.nominal, s_rec.yield_stress)?;
    let force = f_star(fmin, fmax.value, gripper.force_range, gripper.eta);

    let band_masses = |pick: fn(&crate::materials::Range) -> f64| -> Result<Vec<f64>, PhysicsError> {
        parts
            .parts
            .iter()
            .map(|p| Ok(pick(&record(p.material)?.density) * p.volume))
            .collect()
    };
    let f_min_band = (
        f_min(&band_masses(|r| r.min)?, mu, theta)?,
        f_min(&band_masses(|r| r.max)?, mu, theta)?,
    );
    let f_max_band = (
        f_max(&surface, s_rec.youngs_modulus.min, s_rec.yield_stress)?.value,
        f_max(&surface, s_rec.youngs_modulus.max, s_rec.yield_stress)?.value,
    );

    let summaries = parts
        .parts
        .iter()
        .zip(&masses)
        .map(|(p, &mass)| {
            Ok(PartSummary {
                part_id: p.part_id,
                material_id: record(p.material)?.id.clone(),
                gaussians: p.gaussians.len(),
                volume: p.volume,
                mass,
            })
        })
        .collect::<Result<Vec<_>, PhysicsError>>()?;
    Ok(GraspPlan {
        parts: summaries,
        total_mass: masses.iter().sum(),
        force_bearing_part: s.part_id,
        force_bearing_material: s_rec.id.clone(),
        friction_mu: mu,
        theta,
        grasp_axis,
        surface,
        f_max_detail: fmax,
        force,
        f_min_band,
        f_max_band,
        eta: gripper.eta,
        gripper_range: gripper.force_range,
        normalized_command: curve.command_for(force.f_star),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::Provenance;
    use crate::synthetic::SyntheticScene;

    fn gripper() -> GripperProfile {
        GripperProfile::parse(
            "force_range = [1.0, 40.0]\neta = 0.1\ncalibration = \"\"\"\n15 6\n30 12\n45 18\n60 24\n80 32\n100 40\n\"\"\"\n",
        )
        .unwrap()
    }

    #[test]
    fn aluminum_block_plan() {
        let lib = MaterialLibrary::seed();
        let scene = SyntheticScene::solid_cube(0.1, 0.005, "aluminum");
        let field = PropertyField::uniform(scene.cloud.len(), "aluminum", &lib).unwrap();
        let plan = plan_grasp(
            &scene.cloud,
            &field,
            &lib,
            &gripper(),
            &VolumeOptions::with_voxel(0.005),
            &GraspOverrides::default(),
        )
        .unwrap();
        assert_eq!(plan.parts.len(), 1);
        assert!((plan.total_mass - 2.7).abs() < 1e-9);
        assert!((plan.surface.thickness - 0.1).abs() < 1e-12);
        let expected = 0.5 * 2.7 * 9.8 / lib.get("aluminum").unwrap().friction_mu;
        assert!((plan.f_min() - expected).abs() < 1e-9);
        assert!(plan.feasible());
        assert!(plan.f_star() >= 1.0 && plan.f_star() <= 40.0);
        assert!(plan.f_min_band.0 <= plan.f_min() && plan.f_min() <= plan.f_min_band.1);
        let text = plan.to_text();
        assert!(text.contains("force_bearing_material = \"aluminum\""));
    }

    #[test]
    fn surface_overrides_reach_f_max() {
        let lib = MaterialLibrary::seed();
        let scene = SyntheticScene::solid_cube(0.1, 0.01, "pine");
        let field = PropertyField::uniform(scene.cloud.len(), "pine", &lib).unwrap();
        let over = GraspOverrides {
            area: Some(0.00011),
            thickness: Some(0.002),
            kappa_max: Some(0.5),
            ..GraspOverrides::default()
        };
        let plan = plan_grasp(&scene.cloud, &field, &lib, &gripper(), &VolumeOptions::with_voxel(0.01), &over).unwrap();
        let pine = lib.get("pine").unwrap();
        let expected = (0.00011 * pine.yield_stress).min(0.5 * 0.00011 * pine.youngs_modulus.nominal * 0.002 * 0.5);
        assert!((plan.f_max() - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn unresolved_field_rejected() {
        let lib = MaterialLibrary::seed();
        let scene = SyntheticScene::solid_cube(0.05, 0.01, "pine");
        let n = scene.cloud.len();
        let field = PropertyField::from_ordinals(vec![0; n], vec![Provenance::Unresolved; n], &lib).unwrap();
        let r = plan_grasp(
            &scene.cloud,
            &field,
            &lib,
            &gripper(),
            &VolumeOptions::default(),
            &GraspOverrides::default(),
        );
        assert!(matches!(r, Err(PhysicsError::Unresolved { .. })));
    }
}
