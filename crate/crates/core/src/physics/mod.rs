//! Mass, hardness and grip-force estimates from an annotated cloud.

mod calibration;
mod grasp;
mod gripper;
mod hardness;
mod parts;
mod plan;

use std::path::PathBuf;

pub use calibration::ForceCurve;
pub use grasp::{f_max, f_min, f_star, FmaxBranch, Fmax, ForceChoice, SurfaceParams, G};
pub use gripper::GripperProfile;
pub use hardness::{hardness_at, HardnessReading};
pub use parts::{
    estimate_mass, estimate_volumes, part_masses, total_mass, voxel_of, Part, PartDecomposition, VolumeOptions, Voxel,
};
pub use plan::{plan_from_parts, plan_grasp, GraspOverrides, GraspPlan, PartSummary};

#[derive(Debug, thiserror::Error)]
pub enum PhysicsError {
    #[error("property field is empty")]
    EmptyField,
    #[error("cloud has {cloud} Gaussians but the field has {field} entries")]
    CountMismatch { cloud: usize, field: usize },
    #[error("Gaussian {index} has no material; run propagation first")]
    Unresolved { index: usize },
    #[error("material ordinal {0} is not in the library")]
    UnknownMaterial(u16),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no part with id {0}")]
    NoSuchPart(u32),
    #[error("pixel ({x}, {y}) is outside the image")]
    PixelOutOfBounds { x: u32, y: u32 },
    #[error("pixel ({x}, {y}) sees no surface")]
    EmptyPixel { x: u32, y: u32 },
    #[error("calibration needs at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("degree-{degree} calibration fit is not increasing near N_GF = {at:.2}; try a lower degree")]
    NonMonotone { degree: usize, at: f64 },
    #[error("gripper profile: {0}")]
    Gripper(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}
