//! Physical-property annotation for 3D Gaussian Splatting scenes.
//!
//! The pipeline lifts per-view material labels onto the Gaussians of a
//! pretrained scene, then derives quantities a simulator or a robot needs:
//! per-Gaussian density/stiffness, object mass, per-point Shore hardness and a
//! safe two-finger grasping force.
//!
//! Stages, in pipeline order:
//!
//! - [`scene_io`]: Gaussian PLY files, camera files, label/mask images.
//! - [`materials`]: the material library and name resolution.
//! - [`perception`]: mask filtering, prompt construction, LMM and segmentation clients.
//! - [`lifting`]: projection, depth rendering, visibility and frequency voting.
//! - [`physics`]: volumes, mass, hardness and grasp-force planning.
//! - [`evaluation`]: label rendering, mIoU and scalar/pairwise metrics.
//! - [`export`]: annotated PLY plus manifest for downstream simulators.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evaluation;
pub mod export;
pub mod lifting;
pub mod materials;
pub mod perception;
pub mod physics;
pub mod scene_io;
pub mod spatial;
pub mod synthetic;

pub use materials::{MaterialLibrary, MaterialRecord};
pub use scene_io::{CameraModel, GaussianCloud, LabelMap, MaskSet};
pub use lifting::{PropertyField, Provenance};
