//! Lifting per-view material maps onto Gaussians.
//!
//! Each view is rendered to a first-surface depth map; every Gaussian center
//! is projected into every view and, where it is not occluded, picks up the
//! material ordinal under it. The most frequent ordinal wins. Gaussians seen
//! in no view borrow the majority label of their nearest labeled neighbours.

mod project;
mod render;
mod voting;

pub use project::{project_point, Projection, Z_NEAR};
pub use render::{composite, render_depth, Contribution, DepthMap, SplatParams};
pub use voting::{
    decide, gather_votes, propagate, propagate_ordinals, scene_counts, visible, vote, votes_text, PropertyVote,
    Visibility,
};

use rayon::prelude::*;

use crate::materials::MaterialLibrary;
use crate::scene_io::{CameraModel, GaussianCloud, LabelMap};

#[derive(Debug, thiserror::Error)]
pub enum LiftError {
    #[error("{cameras} cameras but {maps} material maps")]
    CountMismatch { cameras: usize, maps: usize },
    #[error("view {view}: material map is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    MapDimension {
        view: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("material ordinal {0} is not in the library")]
    UnknownOrdinal(u16),
    #[error("no Gaussian received a label from any view")]
    NothingResolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Voted { observations: u32 },
    /// Copied from the nearest resolved Gaussian carrying the winning label.
    Propagated { source: u32 },
    Unresolved,
}

/// Per-Gaussian material assignment with resolved nominal properties.
/// Unresolved entries have ordinal 0 and NaN scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyField {
    pub ordinals: Vec<u16>,
    pub provenance: Vec<Provenance>,
    /// kg/m³
    pub density: Vec<f64>,
    /// Pa
    pub youngs_modulus: Vec<f64>,
    pub poisson_ratio: Vec<f64>,
    pub friction_mu: Vec<f64>,
    /// Pa
    pub yield_stress: Vec<f64>,
}

impl PropertyField {
    pub fn from_ordinals(
        ordinals: Vec<u16>,
        provenance: Vec<Provenance>,
        library: &MaterialLibrary,
    ) -> Result<Self, LiftError> {
        assert_eq!(ordinals.len(), provenance.len());
        let table = library.ordinal_table();
        let n = ordinals.len();
        let mut f = Self {
            ordinals,
            provenance,
            density: Vec::with_capacity(n),
            youngs_modulus: Vec::with_capacity(n),
            poisson_ratio: Vec::with_capacity(n),
            friction_mu: Vec::with_capacity(n),
            yield_stress: Vec::with_capacity(n),
        };
        for &o in &f.ordinals {
            let rec = match o {
                0 => None,
                _ => Some(*table.get(o as usize - 1).ok_or(LiftError::UnknownOrdinal(o))?),
            };
            f.density.push(rec.map_or(f64::NAN, |r| r.density.nominal));
            f.youngs_modulus.push(rec.map_or(f64::NAN, |r| r.youngs_modulus.nominal));
            f.poisson_ratio.push(rec.map_or(f64::NAN, |r| r.poisson_ratio));
            f.friction_mu.push(rec.map_or(f64::NAN, |r| r.friction_mu));
            f.yield_stress.push(rec.map_or(f64::NAN, |r| r.yield_stress));
        }
        Ok(f)
    }

    /// Every Gaussian labeled with material `id`.
    pub fn uniform(n: usize, id: &str, library: &MaterialLibrary) -> Option<Self> {
        let o = library.ordinal(id)?;
        Self::from_ordinals(vec![o; n], vec![Provenance::Voted { observations: 1 }; n], library).ok()
    }

    pub fn len(&self) -> usize {
        self.ordinals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordinals.is_empty()
    }

    pub fn unresolved(&self) -> impl Iterator<Item = usize> + '_ {
        self.ordinals.iter().enumerate().filter(|(_, o)| **o == 0).map(|(i, _)| i)
    }

    pub fn is_fully_resolved(&self) -> bool {
        self.unresolved().next().is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftConfig {
    pub splat: SplatParams,
    pub tol_rel: f64,
    /// Neighbours consulted when propagating; 0 disables propagation.
    pub propagate_k: usize,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            splat: SplatParams::default(),
            tol_rel: 0.01,
            propagate_k: 8,
        }
    }
}

/// Everything produced on the way to a [`PropertyField`].
#[derive(Debug, Clone)]
pub struct LiftResult {
    pub field: PropertyField,
    /// Per-Gaussian votes before propagation.
    pub votes: Vec<PropertyVote>,
    pub depths: Vec<DepthMap>,
}

/// Full lifting pass; see the module docs. The result does not depend on the
/// order of `cameras`/`maps`.
pub fn lift(
    cloud: &GaussianCloud,
    cameras: &[CameraModel],
    maps: &[LabelMap],
    library: &MaterialLibrary,
    config: &LiftConfig,
) -> Result<LiftResult, LiftError> {
    if cameras.len() != maps.len() {
        return Err(LiftError::CountMismatch {
            cameras: cameras.len(),
            maps: maps.len(),
        });
    }
    for (cam, map) in cameras.iter().zip(maps) {
        if (map.width, map.height) != (cam.width, cam.height) {
            return Err(LiftError::MapDimension {
                view: cam.view_id.clone(),
                got_w: map.width,
                got_h: map.height,
                want_w: cam.width,
                want_h: cam.height,
            });
        }
        if let Some(&bad) = map.data.iter().find(|&&o| o as usize > library.len()) {
            return Err(LiftError::UnknownOrdinal(bad));
        }
    }

    let depths: Vec<DepthMap> = cameras
        .par_iter()
        .map(|cam| render_depth(cloud, cam, &config.splat))
        .collect();
    let vis = Visibility::for_cloud(cloud, config.tol_rel);
    let mut votes = gather_votes(cloud, cameras, maps, &depths, &vis);
    decide(&mut votes);

    let ordinals: Vec<u16> = votes.iter().map(|v| v.winner.unwrap_or(0)).collect();
    let provenance: Vec<Provenance> = votes
        .iter()
        .map(|v| match v.winner {
            Some(_) => Provenance::Voted {
                observations: v.observations.len() as u32,
            },
            None => Provenance::Unresolved,
        })
        .collect();
    let (ordinals, provenance) = if config.propagate_k > 0 {
        propagate_ordinals(&ordinals, &provenance, cloud, config.propagate_k)?
    } else {
        (ordinals, provenance)
    };
    let field = PropertyField::from_ordinals(ordinals, provenance, library)?;
    Ok(LiftResult { field, votes, depths })
}
