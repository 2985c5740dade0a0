use rayon::prelude::*;

use super::project::project_point;
use super::render::DepthMap;
use super::{LiftError, PropertyField, Provenance};
use crate::scene_io::{CameraModel, GaussianCloud, LabelMap};
use crate::spatial::PointIndex;

/// Depth tolerance for the visibility test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub tol_rel: f64,
    /// Absolute slack in meters added on top of the relative tolerance.
    pub abs_floor: f64,
}

impl Visibility {
    /// Relative tolerance `tol_rel` with an absolute floor of 1e-3 of the
    /// scene's bounding-box diagonal.
    pub fn for_cloud(cloud: &GaussianCloud, tol_rel: f64) -> Self {
        Self {
            tol_rel,
            abs_floor: 1e-3 * cloud.extent(),
        }
    }

    /// Whether a point projects inside the image, in front of the camera, and
    /// no deeper than the rendered surface (within tolerance).
    pub fn visible(&self, p: &nalgebra::Vector3<f64>, cam: &CameraModel, depth: &DepthMap) -> Option<(u32, u32)> {
        let proj = project_point(p, cam);
        let (x, y) = proj.pixel(cam)?;
        (proj.z <= depth.at(x, y) * (1.0 + self.tol_rel) + self.abs_floor).then_some((x, y))
    }
}

/// Visibility of Gaussian `index` of `cloud` in `cam`.
pub fn visible(cloud: &GaussianCloud, index: usize, cam: &CameraModel, depth: &DepthMap, tol_rel: f64) -> bool {
    Visibility::for_cloud(cloud, tol_rel)
        .visible(&cloud.positions[index], cam, depth)
        .is_some()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyVote {
    pub gaussian_index: usize,
    /// `(view_id, material ordinal)`, sorted by view id.
    pub observations: Vec<(String, u16)>,
    pub winner: Option<u16>,
}

/// Collects, per Gaussian, the material ordinal under its projected center in
/// every view where it is visible and the pixel is labeled.
///
/// `cameras`, `maps` and `depths` are parallel slices.
pub fn gather_votes(
    cloud: &GaussianCloud,
    cameras: &[CameraModel],
    maps: &[LabelMap],
    depths: &[DepthMap],
    vis: &Visibility,
) -> Vec<PropertyVote> {
    assert!(cameras.len() == maps.len() && maps.len() == depths.len());
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = &cloud.positions[i];
            let mut observations: Vec<(String, u16)> = cameras
                .iter()
                .zip(maps.iter().zip(depths))
                .filter_map(|(cam, (map, depth))| {
                    let (x, y) = vis.visible(p, cam, depth)?;
                    let label = map.get(x, y);
                    (label != 0).then(|| (cam.view_id.clone(), label))
                })
                .collect();
            observations.sort();
            PropertyVote {
                gaussian_index: i,
                observations,
                winner: None,
            }
        })
        .collect()
}

/// Total observations per ordinal across all votes, indexed by ordinal.
pub fn scene_counts(votes: &[PropertyVote]) -> Vec<u64> {
    let mut counts = Vec::new();
    for (_, o) in votes.iter().flat_map(|v| &v.observations) {
        let o = *o as usize;
        if counts.len() <= o {
            counts.resize(o + 1, 0);
        }
        counts[o] += 1;
    }
    counts
}

/// Most frequent ordinal. Ties go to the ordinal observed more often across
/// the scene (`scene_counts[ordinal]`), then to the smaller ordinal.
pub fn vote(observations: &[u16], scene_counts: &[u64]) -> Option<u16> {
    let mut sorted = observations.to_vec();
    sorted.sort_unstable();
    let scene = |o: u16| scene_counts.get(o as usize).copied().unwrap_or(0);
    let mut best: Option<(usize, u16)> = None;
    for run in sorted.chunk_by(|a, b| a == b) {
        let (n, o) = (run.len(), run[0]);
        let better = match best {
            None => true,
            // Runs arrive in ascending ordinal order, so equal keys keep the smaller one.
            Some((bn, bo)) => n > bn || (n == bn && scene(o) > scene(bo)),
        };
        if better {
            best = Some((n, o));
        }
    }
    best.map(|(_, o)| o)
}

/// Fills in every vote's winner using scene-wide tie-breaking.
pub fn decide(votes: &mut [PropertyVote]) {
    let counts = scene_counts(votes);
    votes.par_iter_mut().for_each(|v| {
        let ords: Vec<u16> = v.observations.iter().map(|o| o.1).collect();
        v.winner = vote(&ords, &counts);
    });
}

/// Labels each unresolved Gaussian with the majority material of its `k`
/// nearest resolved neighbours (ties: the material of the nearest tied
/// neighbour). Resolved entries are left untouched.
pub fn propagate_ordinals(
    ordinals: &[u16],
    provenance: &[Provenance],
    cloud: &GaussianCloud,
    k: usize,
) -> Result<(Vec<u16>, Vec<Provenance>), LiftError> {
    let resolved: Vec<usize> = (0..ordinals.len()).filter(|&i| ordinals[i] != 0).collect();
    if resolved.is_empty() {
        return if ordinals.is_empty() {
            Ok((Vec::new(), Vec::new()))
        } else {
            Err(LiftError::NothingResolved)
        };
    }
    if resolved.len() == ordinals.len() {
        return Ok((ordinals.to_vec(), provenance.to_vec()));
    }
    let points: Vec<_> = resolved.iter().map(|&i| cloud.positions[i]).collect();
    let index = PointIndex::new(&points);

    let filled: Vec<(u16, Provenance)> = (0..ordinals.len())
        .into_par_iter()
        .map(|i| {
            if ordinals[i] != 0 {
                return (ordinals[i], provenance[i]);
            }
            let nn = index.nearest(&cloud.positions[i], k);
            // (count, rank of first occurrence) per ordinal; nn is nearest first.
            let mut tally: Vec<(u16, usize, usize)> = Vec::new();
            for (rank, &(j, _)) in nn.iter().enumerate() {
                let o = ordinals[resolved[j]];
                match tally.iter_mut().find(|t| t.0 == o) {
                    Some(t) => t.1 += 1,
                    None => tally.push((o, 1, rank)),
                }
            }
            let &(o, _, rank) = tally
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
                .expect("index is non-empty");
            let source = resolved[nn[rank].0] as u32;
            (o, Provenance::Propagated { source })
        })
        .collect();
    Ok(filled.into_iter().unzip())
}

/// Propagates labels into the unresolved entries of `field`.
pub fn propagate(
    field: &PropertyField,
    cloud: &GaussianCloud,
    library: &crate::materials::MaterialLibrary,
    k: usize,
) -> Result<PropertyField, LiftError> {
    let (ordinals, provenance) = propagate_ordinals(&field.ordinals, &field.provenance, cloud, k)?;
    PropertyField::from_ordinals(ordinals, provenance, library)
}

/// Line-oriented vote dump: `gaussian_index view_id ordinal`.
pub fn votes_text(votes: &[PropertyVote]) -> String {
    let mut out = String::new();
    for v in votes {
        for (view, o) in &v.observations {
            out.push_str(&format!("{} {} {}\n", v.gaussian_index, view, o));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn majority_and_empty() {
        assert_eq!(vote(&[1, 1, 2], &[]), Some(1));
        assert_eq!(vote(&[], &[]), None);
    }

    #[test]
    fn tie_prefers_scene_frequency_then_smaller() {
        // wood = 1, metal = 2
        let mut counts = vec![0; 3];
        counts[1] = 900;
        counts[2] = 100;
        assert_eq!(vote(&[2, 1], &counts), Some(1));
        counts[2] = 1000;
        assert_eq!(vote(&[2, 1], &counts), Some(2));
        counts[2] = 900;
        assert_eq!(vote(&[2, 1], &counts), Some(1));
    }

    fn grid_cloud() -> GaussianCloud {
        let mut cloud = GaussianCloud::default();
        for x in -1..=1 {
            for y in -1..=1 {
                for z in -1..=1 {
                    let p = Vector3::new(x as f64, y as f64, z as f64);
                    cloud.push(p, 1.0, Vector3::repeat(0.1), [1.0, 0.0, 0.0, 0.0]);
                }
            }
        }
        cloud
    }

    #[test]
    fn surrounded_gaussian_takes_neighbours_material() {
        let cloud = grid_cloud();
        let centre = 13;
        let mut ords = vec![1u16; 27];
        ords[centre] = 0;
        let prov: Vec<_> = (0..27)
            .map(|i| if i == centre { Provenance::Unresolved } else { Provenance::Voted { observations: 1 } })
            .collect();
        let (o, p) = propagate_ordinals(&ords, &prov, &cloud, 8).unwrap();
        assert_eq!(o[centre], 1);
        assert!(matches!(p[centre], Provenance::Propagated { .. }));
        let (o2, p2) = propagate_ordinals(&o, &p, &cloud, 8).unwrap();
        assert_eq!((o2, p2), (o, p));
    }

    #[test]
    fn nothing_resolved_is_an_error() {
        let cloud = grid_cloud();
        let res = propagate_ordinals(&[0; 27], &[Provenance::Unresolved; 27], &cloud, 8);
        assert!(matches!(res, Err(LiftError::NothingResolved)));
    }
}
