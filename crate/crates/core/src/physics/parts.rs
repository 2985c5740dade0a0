use std::collections::{HashMap, HashSet, VecDeque};

use nalgebra::Vector3;
use rayon::prelude::*;

use super::PhysicsError;
use crate::lifting::PropertyField;
use crate::materials::MaterialLibrary;
use crate::scene_io::GaussianCloud;
use crate::spatial::{median_nearest_spacing, PointIndex};

pub type Voxel = [i64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeOptions {
    /// Voxel edge length, meters.
    pub voxel_size: f64,
    /// Neighbours examined per Gaussian when linking parts.
    pub k: usize,
    /// Link cutoff as a multiple of the median nearest-neighbour spacing.
    pub cutoff_factor: f64,
    /// Also count voxels fully enclosed by the part. Off by default; useful
    /// for reconstructions that only cover the outer surface.
    pub fill_enclosed: bool,
}

impl Default for VolumeOptions {
    fn default() -> Self {
        Self {
            voxel_size: 0.005,
            k: 8,
            cutoff_factor: 3.0,
            fill_enclosed: false,
        }
    }
}

impl VolumeOptions {
    pub fn with_voxel(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    /// 1-based, ordered by lowest member index.
    pub part_id: u32,
    /// Material ordinal.
    pub material: u16,
    /// m³
    pub volume: f64,
    pub gaussians: Vec<usize>,
    /// Occupied voxels after closing, sorted.
    pub voxels: Vec<Voxel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartDecomposition {
    pub voxel_size: f64,
    pub parts: Vec<Part>,
}

impl PartDecomposition {
    pub fn part(&self, part_id: u32) -> Option<&Part> {
        self.parts.iter().find(|p| p.part_id == part_id)
    }

    pub fn total_volume(&self) -> f64 {
        self.parts.iter().map(|p| p.volume).sum()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller root wins so the representative is deterministic.
        if ra < rb {
            self.0[rb] = ra;
        } else if rb < ra {
            self.0[ra] = rb;
        }
    }
}

/// Splits the cloud into same-material connected parts and measures each
/// part's voxel volume.
pub fn estimate_volumes(
    cloud: &GaussianCloud,
    field: &PropertyField,
    options: &VolumeOptions,
) -> Result<PartDecomposition, PhysicsError> {
    let h = options.voxel_size;
    if !(h > 0.0 && h.is_finite()) {
        return Err(PhysicsError::NonPositive { name: "voxel_size", value: h });
    }
    if cloud.is_empty() {
        return Err(PhysicsError::EmptyField);
    }
    if field.len() != cloud.len() {
        return Err(PhysicsError::CountMismatch {
            cloud: cloud.len(),
            field: field.len(),
        });
    }
    if let Some(i) = field.unresolved().next() {
        return Err(PhysicsError::Unresolved { index: i });
    }

    let index = PointIndex::new(&cloud.positions);
    let cutoff = median_nearest_spacing(&cloud.positions, &index).unwrap_or(0.0) * options.cutoff_factor;
    let cutoff2 = cutoff * cutoff;
    let edges: Vec<Vec<usize>> = cloud
        .positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .nearest(p, options.k + 1)
                .into_iter()
                .filter(|&(j, d2)| j != i && d2 <= cutoff2 && field.ordinals[j] == field.ordinals[i])
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut uf = UnionFind((0..cloud.len()).collect());
    for (i, nbrs) in edges.iter().enumerate() {
        for &j in nbrs {
            uf.union(i, j);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..cloud.len() {
        let r = uf.find(i);
        let s = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[s].push(i);
    }

    let parts = groups
        .into_par_iter()
        .enumerate()
        .map(|(n, gaussians)| {
            let occupied: HashSet<Voxel> = gaussians.iter().map(|&i| voxel_of(&cloud.positions[i], h)).collect();
            let mut voxels = close(&occupied);
            if options.fill_enclosed {
                voxels = fill_enclosed(&voxels);
            }
            let mut voxels: Vec<Voxel> = voxels.into_iter().collect();
            voxels.sort_unstable();
            Part {
                part_id: n as u32 + 1,
                material: field.ordinals[gaussians[0]],
                volume: voxels.len() as f64 * h * h * h,
                gaussians,
                voxels,
            }
        })
        .collect();
    Ok(PartDecomposition { voxel_size: h, parts })
}

pub fn voxel_of(p: &Vector3<f64>, h: f64) -> Voxel {
    [(p.x / h).floor() as i64, (p.y / h).floor() as i64, (p.z / h).floor() as i64]
}

fn neighbourhood(v: Voxel) -> impl Iterator<Item = Voxel> {
    (-1..=1).flat_map(move |dx| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| [v[0] + dx, v[1] + dy, v[2] + dz])))
}

/// Morphological closing with a 3×3×3 cube: dilate, then erode.
fn close(occupied: &HashSet<Voxel>) -> HashSet<Voxel> {
    let dilated: HashSet<Voxel> = occupied.iter().flat_map(|&v| neighbourhood(v)).collect();
    dilated
        .iter()
        .copied()
        .filter(|&v| neighbourhood(v).all(|n| dilated.contains(&n)))
        .collect()
}

/// Adds every empty voxel not 6-connected to the outside of the bounding box.
fn fill_enclosed(solid: &HashSet<Voxel>) -> HashSet<Voxel> {
    if solid.is_empty() {
        return HashSet::new();
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for v in solid {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a] - 1);
            hi[a] = hi[a].max(v[a] + 1);
        }
    }
    let mut outside: HashSet<Voxel> = HashSet::new();
    let mut queue = VecDeque::from([lo]);
    outside.insert(lo);
    while let Some(v) = queue.pop_front() {
        for a in 0..3 {
            for d in [-1, 1] {
                let mut n = v;
                n[a] += d;
                if n[a] < lo[a] || n[a] > hi[a] || solid.contains(&n) || outside.contains(&n) {
                    continue;
                }
                outside.insert(n);
                queue.push_back(n);
            }
        }
    }
    let mut filled = solid.clone();
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                if !outside.contains(&[x, y, z]) {
                    filled.insert([x, y, z]);
                }
            }
        }
    }
    filled
}

/// Σ ρ·V over parts, with ρ supplied per material ordinal.
pub fn total_mass(parts: &PartDecomposition, density: impl Fn(u16) -> Option<f64>) -> Result<f64, PhysicsError> {
    parts.parts.iter().try_fold(0.0, |acc, p| {
        let rho = density(p.material).ok_or(PhysicsError::UnknownMaterial(p.material))?;
        Ok(acc + rho * p.volume)
    })
}

/// Mass in kg using each material's nominal density.
pub fn estimate_mass(parts: &PartDecomposition, library: &MaterialLibrary) -> Result<f64, PhysicsError> {
    total_mass(parts, |o| library.by_ordinal(o).map(|r| r.density.nominal))
}

/// Mass of each part, in part order.
pub fn part_masses(parts: &PartDecomposition, library: &MaterialLibrary) -> Result<Vec<f64>, PhysicsError> {
    parts
        .parts
        .iter()
        .map(|p| {
            let r = library.by_ordinal(p.material).ok_or(PhysicsError::UnknownMaterial(p.material))?;
            Ok(r.density.nominal * p.volume)
        })
        .collect()
}
