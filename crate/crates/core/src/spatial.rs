//! Nearest-neighbour queries over point sets.

use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

/// A static 3-D point index. Items are indices into the slice it was built from.
pub struct PointIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = if raw.is_empty() {
            None
        } else {
            Some(ImmutableKdTree::new_from_slice(&raw).expect("point count fits in u32"))
        };
        Self {
            tree,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The `k` nearest items as `(index, squared distance)`, nearest first.
    /// Equidistant items are ordered by index so results are reproducible.
    pub fn nearest(&self, p: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let (Some(tree), Some(k)) = (&self.tree, NonZeroUsize::new(k)) else {
            return Vec::new();
        };
        let mut out: Vec<(usize, f64)> = tree
            .query(&[p.x, p.y, p.z])
            .nearest_n::<SquaredEuclidean<f64>>(k)
            .execute()
            .into_iter()
            .map(|r| (r.item as usize, r.distance))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Median distance from each point to its nearest other point, or `None`
/// with fewer than two points.
pub fn median_nearest_spacing(points: &[Vector3<f64>], index: &PointIndex) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .nearest(p, 2)
                .into_iter()
                .find(|&(j, _)| j != i)
                .map_or(0.0, |(_, d2)| d2.sqrt())
        })
        .collect();
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let index = PointIndex::new(&pts);
        for _ in 0..50 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            let got: Vec<usize> = index.nearest(&q, 8).into_iter().map(|r| r.0).collect();
            let mut brute: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1));
            let want: Vec<usize> = brute[..8].iter().map(|r| r.0).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn empty_index_and_spacing() {
        let index = PointIndex::new(&[]);
        assert!(index.nearest(&Vector3::zeros(), 3).is_empty());
        let pts: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        let index = PointIndex::new(&pts);
        assert_eq!(median_nearest_spacing(&pts, &index), Some(0.5));
    }
}
