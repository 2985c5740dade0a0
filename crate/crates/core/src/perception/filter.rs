use super::PerceptionError;
use crate::scene_io::MaskSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    pub iou_min: f64,
    pub stability_min: f64,
    /// Pairwise mask IoU above which the weaker mask is dropped.
    pub overlap_max: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            iou_min: 0.88,
            stability_min: 0.95,
            overlap_max: 0.7,
        }
    }
}

/// Drops low-quality masks, then suppresses near-duplicates greedily in
/// descending predicted IoU. Survivors keep their relative order and are
/// renumbered `1..=n`.
pub fn filter_masks(raw: &MaskSet, t: &FilterThresholds) -> MaskSet {
    let mut order: Vec<usize> = (0..raw.masks.len())
        .filter(|&i| {
            let m = &raw.masks[i];
            m.predicted_iou >= t.iou_min && m.stability >= t.stability_min
        })
        .collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&raw.masks[a], &raw.masks[b]);
        mb.predicted_iou
            .total_cmp(&ma.predicted_iou)
            .then(ma.segment_id.cmp(&mb.segment_id))
    });

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let m = &raw.masks[i].bitmap;
        if kept.iter().all(|&k| raw.masks[k].bitmap.iou(m) <= t.overlap_max) {
            kept.push(i);
        }
    }
    kept.sort_unstable();

    let mut out = MaskSet::empty(raw.view_id.clone(), raw.width, raw.height);
    out.masks = kept
        .into_iter()
        .enumerate()
        .map(|(n, i)| {
            let mut m = raw.masks[i].clone();
            m.segment_id = n as u32 + 1;
            m
        })
        .collect();
    out
}

/// Picks the middle granularity from a coarse-to-fine mask hierarchy
/// (index `len / 2`; a single level passes through).
pub fn select_level(levels: &[MaskSet]) -> Result<&MaskSet, PerceptionError> {
    levels.get(levels.len() / 2).ok_or(PerceptionError::EmptyHierarchy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::{Bitmap, Mask};

    fn mask(id: u32, iou: f64, stab: f64, f: impl Fn(u32, u32) -> bool) -> Mask {
        Mask {
            segment_id: id,
            bitmap: Bitmap::from_fn(8, 8, f),
            predicted_iou: iou,
            stability: stab,
        }
    }

    fn set(masks: Vec<Mask>) -> MaskSet {
        let mut s = MaskSet::empty("v", 8, 8);
        s.masks = masks;
        s
    }

    #[test]
    fn duplicate_keeps_higher_iou() {
        let raw = set(vec![mask(1, 0.8, 1.0, |x, _| x < 4), mask(2, 0.9, 1.0, |x, _| x < 4)]);
        let t = FilterThresholds {
            iou_min: 0.0,
            stability_min: 0.0,
            overlap_max: 0.5,
        };
        let out = filter_masks(&raw, &t);
        assert_eq!(out.len(), 1);
        assert_eq!(out.masks[0].predicted_iou, 0.9);
        assert_eq!(out.masks[0].segment_id, 1);
    }

    #[test]
    fn unstable_mask_removed_and_disjoint_kept() {
        let raw = set(vec![
            mask(3, 0.99, 0.5, |x, _| x < 2),
            mask(5, 0.99, 0.99, |x, _| x >= 6),
            mask(7, 0.99, 0.99, |x, _| x == 3),
        ]);
        let out = filter_masks(&raw, &FilterThresholds::default());
        assert_eq!(out.masks.iter().map(|m| m.segment_id).collect::<Vec<_>>(), vec![1, 2]);
        assert!(out.masks[0].bitmap.get(6, 0) && out.masks[1].bitmap.get(3, 0));
        assert_eq!(filter_masks(&out, &FilterThresholds::default()), out);
    }

    #[test]
    fn level_selection() {
        let lv = |n: &str| MaskSet::empty(n, 1, 1);
        let three = [lv("large"), lv("middle"), lv("small")];
        assert_eq!(select_level(&three).unwrap().view_id, "middle");
        assert_eq!(select_level(&[lv("middle")]).unwrap().view_id, "middle");
        assert!(matches!(select_level(&[]), Err(PerceptionError::EmptyHierarchy)));
    }
}
