//! Invariants checked over generated inputs.

use std::collections::BTreeMap;

use gsprop_core::evaluation::{grasp_rates, miou, pra, scalar_metrics};
use gsprop_core::lifting::{project_point, vote};
use gsprop_core::perception::{filter_masks, FilterThresholds};
use gsprop_core::physics::{f_max, f_min, f_star, ForceCurve, SurfaceParams};
use gsprop_core::scene_io::{Bitmap, Mask};
use gsprop_core::{CameraModel, LabelMap, MaskSet};
use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use proptest::prelude::*;

fn positive() -> impl Strategy<Value = f64> {
    1e-3f64..1e3
}

/// Reference vote: count table, then (count, scene count, -ordinal) maximum.
fn vote_oracle(obs: &[u16], scene: &[u64]) -> Option<u16> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for &o in obs {
        *counts.entry(o).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(o, n)| (n, scene.get(o as usize).copied().unwrap_or(0), std::cmp::Reverse(o)))
        .map(|(o, _)| o)
}

fn mask_set(w: u32, h: u32, specs: &[(u32, u32, u32, u32, f64, f64)]) -> MaskSet {
    let mut set = MaskSet::empty("v", w, h);
    for (i, &(x0, y0, bw, bh, iou, stab)) in specs.iter().enumerate() {
        set.masks.push(Mask {
            segment_id: i as u32 + 1,
            bitmap: Bitmap::from_fn(w, h, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh),
            predicted_iou: iou,
            stability: stab,
        });
    }
    set
}

fn label_map(w: u32, h: u32, data: Vec<u16>) -> LabelMap {
    let mut m = LabelMap::new(w, h);
    m.data = data;
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn vote_matches_count_table(obs in prop::collection::vec(1u16..6, 0..30),
                                scene in prop::collection::vec(0u64..4, 7)) {
        prop_assert_eq!(vote(&obs, &scene), vote_oracle(&obs, &scene));
        let mut rev = obs.clone();
        rev.reverse();
        prop_assert_eq!(vote(&rev, &scene), vote(&obs, &scene));
    }

    #[test]
    fn projection_matches_homogeneous_product(
        fx in 50.0f64..2000.0, fy in 50.0f64..2000.0, cx in 0.0f64..640.0, cy in 0.0f64..480.0,
        axis in prop::array::uniform3(-1.0f64..1.0), angle in 0.0f64..3.1,
        t in prop::array::uniform3(-2.0f64..2.0), p in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let mut cam = CameraModel::from_intrinsics("c", fx, fy, cx, cy, 640, 480);
        let r = Rotation3::from_scaled_axis(Vector3::from(axis).normalize() * angle);
        cam.rotation = *r.matrix();
        cam.translation = Vector3::from(t);
        let p = Vector3::from(p);
        let mut rt = Matrix4::identity();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&cam.translation);
        let k: Matrix3<f64> = cam.intrinsics;
        let xc = rt * Vector4::new(p.x, p.y, p.z, 1.0);
        let proj = project_point(&p, &cam);
        prop_assume!(xc.z > 0.05);
        let uvw = k * xc.xyz();
        prop_assert!(!proj.behind);
        prop_assert!((proj.u - uvw.x / uvw.z).abs() < 1e-8 * (1.0 + proj.u.abs()));
        prop_assert!((proj.v - uvw.y / uvw.z).abs() < 1e-8 * (1.0 + proj.v.abs()));
        prop_assert!((proj.z - xc.z).abs() < 1e-12);
    }

    #[test]
    fn f_min_is_nonnegative_monotone_and_linear(
        masses in prop::collection::vec(1e-3f64..50.0, 1..6),
        extra in 1e-3f64..10.0, mu in 0.05f64..2.0, theta in -1.5f64..1.5,
    ) {
        let base = f_min(&masses, mu, theta).unwrap();
        prop_assert!(base >= 0.0);
        let mut more = masses.clone();
        more.push(extra);
        prop_assert!(f_min(&more, mu, theta).unwrap() >= base);
        let doubled: Vec<f64> = masses.iter().map(|m| 2.0 * m).collect();
        let d = f_min(&doubled, mu, theta).unwrap();
        prop_assert!((d - 2.0 * base).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn f_max_is_monotone_in_every_input(
        area in positive(), d in positive(), kappa in positive(), e in positive(), sy in positive(), k in 1.0f64..4.0,
    ) {
        let s = SurfaceParams { area, thickness: d, kappa_max: kappa };
        let base = f_max(&s, e, sy).unwrap().value;
        prop_assert!(base > 0.0);
        let bigger = [
            f_max(&SurfaceParams { area: area * k, ..s }, e, sy).unwrap().value,
            f_max(&SurfaceParams { thickness: d * k, ..s }, e, sy).unwrap().value,
            f_max(&SurfaceParams { kappa_max: kappa * k, ..s }, e, sy).unwrap().value,
            f_max(&s, e * k, sy).unwrap().value,
            f_max(&s, e, sy * k).unwrap().value,
        ];
        for b in bigger {
            prop_assert!(b >= base);
        }
    }

    #[test]
    fn f_star_stays_in_range_and_margin(
        a in 0.0f64..100.0, b in 0.0f64..100.0, lo in 0.0f64..30.0, width in 1.0f64..80.0, eta in 0.0f64..1.0,
    ) {
        let range = (lo, lo + width);
        let c = f_star(a, b, range, eta);
        prop_assert!(c.f_star >= range.0 && c.f_star <= range.1);
        if c.feasible {
            let (cmin, cmax) = (a.clamp(range.0, range.1), b.clamp(range.0, range.1));
            let tol = 1e-9 * (1.0 + cmax);
            prop_assert!(c.f_star >= cmin - tol && c.f_star <= cmax + tol);
            if eta <= 0.5 {
                prop_assert!(c.f_star >= cmin + eta * c.delta_f - tol);
                prop_assert!(c.f_star <= cmax - eta * c.delta_f + tol);
            }
        } else {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn linear_calibration_round_trips(slope in 0.05f64..2.0, offset in 0.0f64..5.0, f in 0.0f64..1.0) {
        let samples: Vec<(f64, f64)> = (0..=20).map(|i| {
            let n = 10.0 + 5.0 * i as f64;
            (n, offset + slope * n)
        }).collect();
        let curve = ForceCurve::fit(&samples, 1, (10.0, 110.0)).unwrap();
        let (flo, fhi) = curve.force_range();
        let target = flo + f * (fhi - flo);
        let n = curve.command_for(target);
        prop_assert!((10.0..=110.0).contains(&n));
        prop_assert!((offset + slope * n - target).abs() <= 1e-6 * fhi);
    }

    #[test]
    fn pra_is_invariant_under_increasing_maps(
        pairs in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 2..20),
    ) {
        let (p, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = pra(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert_eq!(pra(&p, &p).unwrap(), 1.0);
        let cube: Vec<f64> = q.iter().map(|x| x.powi(3)).collect();
        let affine: Vec<f64> = q.iter().map(|x| 2.0 * x + 1.0).collect();
        let exp: Vec<f64> = q.iter().map(|x| x.exp()).collect();
        for t in [cube, affine, exp] {
            prop_assert_eq!(pra(&p, &t).unwrap(), base);
        }
        prop_assert_eq!(pra(&q, &p).unwrap(), base);
    }

    #[test]
    fn scalar_metrics_are_consistent(p in 1e-3f64..1e6, q in 1e-3f64..1e6) {
        let m = scalar_metrics(p, q).unwrap();
        prop_assert!(m.mnre > 0.0 && m.mnre <= 1.0);
        prop_assert!((m.alde - (-m.mnre.ln())).abs() <= 1e-9 * (1.0 + m.alde));
        prop_assert!((m.ade - p * m.ape).abs() <= 1e-9 * (1.0 + m.ade));
        let same = scalar_metrics(p, p).unwrap();
        prop_assert_eq!((same.ade, same.alde, same.ape, same.mnre), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn success_rate_bounded_by_component_rates(trials in prop::collection::vec(any::<(bool, bool)>(), 1..50)) {
        let r = grasp_rates(&trials).unwrap();
        prop_assert!(r.sr <= r.pur.min(r.ndr));
        prop_assert!(r.sr >= r.pur + r.ndr - 1.0 - 1e-12);
    }

    #[test]
    fn miou_bounds_and_self_agreement(
        (w, h, pred, gt) in (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (Just(w), Just(h), prop::collection::vec(0u16..4, n), prop::collection::vec(0u16..4, n))
        }),
    ) {
        let pred = label_map(w, h, pred);
        let gt = label_map(w, h, gt);
        let r = miou(&pred, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.miou));
        for c in &r.classes {
            prop_assert!(c.class != 0 && c.intersection <= c.union);
        }
        prop_assert_eq!(miou(&gt, &gt).unwrap().miou, 1.0);
        prop_assert!(miou(&LabelMap::new(w + 1, h), &gt).is_err());
    }

    #[test]
    fn filter_is_idempotent_and_respects_thresholds(
        specs in prop::collection::vec((0u32..12, 0u32..12, 1u32..8, 1u32..8, 0.5f64..1.0, 0.5f64..1.0), 0..10),
        iou_min in 0.5f64..1.0, stability_min in 0.5f64..1.0, overlap_max in 0.1f64..0.95,
    ) {
        let raw = mask_set(20, 20, &specs);
        let t = FilterThresholds { iou_min, stability_min, overlap_max };
        let once = filter_masks(&raw, &t);
        prop_assert_eq!(&filter_masks(&once, &t), &once);
        for (i, m) in once.masks.iter().enumerate() {
            prop_assert_eq!(m.segment_id, i as u32 + 1);
            prop_assert!(m.predicted_iou >= iou_min && m.stability >= stability_min);
            for other in &once.masks[i + 1..] {
                prop_assert!(m.bitmap.iou(&other.bitmap) <= overlap_max);
            }
        }
    }
}
