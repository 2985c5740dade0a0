//! Segmentation and property-estimation metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::lifting::{composite, PropertyField, SplatParams};
use crate::materials::MaterialLibrary;
use crate::scene_io::{CameraModel, GaussianCloud, LabelMap};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("label maps differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("{metric} needs positive values, got p = {p}, estimate = {p_hat}")]
    NonPositive { metric: &'static str, p: f64, p_hat: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two values to form pairs")]
    TooFewValues,
    #[error("no grasp trials")]
    NoTrials,
    #[error("legend line {line}: {reason}")]
    Legend { line: usize, reason: String },
}

/// A family-ordinal segmentation image (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRender {
    pub view_id: String,
    pub labels: LabelMap,
}

/// Composites one-hot family vectors front to back; a pixel takes the
/// heaviest family once its accumulated opacity reaches `front_threshold`.
pub fn render_labels(
    cloud: &GaussianCloud,
    field: &PropertyField,
    cam: &CameraModel,
    library: &MaterialLibrary,
    params: &SplatParams,
) -> LabelRender {
    let to_family = library.material_to_family_ordinals();
    let classes = to_family.iter().copied().max().unwrap_or(0) as usize + 1;
    let pixels = cam.pixel_count();
    let mut weights = vec![0f64; pixels * classes];
    let accum = composite(cloud, cam, params, |c| {
        let fam = to_family.get(field.ordinals[c.gaussian] as usize).copied().unwrap_or(0) as usize;
        weights[c.pixel * classes + fam] += c.weight;
    });
    let mut labels = LabelMap::new(cam.width, cam.height);
    for (p, a) in accum.iter().enumerate() {
        if *a < params.front_threshold {
            continue;
        }
        let w = &weights[p * classes..(p + 1) * classes];
        let mut best = 0;
        for c in 1..classes {
            if w[c] > w[best] || best == 0 && w[c] > 0.0 {
                best = c;
            }
        }
        labels.data[p] = best as u16;
    }
    LabelRender {
        view_id: cam.view_id.clone(),
        labels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassIou {
    pub class: u16,
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub miou: f64,
    /// Classes present in the ground truth, ascending.
    pub classes: Vec<ClassIou>,
}

/// Mean IoU over the non-background classes present in `gt`. An empty
/// ground truth gives mIoU 1 when the prediction is also empty, else 0.
pub fn miou(pred: &LabelMap, gt: &LabelMap) -> Result<MiouReport, EvalError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(EvalError::DimensionMismatch(pred.width, pred.height, gt.width, gt.height));
    }
    let mut inter: BTreeMap<u16, u64> = BTreeMap::new();
    let mut union: BTreeMap<u16, u64> = BTreeMap::new();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if g != 0 {
            *union.entry(g).or_default() += 1;
            if p == g {
                *inter.entry(g).or_default() += 1;
            }
        }
        if p != 0 && p != g {
            *union.entry(p).or_default() += 1;
        }
    }
    let present: std::collections::BTreeSet<u16> = gt.data.iter().copied().filter(|&g| g != 0).collect();
    let classes: Vec<ClassIou> = present
        .into_iter()
        .map(|c| {
            let i = inter.get(&c).copied().unwrap_or(0);
            let u = union[&c];
            ClassIou {
                class: c,
                intersection: i,
                union: u,
                iou: i as f64 / u as f64,
            }
        })
        .collect();
    let miou = if classes.is_empty() {
        if pred.data.iter().all(|&p| p == 0) {
            1.0
        } else {
            0.0
        }
    } else {
        classes.iter().map(|c| c.iou).sum::<f64>() / classes.len() as f64
    };
    Ok(MiouReport { miou, classes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMetrics {
    /// |p − p̂|
    pub ade: f64,
    /// |ln p − ln p̂|
    pub alde: f64,
    /// |(p − p̂) / p|
    pub ape: f64,
    /// min(p/p̂, p̂/p)
    pub mnre: f64,
}

pub fn scalar_metrics(p: f64, p_hat: f64) -> Result<ScalarMetrics, EvalError> {
    if !(p > 0.0 && p_hat > 0.0) {
        return Err(EvalError::NonPositive {
            metric: "ALDE/APE/MnRE",
            p,
            p_hat,
        });
    }
    Ok(ScalarMetrics {
        ade: (p - p_hat).abs(),
        alde: (p.ln() - p_hat.ln()).abs(),
        ape: ((p - p_hat) / p).abs(),
        mnre: (p / p_hat).min(p_hat / p),
    })
}

/// Means of [`scalar_metrics`] over paired samples.
pub fn mean_scalar_metrics(p: &[f64], p_hat: &[f64]) -> Result<ScalarMetrics, EvalError> {
    if p.len() != p_hat.len() {
        return Err(EvalError::LengthMismatch(p.len(), p_hat.len()));
    }
    if p.is_empty() {
        return Err(EvalError::TooFewValues);
    }
    let mut sum = ScalarMetrics {
        ade: 0.0,
        alde: 0.0,
        ape: 0.0,
        mnre: 0.0,
    };
    for (&a, &b) in p.iter().zip(p_hat) {
        let m = scalar_metrics(a, b)?;
        sum.ade += m.ade;
        sum.alde += m.alde;
        sum.ape += m.ape;
        sum.mnre += m.mnre;
    }
    let n = p.len() as f64;
    Ok(ScalarMetrics {
        ade: sum.ade / n,
        alde: sum.alde / n,
        ape: sum.ape / n,
        mnre: sum.mnre / n,
    })
}

/// Pairwise relationship accuracy over unordered pairs. A pair agrees when
/// both lists order it the same way, or both tie it.
pub fn pra(p: &[f64], p_hat: &[f64]) -> Result<f64, EvalError> {
    if p.len() != p_hat.len() {
        return Err(EvalError::LengthMismatch(p.len(), p_hat.len()));
    }
    if p.len() < 2 {
        return Err(EvalError::TooFewValues);
    }
    let (mut agree, mut total) = (0u64, 0u64);
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            total += 1;
            if p[i].partial_cmp(&p[j]) == p_hat[i].partial_cmp(&p_hat[j]) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspRates {
    /// Picked-up rate.
    pub pur: f64,
    /// No-damage rate.
    pub ndr: f64,
    /// Success rate: picked up and undamaged.
    pub sr: f64,
}

/// Rates over `(picked_up, no_damage)` trials.
pub fn grasp_rates(trials: &[(bool, bool)]) -> Result<GraspRates, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::NoTrials);
    }
    let n = trials.len() as f64;
    let frac = |f: &dyn Fn(&(bool, bool)) -> bool| trials.iter().filter(|t| f(t)).count() as f64 / n;
    Ok(GraspRates {
        pur: frac(&|t| t.0),
        ndr: frac(&|t| t.1),
        sr: frac(&|t| t.0 && t.1),
    })
}

/// Parses a ground-truth legend: lines `ordinal family`, `#` comments.
pub fn parse_legend(text: &str) -> Result<BTreeMap<u16, String>, EvalError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| EvalError::Legend {
            line: n + 1,
            reason: reason.into(),
        };
        let mut it = line.split_whitespace();
        let ord: u16 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad ordinal"))?;
        let name = it.next().ok_or_else(|| err("missing family"))?;
        if ord == 0 || out.insert(ord, name.to_lowercase()).is_some() {
            return Err(err("ordinal must be positive and unique"));
        }
    }
    Ok(out)
}

/// Rewrites a ground-truth map's ordinals through `legend` into the library's
/// family ordinals. Unknown families map to background.
pub fn remap_ground_truth(gt: &LabelMap, legend: &BTreeMap<u16, String>, library: &MaterialLibrary) -> LabelMap {
    let mut out = gt.clone();
    for v in &mut out.data {
        *v = legend.get(v).and_then(|f| library.family_ordinal(f)).unwrap_or(0);
    }
    out
}

/// Per-class CSV: `class,family,intersection,union,iou`.
pub fn miou_csv(report: &MiouReport, library: &MaterialLibrary) -> String {
    let mut out = String::from("class,family,intersection,union,iou\n");
    for c in &report.classes {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6}",
            c.class,
            library.family_name(c.class).unwrap_or("?"),
            c.intersection,
            c.union,
            c.iou
        );
    }
    out
}

pub fn miou_text(view_id: &str, report: &MiouReport, library: &MaterialLibrary) -> String {
    let mut out = format!("view {view_id}\nmIoU {:.6}\n", report.miou);
    for c in &report.classes {
        let _ = writeln!(
            out,
            "  {:<10} IoU {:.6} ({} / {})",
            library.family_name(c.class).unwrap_or("?"),
            c.iou,
            c.intersection,
            c.union
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: u32, h: u32, data: &[u16]) -> LabelMap {
        LabelMap {
            width: w,
            height: h,
            data: data.to_vec(),
        }
    }

    #[test]
    fn miou_identity_and_half_cover() {
        let gt = map(4, 1, &[1, 1, 1, 1]);
        assert_eq!(miou(&gt, &gt).unwrap().miou, 1.0);
        let half = map(4, 1, &[1, 1, 0, 0]);
        assert_eq!(miou(&half, &gt).unwrap().miou, 0.5);
    }

    #[test]
    fn miou_excludes_absent_classes_and_checks_size() {
        let gt = map(3, 1, &[1, 2, 0]);
        let pred = map(3, 1, &[1, 2, 0]);
        let r = miou(&pred, &gt).unwrap();
        assert_eq!(r.classes.len(), 2);
        assert_eq!(r.miou, 1.0);
        assert!(matches!(miou(&map(2, 1, &[0, 0]), &gt), Err(EvalError::DimensionMismatch(..))));
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(
            scalar_metrics(1.0, 1.0).unwrap(),
            ScalarMetrics {
                ade: 0.0,
                alde: 0.0,
                ape: 0.0,
                mnre: 1.0
            }
        );
        let m = scalar_metrics(10.0, 5.0).unwrap();
        assert_eq!((m.ade, m.ape, m.mnre), (5.0, 0.5, 0.5));
        assert_eq!(scalar_metrics(std::f64::consts::E, 1.0).unwrap().alde, 1.0);
        assert!(scalar_metrics(0.0, 1.0).is_err());
    }

    #[test]
    fn pra_examples() {
        assert_eq!(pra(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pra(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 2.0 / 3.0);
        assert_eq!(pra(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(pra(&[1.0, 1.0], &[5.0, 5.0]).unwrap(), 1.0);
        assert!(pra(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn grasp_rate_examples() {
        assert_eq!(
            grasp_rates(&[(true, true)]).unwrap(),
            GraspRates {
                pur: 1.0,
                ndr: 1.0,
                sr: 1.0
            }
        );
        let r = grasp_rates(&[(true, false)]).unwrap();
        assert_eq!((r.pur, r.ndr, r.sr), (1.0, 0.0, 0.0));
        assert_eq!(grasp_rates(&[]), Err(EvalError::NoTrials));
    }

    #[test]
    fn legend_remap() {
        let lib = MaterialLibrary::seed();
        let legend = parse_legend("# gt\n3 metal\n7 wood\n").unwrap();
        let gt = remap_ground_truth(&map(3, 1, &[3, 7, 0]), &legend, &lib);
        assert_eq!(gt.data, vec![2, 1, 0]);
        assert!(parse_legend("0 wood").is_err());
    }
}
