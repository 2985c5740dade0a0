use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;

use super::lmm::{query_description, query_material, AnnotationStatus, MaterialSource, SegmentAnnotation};
use super::prompt::{build_prompt, description_prompt, Candidate, PromptBundle};
use super::triptych::compose_triptych;
use super::PerceptionError;
use crate::materials::MaterialLibrary;
use crate::scene_io::{LabelMap, Mask, MaskSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotateConfig {
    /// Segments covering less than this fraction of the image are not queried.
    pub min_area_fraction: f64,
    /// Concurrent segment queries in live mode.
    pub max_in_flight: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            min_area_fraction: 0.001,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedView {
    pub view_id: String,
    /// Material ordinals, 0 = unlabeled.
    pub material_map: LabelMap,
    /// One entry per queried segment, by segment id.
    pub annotations: Vec<SegmentAnnotation>,
    pub description: String,
    /// Segments too small to query.
    pub skipped: Vec<u32>,
}

/// Labels one view: a whole-object description query (live mode), then one
/// query per sufficiently large segment. Where resolved masks overlap, the
/// pixel goes to the higher confidence, then the smaller mask, then the lower
/// segment id.
pub fn annotate_view(
    view_id: &str,
    image: Option<&RgbImage>,
    masks: &MaskSet,
    library: &MaterialLibrary,
    source: &MaterialSource<'_>,
    config: &AnnotateConfig,
) -> Result<AnnotatedView, PerceptionError> {
    let min_area = config.min_area_fraction * masks.width as f64 * masks.height as f64;
    let (queried, skipped): (Vec<&Mask>, Vec<&Mask>) =
        masks.masks.iter().partition(|m| m.bitmap.area() as f64 >= min_area);
    let skipped: Vec<u32> = skipped.iter().map(|m| m.segment_id).collect();

    let (description, annotations) = match source {
        MaterialSource::Fixture(_) => {
            let empty = PromptBundle {
                system_text: String::new(),
                user_text: String::new(),
                images: Vec::new(),
            };
            let anns = queried
                .iter()
                .map(|m| query_material(&empty, source, library, view_id, m.segment_id))
                .collect::<Result<Vec<_>, _>>()?;
            (String::new(), anns)
        }
        MaterialSource::Live { transport, .. } => {
            let image = image.ok_or_else(|| PerceptionError::MissingImage(view_id.to_string()))?;
            let description = query_description(*transport, &description_prompt(image.clone()))?;
            let candidates = Candidate::all(library);
            let query = |m: &&Mask| -> Result<SegmentAnnotation, PerceptionError> {
                let triptych = compose_triptych(image, &m.bitmap)?;
                let bundle = build_prompt(&description, &candidates, triptych.into_images())?;
                query_material(&bundle, source, library, view_id, m.segment_id)
            };
            let anns = run_bounded(&queried, config.max_in_flight, query)?;
            (description, anns)
        }
    };

    let mut order: Vec<(&SegmentAnnotation, &Mask)> = annotations
        .iter()
        .zip(&queried)
        .filter(|(a, _)| a.status == AnnotationStatus::Resolved)
        .map(|(a, m)| (a, *m))
        .collect();
    // Paint weakest first so the preferred segment is written last.
    order.sort_by(|(a, ma), (b, mb)| {
        a.confidence
            .total_cmp(&b.confidence)
            .then(mb.bitmap.area().cmp(&ma.bitmap.area()))
            .then(b.segment_id.cmp(&a.segment_id))
    });
    let mut map = LabelMap::new(masks.width, masks.height);
    for (a, m) in &order {
        let id = a.material_id.as_deref().expect("resolved annotation has an id");
        let ordinal = library.ordinal(id).expect("resolved ids are library keys");
        for (px, &on) in map.data.iter_mut().zip(&m.bitmap.bits) {
            if on {
                *px = ordinal;
            }
        }
    }
    if order.is_empty() {
        return Err(PerceptionError::ViewUnusable(view_id.to_string()));
    }
    Ok(AnnotatedView {
        view_id: view_id.to_string(),
        material_map: map,
        annotations,
        description,
        skipped,
    })
}

/// Runs `f` over `items` on at most `limit` threads; results keep item order.
fn run_bounded<T: Sync, R: Send>(
    items: &[T],
    limit: usize,
    f: impl Fn(&T) -> Result<R, PerceptionError> + Sync,
) -> Result<Vec<R>, PerceptionError> {
    let slots: Vec<Mutex<Option<Result<R, PerceptionError>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..limit.max(1).min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

/// Annotation table for a view: `segment_id status material_id confidence raw_text`.
pub fn annotations_text(view: &AnnotatedView) -> String {
    let mut out = String::new();
    for a in &view.annotations {
        let status = match a.status {
            AnnotationStatus::Resolved => "resolved",
            AnnotationStatus::NotFound => "not_found",
            AnnotationStatus::NoAnswer => "no_answer",
        };
        out.push_str(&format!(
            "{} {} {} {:.3} {:?}\n",
            a.segment_id,
            status,
            a.material_id.as_deref().unwrap_or("-"),
            a.confidence,
            a.raw_material_text
        ));
    }
    for s in &view.skipped {
        out.push_str(&format!("{s} skipped - 0.000 \"\"\n"));
    }
    out
}
