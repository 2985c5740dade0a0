//! Integer label images and per-view segmentation mask sets.
//!
//! The canonical on-disk mask format is a 16-bit grayscale PNG where each
//! nonzero value is a segment id, plus an optional sidecar text file with one
//! `segment_id iou stability` line per segment. Overlapping masks can't be
//! expressed in a single label image; those are written as one binary PNG per
//! segment instead.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use super::SceneIoError;

/// A width×height grid of 16-bit labels, row-major, 0 = unassigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u16) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, image::ImageError> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, self.data.clone()).expect("buffer sized from dims");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, image::ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.into_luma16();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.into_raw(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, SceneIoError> {
        let bytes = std::fs::read(path).map_err(|e| SceneIoError::io(path, e))?;
        Self::decode_png(&bytes).map_err(|source| SceneIoError::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SceneIoError> {
        let bytes = self.encode_png().map_err(|source| SceneIoError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, bytes).map_err(|e| SceneIoError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set pixels.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = ((i % self.width as usize) as u32, (i / self.width as usize) as u32);
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    pub fn intersection(&self, other: &Bitmap) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    /// Pairwise IoU; two empty masks have IoU 0.
    pub fn iou(&self, other: &Bitmap) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    /// ≥ 1, unique within a view.
    pub segment_id: u32,
    pub bitmap: Bitmap,
    pub predicted_iou: f64,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub view_id: String,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<Mask>,
}

impl MaskSet {
    pub fn empty(view_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            view_id: view_id.into(),
            width,
            height,
            masks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn has_overlaps(&self) -> bool {
        let mut seen = vec![false; self.width as usize * self.height as usize];
        for m in &self.masks {
            for (s, b) in seen.iter_mut().zip(&m.bitmap.bits) {
                if *b {
                    if *s {
                        return true;
                    }
                    *s = true;
                }
            }
        }
        false
    }

    /// Flattens to a label image; later masks win where masks overlap.
    pub fn to_label_map(&self) -> LabelMap {
        let mut map = LabelMap::new(self.width, self.height);
        for m in &self.masks {
            for (d, b) in map.data.iter_mut().zip(&m.bitmap.bits) {
                if *b {
                    *d = m.segment_id as u16;
                }
            }
        }
        map
    }

    pub fn metadata_text(&self) -> String {
        let mut s = String::new();
        for m in &self.masks {
            let _ = writeln!(s, "{} {} {}", m.segment_id, m.predicted_iou, m.stability);
        }
        s
    }

    fn check_dims(&self, w: u32, h: u32) -> Result<(), SceneIoError> {
        if (w, h) != (self.width, self.height) {
            return Err(SceneIoError::DimensionMismatch {
                view: self.view_id.clone(),
                got_w: self.width,
                got_h: self.height,
                want_w: w,
                want_h: h,
            });
        }
        Ok(())
    }
}

/// Parses sidecar metadata: `segment_id iou stability` per line, `#` comments.
pub fn parse_mask_metadata(text: &str) -> Result<Vec<(u32, f64, f64)>, SceneIoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |reason: &str| SceneIoError::Syntax {
            line: i + 1,
            reason: reason.to_string(),
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        let [id, iou, stab] = tok.as_slice() else {
            return Err(syntax("expected `segment_id iou stability`"));
        };
        let id = id.parse::<u32>().map_err(|_| syntax("bad segment id"))?;
        let iou = iou.parse::<f64>().map_err(|_| syntax("bad iou"))?;
        let stab = stab.parse::<f64>().map_err(|_| syntax("bad stability"))?;
        if !(0.0..=1.0).contains(&iou) || !(0.0..=1.0).contains(&stab) {
            return Err(syntax("iou and stability must lie in [0, 1]"));
        }
        out.push((id, iou, stab));
    }
    Ok(out)
}

fn apply_metadata(set: &mut MaskSet, meta: &[(u32, f64, f64)]) {
    for m in &mut set.masks {
        if let Some((_, iou, stab)) = meta.iter().find(|(id, _, _)| *id == m.segment_id) {
            m.predicted_iou = *iou;
            m.stability = *stab;
        }
    }
}

/// Builds a mask set from a label image; masks without metadata get
/// `predicted_iou = stability = 1.0`.
pub fn mask_set_from_labels(
    labels: &LabelMap,
    metadata: &[(u32, f64, f64)],
    view_id: &str,
) -> MaskSet {
    let mut ids: Vec<u16> = labels.data.iter().copied().filter(|v| *v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut set = MaskSet::empty(view_id, labels.width, labels.height);
    for id in ids {
        set.masks.push(Mask {
            segment_id: id as u32,
            bitmap: Bitmap {
                width: labels.width,
                height: labels.height,
                bits: labels.data.iter().map(|v| *v == id).collect(),
            },
            predicted_iou: 1.0,
            stability: 1.0,
        });
    }
    apply_metadata(&mut set, metadata);
    set
}

#[derive(Debug, Clone)]
pub enum MaskSource {
    /// One label image with optional sidecar metadata.
    LabelImage { path: PathBuf, metadata: Option<PathBuf> },
    /// One binary image per segment (any nonzero pixel is set).
    SegmentImages {
        segments: Vec<(u32, PathBuf)>,
        metadata: Option<PathBuf>,
    },
}

impl MaskSource {
    /// Locates `<dir>/<view>.png` (+ `<view>.meta.txt`) or, failing that,
    /// per-segment files `<dir>/<view>.seg<id>.png`.
    pub fn discover(dir: &Path, view_id: &str) -> Option<Self> {
        let meta = dir.join(format!("{view_id}.meta.txt"));
        let metadata = meta.exists().then_some(meta);
        let label = dir.join(format!("{view_id}.png"));
        if label.exists() {
            return Some(Self::LabelImage { path: label, metadata });
        }
        let prefix = format!("{view_id}.seg");
        let mut segments: Vec<(u32, PathBuf)> = std::fs::read_dir(dir)
            .ok()?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                let id = name.strip_prefix(&prefix)?.strip_suffix(".png")?.parse().ok()?;
                Some((id, e.path()))
            })
            .collect();
        segments.sort();
        (!segments.is_empty()).then_some(Self::SegmentImages { segments, metadata })
    }
}

fn read_metadata(path: &Option<PathBuf>) -> Result<Vec<(u32, f64, f64)>, SceneIoError> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SceneIoError::io(p, e))?;
            parse_mask_metadata(&text)
        }
    }
}

/// Loads a view's masks, checking dimensions against `(width, height)` when given.
pub fn load_mask_set(
    source: &MaskSource,
    view_id: &str,
    expected_dims: Option<(u32, u32)>,
) -> Result<MaskSet, SceneIoError> {
    let set = match source {
        MaskSource::LabelImage { path, metadata } => {
            let labels = LabelMap::read(path)?;
            let meta = read_metadata(metadata)?;
            mask_set_from_labels(&labels, &meta, view_id)
        }
        MaskSource::SegmentImages { segments, metadata } => {
            let mut set: Option<MaskSet> = None;
            for (id, path) in segments {
                let labels = LabelMap::read(path)?;
                let s = set.get_or_insert_with(|| MaskSet::empty(view_id, labels.width, labels.height));
                if (labels.width, labels.height) != (s.width, s.height) {
                    return Err(SceneIoError::DimensionMismatch {
                        view: view_id.to_string(),
                        got_w: labels.width,
                        got_h: labels.height,
                        want_w: s.width,
                        want_h: s.height,
                    });
                }
                if *id == 0 || s.masks.iter().any(|m| m.segment_id == *id) {
                    return Err(SceneIoError::DuplicateSegment {
                        view: view_id.to_string(),
                        segment_id: *id,
                    });
                }
                s.masks.push(Mask {
                    segment_id: *id,
                    bitmap: Bitmap {
                        width: labels.width,
                        height: labels.height,
                        bits: labels.data.iter().map(|v| *v != 0).collect(),
                    },
                    predicted_iou: 1.0,
                    stability: 1.0,
                });
            }
            let mut set = set.unwrap_or_else(|| MaskSet::empty(view_id, 0, 0));
            apply_metadata(&mut set, &read_metadata(metadata)?);
            set
        }
    };
    if let Some((w, h)) = expected_dims {
        if set.width != 0 || set.height != 0 {
            set.check_dims(w, h)?;
        }
    }
    Ok(set)
}

/// Writes a mask set into `dir` and returns the written paths.
pub fn write_mask_set(set: &MaskSet, dir: &Path) -> Result<Vec<PathBuf>, SceneIoError> {
    std::fs::create_dir_all(dir).map_err(|e| SceneIoError::io(dir, e))?;
    let mut written = Vec::new();
    if set.has_overlaps() {
        for m in &set.masks {
            let mut map = LabelMap::new(set.width, set.height);
            for (d, b) in map.data.iter_mut().zip(&m.bitmap.bits) {
                *d = if *b { u16::MAX } else { 0 };
            }
            let path = dir.join(format!("{}.seg{}.png", set.view_id, m.segment_id));
            map.write(&path)?;
            written.push(path);
        }
    } else {
        let path = dir.join(format!("{}.png", set.view_id));
        set.to_label_map().write(&path)?;
        written.push(path);
    }
    let meta = dir.join(format!("{}.meta.txt", set.view_id));
    std::fs::write(&meta, set.metadata_text()).map_err(|e| SceneIoError::io(&meta, e))?;
    written.push(meta);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_labels_give_empty_set() {
        let set = mask_set_from_labels(&LabelMap::new(8, 8), &[], "v");
        assert!(set.is_empty());
    }

    #[test]
    fn two_labels_give_two_masks_with_default_metadata() {
        let mut map = LabelMap::new(4, 4);
        map.set(0, 0, 1);
        map.set(3, 3, 2);
        map.set(2, 3, 2);
        let set = mask_set_from_labels(&map, &[(2, 0.9, 0.8)], "v");
        assert_eq!(set.len(), 2);
        assert_eq!(set.masks[0].predicted_iou, 1.0);
        assert_eq!(set.masks[1].bitmap.area(), 2);
        assert_eq!((set.masks[1].predicted_iou, set.masks[1].stability), (0.9, 0.8));
    }

    #[test]
    fn dimension_mismatch_against_camera() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = LabelMap::new(64, 64);
        map.set(1, 1, 1);
        let path = dir.path().join("v.png");
        map.write(&path).unwrap();
        let src = MaskSource::LabelImage { path, metadata: None };
        let err = load_mask_set(&src, "v", Some((128, 128))).unwrap_err();
        assert!(matches!(err, SceneIoError::DimensionMismatch { got_w: 64, want_w: 128, .. }));
        assert_eq!(load_mask_set(&src, "v", Some((64, 64))).unwrap().len(), 1);
    }

    #[test]
    fn png16_preserves_large_labels() {
        let mut map = LabelMap::new(3, 2);
        map.set(2, 1, 65535);
        map.set(0, 0, 300);
        assert_eq!(LabelMap::decode_png(&map.encode_png().unwrap()).unwrap(), map);
    }

    #[test]
    fn overlapping_sets_round_trip_via_segment_images() {
        let dir = tempfile::tempdir().unwrap();
        let a = Bitmap::from_fn(6, 4, |x, _| x < 4);
        let b = Bitmap::from_fn(6, 4, |x, _| x >= 2);
        let set = MaskSet {
            view_id: "v".into(),
            width: 6,
            height: 4,
            masks: vec![
                Mask { segment_id: 1, bitmap: a, predicted_iou: 0.5, stability: 0.25 },
                Mask { segment_id: 2, bitmap: b, predicted_iou: 0.75, stability: 1.0 },
            ],
        };
        assert!(set.has_overlaps());
        write_mask_set(&set, dir.path()).unwrap();
        let src = MaskSource::discover(dir.path(), "v").unwrap();
        assert!(matches!(src, MaskSource::SegmentImages { .. }));
        assert_eq!(load_mask_set(&src, "v", Some((6, 4))).unwrap(), set);
    }

    #[test]
    fn duplicate_segment_images_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let map = LabelMap::new(2, 2);
        let p = dir.path().join("x.png");
        map.write(&p).unwrap();
        let src = MaskSource::SegmentImages {
            segments: vec![(1, p.clone()), (1, p)],
            metadata: None,
        };
        assert!(matches!(load_mask_set(&src, "v", None).unwrap_err(), SceneIoError::DuplicateSegment { segment_id: 1, .. }));
    }

    #[test]
    fn metadata_parse_errors() {
        assert!(parse_mask_metadata("1 0.5").is_err());
        assert!(parse_mask_metadata("1 1.5 0.2").is_err());
        assert_eq!(parse_mask_metadata("# c\n3 0.5 0.25\n").unwrap(), vec![(3, 0.5, 0.25)]);
    }
}
