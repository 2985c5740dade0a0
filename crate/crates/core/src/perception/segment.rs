//! Client for an external automatic-mask service. The wire schema is
//! described in `docs/segmentation-endpoint.md`.

use std::path::PathBuf;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::filter::{filter_masks, select_level, FilterThresholds};
use super::http::{png_base64, JsonEndpoint, RetryPolicy, TokenBucket};
use super::PerceptionError;
use crate::scene_io::{Bitmap, Mask, MaskSet};

pub const SEG_TOKEN_ENV: &str = "GSPROP_SEG_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub url: String,
    /// Grid prompt density per image side.
    pub points_per_side: u32,
    pub timeout_s: f64,
    pub transport: RetryPolicy,
    pub requests_per_second: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8001/segment".into(),
            points_per_side: 32,
            timeout_s: 300.0,
            transport: RetryPolicy::default(),
            requests_per_second: 0.0,
            cache_dir: None,
        }
    }
}

/// Row-major run-length encoding: alternating runs of 0 and 1, starting with 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn encode(bitmap: &Bitmap) -> Self {
        let mut counts = Vec::new();
        let (mut current, mut run) = (false, 0u64);
        for &b in &bitmap.bits {
            if b != current {
                counts.push(run);
                current = b;
                run = 0;
            }
            run += 1;
        }
        counts.push(run);
        Self {
            size: [bitmap.height, bitmap.width],
            counts,
        }
    }

    pub fn decode(&self) -> Result<Bitmap, PerceptionError> {
        let [h, w] = self.size;
        let total = w as u64 * h as u64;
        if self.counts.iter().sum::<u64>() != total {
            return Err(PerceptionError::BadResponse(format!(
                "RLE counts sum to {}, expected {total}",
                self.counts.iter().sum::<u64>()
            )));
        }
        let mut bits = Vec::with_capacity(total as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        Ok(Bitmap { width: w, height: h, bits })
    }
}

#[derive(Debug, Deserialize)]
struct WireMask {
    segmentation: Rle,
    predicted_iou: f64,
    stability_score: f64,
}

#[derive(Debug, Deserialize)]
struct WireLevel {
    #[allow(dead_code)]
    #[serde(default)]
    name: String,
    masks: Vec<WireMask>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    levels: Vec<WireLevel>,
}

pub struct SegmentationClient {
    endpoint: JsonEndpoint,
    points_per_side: u32,
}

impl SegmentationClient {
    /// Token from `GSPROP_SEG_TOKEN` when set; the service may not need one.
    pub fn from_env(config: &SegmentationConfig) -> Self {
        let token = std::env::var(SEG_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: &SegmentationConfig, token: Option<String>) -> Self {
        Self {
            endpoint: JsonEndpoint::new(
                config.url.clone(),
                token,
                Duration::from_secs_f64(config.timeout_s),
                config.transport.clone(),
                TokenBucket::new(config.requests_per_second, 1),
                config.cache_dir.clone(),
            ),
            points_per_side: config.points_per_side,
        }
    }

    /// Requests the coarse-to-fine mask hierarchy for one image.
    pub fn hierarchy(&self, view_id: &str, image: &RgbImage) -> Result<Vec<MaskSet>, PerceptionError> {
        let body = json!({
            "view_id": view_id,
            "image": png_base64(image)?,
            "width": image.width(),
            "height": image.height(),
            "points_per_side": self.points_per_side,
            "levels": ["whole", "part", "subpart"],
        });
        let text = self.endpoint.post(&body)?;
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| PerceptionError::BadResponse(format!("segmentation: {e}")))?;
        wire.levels
            .into_iter()
            .map(|level| {
                let mut set = MaskSet::empty(view_id, image.width(), image.height());
                for (i, m) in level.masks.into_iter().enumerate() {
                    let bitmap = m.segmentation.decode()?;
                    if (bitmap.width, bitmap.height) != image.dimensions() {
                        return Err(PerceptionError::BadResponse(format!(
                            "mask {} is {}x{}, image is {}x{}",
                            i,
                            bitmap.width,
                            bitmap.height,
                            image.width(),
                            image.height()
                        )));
                    }
                    set.masks.push(Mask {
                        segment_id: i as u32 + 1,
                        bitmap,
                        predicted_iou: m.predicted_iou.clamp(0.0, 1.0),
                        stability: m.stability_score.clamp(0.0, 1.0),
                    });
                }
                Ok(set)
            })
            .collect()
    }

    /// Hierarchy → middle level → quality and overlap filtering.
    pub fn segment(
        &self,
        view_id: &str,
        image: &RgbImage,
        thresholds: &FilterThresholds,
    ) -> Result<MaskSet, PerceptionError> {
        let levels = self.hierarchy(view_id, image)?;
        Ok(filter_masks(select_level(&levels)?, thresholds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trip() {
        let b = Bitmap::from_fn(5, 3, |x, y| (x + y) % 3 == 0);
        let rle = Rle::encode(&b);
        assert_eq!(rle.decode().unwrap(), b);
        let starts_set = Bitmap::from_fn(2, 1, |_, _| true);
        assert_eq!(Rle::encode(&starts_set).counts, vec![0, 2]);
    }

    #[test]
    fn rle_length_checked() {
        let rle = Rle {
            size: [2, 2],
            counts: vec![1, 1],
        };
        assert!(rle.decode().is_err());
    }
}
