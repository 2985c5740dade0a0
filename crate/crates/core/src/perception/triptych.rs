use image::{Rgb, RgbImage};

use super::PerceptionError;
use crate::scene_io::Bitmap;

/// Highlight color blended into the masked region.
pub const HIGHLIGHT: [u8; 3] = [255, 0, 0];
/// Crop padding as a fraction of the mask's bounding-box size.
pub const CROP_PADDING: f64 = 0.05;

/// Full view, view with the part highlighted, and the part on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Triptych {
    pub full: RgbImage,
    pub highlighted: RgbImage,
    pub crop: RgbImage,
}

impl Triptych {
    pub fn into_images(self) -> Vec<RgbImage> {
        vec![self.full, self.highlighted, self.crop]
    }
}

/// Builds the three context images for one mask. Highlighted pixels are the
/// rounded average of the original and [`HIGHLIGHT`]; the crop is the mask's
/// bounding box padded by [`CROP_PADDING`] per side, clamped to the image,
/// with everything outside the mask painted white.
pub fn compose_triptych(image: &RgbImage, mask: &Bitmap) -> Result<Triptych, PerceptionError> {
    if image.dimensions() != (mask.width, mask.height) {
        return Err(PerceptionError::MaskImageMismatch {
            image: image.dimensions(),
            mask: (mask.width, mask.height),
        });
    }
    let (x0, y0, x1, y1) = mask.bbox().ok_or(PerceptionError::EmptyMask)?;

    let mut highlighted = image.clone();
    for (x, y, px) in highlighted.enumerate_pixels_mut() {
        if mask.get(x, y) {
            for (v, h) in px.0.iter_mut().zip(HIGHLIGHT) {
                *v = (*v as u16 + h as u16).div_ceil(2) as u8;
            }
        }
    }

    let pad = |lo: u32, hi: u32| (CROP_PADDING * (hi - lo + 1) as f64).ceil() as u32;
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let cx0 = x0.saturating_sub(px);
    let cy0 = y0.saturating_sub(py);
    let cx1 = (x1 + px).min(image.width() - 1);
    let cy1 = (y1 + py).min(image.height() - 1);
    let crop = RgbImage::from_fn(cx1 - cx0 + 1, cy1 - cy0 + 1, |x, y| {
        let (sx, sy) = (x + cx0, y + cy0);
        if mask.get(sx, sy) {
            *image.get_pixel(sx, sy)
        } else {
            Rgb([255, 255, 255])
        }
    });

    Ok(Triptych {
        full: image.clone(),
        highlighted,
        crop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7) as u8, (y * 5) as u8, ((x + y) * 3) as u8]))
    }

    #[test]
    fn full_mask_crop_is_whole_image() {
        let img = gradient(20, 10);
        let t = compose_triptych(&img, &Bitmap::from_fn(20, 10, |_, _| true)).unwrap();
        assert_eq!(t.crop, img);
        assert_eq!(t.full, img);
    }

    #[test]
    fn single_pixel_crop_is_clamped_neighbourhood() {
        let img = gradient(20, 10);
        let t = compose_triptych(&img, &Bitmap::from_fn(20, 10, |x, y| x == 0 && y == 5)).unwrap();
        assert_eq!(t.crop.dimensions(), (2, 3));
        assert_eq!(t.crop.get_pixel(0, 1), img.get_pixel(0, 5));
        assert_eq!(t.crop.get_pixel(1, 1), &Rgb([255, 255, 255]));
        let t = compose_triptych(&img, &Bitmap::from_fn(20, 10, |x, y| x == 9 && y == 5)).unwrap();
        assert_eq!(t.crop.dimensions(), (3, 3));
    }

    #[test]
    fn left_half_is_reddened_only() {
        let img = gradient(20, 10);
        let t = compose_triptych(&img, &Bitmap::from_fn(20, 10, |x, _| x < 10)).unwrap();
        for (x, y, px) in t.highlighted.enumerate_pixels() {
            let o = img.get_pixel(x, y).0;
            if x < 10 {
                for c in 0..3 {
                    let want = (0.5 * o[c] as f64 + 0.5 * HIGHLIGHT[c] as f64).round() as u8;
                    assert_eq!(px.0[c], want);
                }
            } else {
                assert_eq!(px.0, o);
            }
        }
    }

    #[test]
    fn errors() {
        let img = gradient(4, 4);
        assert!(matches!(compose_triptych(&img, &Bitmap::new(4, 4)), Err(PerceptionError::EmptyMask)));
        assert!(matches!(
            compose_triptych(&img, &Bitmap::new(3, 4)),
            Err(PerceptionError::MaskImageMismatch { .. })
        ));
    }
}
