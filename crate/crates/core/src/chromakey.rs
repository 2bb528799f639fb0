//! Green-screen substitution from a segmentation mask, and green-background
//! removal that turns colour distance from green into an alpha layer.

use rayon::prelude::*;
use thiserror::Error;

use crate::imagecore::{MaskImage, RgbaImage};

#[derive(Debug, Error, PartialEq)]
pub enum ChromaError {
    #[error("mask is {mask_w}x{mask_h} but photo is {photo_w}x{photo_h}")]
    DimensionMismatch {
        photo_w: u32,
        photo_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("invalid chroma parameter: {0}")]
    InvalidParams(String),
}

/// Constants of the keying formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChromaParams {
    /// Divisor mapping a channel to its brightness ratio.
    pub norm_factor: f64,
    /// Added to each red/blue-vs-green difference so dark pixels stay opaque.
    pub dark_offset: f64,
    /// Raw alpha strictly above this becomes fully opaque.
    pub alpha_threshold: f64,
    /// Colour painted behind the object by [`apply_greenscreen`].
    pub key_color: [u8; 3],
}

impl Default for ChromaParams {
    fn default() -> Self {
        Self {
            norm_factor: 255.0,
            dark_offset: 0.2,
            alpha_threshold: 50.0,
            key_color: [0, 100, 0],
        }
    }
}

impl ChromaParams {
    pub fn validate(&self) -> Result<(), ChromaError> {
        if !(self.norm_factor > 0.0) {
            return Err(ChromaError::InvalidParams(format!(
                "norm_factor must be > 0, got {}",
                self.norm_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.dark_offset) {
            return Err(ChromaError::InvalidParams(format!(
                "dark_offset must lie in [0, 1], got {}",
                self.dark_offset
            )));
        }
        if !(0.0..=255.0).contains(&self.alpha_threshold) {
            return Err(ChromaError::InvalidParams(format!(
                "alpha_threshold must lie in [0, 255], got {}",
                self.alpha_threshold
            )));
        }
        Ok(())
    }
}

/// Keeps object pixels and paints everything else with the key colour.
pub fn apply_greenscreen(
    photo: &RgbaImage,
    mask: &MaskImage,
    params: &ChromaParams,
) -> Result<RgbaImage, ChromaError> {
    let (pw, ph) = photo.dimensions();
    let (mw, mh) = mask.dimensions();
    if (pw, ph) != (mw, mh) {
        return Err(ChromaError::DimensionMismatch {
            photo_w: pw,
            photo_h: ph,
            mask_w: mw,
            mask_h: mh,
        });
    }
    let [kr, kg, kb] = params.key_color;
    let pixels = photo
        .pixels()
        .par_iter()
        .zip(mask.values().par_iter())
        .map(|(&[r, g, b, _], &m)| {
            if m != 0 {
                [r, g, b, 255]
            } else {
                [kr, kg, kb, 255]
            }
        })
        .collect();
    Ok(RgbaImage::new(pw, ph, pixels).expect("same dimensions as photo"))
}

/// Alpha for one pixel.
///
/// Each of red and blue is compared with green as `c/norm - g/norm + offset`,
/// negative differences clamp to zero, and the sum is scaled by 255. Values
/// strictly above the threshold snap to 255; the rest are rounded and kept,
/// which leaves a soft fringe around the object.
pub fn pixel_alpha(r: u8, g: u8, b: u8, params: &ChromaParams) -> u8 {
    // (c - g) * (255 / norm) is exact when norm == 255, so integer-valued
    // raw alphas compare against the threshold without float drift.
    let unit = 255.0 / params.norm_factor;
    let offset = params.dark_offset * 255.0;
    let vs_green = |c: u8| ((f64::from(c) - f64::from(g)) * unit + offset).max(0.0);
    let raw = vs_green(r) + vs_green(b);
    if raw > params.alpha_threshold {
        255
    } else {
        raw.round().clamp(0.0, 255.0) as u8
    }
}

/// Replaces each pixel's alpha with [`pixel_alpha`]; RGB is untouched.
pub fn remove_green(img: &RgbaImage, params: &ChromaParams) -> RgbaImage {
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .par_iter()
        .map(|&[r, g, b, _]| [r, g, b, pixel_alpha(r, g, b, params)])
        .collect();
    RgbaImage::new(w, h, pixels).expect("same dimensions as input")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ChromaParams {
        ChromaParams::default()
    }

    #[test]
    fn hand_derived_alphas() {
        assert_eq!(pixel_alpha(0, 255, 0, &p()), 0);
        assert_eq!(pixel_alpha(0, 100, 0, &p()), 0);
        assert_eq!(pixel_alpha(0, 0, 0, &p()), 255);
        assert_eq!(pixel_alpha(255, 255, 255, &p()), 255);
        assert_eq!(pixel_alpha(160, 200, 0, &p()), 11);
    }

    #[test]
    fn raw_alpha_of_exactly_threshold_is_kept() {
        // r - g = b - g = -26: each term 25, raw exactly 50
        assert_eq!(pixel_alpha(74, 100, 74, &p()), 50);
        // one step less green pushes raw to 52 > 50
        assert_eq!(pixel_alpha(74, 99, 74, &p()), 255);
    }

    #[test]
    fn greenscreen_extremes() {
        let photo = RgbaImage::from_fn(3, 2, |x, y| [x as u8 * 40, y as u8 * 90, 7, 200]);
        let empty = MaskImage::from_fn(3, 2, |_, _| 0);
        let out = apply_greenscreen(&photo, &empty, &p()).unwrap();
        assert!(out.pixels().iter().all(|&px| px == [0, 100, 0, 255]));

        let full = MaskImage::from_fn(3, 2, |_, _| 1);
        let out = apply_greenscreen(&photo, &full, &p()).unwrap();
        for (a, b) in out.pixels().iter().zip(photo.pixels()) {
            assert_eq!(a[..3], b[..3]);
            assert_eq!(a[3], 255);
        }
    }

    #[test]
    fn greenscreen_checkerboard() {
        let photo = RgbaImage::new(
            2,
            2,
            vec![[10, 20, 30, 255], [40, 50, 60, 255], [70, 80, 90, 255], [1, 2, 3, 255]],
        )
        .unwrap();
        let mask = MaskImage::new(2, 2, vec![1, 0, 0, 255]).unwrap();
        let out = apply_greenscreen(&photo, &mask, &p()).unwrap();
        assert_eq!(
            out.pixels(),
            &[[10, 20, 30, 255], [0, 100, 0, 255], [0, 100, 0, 255], [1, 2, 3, 255]]
        );
    }

    #[test]
    fn greenscreen_dimension_mismatch() {
        let photo = RgbaImage::filled(3, 2, [0; 4]);
        let mask = MaskImage::from_fn(2, 3, |_, _| 0);
        assert!(matches!(
            apply_greenscreen(&photo, &mask, &p()),
            Err(ChromaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn remove_green_examples() {
        let key = RgbaImage::filled(4, 3, [0, 100, 0, 255]);
        assert!(remove_green(&key, &p()).pixels().iter().all(|px| px[3] == 0));
        let blue = RgbaImage::filled(4, 3, [0, 0, 255, 255]);
        assert!(remove_green(&blue, &p()).pixels().iter().all(|px| px[3] == 255));
    }

    #[test]
    fn remove_green_keeps_rgb() {
        let img = RgbaImage::from_fn(16, 16, |x, y| [(x * 16) as u8, (y * 16) as u8, (x ^ y) as u8 * 9, 3]);
        let out = remove_green(&img, &p());
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert_eq!(a[..3], b[..3]);
        }
    }

    #[test]
    fn more_green_never_more_opaque() {
        for r in (0..=255u8).step_by(5) {
            for b in (0..=255u8).step_by(5) {
                let mut prev = pixel_alpha(r, 0, b, &p());
                for g in 1..=255u8 {
                    let a = pixel_alpha(r, g, b, &p());
                    assert!(a <= prev, "r={r} g={g} b={b}");
                    prev = a;
                }
            }
        }
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let mut bad = p();
        bad.dark_offset = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = p();
        bad.alpha_threshold = 300.0;
        assert!(bad.validate().is_err());
        assert!(p().validate().is_ok());
    }
}
