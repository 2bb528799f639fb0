//! Foreground placement and blending: geometric transforms, the "over"
//! operator, tonal curves, regional blur, alpha ramps, and box derivation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::annotations::{Extents, TransformRecord};
use crate::imagecore::{Rgba, RgbaImage};

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("transform leaves no opaque pixel (rotation {rotation_deg} deg, scale {scale})")]
    TransformedAway { rotation_deg: f64, scale: f64 },
    #[error("foreground has no pixel with alpha > 0")]
    FullyTransparent,
    #[error("{fg_w}x{fg_h} foreground at ({x},{y}) does not fit in {bg_w}x{bg_h} background")]
    OutOfBounds {
        fg_w: u32,
        fg_h: u32,
        x: u32,
        y: u32,
        bg_w: u32,
        bg_h: u32,
    },
    #[error("foreground ({fg_w}x{fg_h} at minimum scale) is larger than the {bg_w}x{bg_h} background")]
    PlacementImpossible { fg_w: u32, fg_h: u32, bg_w: u32, bg_h: u32 },
    #[error("invalid compose config: {0}")]
    InvalidConfig(String),
}

/// Rotation (counterclockwise, about the foreground centre), uniform scale,
/// and the top-left paste position on the background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translate: (u32, u32),
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            translate: (0, 0),
        }
    }

    fn is_identity_raster(&self) -> bool {
        self.scale == 1.0 && self.rotation_deg == 0.0
    }

    pub fn record(&self) -> TransformRecord {
        TransformRecord {
            rotation_deg: self.rotation_deg,
            scale: self.scale,
            translate: [self.translate.0, self.translate.1],
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Effects {
    pub sigmoid: bool,
    pub blur: bool,
    pub alpha_gradient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeConfig {
    pub rng_seed: u64,
    pub scale_range: Range,
    pub rotation_range: Range,
    pub effects: Effects,
    pub sigmoid_cutoff: f64,
    pub sigmoid_gain: f64,
    pub blur_sigma: f64,
    /// Share of the width, from the left edge, that gets blurred.
    pub blur_fraction: f64,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            scale_range: Range::point(1.0),
            rotation_range: Range::point(0.0),
            effects: Effects::default(),
            sigmoid_cutoff: 0.5,
            sigmoid_gain: 10.0,
            blur_sigma: 3.0,
            blur_fraction: 0.5,
        }
    }
}

impl ComposeConfig {
    pub fn validate(&self) -> Result<(), ComposeError> {
        let bad = |m: String| Err(ComposeError::InvalidConfig(m));
        if !self.scale_range.is_valid() || self.scale_range.lo <= 0.0 {
            return bad(format!(
                "scale range {}:{} must satisfy 0 < lo <= hi",
                self.scale_range.lo, self.scale_range.hi
            ));
        }
        if !self.rotation_range.is_valid() {
            return bad(format!(
                "rotation range {}:{} must satisfy lo <= hi",
                self.rotation_range.lo, self.rotation_range.hi
            ));
        }
        if !(self.blur_sigma > 0.0) {
            return bad(format!("blur sigma must be > 0, got {}", self.blur_sigma));
        }
        if !(self.blur_fraction > 0.0 && self.blur_fraction <= 1.0) {
            return bad(format!("blur fraction must lie in (0, 1], got {}", self.blur_fraction));
        }
        if !(0.0..=1.0).contains(&self.sigmoid_cutoff) || !(self.sigmoid_gain > 0.0) {
            return bad(format!(
                "sigmoid cutoff {} must lie in [0, 1] and gain {} must be > 0",
                self.sigmoid_cutoff, self.sigmoid_gain
            ));
        }
        Ok(())
    }
}

/// Independent generator for one (foreground, background) cell of the grid.
pub fn cell_rng(seed: u64, fg_index: u32, bg_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(fg_index) << 32) | u64::from(bg_index));
    rng
}

/// Bounding box of pixels with alpha > 0, if any.
pub fn opaque_extent(img: &RgbaImage) -> Option<Extents> {
    let (w, h) = img.dimensions();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if img.get(x, y)[3] > 0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != u32::MAX).then(|| Extents {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
    })
}

// ceil that ignores float noise such as w * cos(2*pi) = w + 1e-13
fn snug_ceil(v: f64) -> u32 {
    ((v - 1e-9).ceil().max(1.0)) as u32
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Scales then rotates `fg` about its centre. The output raster is the
/// axis-aligned hull of the transformed source; samples falling outside the
/// source are transparent. Colour is interpolated alpha-weighted so that
/// transparent neighbours do not darken soft edges.
pub fn transform_foreground(fg: &RgbaImage, t: &Transform) -> Result<RgbaImage, ComposeError> {
    if !(t.scale > 0.0) || !t.scale.is_finite() || !t.rotation_deg.is_finite() {
        return Err(ComposeError::InvalidConfig(format!(
            "scale must be finite and > 0, got {}",
            t.scale
        )));
    }
    if t.is_identity_raster() {
        return if opaque_extent(fg).is_some() {
            Ok(fg.clone())
        } else {
            Err(ComposeError::TransformedAway {
                rotation_deg: t.rotation_deg,
                scale: t.scale,
            })
        };
    }

    let (sw, sh) = (f64::from(fg.width()), f64::from(fg.height()));
    let (sin, cos) = t.rotation_deg.to_radians().sin_cos();
    let (scaled_w, scaled_h) = (sw * t.scale, sh * t.scale);
    let out_w = snug_ceil(scaled_w * cos.abs() + scaled_h * sin.abs());
    let out_h = snug_ceil(scaled_w * sin.abs() + scaled_h * cos.abs());
    let (ocx, ocy) = (f64::from(out_w) / 2.0, f64::from(out_h) / 2.0);
    let inv_scale = 1.0 / t.scale;

    let out = RgbaImage::from_fn(out_w, out_h, |ox, oy| {
        let dx = f64::from(ox) + 0.5 - ocx;
        let dy = f64::from(oy) + 0.5 - ocy;
        // inverse of a counterclockwise rotation in y-down coordinates
        let rx = dx * cos - dy * sin;
        let ry = dx * sin + dy * cos;
        let sx = rx * inv_scale + sw / 2.0 - 0.5;
        let sy = ry * inv_scale + sh / 2.0 - 0.5;
        bilinear(fg, sx, sy)
    });

    if opaque_extent(&out).is_none() {
        return Err(ComposeError::TransformedAway {
            rotation_deg: t.rotation_deg,
            scale: t.scale,
        });
    }
    Ok(out)
}

fn bilinear(img: &RgbaImage, sx: f64, sy: f64) -> Rgba {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    let (x0, y0) = (x0 as i64, y0 as i64);

    let mut premul = [0.0f64; 3];
    let mut straight = [0.0f64; 3];
    let mut alpha = 0.0;
    let mut inside = 0.0;
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (x, y) = (x0 + dx, y0 + dy);
        if wgt == 0.0 || x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        let px = img.get(x as u32, y as u32);
        let a = f64::from(px[3]);
        for c in 0..3 {
            premul[c] += wgt * a * f64::from(px[c]);
            straight[c] += wgt * f64::from(px[c]);
        }
        alpha += wgt * a;
        inside += wgt;
    }
    unpremultiply(premul, straight, alpha, inside)
}

fn unpremultiply(premul: [f64; 3], straight: [f64; 3], alpha: f64, weight: f64) -> Rgba {
    let rgb = |c: usize| {
        if alpha > 0.0 {
            to_u8(premul[c] / alpha)
        } else if weight > 0.0 {
            to_u8(straight[c] / weight)
        } else {
            0
        }
    };
    [rgb(0), rgb(1), rgb(2), to_u8(alpha)]
}

/// Pastes `fg` with its top-left corner at `at` using the "over" operator.
/// The background is treated as opaque, so every output alpha is 255.
pub fn alpha_composite(
    fg: &RgbaImage,
    bg: &RgbaImage,
    at: (u32, u32),
) -> Result<RgbaImage, ComposeError> {
    let (fw, fh) = fg.dimensions();
    let (bw, bh) = bg.dimensions();
    let (x, y) = at;
    if u64::from(x) + u64::from(fw) > u64::from(bw) || u64::from(y) + u64::from(fh) > u64::from(bh)
    {
        return Err(ComposeError::OutOfBounds {
            fg_w: fw,
            fg_h: fh,
            x,
            y,
            bg_w: bw,
            bg_h: bh,
        });
    }
    let mut out = bg.map_pixels(|[r, g, b, _]| [r, g, b, 255]);
    for fy in 0..fh {
        for fx in 0..fw {
            let f = fg.get(fx, fy);
            let a = u32::from(f[3]);
            if a == 0 {
                continue;
            }
            let b = out.get(x + fx, y + fy);
            // 255 is odd, so (n + 127) / 255 never meets a .5 tie
            let mix = |c: usize| ((u32::from(f[c]) * a + u32::from(b[c]) * (255 - a) + 127) / 255) as u8;
            out.put(x + fx, y + fy, [mix(0), mix(1), mix(2), 255]);
        }
    }
    Ok(out)
}

/// Which colour channels a tonal curve touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChannelSet {
    pub r: bool,
    pub g: bool,
    pub b: bool,
}

impl ChannelSet {
    pub const RGB: Self = Self {
        r: true,
        g: true,
        b: true,
    };
    pub const NONE: Self = Self {
        r: false,
        g: false,
        b: false,
    };

    fn flags(&self) -> [bool; 3] {
        [self.r, self.g, self.b]
    }
}

/// Logistic function `1 / (1 + e^-x)`.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Remaps selected channels through `255 * S(gain * (v/255 - cutoff))`.
pub fn sigmoid_adjust(img: &RgbaImage, channels: ChannelSet, cutoff: f64, gain: f64) -> RgbaImage {
    let lut: Vec<u8> = (0..=255u8)
        .map(|v| to_u8(255.0 * sigmoid(gain * (f64::from(v) / 255.0 - cutoff))))
        .collect();
    let sel = channels.flags();
    img.map_pixels(|mut px| {
        for c in 0..3 {
            if sel[c] {
                px[c] = lut[px[c] as usize];
            }
        }
        px
    })
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`,
/// `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Gaussian-blurs the leftmost `floor(width * fraction)` columns. Samples
/// come from the whole image with clamp-to-edge borders; colour is blurred
/// alpha-weighted. Columns right of the region are copied unchanged.
pub fn blur_left_region(img: &RgbaImage, sigma: f64, fraction: f64) -> RgbaImage {
    let (w, h) = img.dimensions();
    let region = ((f64::from(w) * fraction).floor() as u32).min(w);
    if region == 0 || !(sigma > 0.0) {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: u32| v.clamp(0, i64::from(n) - 1) as u32;

    // channels: premultiplied rgb, alpha, straight rgb
    type Acc = [f64; 7];
    let expand = |px: Rgba| -> Acc {
        let a = f64::from(px[3]);
        [
            f64::from(px[0]) * a,
            f64::from(px[1]) * a,
            f64::from(px[2]) * a,
            a,
            f64::from(px[0]),
            f64::from(px[1]),
            f64::from(px[2]),
        ]
    };

    let mut horiz: Vec<Acc> = vec![[0.0; 7]; region as usize * h as usize];
    for y in 0..h {
        for x in 0..region {
            let acc = &mut horiz[y as usize * region as usize + x as usize];
            for (i, k) in kernel.iter().enumerate() {
                let sx = clamp(i64::from(x) + i as i64 - radius, w);
                let v = expand(img.get(sx, y));
                for c in 0..7 {
                    acc[c] += k * v[c];
                }
            }
        }
    }

    let mut out = img.clone();
    for y in 0..h {
        for x in 0..region {
            let mut acc: Acc = [0.0; 7];
            for (i, k) in kernel.iter().enumerate() {
                let sy = clamp(i64::from(y) + i as i64 - radius, h);
                let v = &horiz[sy as usize * region as usize + x as usize];
                for c in 0..7 {
                    acc[c] += k * v[c];
                }
            }
            out.put(
                x,
                y,
                unpremultiply([acc[0], acc[1], acc[2]], [acc[4], acc[5], acc[6]], acc[3], 1.0),
            );
        }
    }
    out
}

/// Multiplies alpha by a linear column ramp, 0 at the left edge and 1 at the
/// right edge. A single-column image is returned unchanged.
pub fn alpha_gradient(img: &RgbaImage) -> RgbaImage {
    let (w, h) = img.dimensions();
    if w < 2 {
        return img.clone();
    }
    let span = u64::from(w - 1);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut px = img.get(x, y);
            // round half up of alpha * x / span
            px[3] = ((2 * u64::from(px[3]) * u64::from(x) + span) / (2 * span)) as u8;
            out.put(x, y, px);
        }
    }
    out
}

/// Inclusive extents of the transformed foreground's visible pixels, offset
/// by the paste position.
pub fn derive_bbox(fg: &RgbaImage, t: &Transform) -> Result<Extents, ComposeError> {
    let raster = transform_foreground(fg, t)?;
    let e = opaque_extent(&raster).ok_or(ComposeError::FullyTransparent)?;
    Ok(e.translate(t.translate.0, t.translate.1))
}

/// Output of one composition.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub image: RgbaImage,
    pub extents: Extents,
    /// `translate` is where `foreground`'s top-left corner landed.
    pub transform: Transform,
    /// Final foreground raster right before compositing, cropped to its
    /// visible pixels.
    pub foreground: RgbaImage,
}

const SCALE_ATTEMPTS: usize = 8;

/// Samples a transform, applies the enabled effects in the order
/// sigmoid, blur, alpha gradient, then pastes onto `bg` at a uniformly
/// random position that keeps the visible foreground inside the canvas.
pub fn compose_pair<R: Rng + ?Sized>(
    fg: &RgbaImage,
    bg: &RgbaImage,
    cfg: &ComposeConfig,
    rng: &mut R,
) -> Result<Composition, ComposeError> {
    cfg.validate()?;
    let (bw, bh) = bg.dimensions();
    let rotation = cfg.rotation_range.sample(rng);

    let mut prepared = None;
    for attempt in 0..=SCALE_ATTEMPTS {
        let scale = if attempt == SCALE_ATTEMPTS {
            cfg.scale_range.lo
        } else {
            cfg.scale_range.sample(rng)
        };
        let raster = prepare_foreground(fg, rotation, scale, cfg)?;
        let (fw, fh) = raster.dimensions();
        if fw <= bw && fh <= bh {
            prepared = Some((raster, scale));
            break;
        }
        if attempt == SCALE_ATTEMPTS {
            return Err(ComposeError::PlacementImpossible {
                fg_w: fw,
                fg_h: fh,
                bg_w: bw,
                bg_h: bh,
            });
        }
    }
    let (foreground, scale) = prepared.expect("loop either breaks with a raster or returns");
    let (fw, fh) = foreground.dimensions();
    let x = rng.random_range(0..=bw - fw);
    let y = rng.random_range(0..=bh - fh);
    let image = alpha_composite(&foreground, bg, (x, y))?;
    let extents = Extents {
        x_min: x,
        y_min: y,
        x_max: x + fw - 1,
        y_max: y + fh - 1,
    };
    Ok(Composition {
        image,
        extents,
        transform: Transform {
            rotation_deg: rotation,
            scale,
            translate: (x, y),
        },
        foreground,
    })
}

fn prepare_foreground(
    fg: &RgbaImage,
    rotation: f64,
    scale: f64,
    cfg: &ComposeConfig,
) -> Result<RgbaImage, ComposeError> {
    let t = Transform {
        rotation_deg: rotation,
        scale,
        translate: (0, 0),
    };
    let mut raster = transform_foreground(fg, &t)?;
    if cfg.effects.sigmoid {
        raster = sigmoid_adjust(&raster, ChannelSet::RGB, cfg.sigmoid_cutoff, cfg.sigmoid_gain);
    }
    if cfg.effects.blur {
        // room for the blur to spread past the object's edge
        let pad = (3.0 * cfg.blur_sigma).ceil() as u32;
        raster = pad_transparent(&raster, pad);
        raster = blur_left_region(&raster, cfg.blur_sigma, cfg.blur_fraction);
    }
    if cfg.effects.alpha_gradient {
        raster = alpha_gradient(&raster);
    }
    let e = opaque_extent(&raster).ok_or(ComposeError::FullyTransparent)?;
    Ok(raster.crop(e.x_min, e.y_min, e.width() as u32, e.height() as u32))
}

fn pad_transparent(img: &RgbaImage, pad: u32) -> RgbaImage {
    let (w, h) = img.dimensions();
    RgbaImage::from_fn(w + 2 * pad, h + 2 * pad, |x, y| {
        if x >= pad && y >= pad && x < w + pad && y < h + pad {
            img.get(x - pad, y - pad)
        } else {
            [0, 0, 0, 0]
        }
    })
}
