//! Pixel buffers shared by every pipeline stage, and PNG IO.
//!
//! Rasters are row-major with a top-left origin and y growing downward, the
//! same convention label coordinates use.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use thiserror::Error;

/// One straight-alpha pixel: `[r, g, b, a]`.
pub type Rgba = [u8; 4];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid raster dimensions {width}x{height} for {len} pixels")]
    Dimensions { width: u32, height: u32, len: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: unsupported pixel format {format} (expected 8-bit RGB or RGBA PNG)", path.display())]
    Unsupported { path: PathBuf, format: String },
    #[error("{}: corrupt or unreadable PNG: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
}

/// A width x height raster of 8-bit RGBA pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbaImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgba>,
}

impl RgbaImage {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgba>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Raster filled with a single pixel value.
    ///
    /// Panics on a zero dimension.
    pub fn filled(width: u32, height: u32, px: Rgba) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be >= 1");
        Self {
            width,
            height,
            pixels: vec![px; width as usize * height as usize],
        }
    }

    /// Builds a raster by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgba) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be >= 1");
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgba] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgba> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgba {
        self.pixels[self.index(x, y)]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, px: Rgba) {
        let i = self.index(x, y);
        self.pixels[i] = px;
    }

    /// Applies `f` to every pixel, producing a new raster of the same size.
    pub fn map_pixels(&self, f: impl Fn(Rgba) -> Rgba) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Copies out the `w` x `h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Self {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        Self::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy))
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }
}

/// Per-pixel object/background map. Nonzero means object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return Err(ImageError::Dimensions {
                width,
                height,
                len: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be >= 1");
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn is_object(&self, x: u32, y: u32) -> bool {
        self.values[y as usize * self.width as usize + x as usize] != 0
    }
}

fn decode(path: &Path) -> Result<DynamicImage, ImageError> {
    let reader = ImageReader::open(path)
        .map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(ImageError::Corrupt {
            path: path.to_path_buf(),
            reason: "not a PNG stream".into(),
        });
    }
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(source)
            if !matches!(
                source.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::InvalidData
            ) =>
        {
            ImageError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
        other => ImageError::Corrupt {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Decodes an 8-bit RGB or RGBA PNG. RGB input gets alpha 255.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbaImage, ImageError> {
    let path = path.as_ref();
    let (width, height, pixels) = match decode(path)? {
        DynamicImage::ImageRgba8(buf) => {
            let (w, h) = buf.dimensions();
            let px = buf
                .into_raw()
                .chunks_exact(4)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect();
            (w, h, px)
        }
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let px = buf
                .into_raw()
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2], 255])
                .collect();
            (w, h, px)
        }
        other => {
            return Err(ImageError::Unsupported {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    RgbaImage::new(width, height, pixels)
}

/// Writes `img` as an 8-bit RGBA PNG.
pub fn save_image(img: &RgbaImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let raw: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    let buf = image::RgbaImage::from_raw(img.width, img.height, raw)
        .expect("pixel count matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => ImageError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => ImageError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(other.to_string()),
            },
        })
}

/// Loads a segmentation mask. Grayscale uses the luma byte; colour masks
/// count a pixel as object when any colour channel is nonzero.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskImage, ImageError> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    let values: Vec<u8> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.into_raw().chunks_exact(2).map(|c| c[0]).collect(),
        DynamicImage::ImageRgb8(buf) => buf
            .into_raw()
            .chunks_exact(3)
            .map(|c| c[0].max(c[1]).max(c[2]))
            .collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .into_raw()
            .chunks_exact(4)
            .map(|c| c[0].max(c[1]).max(c[2]))
            .collect(),
        other => {
            return Err(ImageError::Unsupported {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    MaskImage::new(w, h, values)
}

/// Writes a mask as an 8-bit grayscale PNG.
pub fn save_mask(mask: &MaskImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(mask.width, mask.height, mask.values.clone())
        .expect("value count matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })
}
