//! Grayscale frames, binary masks and raster I/O.
//!
//! Coordinates follow raster order: `x` is the column, `y` is the row, and
//! `(0, 0)` is the centre of the top-left pixel.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or corrupt raster {path}: {reason}")]
    UnsupportedFormat { path: String, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: String, reason: String },
    #[error("invalid dimensions {width}x{height} for {len} pixels")]
    Dimensions { width: usize, height: usize, len: usize },
}

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> u64 {
        let dx = self.x as i64 - other.x as i64;
        let dy = self.y as i64 - other.y as i64;
        (dx * dx + dy * dy) as u64
    }
}

/// 8-bit grayscale image, row-major, 0 = black.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImageError::Dimensions { width, height, len: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn contains(&self, p: Point) -> bool {
        (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn min_max(&self) -> (u8, u8) {
        self.pixels.iter().fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Binary raster the size of a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::Dimensions { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    /// Mask of the given pixels; out-of-range pixels panic.
    pub fn from_points(width: usize, height: usize, pts: &[Point]) -> Self {
        let mut m = Self::new(width, height);
        for p in pts {
            m.set(p.x as usize, p.y as usize, true);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn foreground(&self) -> impl Iterator<Item = Point> + '_ {
        let w = self.width;
        self.data.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| Point::new((i % w) as u32, (i / w) as u32))
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Integer luminance, rounded: `(299 R + 587 G + 114 B + 500) / 1000`.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

fn decode(path: &Path) -> Result<image::DynamicImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::UnreadableFile { path: path_str(path), source })?;
    let format = image::guess_format(&bytes)
        .map_err(|e| ImageError::UnsupportedFormat { path: path_str(path), reason: e.to_string() })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Bmp | image::ImageFormat::Pnm) {
        return Err(ImageError::UnsupportedFormat {
            path: path_str(path),
            reason: format!("{format:?} is not PNG, BMP or PGM"),
        });
    }
    image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| ImageError::UnsupportedFormat { path: path_str(path), reason: e.to_string() })
}

/// Loads a PNG, BMP or PGM raster as 8-bit grayscale.
///
/// Colour inputs go through [`luminance`]; 16-bit grayscale is reduced to
/// its high byte.
pub fn load_frame(path: &Path) -> Result<GrayImage, ImageError> {
    use image::DynamicImage as D;
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        D::ImageLuma8(buf) => buf.into_raw(),
        D::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        D::ImageLuma16(buf) => buf.pixels().map(|p| (p.0[0] >> 8) as u8).collect(),
        other => other.to_rgb8().pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
    };
    GrayImage::new(w, h, pixels)
}

/// Loads a mask raster: any nonzero gray level is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask, ImageError> {
    let img = decode(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::from_vec(w, h, img.into_raw().into_iter().map(|v| v != 0).collect())
}

/// Loads a 16-bit (or 8-bit) label raster; 0 is background.
pub fn load_labels(path: &Path) -> Result<(usize, usize, Vec<u16>), ImageError> {
    let img = decode(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw()))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> ImageError {
    ImageError::Write { path: path_str(path), reason: e.to_string() }
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<(), ImageError> {
    image::save_buffer_with_format(
        path,
        img.pixels(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| write_err(path, e))
}

/// Writes a mask as a 0/255 PNG.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), ImageError> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::new(mask.width(), mask.height(), bytes).map_err(|e| write_err(path, e))?;
    save_gray(&img, path)
}

/// Writes 16-bit grayscale values as PNG.
pub fn save_gray16(width: usize, height: usize, values: &[u16], path: &Path) -> Result<(), ImageError> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(width as u32, height as u32, values.to_vec())
        .ok_or(ImageError::Dimensions { width, height, len: values.len() })?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| write_err(path, e))
}

/// Writes interleaved RGB bytes as PNG.
pub fn save_rgb(width: usize, height: usize, rgb: &[u8], path: &Path) -> Result<(), ImageError> {
    image::save_buffer_with_format(
        path,
        rgb,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| write_err(path, e))
}
