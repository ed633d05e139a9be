//! Raster images, forward-difference gradients and file I/O.
//!
//! Samples are stored as `f64`, row-major with channels interleaved. Images
//! read from disk are normalized to `[0, 1]`; intermediate results such as
//! detail layers may be signed and are only clamped when written out.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use rayon::prelude::*;

use crate::error::{HipeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(HipeError::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(HipeError::InvalidParameter(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(HipeError::ShapeMismatch(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(HipeError::InvalidParameter(format!(
                "non-finite sample {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    /// Build an image from one plane per channel.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(HipeError::ShapeMismatch(
                "plane length does not match image size".into(),
            ));
        }
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(HipeError::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Sample-wise map; the result keeps this image's shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Image> {
        Image::new(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Sample-wise combination of two images of the same shape.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.check_same_shape(other, "zip_map")?;
        Image::new(
            self.width,
            self.height,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn clamped(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_constant(&self) -> bool {
        let c = self.channels;
        self.data.chunks_exact(c).all(|px| px == &self.data[..c])
    }
}

/// Signed forward differences of an image plus the channel-max magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `I(x+1, y) - I(x, y)`, zero on the last column; channel-interleaved.
    pub dx: Vec<f64>,
    /// `I(x, y+1) - I(x, y)`, zero on the last row; channel-interleaved.
    pub dy: Vec<f64>,
    /// Per pixel, the maximum over channels of `sqrt(dx² + dy²)`.
    pub magnitude: Vec<f64>,
}

impl GradientField {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitude.iter().sum::<f64>() / self.magnitude.len() as f64
    }
}

pub fn gradient(img: &Image) -> GradientField {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let data = &img.data;
    let row_len = w * ch;
    let mut dx = vec![0.0; data.len()];
    let mut dy = vec![0.0; data.len()];
    let mut magnitude = vec![0.0; w * h];

    dx.par_chunks_mut(row_len)
        .zip(dy.par_chunks_mut(row_len))
        .zip(magnitude.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((dx_row, dy_row), mag_row))| {
            let row = &data[y * row_len..(y + 1) * row_len];
            for x in 0..w {
                let mut m: f64 = 0.0;
                for c in 0..ch {
                    let i = x * ch + c;
                    let gx = if x + 1 < w { row[i + ch] - row[i] } else { 0.0 };
                    let gy = if y + 1 < h {
                        data[(y + 1) * row_len + i] - row[i]
                    } else {
                        0.0
                    };
                    dx_row[i] = gx;
                    dy_row[i] = gy;
                    m = m.max((gx * gx + gy * gy).sqrt());
                }
                mag_row[x] = m;
            }
        });

    GradientField {
        width: w,
        height: h,
        channels: ch,
        dx,
        dy,
        magnitude,
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HipeError::io(path, e))?;
    let format = image::guess_format(&bytes)
        .map_err(|e| HipeError::Format(format!("{}: {e}", path.display())))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(HipeError::Format(format!(
            "{}: {format:?} is not PNG or PNM",
            path.display()
        )));
    }
    let dynamic = image::load(Cursor::new(&bytes), format)
        .map_err(|e| HipeError::Format(format!("{}: {e}", path.display())))?;
    from_dynamic(dynamic).map_err(|e| match e {
        HipeError::Format(msg) => HipeError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn from_dynamic(dynamic: DynamicImage) -> Result<Image> {
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        DynamicImage::ImageLuma8(buf) => Image::new(w, h, 1, normalize8(buf.into_raw())),
        DynamicImage::ImageRgb8(buf) => Image::new(w, h, 3, normalize8(buf.into_raw())),
        DynamicImage::ImageLuma16(buf) => Image::new(w, h, 1, normalize16(buf.into_raw())),
        DynamicImage::ImageRgb16(buf) => Image::new(w, h, 3, normalize16(buf.into_raw())),
        other if other.color().has_alpha() => Err(HipeError::Format(format!(
            "alpha channel ({:?}) is not supported",
            other.color()
        ))),
        other => Err(HipeError::Format(format!(
            "unsupported sample layout {:?}",
            other.color()
        ))),
    }
}

fn normalize8(raw: Vec<u8>) -> Vec<f64> {
    raw.into_iter().map(|v| f64::from(v) / 255.0).collect()
}

fn normalize16(raw: Vec<u16>) -> Vec<f64> {
    raw.into_iter().map(|v| f64::from(v) / 65535.0).collect()
}

/// Round-half-up 8-bit quantization of a sample clamped to `[0, 1]`.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Write an 8-bit PNG (or PPM/PGM for `.ppm`/`.pgm`/`.pnm` paths).
///
/// The file is written to a sibling temporary path and renamed into place.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ppm") | Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = if img.channels == 1 {
        DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer length matches dimensions"),
        )
    } else {
        DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer length matches dimensions"),
        )
    };
    let mut encoded = Vec::new();
    dynamic
        .write_to(&mut Cursor::new(&mut encoded), format)
        .map_err(|e| HipeError::Format(e.to_string()))?;
    write_atomic(path, &encoded)
}

pub(crate) fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Write bytes to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| HipeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        HipeError::io(path, e)
    })
}
