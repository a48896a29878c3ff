//! Float rasters with an opacity channel, plus PFM and PNG I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::field::Real;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PFM: {0}")]
    Pfm(String),
    #[error("cannot encode {0}-channel image")]
    Channels(usize),
    #[error("PNG encoding: {0}")]
    Png(#[from] png::EncodingError),
}

/// Row-major `height × width × channels` raster, premultiplied against a
/// black background, and the per-pixel opacity `1 − T_final`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
    pub opacity: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
            opacity: vec![T::zero(); width * height],
        }
    }

    /// Image of constant `color` with full opacity.
    pub fn filled(width: usize, height: usize, color: &[T]) -> Self {
        let mut img = Self::new(width, height, color.len());
        for px in img.data.chunks_exact_mut(color.len()) {
            px.copy_from_slice(color);
        }
        img.opacity.fill(T::one());
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            opacity: self.opacity.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().chain(&self.opacity).all(|v| v.is_finite())
    }

    /// Mean absolute difference over all color values.
    pub fn mean_abs_diff(&self, other: &Image<T>) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
        sum / self.data.len().max(1) as f64
    }

    /// `½‖self − other‖²` over color values.
    pub fn half_sq_dist(&self, other: &Image<T>) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        0.5 * self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>()
    }

    /// Per-channel mean over all pixels.
    pub fn mean_color(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            out.iter_mut().zip(px).for_each(|(o, v)| *o += v.as_f64());
        }
        let n = (self.width * self.height).max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_pfm(&mut f, &self.data, self.width, self.height, self.channels)?;
        f.flush()?;
        Ok(())
    }

    /// Writes the opacity channel as a single-channel PFM.
    pub fn write_opacity_pfm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_pfm(&mut f, &self.opacity, self.width, self.height, 1)?;
        f.flush()?;
        Ok(())
    }

    /// 8-bit sRGB PNG of the color channels, clamped to `[0, 1]`. One channel
    /// is written as grayscale; beyond three only the first three are kept.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let (color, stride) = match self.channels {
            1 => (png::ColorType::Grayscale, 1),
            2.. => (png::ColorType::Rgb, 3),
            0 => return Err(ImageError::Channels(0)),
        };
        let mut bytes = Vec::with_capacity(self.width * self.height * stride);
        for px in self.data.chunks_exact(self.channels) {
            for k in 0..stride {
                bytes.push(px.get(k).map_or(0, |v| srgb_byte(v.as_f64())));
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(color);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            w.write_image_data(&bytes)?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }
}

impl Image<f32> {
    /// Reads a PFM as a fully opaque image.
    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let (width, height, channels, data) = read_pfm(std::fs::File::open(path)?)?;
        Ok(Image { width, height, channels, data, opacity: vec![1.0; width * height] })
    }
}

/// Linear value to 8-bit sRGB.
pub fn srgb_byte(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let s = if v <= 0.003_130_8 { 12.92 * v } else { 1.055 * v.powf(1.0 / 2.4) - 0.055 };
    (s * 255.0).round() as u8
}

/// Little-endian PFM (scale −1); rows are stored bottom to top.
pub fn write_pfm<T: Real, W: Write>(w: &mut W, data: &[T], width: usize, height: usize, channels: usize) -> Result<(), ImageError> {
    let tag = match channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(ImageError::Channels(c)),
    };
    assert_eq!(data.len(), width * height * channels);
    write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm<R: Read>(r: R) -> Result<(usize, usize, usize, Vec<f32>), ImageError> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut header = Vec::new();
    while header.len() < 4 {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(ImageError::Pfm("truncated header".into()));
        }
        header.extend(line.split_whitespace().map(str::to_owned));
    }
    let channels = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(ImageError::Pfm(format!("unknown tag {other:?}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Pfm(format!("bad dimension {s:?}")));
    let (width, height) = (num(&header[1])?, num(&header[2])?);
    let scale: f64 = header[3].parse().map_err(|_| ImageError::Pfm("bad scale".into()))?;
    let mut raw = vec![0u8; width * height * channels * 4];
    r.read_exact(&mut raw).map_err(|_| ImageError::Pfm("truncated pixel data".into()))?;
    let decode = |b: &[u8]| {
        let a = [b[0], b[1], b[2], b[3]];
        if scale < 0.0 {
            f32::from_le_bytes(a)
        } else {
            f32::from_be_bytes(a)
        }
    };
    let vals: Vec<f32> = raw.chunks_exact(4).map(decode).collect();
    let row = width * channels;
    let mut data = Vec::with_capacity(vals.len());
    for y in (0..height).rev() {
        data.extend_from_slice(&vals[y * row..(y + 1) * row]);
    }
    Ok((width, height, channels, data))
}
