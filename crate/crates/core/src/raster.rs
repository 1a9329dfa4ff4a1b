//! Minimal interleaved 8-bit raster used by the chipper, the compositor and
//! the color mapper, plus PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit image with 1 (gray), 3 (RGB) or 4 (RGBA) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8) -> Self {
        assert!(matches!(channels, 1 | 3 | 4), "unsupported channel count {channels}");
        Self { width, height, channels, data: vec![0; width as usize * height as usize * channels as usize] }
    }

    pub fn from_raw(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::Image(format!("unsupported channel count {channels}")));
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(Error::Image(format!(
                "buffer of {} bytes does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Self {
        let mut img = Self::new(width, height, pixel.len() as u8);
        for chunk in img.data.chunks_exact_mut(pixel.len()) {
            chunk.copy_from_slice(pixel);
        }
        img
    }

    pub fn from_fn(width: u32, height: u32, channels: u8, mut f: impl FnMut(u32, u32) -> Vec<u8>) -> Self {
        let mut img = Self::new(width, height, channels);
        for row in 0..height {
            for col in 0..width {
                let px = f(col, row);
                img.pixel_mut(col, row).copy_from_slice(&px);
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    fn offset(&self, col: u32, row: u32) -> usize {
        (row as usize * self.width as usize + col as usize) * self.channels as usize
    }

    pub fn pixel(&self, col: u32, row: u32) -> &[u8] {
        let o = self.offset(col, row);
        &self.data[o..o + self.channels as usize]
    }

    pub fn pixel_mut(&mut self, col: u32, row: u32) -> &mut [u8] {
        let o = self.offset(col, row);
        let c = self.channels as usize;
        &mut self.data[o..o + c]
    }

    /// Pixel at signed coordinates, `None` outside the raster.
    pub fn get(&self, col: i64, row: i64) -> Option<&[u8]> {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            None
        } else {
            Some(self.pixel(col as u32, row as u32))
        }
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        self.get(col, row).is_some()
    }

    /// Copies a window; parts outside the raster are zero.
    pub fn window(&self, col0: i64, row0: i64, width: u32, height: u32) -> ImageBuffer {
        let mut out = ImageBuffer::new(width, height, self.channels);
        for r in 0..height {
            for c in 0..width {
                if let Some(px) = self.get(col0 + c as i64, row0 + r as i64) {
                    out.pixel_mut(c, r).copy_from_slice(px);
                }
            }
        }
        out
    }

    /// ITU-R 601 luma, rounded.
    pub fn to_gray(&self) -> ImageBuffer {
        match self.channels {
            1 => self.clone(),
            _ => {
                let c = self.channels as usize;
                let data = self.data.chunks_exact(c).map(|p| luma(p[0], p[1], p[2])).collect();
                ImageBuffer { width: self.width, height: self.height, channels: 1, data }
            }
        }
    }

    /// RGB view; gray is replicated, alpha dropped.
    pub fn to_rgb(&self) -> ImageBuffer {
        let c = self.channels as usize;
        let data = match self.channels {
            3 => return self.clone(),
            1 => self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            _ => self.data.chunks_exact(c).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        };
        ImageBuffer { width: self.width, height: self.height, channels: 3, data }
    }

    /// Alpha channel, or fully opaque for images without one.
    pub fn alpha(&self, col: u32, row: u32) -> u8 {
        if self.channels == 4 {
            self.pixel(col, row)[3]
        } else {
            255
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        let (w, h) = (img.width(), img.height());
        let out = match img {
            image::DynamicImage::ImageLuma8(b) => Self::from_raw(w, h, 1, b.into_raw())?,
            image::DynamicImage::ImageRgb8(b) => Self::from_raw(w, h, 3, b.into_raw())?,
            image::DynamicImage::ImageRgba8(b) => Self::from_raw(w, h, 4, b.into_raw())?,
            other if other.color().has_alpha() => Self::from_raw(w, h, 4, other.to_rgba8().into_raw())?,
            other => Self::from_raw(w, h, 3, other.to_rgb8().into_raw())?,
        };
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_png(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn write_png(&self, out: &mut Vec<u8>) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            _ => image::ExtendedColorType::Rgba8,
        };
        let encoder = image::codecs::png::PngEncoder::new(std::io::Cursor::new(out));
        image::ImageEncoder::write_image(encoder, &self.data, self.width, self.height, color)?;
        Ok(())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let (w, h) = (img.width(), img.height());
        match img.color().channel_count() {
            1 => Self::from_raw(w, h, 1, img.to_luma8().into_raw()),
            4 => Self::from_raw(w, h, 4, img.to_rgba8().into_raw()),
            _ => Self::from_raw(w, h, 3, img.to_rgb8().into_raw()),
        }
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Separable Gaussian blur with replicated borders, computed per channel in
/// f32. Kernel radius is `ceil(3 sigma)`.
pub fn gaussian_blur_f32(plane: &[f32], width: usize, height: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 || width == 0 || height == 0 {
        return plane.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0f32;
            for (k, w) in kernel.iter().enumerate() {
                let sx = clampi(x as i64 + k as i64 - radius, width);
                acc += w * plane[y * width + sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0f32;
            for (k, w) in kernel.iter().enumerate() {
                let sy = clampi(y as i64 + k as i64 - radius, height);
                acc += w * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Gaussian blur of an 8-bit image, every channel independently.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f32) -> ImageBuffer {
    let (w, h, c) = (img.width as usize, img.height as usize, img.channels as usize);
    let mut out = img.clone();
    for ch in 0..c {
        let plane: Vec<f32> = img.data.iter().skip(ch).step_by(c).map(|&v| v as f32).collect();
        let blurred = gaussian_blur_f32(&plane, w, h, sigma);
        for (i, v) in blurred.into_iter().enumerate() {
            out.data[i * c + ch] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
