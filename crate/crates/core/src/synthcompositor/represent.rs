//! Schematic representation functions: lossy transforms of a scene that hide
//! whether it was real or composited while keeping enough structure for a
//! generator to rebuild imagery from.

use crate::error::{Error, Result};
use crate::raster::{gaussian_blur_f32, ImageBuffer};

pub const CANNY_SIGMA: f32 = 1.0;
pub const CANNY_LOW: f32 = 50.0;
pub const CANNY_HIGH: f32 = 150.0;

/// Image to image transform `R`.
pub trait Representation {
    fn represent(&self, img: &ImageBuffer) -> Result<ImageBuffer>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRep;

impl Representation for IdentityRep {
    fn represent(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(img.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LaplacianRep;

impl Representation for LaplacianRep {
    fn represent(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(rep_laplacian(img))
    }

    fn name(&self) -> &str {
        "laplacian"
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CannyRep {
    pub low: f32,
    pub high: f32,
    pub sigma: f32,
}

impl Default for CannyRep {
    fn default() -> Self {
        Self { low: CANNY_LOW, high: CANNY_HIGH, sigma: CANNY_SIGMA }
    }
}

impl Representation for CannyRep {
    fn represent(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        rep_canny(img, self.low, self.high, self.sigma)
    }

    fn name(&self) -> &str {
        "canny"
    }
}

/// Filled segmentation polygons; ignores the pixels of the input and only
/// uses its dimensions.
#[derive(Debug, Clone, Default)]
pub struct MaskRep {
    pub polygons: Vec<Vec<(f64, f64)>>,
}

impl Representation for MaskRep {
    fn represent(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(rep_mask(&self.polygons, img.width(), img.height()))
    }

    fn name(&self) -> &str {
        "mask"
    }
}

fn gray_plane(img: &ImageBuffer) -> Vec<i32> {
    img.to_gray().data().iter().map(|&v| v as i32).collect()
}

/// `|4-neighbour Laplacian|` of the luma image, clamped to 8 bits, with
/// replicated borders.
pub fn rep_laplacian(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let g = gray_plane(img);
    let at = |c: i64, r: i64| g[(r.clamp(0, h - 1) * w + c.clamp(0, w - 1)) as usize];
    let mut out = ImageBuffer::new(img.width(), img.height(), 1);
    for r in 0..h {
        for c in 0..w {
            let v = at(c, r - 1) + at(c - 1, r) + at(c + 1, r) + at(c, r + 1) - 4 * at(c, r);
            out.pixel_mut(c as u32, r as u32)[0] = v.unsigned_abs().min(255) as u8;
        }
    }
    out
}

/// Canny edges: Gaussian smoothing, Sobel gradients, non-maximum suppression
/// along the quantized gradient direction, then hysteresis with 8-connected
/// tracking. The output holds only 0 and 255.
pub fn rep_canny(img: &ImageBuffer, low: f32, high: f32, sigma: f32) -> Result<ImageBuffer> {
    if !(0.0 <= low && low < high) {
        return Err(Error::InvalidThresholds { low: low as f64, high: high as f64 });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageBuffer::new(img.width(), img.height(), 1);
    if w == 0 || h == 0 {
        return Ok(out);
    }
    let plane: Vec<f32> = img.to_gray().data().iter().map(|&v| v as f32).collect();
    let smooth = gaussian_blur_f32(&plane, w, h, sigma);
    let at = |c: i64, r: i64| smooth[r.clamp(0, h as i64 - 1) as usize * w + c.clamp(0, w as i64 - 1) as usize];

    let mut mag = vec![0f32; w * h];
    let mut dir = vec![0u8; w * h];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let gx = (at(c + 1, r - 1) + 2.0 * at(c + 1, r) + at(c + 1, r + 1))
                - (at(c - 1, r - 1) + 2.0 * at(c - 1, r) + at(c - 1, r + 1));
            let gy = (at(c - 1, r + 1) + 2.0 * at(c, r + 1) + at(c + 1, r + 1))
                - (at(c - 1, r - 1) + 2.0 * at(c, r - 1) + at(c + 1, r - 1));
            let i = r as usize * w + c as usize;
            mag[i] = gx.hypot(gy);
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }

    let m = |c: i64, r: i64| {
        if c < 0 || r < 0 || c >= w as i64 || r >= h as i64 {
            0.0
        } else {
            mag[r as usize * w + c as usize]
        }
    };
    let mut thin = vec![0f32; w * h];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let i = r as usize * w + c as usize;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (before, after) = match dir[i] {
                0 => (m(c - 1, r), m(c + 1, r)),
                1 => (m(c - 1, r - 1), m(c + 1, r + 1)),
                2 => (m(c, r - 1), m(c, r + 1)),
                _ => (m(c + 1, r - 1), m(c - 1, r + 1)),
            };
            // strict on one side so a plateau of two equal maxima keeps one
            if v > before && v >= after {
                thin[i] = v;
            }
        }
    }

    let mut stack = Vec::new();
    for (i, &v) in thin.iter().enumerate() {
        if v >= high && out.data()[i] == 0 {
            let (c, r) = ((i % w) as u32, (i / w) as u32);
            out.pixel_mut(c, r)[0] = 255;
            stack.push((c as i64, r as i64));
            while let Some((c, r)) = stack.pop() {
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (nc, nr) = (c + dc, r + dr);
                        if nc < 0 || nr < 0 || nc >= w as i64 || nr >= h as i64 {
                            continue;
                        }
                        let j = nr as usize * w + nc as usize;
                        if thin[j] >= low && thin[j] > 0.0 && out.data()[j] == 0 {
                            out.pixel_mut(nc as u32, nr as u32)[0] = 255;
                            stack.push((nc, nr));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Even-odd rasterization of each polygon, sampled at pixel centers; the
/// polygons are OR-ed together. Inside is 255.
pub fn rep_mask(polygons: &[Vec<(f64, f64)>], width: u32, height: u32) -> ImageBuffer {
    let mut out = ImageBuffer::new(width, height, 1);
    let mut crossings = Vec::new();
    for poly in polygons.iter().filter(|p| p.len() >= 3) {
        for row in 0..height {
            let y = row as f64 + 0.5;
            crossings.clear();
            for k in 0..poly.len() {
                let (x0, y0) = poly[k];
                let (x1, y1) = poly[(k + 1) % poly.len()];
                // half-open rule so shared vertices count once
                if (y0 <= y) != (y1 <= y) {
                    crossings.push(x0 + (y - y0) / (y1 - y0) * (x1 - x0));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                // pixel centers c + 0.5 inside [span0, span1)
                let start = (span[0] - 0.5).ceil().max(0.0);
                let end = (span[1] - 0.5).ceil().min(width as f64);
                let mut col = start;
                while col < end {
                    out.pixel_mut(col as u32, row)[0] = 255;
                    col += 1.0;
                }
            }
        }
    }
    out
}
