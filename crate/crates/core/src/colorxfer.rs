//! Linear color matching by Mahalanobis whitening.
//!
//! Content pixels are whitened with the inverse square root of their
//! covariance and recolored with the square root of the style covariance:
//! `p' = A (p - mu_content) + mu_style` with `A = Σ_s^{1/2} Σ_c^{-1/2}`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

pub const DEFAULT_RIDGE: f64 = 1e-3;
const MIN_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearColorMap {
    pub a: [[f64; 3]; 3],
    pub mu_content: [f64; 3],
    pub mu_style: [f64; 3],
}

impl LinearColorMap {
    pub fn identity() -> Self {
        Self { a: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], mu_content: [0.0; 3], mu_style: [0.0; 3] }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.a[i][j])
    }

    /// The affine map before clamping.
    pub fn map(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.matrix() * (Vector3::from(p) - Vector3::from(self.mu_content)) + Vector3::from(self.mu_style);
        [v[0], v[1], v[2]]
    }

    pub fn map_pixel(&self, p: [u8; 3]) -> [u8; 3] {
        self.map(p.map(f64::from)).map(|v| v.round().clamp(0.0, 255.0) as u8)
    }

    /// `other ∘ self`.
    pub fn then(&self, other: &LinearColorMap) -> LinearColorMap {
        let a = other.matrix() * self.matrix();
        // other.map(self.map(p)) = a (p - mu_c) + other.A (self.mu_s - other.mu_c) + other.mu_s
        let shift = other.matrix() * (Vector3::from(self.mu_style) - Vector3::from(other.mu_content))
            + Vector3::from(other.mu_style);
        LinearColorMap {
            a: [[a[(0, 0)], a[(0, 1)], a[(0, 2)]], [a[(1, 0)], a[(1, 1)], a[(1, 2)]], [a[(2, 0)], a[(2, 1)], a[(2, 2)]]],
            mu_content: self.mu_content,
            mu_style: [shift[0], shift[1], shift[2]],
        }
    }
}

/// Channel means and population covariance.
pub fn channel_stats(pixels: &[[f64; 3]]) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = pixels.len() as f64;
    let mut mu = Vector3::zeros();
    for p in pixels {
        mu += Vector3::from(*p);
    }
    mu /= n;
    let mut cov = Matrix3::zeros();
    for p in pixels {
        let d = Vector3::from(*p) - mu;
        cov += d * d.transpose();
    }
    cov /= n;
    let c = |i, j| cov[(i, j)];
    ([mu[0], mu[1], mu[2]], [[c(0, 0), c(0, 1), c(0, 2)], [c(1, 0), c(1, 1), c(1, 2)], [c(2, 0), c(2, 1), c(2, 2)]])
}

fn sym_power(m: Matrix3<f64>, power: f64) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(m);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::SingularCovariance(bad));
    }
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    Ok(eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn fit_color_map(content: &[[f64; 3]], style: &[[f64; 3]], ridge: f64) -> Result<LinearColorMap> {
    for (name, n) in [("content", content.len()), ("style", style.len())] {
        if n < MIN_SAMPLES {
            return Err(Error::InvalidArgument(format!("{name} needs at least {MIN_SAMPLES} pixels, got {n}")));
        }
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
    }
    let (mu_c, cov_c) = channel_stats(content);
    let (mu_s, cov_s) = channel_stats(style);
    let reg = |c: [[f64; 3]; 3]| Matrix3::from_fn(|i, j| c[i][j]) + Matrix3::identity() * ridge;
    let a = sym_power(reg(cov_s), 0.5)? * sym_power(reg(cov_c), -0.5)?;
    Ok(LinearColorMap {
        a: [[a[(0, 0)], a[(0, 1)], a[(0, 2)]], [a[(1, 0)], a[(1, 1)], a[(1, 2)]], [a[(2, 0)], a[(2, 1)], a[(2, 2)]]],
        mu_content: mu_c,
        mu_style: mu_s,
    })
}

/// RGB samples of an image; alpha is dropped and gray is replicated.
pub fn image_pixels(img: &ImageBuffer) -> Vec<[f64; 3]> {
    let rgb = img.to_rgb();
    rgb.data().chunks_exact(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect()
}

pub fn fit_color_map_images(content: &ImageBuffer, style: &ImageBuffer, ridge: f64) -> Result<LinearColorMap> {
    fit_color_map(&image_pixels(content), &image_pixels(style), ridge)
}

/// Applies the map per pixel, rounding and clamping to 0..=255. The output is
/// RGB.
pub fn apply_color_map(map: &LinearColorMap, img: &ImageBuffer) -> ImageBuffer {
    let rgb = img.to_rgb();
    let data = rgb.data().chunks_exact(3).flat_map(|p| map.map_pixel([p[0], p[1], p[2]])).collect();
    ImageBuffer::from_raw(rgb.width(), rgb.height(), 3, data).expect("same dims as input")
}
