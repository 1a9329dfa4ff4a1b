//! Reskinning: replace a composited scene `X'` with `G(R(X'))`.
//!
//! The generator `G` is a seam. Trained image-to-image networks live outside
//! this crate; [`StubGenerator`] is a deterministic stand-in that keeps the
//! pipeline exercisable.

use super::represent::Representation;
use super::CompositeScene;
use crate::error::{Error, Result};
use crate::raster::{gaussian_blur, ImageBuffer};

pub trait Generator {
    /// Rebuilds an image from its representation. `source` is the image the
    /// representation was computed from; real generators ignore it.
    fn generate(&self, representation: &ImageBuffer, source: &ImageBuffer) -> Result<ImageBuffer>;

    /// Whether one instance may be called from several threads at once.
    fn concurrency_safe(&self) -> bool;
}

/// Returns the representation unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityGenerator;

impl Generator for IdentityGenerator {
    fn generate(&self, representation: &ImageBuffer, _source: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(representation.clone())
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Blends the edge image 50/50 with a Gaussian-blurred copy of the source.
#[derive(Debug, Clone, Copy)]
pub struct StubGenerator {
    pub blur_sigma: f32,
}

impl Default for StubGenerator {
    fn default() -> Self {
        Self { blur_sigma: 2.0 }
    }
}

impl Generator for StubGenerator {
    fn generate(&self, representation: &ImageBuffer, source: &ImageBuffer) -> Result<ImageBuffer> {
        if representation.dims() != source.dims() {
            return Err(Error::GeneratorFailure(format!(
                "representation is {:?} but source is {:?}",
                representation.dims(),
                source.dims()
            )));
        }
        let blurred = gaussian_blur(&source.to_rgb(), self.blur_sigma);
        let edges = representation.to_gray();
        Ok(ImageBuffer::from_fn(source.width(), source.height(), 3, |c, r| {
            let e = edges.pixel(c, r)[0] as u16;
            blurred.pixel(c, r).iter().map(|&b| (e + b as u16).div_ceil(2) as u8).collect()
        }))
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Replaces the scene image by `gen(rep(image))`. Annotations and provenance
/// are carried over untouched.
pub fn reskin(scene: &CompositeScene, rep: &dyn Representation, gen: &dyn Generator) -> Result<CompositeScene> {
    let schematic = rep.represent(&scene.image)?;
    let image = gen.generate(&schematic, &scene.image)?;
    if image.dims() != scene.image.dims() {
        return Err(Error::GeneratorFailure(format!(
            "generator returned {:?} for a {:?} scene",
            image.dims(),
            scene.image.dims()
        )));
    }
    Ok(CompositeScene { image, ..scene.clone() })
}
