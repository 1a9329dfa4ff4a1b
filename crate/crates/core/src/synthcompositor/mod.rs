//! Synthetic scene construction from pre-rendered sprites.
//!
//! A sprite is an RGBA render of an object (neutral gray skin, transparent
//! background) plus a separate semi-transparent shadow layer. Scenes are built
//! by choosing a background that holds no real instance of the target class,
//! painting and harmonizing each sprite against its local background, placing
//! it without touching existing annotations, and alpha blending it in with a
//! light blur on the object boundary.

pub mod represent;
pub mod reskin;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{AnnotationSet, GeoBox};
use crate::raster::{gaussian_blur, ImageBuffer};

/// Width of the blurred band around the sprite's alpha boundary.
pub const BLUR_BAND_PX: i64 = 3;
pub const NEUTRAL_GRAY: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub off_nadir_deg: f64,
    pub look_deg: f64,
    pub sun_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaintPattern {
    NeutralGray,
    /// Per-channel Gaussian noise around neutral gray.
    GaussianNoise { sigma: f64 },
    /// Smooth value-noise blobs of roughly `blob_scale` pixels, quantized
    /// into the palette. An empty palette paints neutral gray.
    Camouflage { palette: Vec<[u8; 3]>, blob_scale: f64 },
}

/// Moment matching applied to saturation and value:
/// `new = (old - sprite_mean) * scale + target_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatch {
    pub sprite_mean: f64,
    pub target_mean: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonizeParams {
    pub saturation: ChannelMatch,
    pub value: ChannelMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub id: String,
    pub rgba: ImageBuffer,
    /// Single channel; 0 is no shadow, 255 fully black.
    pub shadow_alpha: ImageBuffer,
    pub pose: Pose,
    pub class_label: String,
    pub paint: Option<(PaintPattern, u64)>,
    pub harmonization: Option<HarmonizeParams>,
}

impl Sprite {
    pub fn new(
        id: impl Into<String>,
        rgba: ImageBuffer,
        shadow_alpha: Option<ImageBuffer>,
        pose: Pose,
        class_label: impl Into<String>,
    ) -> Result<Self> {
        if rgba.channels() != 4 {
            return Err(Error::Image(format!("sprite needs RGBA, got {} channels", rgba.channels())));
        }
        let shadow_alpha = match shadow_alpha {
            Some(s) => s.to_gray(),
            None => ImageBuffer::new(rgba.width(), rgba.height(), 1),
        };
        if shadow_alpha.dims() != rgba.dims() {
            return Err(Error::Image(format!(
                "shadow is {:?} but sprite is {:?}",
                shadow_alpha.dims(),
                rgba.dims()
            )));
        }
        Ok(Self {
            id: id.into(),
            rgba,
            shadow_alpha,
            pose,
            class_label: class_label.into(),
            paint: None,
            harmonization: None,
        })
    }

    pub fn dims(&self) -> (u32, u32) {
        self.rgba.dims()
    }

    /// Bounding box of pixels with alpha > 0 as `(col0, row0, col1, row1)`,
    /// end exclusive.
    pub fn opaque_bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let (w, h) = self.dims();
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for r in 0..h {
            for c in 0..w {
                if self.rgba.alpha(c, r) > 0 {
                    b = Some(match b {
                        None => (c, r, c + 1, r + 1),
                        Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c + 1), r1.max(r + 1)),
                    });
                }
            }
        }
        b
    }

    fn opaque_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let (w, h) = self.dims();
        (0..h).flat_map(move |r| (0..w).map(move |c| (c, r))).filter(|&(c, r)| self.rgba.alpha(c, r) > 0)
    }
}

/// One pasted sprite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sprite_id: String,
    pub position: (i64, i64),
    pub pose: Pose,
    pub paint: Option<PaintPattern>,
    pub paint_seed: Option<u64>,
    pub harmonization: Option<HarmonizeParams>,
}

/// A composited RGB scene. Annotations are in pixel coordinates; one per
/// pasted sprite, in paste order. Real annotations of the background are kept
/// separately for collision checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeScene {
    pub image: ImageBuffer,
    /// Image id of the background annotation set, when known.
    pub background_id: String,
    pub annotations: Vec<GeoBox<f64>>,
    pub background_annotations: Vec<GeoBox<f64>>,
    pub provenance: Vec<Provenance>,
}

impl CompositeScene {
    pub fn new(background: ImageBuffer, background_annotations: Vec<GeoBox<f64>>) -> Self {
        Self {
            image: background.to_rgb(),
            background_id: String::new(),
            annotations: vec![],
            background_annotations,
            provenance: vec![],
        }
    }

    /// Annotation box the sprite would get at `position`.
    pub fn placed_box(sprite: &Sprite, position: (i64, i64)) -> Result<GeoBox<f64>> {
        let (c0, r0, c1, r1) = sprite.opaque_bounds().ok_or(Error::EmptySprite)?;
        GeoBox::new(
            (position.0 + c0 as i64) as f64,
            (position.1 + r0 as i64) as f64,
            (position.0 + c1 as i64) as f64,
            (position.1 + r1 as i64) as f64,
            sprite.class_label.clone(),
        )
    }

    pub fn fits(&self, sprite: &Sprite, position: (i64, i64)) -> bool {
        let (w, h) = sprite.dims();
        position.0 >= 0
            && position.1 >= 0
            && position.0 + w as i64 <= self.image.width() as i64
            && position.1 + h as i64 <= self.image.height() as i64
    }

    pub fn collides(&self, candidate: &GeoBox<f64>) -> bool {
        self.annotations.iter().chain(&self.background_annotations).any(|b| b.intersects(candidate))
    }

    /// Darkens by the shadow, alpha blends the sprite, then blurs a band of
    /// [`BLUR_BAND_PX`] pixels around the alpha boundary when `blur_sigma > 0`.
    pub fn paste(&mut self, sprite: &Sprite, position: (i64, i64), blur_sigma: f32) -> Result<()> {
        let bbox = Self::placed_box(sprite, position)?;
        if !self.fits(sprite, position) {
            return Err(Error::OutOfBounds {
                col: position.0,
                row: position.1,
                width: self.image.width(),
                height: self.image.height(),
            });
        }
        if self.collides(&bbox) {
            return Err(Error::CollisionRejected);
        }
        let (sw, sh) = sprite.dims();
        let (pc, pr) = (position.0 as u32, position.1 as u32);
        for r in 0..sh {
            for c in 0..sw {
                let shadow = sprite.shadow_alpha.pixel(c, r)[0] as u32;
                let alpha = sprite.rgba.alpha(c, r) as u32;
                if shadow == 0 && alpha == 0 {
                    continue;
                }
                let src = sprite.rgba.pixel(c, r);
                let dst = self.image.pixel_mut(pc + c, pr + r);
                for k in 0..3 {
                    let shaded = (dst[k] as u32 * (255 - shadow) + 127) / 255;
                    dst[k] = ((src[k] as u32 * alpha + shaded * (255 - alpha) + 127) / 255) as u8;
                }
            }
        }
        if blur_sigma > 0.0 {
            self.blur_boundary(sprite, position, blur_sigma);
        }
        self.annotations.push(bbox);
        self.provenance.push(Provenance {
            sprite_id: sprite.id.clone(),
            position,
            pose: sprite.pose,
            paint: sprite.paint.as_ref().map(|p| p.0.clone()),
            paint_seed: sprite.paint.as_ref().map(|p| p.1),
            harmonization: sprite.harmonization,
        });
        Ok(())
    }

    fn blur_boundary(&mut self, sprite: &Sprite, position: (i64, i64), sigma: f32) {
        let (sw, sh) = sprite.dims();
        let (iw, ih) = (self.image.width() as i64, self.image.height() as i64);
        let inside = |c: i64, r: i64| {
            let (lc, lr) = (c - position.0, r - position.1);
            lc >= 0 && lr >= 0 && lc < sw as i64 && lr < sh as i64 && sprite.rgba.alpha(lc as u32, lr as u32) > 0
        };
        // boundary pixels on both sides of the mask edge
        let pad = BLUR_BAND_PX;
        let (c0, r0) = ((position.0 - pad).max(0), (position.1 - pad).max(0));
        let (c1, r1) = ((position.0 + sw as i64 + pad).min(iw), (position.1 + sh as i64 + pad).min(ih));
        let (ww, wh) = ((c1 - c0) as usize, (r1 - r0) as usize);
        let mut boundary = vec![false; ww * wh];
        for r in r0..r1 {
            for c in c0..c1 {
                let m = inside(c, r);
                let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dc, dr)| inside(c + dc, r + dr) != m);
                boundary[(r - r0) as usize * ww + (c - c0) as usize] = edge;
            }
        }
        // boundary pixels sit at distance <= 1 from the mask; dilating by
        // band - 1 keeps the band within BLUR_BAND_PX of it
        let grow = pad - 1;
        let mut band = vec![false; ww * wh];
        for r in 0..wh as i64 {
            for c in 0..ww as i64 {
                if !boundary[r as usize * ww + c as usize] {
                    continue;
                }
                for dr in -grow..=grow {
                    for dc in -grow..=grow {
                        let (nc, nr) = (c + dc, r + dr);
                        if nc >= 0 && nr >= 0 && nc < ww as i64 && nr < wh as i64 {
                            band[nr as usize * ww + nc as usize] = true;
                        }
                    }
                }
            }
        }
        let margin = (3.0 * sigma).ceil() as i64 + 1;
        let (bc0, br0) = ((c0 - margin).max(0), (r0 - margin).max(0));
        let (bc1, br1) = ((c1 + margin).min(iw), (r1 + margin).min(ih));
        let local = self.image.window(bc0, br0, (bc1 - bc0) as u32, (br1 - br0) as u32);
        let blurred = gaussian_blur(&local, sigma);
        for r in 0..wh {
            for c in 0..ww {
                if band[r * ww + c] {
                    let (gc, gr) = (c0 + c as i64, r0 + r as i64);
                    let px = blurred.pixel((gc - bc0) as u32, (gr - br0) as u32).to_vec();
                    self.image.pixel_mut(gc as u32, gr as u32).copy_from_slice(&px);
                }
            }
        }
    }
}

/// Starts a scene from `background` and pastes one sprite.
pub fn composite(
    background: &ImageBuffer,
    anns: &[GeoBox<f64>],
    sprite: &Sprite,
    position: (i64, i64),
    blur_sigma: f32,
) -> Result<CompositeScene> {
    let mut scene = CompositeScene::new(background.clone(), anns.to_vec());
    scene.paste(sprite, position, blur_sigma)?;
    Ok(scene)
}

/// Index of a uniformly chosen library entry with no annotation of
/// `target_class`.
pub fn select_background<R: Rng>(
    library: &[(ImageBuffer, AnnotationSet<f64>)],
    target_class: &str,
    rng: &mut R,
) -> Result<usize> {
    let eligible: Vec<usize> = library
        .iter()
        .enumerate()
        .filter(|(_, (_, a))| a.count_label(target_class) == 0)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleBackground(target_class.to_string()));
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}

fn value_noise(width: u32, height: u32, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = scale.max(1.0);
    let lw = (width as f64 / scale).ceil() as usize + 2;
    let lh = (height as f64 / scale).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity((width * height) as usize);
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (c as f64 / scale, r as f64 / scale);
            let (ix, iy) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (smooth(x - ix as f64), smooth(y - iy as f64));
            let v = |i: usize, j: usize| lattice[j * lw + i];
            let top = v(ix, iy) * (1.0 - fx) + v(ix + 1, iy) * fx;
            let bottom = v(ix, iy + 1) * (1.0 - fx) + v(ix + 1, iy + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Recolors the sprite's opaque pixels; transparent pixels and the shadow are
/// left alone. Deterministic for a given seed.
pub fn paint(sprite: &Sprite, pattern: &PaintPattern, seed: u64) -> Sprite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = sprite.dims();
    let mut out = sprite.clone();
    let pixels: Vec<(u32, u32)> = sprite.opaque_pixels().collect();
    match pattern {
        PaintPattern::NeutralGray => {
            for (c, r) in pixels {
                out.rgba.pixel_mut(c, r)[..3].copy_from_slice(&NEUTRAL_GRAY);
            }
        }
        PaintPattern::GaussianNoise { sigma } => {
            for (c, r) in pixels {
                let px = out.rgba.pixel_mut(c, r);
                for v in px.iter_mut().take(3) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (128.0 + sigma * z).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        PaintPattern::Camouflage { palette, blob_scale } => {
            if palette.is_empty() {
                return paint(sprite, &PaintPattern::NeutralGray, seed);
            }
            let coarse = value_noise(w, h, *blob_scale, &mut rng);
            let fine = value_noise(w, h, blob_scale / 2.0, &mut rng);
            for (c, r) in pixels {
                let i = (r * w + c) as usize;
                let v = (0.65 * coarse[i] + 0.35 * fine[i]).clamp(0.0, 1.0);
                let k = ((v * palette.len() as f64) as usize).min(palette.len() - 1);
                out.rgba.pixel_mut(c, r)[..3].copy_from_slice(&palette[k]);
            }
        }
    }
    out.paint = Some((pattern.clone(), seed));
    out
}

/// RGB in 0..=255 to (hue degrees, saturation, value) with S, V in [0, 1].
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn channel_match(sprite: &[f64], target: &[f64]) -> ChannelMatch {
    let (sm, ss) = mean_std(sprite);
    let (tm, ts) = mean_std(target);
    // a flat sprite channel can only be shifted
    let scale = if ss > 1e-12 { ts / ss } else { 1.0 };
    ChannelMatch { sprite_mean: sm, target_mean: tm, scale }
}

/// Matches the mean and standard deviation of the sprite's saturation and
/// value to those of `region` of the background (`(col0, row0, col1, row1)`,
/// clipped to the image). Hue is kept.
pub fn harmonize(sprite: &Sprite, background: &ImageBuffer, region: (u32, u32, u32, u32)) -> Result<Sprite> {
    let (c0, r0) = (region.0.min(background.width()), region.1.min(background.height()));
    let (c1, r1) = (region.2.min(background.width()), region.3.min(background.height()));
    if c1 <= c0 || r1 <= r0 {
        return Err(Error::EmptyRegion);
    }
    let bg = background.to_rgb();
    let (mut bs, mut bv) = (vec![], vec![]);
    for r in r0..r1 {
        for c in c0..c1 {
            let p = bg.pixel(c, r);
            let (_, s, v) = rgb_to_hsv([p[0], p[1], p[2]]);
            bs.push(s);
            bv.push(v);
        }
    }
    let pixels: Vec<(u32, u32)> = sprite.opaque_pixels().collect();
    if pixels.is_empty() {
        return Ok(sprite.clone());
    }
    let hsv: Vec<(f64, f64, f64)> = pixels
        .iter()
        .map(|&(c, r)| {
            let p = sprite.rgba.pixel(c, r);
            rgb_to_hsv([p[0], p[1], p[2]])
        })
        .collect();
    let ss: Vec<f64> = hsv.iter().map(|t| t.1).collect();
    let sv: Vec<f64> = hsv.iter().map(|t| t.2).collect();
    let params = HarmonizeParams { saturation: channel_match(&ss, &bs), value: channel_match(&sv, &bv) };
    let apply = |m: &ChannelMatch, x: f64| ((x - m.sprite_mean) * m.scale + m.target_mean).clamp(0.0, 1.0);
    let mut out = sprite.clone();
    for (&(c, r), &(h, s, v)) in pixels.iter().zip(&hsv) {
        let rgb = hsv_to_rgb(h, apply(&params.saturation, s), apply(&params.value, v));
        out.rgba.pixel_mut(c, r)[..3].copy_from_slice(&rgb);
    }
    out.harmonization = Some(params);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PlacementMode {
    Random,
    /// Objects lined up along `orientation_deg` with `spacing_px` gaps and
    /// Gaussian positional jitter.
    Rows { spacing_px: f64, jitter_px: f64, orientation_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementPolicy {
    pub mode: PlacementMode,
    pub max_attempts: usize,
}

impl PlacementPolicy {
    pub fn validate(&self) -> Result<()> {
        if let PlacementMode::Rows { spacing_px, .. } = self.mode {
            if !(spacing_px > 0.0) {
                return Err(Error::InvalidArgument("row spacing must be positive".into()));
            }
        }
        Ok(())
    }
}

impl Default for PlacementPolicy {
    fn default() -> Self {
        Self { mode: PlacementMode::Random, max_attempts: 100 }
    }
}

/// Proposes top-left sprite positions under a placement policy.
struct Placer {
    policy: PlacementPolicy,
    row: Option<((f64, f64), usize)>,
}

impl Placer {
    fn propose(&mut self, rng: &mut ChaCha8Rng, canvas: (u32, u32), sprite: &Sprite) -> (i64, i64) {
        let (sw, sh) = sprite.dims();
        let (cw, ch) = (canvas.0 as i64, canvas.1 as i64);
        match self.policy.mode {
            PlacementMode::Random => {
                let c = rng.random_range(0..=(cw - sw as i64).max(0));
                let r = rng.random_range(0..=(ch - sh as i64).max(0));
                (c, r)
            }
            PlacementMode::Rows { spacing_px, jitter_px, orientation_deg } => {
                let (anchor, k) = *self.row.get_or_insert_with(|| {
                    ((rng.random_range(0.0..canvas.0 as f64), rng.random_range(0.0..canvas.1 as f64)), 0)
                });
                let (ow, oh) = match sprite.opaque_bounds() {
                    Some((c0, r0, c1, r1)) => ((c1 - c0) as f64, (r1 - r0) as f64),
                    None => (sw as f64, sh as f64),
                };
                let (dx, dy) = (orientation_deg.to_radians().cos(), orientation_deg.to_radians().sin());
                let step = (ow * dx).abs() + (oh * dy).abs() + spacing_px;
                let jx: f64 = rng.sample::<f64, _>(StandardNormal) * jitter_px;
                let jy: f64 = rng.sample::<f64, _>(StandardNormal) * jitter_px;
                let cx = anchor.0 + k as f64 * step * dx + jx;
                let cy = anchor.1 + k as f64 * step * dy + jy;
                self.row = Some((anchor, k + 1));
                ((cx - sw as f64 / 2.0).round() as i64, (cy - sh as f64 / 2.0).round() as i64)
            }
        }
    }

    fn reject(&mut self) {
        self.row = None;
    }
}

/// How to build one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub target_class: String,
    pub objects: usize,
    pub policy: PlacementPolicy,
    /// One pattern is drawn per object; empty means neutral gray.
    pub paints: Vec<PaintPattern>,
    pub blur_sigma: f32,
    pub harmonize: bool,
}

/// Selects a background, then paints, harmonizes and places up to
/// `recipe.objects` sprites of the target class. An object that finds no
/// valid position within `max_attempts` is skipped.
pub fn build_scene(
    library: &[(ImageBuffer, AnnotationSet<f64>)],
    sprites: &[Sprite],
    recipe: &SceneRecipe,
    rng: &mut ChaCha8Rng,
) -> Result<CompositeScene> {
    recipe.policy.validate()?;
    let candidates: Vec<&Sprite> = sprites.iter().filter(|s| s.class_label == recipe.target_class).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!("no sprites of class {:?}", recipe.target_class)));
    }
    let idx = select_background(library, &recipe.target_class, rng)?;
    let (bg, anns) = &library[idx];
    let mut scene = CompositeScene::new(bg.clone(), anns.gt.clone());
    scene.background_id = anns.image_id.clone();
    let mut placer = Placer { policy: recipe.policy, row: None };
    for _ in 0..recipe.objects {
        let base = candidates[rng.random_range(0..candidates.len())];
        let pattern = if recipe.paints.is_empty() {
            PaintPattern::NeutralGray
        } else {
            recipe.paints[rng.random_range(0..recipe.paints.len())].clone()
        };
        let painted = paint(base, &pattern, rng.random());
        if painted.opaque_bounds().is_none() {
            return Err(Error::EmptySprite);
        }
        for _ in 0..recipe.policy.max_attempts.max(1) {
            let pos = placer.propose(rng, scene.image.dims(), &painted);
            let placed = CompositeScene::placed_box(&painted, pos)?;
            if !scene.fits(&painted, pos) || scene.collides(&placed) {
                placer.reject();
                continue;
            }
            let sprite = if recipe.harmonize {
                let (w, h) = painted.dims();
                let region = (pos.0 as u32, pos.1 as u32, pos.0 as u32 + w, pos.1 as u32 + h);
                harmonize(&painted, &scene.image, region)?
            } else {
                painted.clone()
            };
            scene.paste(&sprite, pos, recipe.blur_sigma)?;
            break;
        }
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::Point;

    fn block_sprite(w: u32, h: u32, inner: (u32, u32, u32, u32), rgb: [u8; 3]) -> Sprite {
        let rgba = ImageBuffer::from_fn(w, h, 4, |c, r| {
            let on = c >= inner.0 && c < inner.2 && r >= inner.1 && r < inner.3;
            if on {
                vec![rgb[0], rgb[1], rgb[2], 255]
            } else {
                vec![0, 0, 0, 0]
            }
        });
        Sprite::new("s", rgba, None, Pose::default(), "tanker").unwrap()
    }

    fn noisy_background(w: u32, h: u32) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 3, |c, r| vec![(c * 37 % 251) as u8, (r * 53 % 241) as u8, ((c + r) * 11 % 239) as u8])
    }

    fn ann_set(labels: &[&str]) -> AnnotationSet<f64> {
        let gt = labels
            .iter()
            .enumerate()
            .map(|(i, l)| GeoBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0, *l).unwrap())
            .collect();
        AnnotationSet::new("bg", gt, Point::default()).unwrap()
    }

    #[test]
    fn background_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = ImageBuffer::new(4, 4, 3);
        let all_target = vec![(img.clone(), ann_set(&["tanker"])), (img.clone(), ann_set(&["cargo", "tanker"]))];
        assert!(matches!(select_background(&all_target, "tanker", &mut rng), Err(Error::NoEligibleBackground(_))));

        let one = vec![(img.clone(), ann_set(&["tanker"])), (img.clone(), ann_set(&["cargo"]))];
        for _ in 0..20 {
            assert_eq!(select_background(&one, "tanker", &mut rng).unwrap(), 1);
        }

        let two = vec![(img.clone(), ann_set(&[])), (img.clone(), ann_set(&["tanker"])), (img, ann_set(&["flat"]))];
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            counts[select_background(&two, "tanker", &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((400..=600).contains(&counts[0]) && (400..=600).contains(&counts[2]), "{counts:?}");
    }

    #[test]
    fn neutral_gray_and_zero_noise() {
        let s = block_sprite(10, 8, (2, 2, 7, 6), [10, 200, 30]);
        let gray = paint(&s, &PaintPattern::NeutralGray, 1);
        for r in 0..8 {
            for c in 0..10 {
                let px = gray.rgba.pixel(c, r);
                if px[3] > 0 {
                    assert_eq!(&px[..3], &NEUTRAL_GRAY);
                } else {
                    assert_eq!(px, s.rgba.pixel(c, r));
                }
            }
        }
        let noise0 = paint(&s, &PaintPattern::GaussianNoise { sigma: 0.0 }, 99);
        assert_eq!(noise0.rgba, gray.rgba);
    }

    #[test]
    fn paint_is_seeded() {
        let s = block_sprite(32, 32, (0, 0, 32, 32), [0, 0, 0]);
        let camo = PaintPattern::Camouflage { palette: vec![[60, 70, 40], [110, 100, 70], [30, 35, 25]], blob_scale: 6.0 };
        for pattern in [PaintPattern::GaussianNoise { sigma: 20.0 }, camo] {
            let a = paint(&s, &pattern, 7);
            let b = paint(&s, &pattern, 7);
            let c = paint(&s, &pattern, 8);
            assert_eq!(a.rgba, b.rgba);
            assert_ne!(a.rgba, c.rgba);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0, 0, 0], [255, 255, 255], [255, 0, 0], [12, 200, 99], [128, 64, 250], [7, 7, 8]] {
            let (h, s, v) = rgb_to_hsv(rgb);
            assert_eq!(hsv_to_rgb(h, s, v), rgb);
        }
    }

    #[test]
    fn harmonize_identity_when_stats_match() {
        let rgba = ImageBuffer::from_fn(12, 10, 4, |c, r| vec![(40 + c * 9) as u8, (90 + r * 7) as u8, (60 + c * r) as u8, 255]);
        let s = Sprite::new("s", rgba.clone(), None, Pose::default(), "t").unwrap();
        let bg = rgba.to_rgb();
        let out = harmonize(&s, &bg, (0, 0, 12, 10)).unwrap();
        for (a, b) in out.rgba.data().iter().zip(rgba.data()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    fn mean_v(img: &ImageBuffer, opaque_only: bool) -> f64 {
        let mut vals = vec![];
        for r in 0..img.height() {
            for c in 0..img.width() {
                if opaque_only && img.alpha(c, r) == 0 {
                    continue;
                }
                let p = img.pixel(c, r);
                vals.push(rgb_to_hsv([p[0], p[1], p[2]]).2 * 255.0);
            }
        }
        mean_std(&vals).0
    }

    #[test]
    fn harmonize_shifts_value_mean() {
        // value = the largest channel; same spread, means 100 and 200
        let rgba = ImageBuffer::from_fn(16, 16, 4, |c, r| vec![(90 + (c + r) % 21) as u8, 40, 30, 255]);
        let bg = ImageBuffer::from_fn(16, 16, 3, |c, r| vec![30, (190 + (c * 3 + r) % 21) as u8, 20]);
        let s = Sprite::new("s", rgba, None, Pose::default(), "t").unwrap();
        assert!((mean_v(&s.rgba, true) - 100.0).abs() < 1.0);
        assert!((mean_v(&bg, false) - 200.0).abs() < 1.0);
        let out = harmonize(&s, &bg, (0, 0, 16, 16)).unwrap();
        assert!((mean_v(&out.rgba, true) - 200.0).abs() <= 2.0);
        let p = out.harmonization.unwrap();
        assert!(p.saturation.sprite_mean > 0.0);
    }

    #[test]
    fn harmonize_flat_channel_is_pure_shift() {
        let rgba = ImageBuffer::filled(6, 6, &[100, 50, 50, 255]);
        let bg = ImageBuffer::from_fn(6, 6, 3, |c, _| vec![(150 + c * 10) as u8, 75, 75]);
        let s = Sprite::new("s", rgba, None, Pose::default(), "t").unwrap();
        let out = harmonize(&s, &bg, (0, 0, 6, 6)).unwrap();
        let p = out.harmonization.unwrap();
        assert_eq!(p.value.scale, 1.0);
        let first = out.rgba.pixel(0, 0).to_vec();
        assert!(out.rgba.data().chunks(4).all(|px| px == first.as_slice()));
        assert!(matches!(harmonize(&s, &bg, (3, 3, 3, 5)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn opaque_paste_is_exact() {
        let bg = noisy_background(30, 20);
        let s = block_sprite(6, 5, (0, 0, 6, 5), [200, 10, 90]);
        let scene = composite(&bg, &[], &s, (4, 3), 0.0).unwrap();
        for r in 0..20 {
            for c in 0..30 {
                let expected = if (4..10).contains(&c) && (3..8).contains(&r) { vec![200, 10, 90] } else { bg.pixel(c, r).to_vec() };
                assert_eq!(scene.image.pixel(c, r), expected.as_slice());
            }
        }
        assert_eq!(scene.annotations, vec![GeoBox::new(4.0, 3.0, 10.0, 8.0, "tanker").unwrap()]);
    }

    #[test]
    fn empty_sprite_and_bounds_errors() {
        let bg = noisy_background(10, 10);
        let empty = block_sprite(4, 4, (0, 0, 0, 0), [0, 0, 0]);
        assert!(matches!(composite(&bg, &[], &empty, (0, 0), 0.0), Err(Error::EmptySprite)));
        let s = block_sprite(4, 4, (0, 0, 4, 4), [1, 2, 3]);
        assert!(matches!(composite(&bg, &[], &s, (8, 0), 0.0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(composite(&bg, &[], &s, (-1, 0), 0.0), Err(Error::OutOfBounds { .. })));
        let existing = GeoBox::new(2.0, 2.0, 3.0, 3.0, "building").unwrap();
        assert!(matches!(composite(&bg, std::slice::from_ref(&existing), &s, (0, 0), 0.0), Err(Error::CollisionRejected)));
        // edge contact is allowed
        assert!(composite(&bg, &[existing], &s, (3, 3), 0.0).is_ok());
    }

    #[test]
    fn blur_stays_within_band() {
        let bg = noisy_background(60, 50);
        let s = block_sprite(20, 16, (3, 4, 15, 13), [250, 250, 250]);
        let pos = (20i64, 17i64);
        let scene = composite(&bg, &[], &s, pos, 1.5).unwrap();
        let mut changed_near = 0;
        for r in 0..50i64 {
            for c in 0..60i64 {
                // Chebyshev distance to the opaque mask
                let (lc, lr) = (c - pos.0, r - pos.1);
                let dx = (3 - lc).max(lc - 14).max(0);
                let dy = (4 - lr).max(lr - 12).max(0);
                let d = dx.max(dy);
                let same = scene.image.pixel(c as u32, r as u32) == bg.pixel(c as u32, r as u32);
                if d > BLUR_BAND_PX {
                    assert!(same, "pixel ({c}, {r}) at distance {d} changed");
                } else if d > 0 && !same {
                    changed_near += 1;
                }
            }
        }
        assert!(changed_near > 0);
        // annotation equals the opaque bounding box
        assert_eq!(scene.annotations[0].to_array(), [23.0, 21.0, 35.0, 30.0]);
    }

    #[test]
    fn shadow_darkens_before_blend() {
        let bg = ImageBuffer::filled(8, 8, &[200, 200, 200]);
        let rgba = ImageBuffer::from_fn(4, 4, 4, |c, _| if c < 2 { vec![10, 20, 30, 255] } else { vec![0, 0, 0, 0] });
        let shadow = ImageBuffer::filled(4, 4, &[128]);
        let s = Sprite::new("s", rgba, Some(shadow), Pose::default(), "t").unwrap();
        let scene = composite(&bg, &[], &s, (2, 2), 0.0).unwrap();
        assert_eq!(scene.image.pixel(2, 2), &[10, 20, 30]);
        let darkened = ((200 * 127 + 127) / 255) as u8;
        assert_eq!(scene.image.pixel(5, 2), &[darkened; 3]);
        assert_eq!(scene.image.pixel(6, 2), &[200; 3]);
    }

    #[test]
    fn scene_builder_rows_no_overlap() {
        let library = vec![
            (noisy_background(200, 160), ann_set(&["building"])),
            (noisy_background(200, 160), ann_set(&["tanker"])),
        ];
        let sprites = vec![block_sprite(24, 12, (1, 1, 23, 11), [128, 128, 128])];
        let recipe = SceneRecipe {
            target_class: "tanker".into(),
            objects: 8,
            policy: PlacementPolicy {
                mode: PlacementMode::Rows { spacing_px: 3.0, jitter_px: 0.5, orientation_deg: 0.0 },
                max_attempts: 200,
            },
            paints: vec![PaintPattern::GaussianNoise { sigma: 10.0 }],
            blur_sigma: 0.8,
            harmonize: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let scene = build_scene(&library, &sprites, &recipe, &mut rng).unwrap();
        assert!(!scene.annotations.is_empty());
        assert_eq!(scene.annotations.len(), scene.provenance.len());
        assert_eq!(scene.background_annotations, library[0].1.gt);
        for (i, a) in scene.annotations.iter().enumerate() {
            for b in &scene.annotations[i + 1..] {
                assert!(!a.intersects(b));
            }
        }
        let again = build_scene(&library, &sprites, &recipe, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        assert_eq!(again, scene);
    }
}
