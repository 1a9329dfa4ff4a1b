//! Seeded stand-ins for trained models, and dataset mixture manifests.
//!
//! Scores are raw pre-sigmoid values drawn from Gaussians.

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{AnnotationSet, Detection, GeoBox, Point};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDist {
    pub mean: f64,
    pub std: f64,
}

impl ScoreDist {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mean, self.std).expect("validated std").sample(rng)
    }
}

/// Classifier score distributions by what the crop contains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierProfile {
    pub target: ScoreDist,
    pub off_class: ScoreDist,
    pub background: ScoreDist,
}

fn default_gsd() -> f64 {
    1.0
}

fn default_fp_box() -> [f64; 2] {
    [32.0, 32.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    pub recall_ceiling: f64,
    /// Pixels.
    pub loc_jitter_sigma: f64,
    pub tp_score: ScoreDist,
    /// False detects per megapixel.
    pub fp_rate: f64,
    pub fp_score: ScoreDist,
    #[serde(default)]
    pub classifier: Option<ClassifierProfile>,
    /// Ground truth of this class draws classifier scores from `target`.
    #[serde(default)]
    pub target_class: Option<String>,
    /// Label put on every emitted box; ground-truth labels and
    /// `"background"` otherwise.
    #[serde(default)]
    pub label: Option<String>,
    /// World units per pixel.
    #[serde(default = "default_gsd")]
    pub gsd: f64,
    /// False detect box size in pixels.
    #[serde(default = "default_fp_box")]
    pub fp_box: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

impl SimProfile {
    pub fn perfect() -> Self {
        Self {
            recall_ceiling: 1.0,
            loc_jitter_sigma: 0.0,
            tp_score: ScoreDist::new(4.0, 0.0),
            fp_rate: 0.0,
            fp_score: ScoreDist::new(-4.0, 0.0),
            classifier: None,
            target_class: None,
            label: None,
            gsd: 1.0,
            fp_box: default_fp_box(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("profile: {m}")));
        if !(0.0..=1.0).contains(&self.recall_ceiling) {
            return bad("recall_ceiling must be in [0, 1]");
        }
        if !(self.loc_jitter_sigma >= 0.0) || !(self.fp_rate >= 0.0) {
            return bad("jitter and fp_rate must be non-negative");
        }
        let mut dists = vec![self.tp_score, self.fp_score];
        if let Some(c) = &self.classifier {
            dists.extend([c.target, c.off_class, c.background]);
        }
        if dists.iter().any(|d| !(d.std >= 0.0) || !d.mean.is_finite()) {
            return bad("score distributions need finite means and non-negative stds");
        }
        if !(self.gsd > 0.0) || !(self.fp_box[0] > 0.0) || !(self.fp_box[1] > 0.0) {
            return bad("gsd and fp_box must be positive");
        }
        Ok(())
    }
}

/// Simulated detections for one annotated scene.
///
/// Each ground-truth box is found with probability `recall_ceiling` and
/// translated by Gaussian pixel noise. Poisson(`fp_rate * area`) false
/// detects are placed uniformly over a square of `area_megapixels` centered
/// on the ground-truth centroid, or the site when there is none.
pub fn simulate<T: Scalar>(anns: &AnnotationSet<T>, area_megapixels: f64, profile: &SimProfile) -> Result<Vec<Detection<T>>> {
    profile.validate()?;
    if !(area_megapixels >= 0.0) {
        return Err(Error::InvalidArgument(format!("area must be non-negative, got {area_megapixels}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let jitter = Normal::new(0.0, profile.loc_jitter_sigma * profile.gsd).expect("validated");
    let classify = |rng: &mut ChaCha8Rng, class: Option<&str>| {
        profile.classifier.map(|c| {
            let dist = match class {
                None => c.background,
                Some(l) if profile.target_class.as_deref() == Some(l) => c.target,
                Some(_) => c.off_class,
            };
            T::lit(dist.sample(rng))
        })
    };

    let mut out = Vec::new();
    for gt in &anns.gt {
        if !rng.random_bool(profile.recall_ceiling) {
            continue;
        }
        let (dx, dy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
        let label = profile.label.clone().unwrap_or_else(|| gt.class_label.clone());
        let bbox = gt.translated(T::lit(dx), T::lit(dy)).with_label(label);
        let s_d = T::lit(profile.tp_score.sample(&mut rng));
        let s_c = classify(&mut rng, Some(&gt.class_label));
        out.push(Detection { bbox, s_d, s_c, fused: None, source_chip: None });
    }

    let lambda = profile.fp_rate * area_megapixels;
    let n_fp = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize } else { 0 };
    let center = if anns.gt.is_empty() {
        Point::new(anns.site_location.x.as_f64(), anns.site_location.y.as_f64())
    } else {
        let n = anns.gt.len() as f64;
        let (sx, sy) = anns.gt.iter().fold((0.0, 0.0), |(x, y), b| {
            let c = b.center();
            (x + c.x.as_f64(), y + c.y.as_f64())
        });
        Point::new(sx / n, sy / n)
    };
    let half = (area_megapixels * 1e6).sqrt() * profile.gsd / 2.0;
    let (bw, bh) = (profile.fp_box[0] * profile.gsd, profile.fp_box[1] * profile.gsd);
    let label = profile.label.clone().unwrap_or_else(|| "background".to_string());
    for _ in 0..n_fp {
        let x = center.x - half + rng.random::<f64>() * 2.0 * half;
        let y = center.y - half + rng.random::<f64>() * 2.0 * half;
        let bbox = GeoBox::new(
            T::lit(x - bw / 2.0),
            T::lit(y - bh / 2.0),
            T::lit(x + bw / 2.0),
            T::lit(y + bh / 2.0),
            label.clone(),
        )?;
        let s_d = T::lit(profile.fp_score.sample(&mut rng));
        let s_c = classify(&mut rng, None);
        out.push(Detection { bbox, s_d, s_c, fused: None, source_chip: None });
    }
    Ok(out)
}

/// Data provenance codes: real, 3D CAD composites, GAN reskinned, neural
/// style transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceCode {
    R,
    C,
    G,
    N,
}

/// Whether a synthetic set was additionally style transferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Nnstx,
    Both,
}

/// A tag such as `R`, `C.plain` or `G.both`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SourceTag {
    pub code: SourceCode,
    pub variant: Option<Variant>,
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (code, variant) = match s.split_once('.') {
            Some((c, v)) => (c, Some(v)),
            None => (s, None),
        };
        let code = match code {
            "R" => SourceCode::R,
            "C" => SourceCode::C,
            "G" => SourceCode::G,
            "N" => SourceCode::N,
            _ => return Err(Error::InvalidArgument(format!("unknown source code {s:?}"))),
        };
        let variant = match variant {
            None => None,
            Some("plain") => Some(Variant::Plain),
            Some("nnstx") => Some(Variant::Nnstx),
            Some("both") => Some(Variant::Both),
            Some(v) => return Err(Error::InvalidArgument(format!("unknown variant {v:?}"))),
        };
        Ok(Self { code, variant })
    }
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.code)?;
        match self.variant {
            None => Ok(()),
            Some(Variant::Plain) => write!(f, ".plain"),
            Some(Variant::Nnstx) => write!(f, ".nnstx"),
            Some(Variant::Both) => write!(f, ".both"),
        }
    }
}

impl TryFrom<String> for SourceTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SourceTag> for String {
    fn from(t: SourceTag) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSource {
    pub tag: SourceTag,
    pub path: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub tag: SourceTag,
    pub path: String,
    pub available: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tag: SourceTag,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    /// Sources joined with `+`, e.g. `R+C+G`.
    pub mixture: String,
    pub seed: u64,
    pub with_replacement: bool,
    pub sources: Vec<SourceSummary>,
    pub entries: Vec<ManifestEntry>,
}

/// Draws `counts[i]` files from `sources[i]`. Without replacement a count
/// equal to the source size takes every file once, in sampled order.
pub fn build_mixture(
    sources: &[MixtureSource],
    counts: &[usize],
    seed: u64,
    with_replacement: bool,
) -> Result<MixtureManifest> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("a mixture needs at least one source".into()));
    }
    if sources.len() != counts.len() {
        return Err(Error::InvalidArgument(format!("{} sources but {} counts", sources.len(), counts.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(counts.iter().sum());
    let mut summaries = Vec::with_capacity(sources.len());
    for (src, &count) in sources.iter().zip(counts) {
        let n = src.files.len();
        let picks: Vec<usize> = if with_replacement {
            if n == 0 && count > 0 {
                return Err(Error::InsufficientSamples { code: src.tag.to_string(), available: 0, requested: count });
            }
            (0..count).map(|_| rng.random_range(0..n)).collect()
        } else {
            if count > n {
                return Err(Error::InsufficientSamples { code: src.tag.to_string(), available: n, requested: count });
            }
            index::sample(&mut rng, n, count).into_vec()
        };
        entries.extend(picks.into_iter().map(|i| ManifestEntry { tag: src.tag, file: src.files[i].clone() }));
        summaries.push(SourceSummary { tag: src.tag, path: src.path.clone(), available: n, count });
    }
    Ok(MixtureManifest {
        mixture: sources.iter().map(|s| s.tag.to_string()).collect::<Vec<_>>().join("+"),
        seed,
        with_replacement,
        sources: summaries,
        entries,
    })
}
