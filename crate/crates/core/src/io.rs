//! Versioned JSON file formats.
//!
//! Every document carries `"schema": "b2n/1"`. Floats in detection files and
//! reports are rounded to 12 significant digits so output is stable across
//! platforms.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::chipper::ChipGrid;
use crate::error::{Error, Result};
use crate::evaluator::PrPoint;
use crate::fusion::{FusionModel, ScorePair};
use crate::geodata::{AffineGeoTransform, AnnotationSet, Detection, GeoBox, Point};

pub const SCHEMA: &str = "b2n/1";

/// Rounds to 12 significant digits; non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn schema() -> String {
    SCHEMA.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub bbox: [f64; 4],
    pub class: String,
    pub s_d: f64,
    #[serde(default)]
    pub s_c: Option<f64>,
    #[serde(default)]
    pub fused: Option<f64>,
    #[serde(default)]
    pub chip: Option<String>,
}

impl From<&Detection<f64>> for DetectionRecord {
    fn from(d: &Detection<f64>) -> Self {
        Self {
            bbox: d.bbox.to_array().map(round_sig),
            class: d.bbox.class_label.clone(),
            s_d: round_sig(d.s_d),
            s_c: d.s_c.map(round_sig),
            fused: d.fused.map(round_sig),
            chip: d.source_chip.clone(),
        }
    }
}

impl TryFrom<&DetectionRecord> for Detection<f64> {
    type Error = Error;

    fn try_from(r: &DetectionRecord) -> Result<Self> {
        Ok(Detection {
            bbox: GeoBox::from_array(r.bbox, r.class.clone())?,
            s_d: r.s_d,
            s_c: r.s_c,
            fused: r.fused,
            source_chip: r.chip.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    #[serde(default = "schema")]
    pub schema: String,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn from_detections(dets: &[Detection<f64>]) -> Self {
        Self { schema: schema(), detections: dets.iter().map(DetectionRecord::from).collect() }
    }

    pub fn to_detections(&self) -> Result<Vec<Detection<f64>>> {
        self.detections.iter().map(Detection::try_from).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub bbox: [f64; 4],
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default = "schema")]
    pub schema: String,
    pub image_id: String,
    pub gt: Vec<GtRecord>,
    #[serde(default)]
    pub site: [f64; 2],
}

impl AnnotationFile {
    pub fn from_set(anns: &AnnotationSet<f64>) -> Self {
        Self {
            schema: schema(),
            image_id: anns.image_id.clone(),
            gt: anns.gt.iter().map(|b| GtRecord { bbox: b.to_array().map(round_sig), class: b.class_label.clone() }).collect(),
            site: [round_sig(anns.site_location.x), round_sig(anns.site_location.y)],
        }
    }

    pub fn to_set(&self) -> Result<AnnotationSet<f64>> {
        let gt = self.gt.iter().map(|g| GeoBox::from_array(g.bbox, g.class.clone())).collect::<Result<_>>()?;
        AnnotationSet::new(self.image_id.clone(), gt, Point::new(self.site[0], self.site[1]))
    }
}

/// Score pairs for fitting a fusion model, each `[s_d, s_c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePairFile {
    #[serde(default = "schema")]
    pub schema: String,
    pub pairs: Vec<[f64; 2]>,
}

impl ScorePairFile {
    pub fn new(pairs: &[ScorePair<f64>]) -> Self {
        Self { schema: schema(), pairs: pairs.iter().map(|p| [round_sig(p.s_d), round_sig(p.s_c)]).collect() }
    }

    pub fn to_pairs(&self) -> Vec<ScorePair<f64>> {
        self.pairs.iter().map(|p| ScorePair::new(p[0], p[1])).collect()
    }
}

/// Geotransform stored next to a raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSidecar {
    #[serde(default = "schema")]
    pub schema: String,
    pub transform: AffineGeoTransform<f64>,
}

impl GeoSidecar {
    pub fn new(transform: AffineGeoTransform<f64>) -> Self {
        Self { schema: schema(), transform }
    }
}

/// Chip layout written next to extracted chips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    #[serde(default = "schema")]
    pub schema: String,
    pub grid: ChipGrid<f64>,
}

impl GridFile {
    pub fn new(grid: ChipGrid<f64>) -> Self {
        Self { schema: schema(), grid }
    }
}

/// Classifier scores aligned with a detection list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScoresFile {
    #[serde(default = "schema")]
    pub schema: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModelFile {
    #[serde(default = "schema")]
    pub schema: String,
    pub model: FusionModel<f64>,
}

impl FusionModelFile {
    pub fn new(model: FusionModel<f64>) -> Self {
        Self { schema: schema(), model }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

impl From<&PrPoint<f64>> for PrRow {
    fn from(p: &PrPoint<f64>) -> Self {
        Self {
            threshold: round_sig(p.threshold),
            precision: round_sig(p.precision),
            recall: round_sig(p.recall),
            tp: p.tp,
            fp: p.fp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(default = "schema")]
    pub schema: String,
    pub score: String,
    pub iou_threshold: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub ap50: f64,
    pub max_recall_100: f64,
    pub pr_points: Vec<PrRow>,
}

impl Report {
    pub fn new(score: &str, iou_threshold: f64, n_gt: usize, n_detections: usize, ap50: f64, max_recall_100: f64, points: &[PrPoint<f64>]) -> Self {
        Self {
            schema: schema(),
            score: score.to_string(),
            iou_threshold,
            n_gt,
            n_detections,
            ap50: round_sig(ap50),
            max_recall_100: round_sig(max_recall_100),
            pr_points: points.iter().map(PrRow::from).collect(),
        }
    }

    /// `threshold,precision,recall` with a header row.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.pr_points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

/// Adds the `schema` field to a document type that lacks one.
#[derive(Debug, Serialize)]
pub struct Versioned<'a, T> {
    pub schema: &'static str,
    #[serde(flatten)]
    pub body: &'a T,
}

impl<'a, T> Versioned<'a, T> {
    pub fn new(body: &'a T) -> Self {
        Self { schema: SCHEMA, body }
    }
}

/// Parses a document, rejecting a `schema` other than [`SCHEMA`].
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(found) = value.get("schema") {
        if found.as_str() != Some(SCHEMA) {
            return Err(Error::Schema { expected: SCHEMA.into(), found: found.to_string() });
        }
    }
    Ok(serde_json::from_value(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    from_json_str(&fs::read_to_string(path)?)
}

pub fn to_json_string<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, doc: &T) -> Result<()> {
    fs::write(path, to_json_string(doc)?)?;
    Ok(())
}
