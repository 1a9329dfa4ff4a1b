//! Broad-to-narrow hierarchical detection toolkit.
//!
//! A parent-class detector runs over overlapping chips of large overhead
//! rasters; its detections are lifted to world coordinates, stitched with
//! NMS, re-scored by a sub-class classifier on concentric crops, and the two
//! scores are fused into one ranking statistic through monotone KDE
//! envelopes. Around that pipeline sit the evaluation protocol (greedy IoU
//! matching, AP50, recall under a false-detect budget), synthetic data
//! procedures (sprite compositing, schematic representations, linear color
//! matching) and a seeded simulator standing in for trained models.
//!
//! Geometry, evaluation and fusion are generic over [`Scalar`] (`f32` or
//! `f64`); the aliases at the crate root fix the scalar to `f64`.

pub mod chipper;
pub mod colorxfer;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod geodata;
pub mod io;
pub mod nms;
pub mod raster;
pub mod scalar;
pub mod simharness;
pub mod synthcompositor;

pub use error::{Error, Result};
pub use geodata::{ClassHierarchy, ScoreKey};
pub use raster::ImageBuffer;
pub use colorxfer::LinearColorMap;
pub use scalar::Scalar;
pub use simharness::{MixtureManifest, SimProfile};
pub use synthcompositor::{CompositeScene, Sprite};

pub type Point = geodata::Point<f64>;
pub type AffineGeoTransform = geodata::AffineGeoTransform<f64>;
pub type GeoBox = geodata::GeoBox<f64>;
pub type Detection = geodata::Detection<f64>;
pub type AnnotationSet = geodata::AnnotationSet<f64>;
pub type ChipGrid = chipper::ChipGrid<f64>;
pub type Chip = chipper::Chip<f64>;
pub type MatchRecord = evaluator::MatchRecord<f64>;
pub type PrPoint = evaluator::PrPoint<f64>;
pub type ScorePair = fusion::ScorePair<f64>;
pub type FusionModel = fusion::FusionModel<f64>;
pub type FusionConfig = fusion::FusionConfig<f64>;
pub type KdeSurface = fusion::KdeSurface<f64>;
pub type EnvelopeGrid = fusion::EnvelopeGrid<f64>;

pub type GeoBoxF32 = geodata::GeoBox<f32>;
pub type DetectionF32 = geodata::Detection<f32>;
pub type FusionModelF32 = fusion::FusionModel<f32>;
