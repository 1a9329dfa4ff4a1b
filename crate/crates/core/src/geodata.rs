//! Planar world geometry: affine geotransforms, boxes, detections and
//! annotation sets.
//!
//! World coordinates are assumed to live in a projected (planar) CRS. Boxes
//! are axis-aligned in world space; a rotated geotransform lifts a pixel box
//! to the axis-aligned hull of its four mapped corners.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Maps pixel `(col, row)` to world `(x, y)`:
///
/// ```text
/// x = a + b*col + c*row
/// y = d + e*col + f*row
/// ```
///
/// Only invertible transforms can be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; 6]", into = "[T; 6]")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct AffineGeoTransform<T> {
    coeffs: [T; 6],
}

impl<T: Scalar> AffineGeoTransform<T> {
    pub fn new(a: T, b: T, c: T, d: T, e: T, f: T) -> Result<Self> {
        let det = b * f - c * e;
        if det == T::zero() || !det.is_finite() {
            return Err(Error::SingularTransform(det.as_f64()));
        }
        Ok(Self { coeffs: [a, b, c, d, e, f] })
    }

    pub fn identity() -> Self {
        let (z, o) = (T::zero(), T::one());
        Self { coeffs: [z, o, z, z, z, o] }
    }

    /// North-up transform with square pixels of `gsd` world units and the
    /// raster's top-left corner at `origin`.
    pub fn north_up(origin: Point<T>, gsd: T) -> Result<Self> {
        Self::new(origin.x, gsd, T::zero(), origin.y, T::zero(), -gsd)
    }

    pub fn coefficients(&self) -> [T; 6] {
        self.coeffs
    }

    pub fn determinant(&self) -> T {
        let [_, b, c, _, e, f] = self.coeffs;
        b * f - c * e
    }

    pub fn pixel_to_world(&self, pt: Point<T>) -> Point<T> {
        let [a, b, c, d, e, f] = self.coeffs;
        Point::new(a + b * pt.x + c * pt.y, d + e * pt.x + f * pt.y)
    }

    pub fn world_to_pixel(&self, pt: Point<T>) -> Point<T> {
        let [a, b, c, d, e, f] = self.coeffs;
        let det = self.determinant();
        let dx = pt.x - a;
        let dy = pt.y - d;
        Point::new((f * dx - c * dy) / det, (b * dy - e * dx) / det)
    }

    /// Transform of a sub-window whose top-left pixel is `(col0, row0)` in
    /// this raster.
    pub fn offset(&self, col0: T, row0: T) -> Self {
        let [_, b, c, _, e, f] = self.coeffs;
        let origin = self.pixel_to_world(Point::new(col0, row0));
        Self { coeffs: [origin.x, b, c, origin.y, e, f] }
    }

    /// Axis-aligned world hull of a pixel-space box.
    pub fn lift_box(&self, pixel_box: &GeoBox<T>) -> GeoBox<T> {
        let corners = [
            Point::new(pixel_box.xmin, pixel_box.ymin),
            Point::new(pixel_box.xmax, pixel_box.ymin),
            Point::new(pixel_box.xmin, pixel_box.ymax),
            Point::new(pixel_box.xmax, pixel_box.ymax),
        ]
        .map(|p| self.pixel_to_world(p));
        let (mut xmin, mut ymin) = (T::infinity(), T::infinity());
        let (mut xmax, mut ymax) = (T::neg_infinity(), T::neg_infinity());
        for p in corners {
            xmin = xmin.min(p.x);
            xmax = xmax.max(p.x);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        // an invertible map cannot collapse a valid box
        GeoBox { xmin, ymin, xmax, ymax, class_label: pixel_box.class_label.clone() }
    }
}

impl<T: Scalar> TryFrom<[T; 6]> for AffineGeoTransform<T> {
    type Error = Error;

    fn try_from(c: [T; 6]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3], c[4], c[5])
    }
}

impl<T: Scalar> From<AffineGeoTransform<T>> for [T; 6] {
    fn from(t: AffineGeoTransform<T>) -> Self {
        t.coeffs
    }
}

pub fn pixel_to_world<T: Scalar>(pt: Point<T>, gt: &AffineGeoTransform<T>) -> Point<T> {
    gt.pixel_to_world(pt)
}

pub fn world_to_pixel<T: Scalar>(pt: Point<T>, gt: &AffineGeoTransform<T>) -> Point<T> {
    gt.world_to_pixel(pt)
}

/// Axis-aligned box with a class label. `xmin < xmax` and `ymin < ymax` always
/// hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct GeoBox<T> {
    xmin: T,
    ymin: T,
    xmax: T,
    ymax: T,
    pub class_label: String,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct RawBox<T> {
    xmin: T,
    ymin: T,
    xmax: T,
    ymax: T,
    class_label: String,
}

impl<T: Scalar> TryFrom<RawBox<T>> for GeoBox<T> {
    type Error = Error;

    fn try_from(r: RawBox<T>) -> Result<Self> {
        GeoBox::new(r.xmin, r.ymin, r.xmax, r.ymax, r.class_label)
    }
}

impl<T: Scalar> GeoBox<T> {
    pub fn new(xmin: T, ymin: T, xmax: T, ymax: T, class_label: impl Into<String>) -> Result<Self> {
        // the negated form also rejects NaN
        if !(xmin < xmax && ymin < ymax) || !(xmin.is_finite() && ymax.is_finite()) || !(xmax.is_finite() && ymin.is_finite()) {
            return Err(Error::DegenerateBox {
                xmin: xmin.as_f64(),
                ymin: ymin.as_f64(),
                xmax: xmax.as_f64(),
                ymax: ymax.as_f64(),
            });
        }
        Ok(Self { xmin, ymin, xmax, ymax, class_label: class_label.into() })
    }

    pub fn from_array(coords: [T; 4], class_label: impl Into<String>) -> Result<Self> {
        Self::new(coords[0], coords[1], coords[2], coords[3], class_label)
    }

    pub fn xmin(&self) -> T {
        self.xmin
    }
    pub fn ymin(&self) -> T {
        self.ymin
    }
    pub fn xmax(&self) -> T {
        self.xmax
    }
    pub fn ymax(&self) -> T {
        self.ymax
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn width(&self) -> T {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> T {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point<T> {
        let two = T::lit(2.0);
        Point::new((self.xmin + self.xmax) / two, (self.ymin + self.ymax) / two)
    }

    /// Area of the open-interior intersection; boundary contact counts as 0.
    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.intersection_area(other) > T::zero()
    }

    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        if inter == T::zero() {
            return T::zero();
        }
        let union = self.area() + other.area() - inter;
        (inter / union).min(T::one())
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self {
            xmin: self.xmin + dx,
            ymin: self.ymin + dy,
            xmax: self.xmax + dx,
            ymax: self.ymax + dy,
            class_label: self.class_label.clone(),
        }
    }

    pub fn with_label(&self, label: impl Into<String>) -> Self {
        Self { class_label: label.into(), ..self.clone() }
    }
}

pub fn iou<T: Scalar>(a: &GeoBox<T>, b: &GeoBox<T>) -> T {
    a.iou(b)
}

/// A detector output, optionally carrying the second-stage classifier score
/// and the fused ensemble score. Scores are pre-sigmoid logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Detection<T> {
    pub bbox: GeoBox<T>,
    pub s_d: T,
    pub s_c: Option<T>,
    pub fused: Option<T>,
    pub source_chip: Option<String>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: GeoBox<T>, s_d: T) -> Self {
        Self { bbox, s_d, s_c: None, fused: None, source_chip: None }
    }

    pub fn with_classifier(mut self, s_c: T) -> Self {
        self.s_c = Some(s_c);
        self
    }

    pub fn score(&self, key: ScoreKey) -> Option<T> {
        match key {
            ScoreKey::Detector => Some(self.s_d),
            ScoreKey::Classifier => self.s_c,
            ScoreKey::Fused => self.fused,
        }
    }
}

/// Which score a ranking operation orders detections by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKey {
    #[default]
    Detector,
    Classifier,
    Fused,
}

impl std::str::FromStr for ScoreKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s_d" | "detector" => Ok(Self::Detector),
            "s_c" | "classifier" => Ok(Self::Classifier),
            "fused" => Ok(Self::Fused),
            other => Err(Error::InvalidArgument(format!("unknown score key {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct AnnotationSet<T> {
    pub image_id: String,
    pub gt: Vec<GeoBox<T>>,
    pub site_location: Point<T>,
}

impl<T: Scalar> AnnotationSet<T> {
    pub fn new(image_id: impl Into<String>, gt: Vec<GeoBox<T>>, site_location: Point<T>) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(Error::InvalidArgument("annotation set needs a non-empty image id".into()));
        }
        Ok(Self { image_id, gt, site_location })
    }

    pub fn count_label(&self, label: &str) -> usize {
        self.gt.iter().filter(|b| b.class_label == label).count()
    }
}

/// Narrow (sub-class) label to broad (parent) label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHierarchy {
    pub narrow_to_broad: BTreeMap<String, String>,
}

impl ClassHierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_parent(mut self, broad: &str, narrow: &[&str]) -> Self {
        for n in narrow {
            self.narrow_to_broad.insert((*n).to_string(), broad.to_string());
        }
        self
    }

    pub fn broad_of(&self, narrow: &str) -> Result<&str> {
        self.narrow_to_broad
            .get(narrow)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel(narrow.to_string()))
    }
}

/// Replaces every narrow label by its parent so a single-class broad detector
/// can be trained on all siblings at once.
pub fn relabel_broad<T: Scalar>(anns: &AnnotationSet<T>, hierarchy: &ClassHierarchy) -> Result<AnnotationSet<T>> {
    let gt = anns
        .gt
        .iter()
        .map(|b| hierarchy.broad_of(&b.class_label).map(|broad| b.with_label(broad)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationSet { image_id: anns.image_id.clone(), gt, site_location: anns.site_location })
}
