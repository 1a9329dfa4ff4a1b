//! Overlapping chip grids over large rasters, lifting chip-local detections
//! back to world coordinates, concentric classifier crops and geographic
//! train/val/test splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{AffineGeoTransform, AnnotationSet, Detection, Point};
use crate::raster::ImageBuffer;
use crate::scalar::Scalar;

pub const DEFAULT_OVERLAP: f64 = 0.2;

/// Pixel window `[col0, col1) x [row0, row1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelWindow {
    pub col0: u32,
    pub row0: u32,
    pub col1: u32,
    pub row1: u32,
}

impl PixelWindow {
    pub fn width(&self) -> u32 {
        self.col1 - self.col0
    }

    pub fn height(&self) -> u32 {
        self.row1 - self.row0
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        (self.col0..self.col1).contains(&col) && (self.row0..self.row1).contains(&row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Chip<T> {
    pub id: String,
    pub window: PixelWindow,
    pub transform: AffineGeoTransform<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ChipGrid<T> {
    pub width: u32,
    pub height: u32,
    pub chip_size: u32,
    pub stride: u32,
    pub chips: Vec<Chip<T>>,
}

impl<T: Scalar> ChipGrid<T> {
    pub fn chip(&self, id: &str) -> Option<&Chip<T>> {
        self.chips.iter().find(|c| c.id == id)
    }
}

/// Zero-padded so lexicographic order equals row-major grid order.
pub fn chip_id(index: usize) -> String {
    format!("chip_{index:06}")
}

/// Window start offsets along one axis. The last window is shifted inward so
/// it ends exactly at the raster edge.
fn axis_starts(extent: u32, chip: u32, stride: u32) -> Vec<u32> {
    if extent <= chip {
        return vec![0];
    }
    let last = extent - chip;
    let mut starts = vec![];
    let mut p = 0;
    while p < last {
        starts.push(p);
        p += stride;
    }
    starts.push(last);
    starts
}

/// Plans a row-major grid of `chip_size` windows with the requested fractional
/// overlap. Rasters smaller than a chip get one chip clipped to the raster.
pub fn plan_grid<T: Scalar>(
    width: u32,
    height: u32,
    chip_size: u32,
    overlap_fraction: f64,
    transform: &AffineGeoTransform<T>,
) -> Result<ChipGrid<T>> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidOverlap(overlap_fraction));
    }
    if chip_size == 0 {
        return Err(Error::InvalidArgument("chip size must be at least 1".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("raster has zero extent".into()));
    }
    let stride = ((chip_size as f64 * (1.0 - overlap_fraction)).round() as u32).max(1);
    let cols = axis_starts(width, chip_size, stride);
    let rows = axis_starts(height, chip_size, stride);
    let mut chips = Vec::with_capacity(cols.len() * rows.len());
    for &row0 in &rows {
        for &col0 in &cols {
            let window = PixelWindow {
                col0,
                row0,
                col1: (col0 + chip_size).min(width),
                row1: (row0 + chip_size).min(height),
            };
            chips.push(Chip {
                id: chip_id(chips.len()),
                window,
                transform: transform.offset(T::from_u32(col0).unwrap(), T::from_u32(row0).unwrap()),
            });
        }
    }
    Ok(ChipGrid { width, height, chip_size, stride, chips })
}

/// Extracts a chip's pixels from the full raster.
pub fn extract_chip<T: Scalar>(image: &ImageBuffer, chip: &Chip<T>) -> ImageBuffer {
    let w = chip.window;
    image.window(w.col0 as i64, w.row0 as i64, w.width(), w.height())
}

/// Maps chip-pixel detections into world coordinates through the chip's
/// transform. Scores are untouched; `source_chip` is set.
pub fn lift<T: Scalar>(dets: &[Detection<T>], chip: &Chip<T>) -> Vec<Detection<T>> {
    dets.iter()
        .map(|d| Detection {
            bbox: chip.transform.lift_box(&d.bbox),
            source_chip: Some(chip.id.clone()),
            ..d.clone()
        })
        .collect()
}

/// `size x size` crop whose top-left pixel is `floor(center - size/2)`;
/// out-of-raster pixels are zero.
pub fn concentric_crop(image: &ImageBuffer, center: Point<f64>, size: u32) -> ImageBuffer {
    let half = size as f64 / 2.0;
    let col0 = (center.x - half).floor() as i64;
    let row0 = (center.y - half).floor() as i64;
    image.window(col0, row0, size, size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoSplit<T> {
    pub train: Vec<AnnotationSet<T>>,
    pub val: Vec<AnnotationSet<T>>,
    pub test: Vec<AnnotationSet<T>>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clusters of site locations: two sites closer than
/// `min_separation` share a cluster. Clusters are listed by their first
/// member's index.
pub fn site_clusters<T: Scalar>(sites: &[Point<T>], min_separation: T) -> Vec<Vec<usize>> {
    let n = sites.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if sites[i].distance(&sites[j]) < min_separation {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[root]].push(i);
    }
    clusters
}

/// Assigns each image to a split so that no single-linkage cluster of sites
/// straddles two splits. Clusters go largest first to the split with the
/// largest deficit against its target count (ties: train, val, test).
pub fn geo_split<T: Scalar>(
    anns: &[AnnotationSet<T>],
    min_separation: T,
    ratios: (f64, f64, f64),
) -> Result<GeoSplit<T>> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !(*v > 0.0)) || ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let sites: Vec<Point<T>> = anns.iter().map(|a| a.site_location).collect();
    let mut clusters = site_clusters(&sites, min_separation);
    // stable: equal sizes keep first-index order
    clusters.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let total = anns.len() as f64;
    let mut counts = [0usize; 3];
    let mut assignment = vec![Split::Train; anns.len()];
    for cluster in &clusters {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (k, ratio) in r.iter().enumerate() {
            let deficit = ratio * total - counts[k] as f64;
            if deficit > best_deficit {
                best = k;
                best_deficit = deficit;
            }
        }
        counts[best] += cluster.len();
        let split = [Split::Train, Split::Val, Split::Test][best];
        for &i in cluster {
            assignment[i] = split;
        }
    }
    let mut out = GeoSplit { train: vec![], val: vec![], test: vec![] };
    for (a, split) in anns.iter().zip(assignment) {
        match split {
            Split::Train => out.train.push(a.clone()),
            Split::Val => out.val.push(a.clone()),
            Split::Test => out.test.push(a.clone()),
        }
    }
    Ok(out)
}
