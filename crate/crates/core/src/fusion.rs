//! Detector/classifier score fusion.
//!
//! Raw (pre-sigmoid) score pairs are mapped onto roughly the unit square by a
//! min-max normalizer fitted on negative validation samples. A Gaussian KDE of
//! the negatives is turned into its upper-right envelope `N̄(x, y)`, the
//! maximum density over all pairs dominating `(x, y)`; the positives (when
//! there are any) get the mirrored lower-left envelope `P̄`. The ensemble
//! score is `E = P̄ - N̄`, which is non-decreasing in both scores. Without
//! positive samples `P̄` is replaced by `min(s_d, s_c)`.
//!
//! Callers holding probabilities instead of logits must apply the logit
//! themselves before fitting or scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::Detection;
use crate::scalar::Scalar;

pub const DEFAULT_GRID_SIZE: usize = 512;
pub const DEFAULT_DOMAIN: (f64, f64) = (-0.25, 1.25);
pub const BANDWIDTH_FLOOR: f64 = 1e-3;
/// Kernels are evaluated out to this many bandwidths; beyond it the Gaussian
/// is below 1e-27 of its peak.
const KERNEL_CUTOFF: f64 = 11.0;

/// A (detector, classifier) score pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ScorePair<T> {
    pub s_d: T,
    pub s_c: T,
}

impl<T: Scalar> ScorePair<T> {
    pub fn new(s_d: T, s_c: T) -> Self {
        Self { s_d, s_c }
    }
}

/// `normalized = (raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct LinearMap<T> {
    pub offset: T,
    pub scale: T,
}

impl<T: Scalar> LinearMap<T> {
    pub fn apply(&self, raw: T) -> T {
        (raw - self.offset) / self.scale
    }

    fn fit(values: impl Iterator<Item = T>, name: &'static str) -> Result<Self> {
        let (lo, hi) = values.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let scale = hi - lo;
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::DegenerateScores(name));
        }
        Ok(Self { offset: lo, scale })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ScoreNormalizer<T> {
    pub detector: LinearMap<T>,
    pub classifier: LinearMap<T>,
}

impl<T: Scalar> ScoreNormalizer<T> {
    pub fn identity() -> Self {
        let id = LinearMap { offset: T::zero(), scale: T::one() };
        Self { detector: id, classifier: id }
    }

    pub fn apply(&self, raw: ScorePair<T>) -> ScorePair<T> {
        ScorePair::new(self.detector.apply(raw.s_d), self.classifier.apply(raw.s_c))
    }
}

/// Per-coordinate min-max map of the negative sample onto `[0, 1]`. Values
/// outside the sample range land outside `[0, 1]`; nothing is clamped.
pub fn fit_normalizer<T: Scalar>(neg: &[ScorePair<T>]) -> Result<ScoreNormalizer<T>> {
    Ok(ScoreNormalizer {
        detector: LinearMap::fit(neg.iter().map(|p| p.s_d), "detector")?,
        classifier: LinearMap::fit(neg.iter().map(|p| p.s_c), "classifier")?,
    })
}

/// Square grid of values at cell centers over `[lo, hi]^2`. Stored row-major
/// with the detector axis `x` as the outer (row) index: `values[ix * size + iy]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Grid<T> {
    pub size: usize,
    pub lo: T,
    pub hi: T,
    pub values: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(size: usize, lo: T, hi: T, values: Vec<T>) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(Error::InvalidArgument(format!(
                "grid of size {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        if !(lo < hi) {
            return Err(Error::InvalidArgument("grid domain must satisfy lo < hi".into()));
        }
        Ok(Self { size, lo, hi, values })
    }

    pub fn from_fn(size: usize, lo: T, hi: T, f: impl Fn(T, T) -> T) -> Self {
        let mut values = Vec::with_capacity(size * size);
        let centers: Vec<T> = (0..size).map(|i| cell_center(lo, hi, size, i)).collect();
        for &x in &centers {
            for &y in &centers {
                values.push(f(x, y));
            }
        }
        Self { size, lo, hi, values }
    }

    pub fn at(&self, ix: usize, iy: usize) -> T {
        self.values[ix * self.size + iy]
    }

    pub fn cell_width(&self) -> T {
        (self.hi - self.lo) / T::from_count(self.size)
    }

    pub fn center(&self, i: usize) -> T {
        cell_center(self.lo, self.hi, self.size, i)
    }

    /// Bilinear interpolation between cell centers. Queries are clamped to the
    /// span of the outermost centers, so values there extend constantly to
    /// the domain boundary and beyond.
    pub fn interpolate(&self, x: T, y: T) -> T {
        let (ix, fx) = self.locate(x);
        let (iy, fy) = self.locate(y);
        let n = self.size;
        let ix1 = (ix + 1).min(n - 1);
        let iy1 = (iy + 1).min(n - 1);
        let one = T::one();
        // weights-times-values form: rounding is monotone in each corner value
        let row0 = self.at(ix, iy) * (one - fy) + self.at(ix, iy1) * fy;
        let row1 = self.at(ix1, iy) * (one - fy) + self.at(ix1, iy1) * fy;
        row0 * (one - fx) + row1 * fx
    }

    /// Lower cell index and fractional offset towards the next center.
    fn locate(&self, v: T) -> (usize, T) {
        let pos = (v - self.lo) / self.cell_width() - T::lit(0.5);
        let max = T::from_count(self.size - 1);
        let pos = if pos.is_nan() { T::zero() } else { pos.max(T::zero()).min(max) };
        let i = pos.floor().to_usize().unwrap_or(0).min(self.size - 1);
        (i, pos - T::from_count(i))
    }

    /// Riemann sum of the values times the cell area.
    pub fn integral(&self) -> T {
        let cw = self.cell_width();
        self.values.iter().copied().sum::<T>() * cw * cw
    }
}

fn cell_center<T: Scalar>(lo: T, hi: T, size: usize, i: usize) -> T {
    lo + (hi - lo) * (T::from_count(i) + T::lit(0.5)) / T::from_count(size)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum Bandwidth<T> {
    /// `1.06 * sigma * n^(-1/5)` per axis, floored at [`BANDWIDTH_FLOOR`].
    Silverman,
    Fixed { h_x: T, h_y: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct KdeSurface<T> {
    pub grid: Grid<T>,
    pub h_x: T,
    pub h_y: T,
    pub sample_count: usize,
}

fn silverman<T: Scalar>(values: impl Iterator<Item = T> + Clone, n: usize) -> T {
    let floor = T::lit(BANDWIDTH_FLOOR);
    if n < 2 {
        return floor;
    }
    let nf = T::from_count(n);
    let mean = values.clone().sum::<T>() / nf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<T>() / (nf - T::one());
    let h = T::lit(1.06) * var.sqrt() * nf.powf(T::lit(-0.2));
    if h.is_finite() {
        h.max(floor)
    } else {
        floor
    }
}

/// Normalized Gaussian factor of one axis, restricted to the cells within
/// the kernel cutoff: `(first_cell, values)`.
fn axis_kernel<T: Scalar>(grid_lo: T, grid_hi: T, size: usize, mu: T, h: T) -> (usize, Vec<T>) {
    let cw = (grid_hi - grid_lo) / T::from_count(size);
    let reach = h * T::lit(KERNEL_CUTOFF);
    let first = ((mu - reach - grid_lo) / cw - T::lit(0.5)).ceil();
    let last = ((mu + reach - grid_lo) / cw - T::lit(0.5)).floor();
    let max = T::from_count(size - 1);
    if last < T::zero() || first > max || first.is_nan() || last.is_nan() {
        return (0, Vec::new());
    }
    let first = first.max(T::zero()).to_usize().unwrap_or(0);
    let last = last.min(max).to_usize().unwrap_or(0);
    let norm = T::one() / ((T::lit(2.0) * T::PI()).sqrt() * h);
    let vals = (first..=last)
        .map(|i| {
            let z = (cell_center(grid_lo, grid_hi, size, i) - mu) / h;
            norm * (-T::lit(0.5) * z * z).exp()
        })
        .collect();
    (first, vals)
}

/// Gaussian product-kernel density of `points` sampled at the cell centers of
/// a `grid_size x grid_size` grid over `domain`.
pub fn fit_kde<T: Scalar>(
    points: &[ScorePair<T>],
    grid_size: usize,
    domain: (T, T),
    bandwidth: Bandwidth<T>,
) -> Result<KdeSurface<T>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("KDE needs at least one sample".into()));
    }
    if grid_size == 0 || !(domain.0 < domain.1) {
        return Err(Error::InvalidArgument("KDE grid must be non-empty with lo < hi".into()));
    }
    let (h_x, h_y) = match bandwidth {
        Bandwidth::Silverman => (
            silverman(points.iter().map(|p| p.s_d), points.len()),
            silverman(points.iter().map(|p| p.s_c), points.len()),
        ),
        Bandwidth::Fixed { h_x, h_y } => {
            if !(h_x > T::zero() && h_y > T::zero()) {
                return Err(Error::InvalidArgument("bandwidths must be positive".into()));
            }
            (h_x, h_y)
        }
    };
    let (lo, hi) = domain;
    let kx: Vec<(usize, Vec<T>)> = points.iter().map(|p| axis_kernel(lo, hi, grid_size, p.s_d, h_x)).collect();
    let ky: Vec<(usize, Vec<T>)> = points.iter().map(|p| axis_kernel(lo, hi, grid_size, p.s_c, h_y)).collect();
    let inv_n = T::one() / T::from_count(points.len());

    let mut values = vec![T::zero(); grid_size * grid_size];
    // each row sums its samples in input order, so results do not depend on
    // the thread count
    values.par_chunks_mut(grid_size).enumerate().for_each(|(ix, row)| {
        for ((x0, xs), (y0, ys)) in kx.iter().zip(&ky) {
            if ix < *x0 || ix >= x0 + xs.len() {
                continue;
            }
            let wx = xs[ix - x0] * inv_n;
            for (k, wy) in ys.iter().enumerate() {
                row[y0 + k] = row[y0 + k] + wx * *wy;
            }
        }
    });
    Ok(KdeSurface { grid: Grid::new(grid_size, lo, hi, values)?, h_x, h_y, sample_count: points.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeDirection {
    /// `value(x, y) = max over s >= x, t >= y`; non-increasing along both axes.
    UpperRight,
    /// `value(x, y) = max over s <= x, t <= y`; non-decreasing along both axes.
    LowerLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct EnvelopeGrid<T> {
    pub direction: EnvelopeDirection,
    pub grid: Grid<T>,
}

impl<T: Scalar> EnvelopeGrid<T> {
    pub fn evaluate(&self, x: T, y: T) -> T {
        self.grid.interpolate(x, y)
    }

    /// Checks the directional monotonicity cell by cell.
    pub fn is_monotone(&self) -> bool {
        let g = &self.grid;
        let n = g.size;
        let ok = |a: T, b: T| match self.direction {
            EnvelopeDirection::UpperRight => a >= b,
            EnvelopeDirection::LowerLeft => a <= b,
        };
        (0..n).all(|i| {
            (0..n).all(|j| (i + 1 >= n || ok(g.at(i, j), g.at(i + 1, j))) && (j + 1 >= n || ok(g.at(i, j), g.at(i, j + 1))))
        })
    }
}

/// Two cumulative-max sweeps: along `y` within each row, then along `x`.
fn envelope_sweep<T: Scalar>(grid: &Grid<T>, reverse: bool) -> Grid<T> {
    let n = grid.size;
    let mut v = grid.values.clone();
    let idx = |k: usize| if reverse { n - 1 - k } else { k };
    for ix in 0..n {
        let row = &mut v[ix * n..(ix + 1) * n];
        for k in 1..n {
            let (prev, cur) = (idx(k - 1), idx(k));
            row[cur] = row[cur].max(row[prev]);
        }
    }
    for k in 1..n {
        let (prev, cur) = (idx(k - 1), idx(k));
        for iy in 0..n {
            v[cur * n + iy] = v[cur * n + iy].max(v[prev * n + iy]);
        }
    }
    Grid { size: n, lo: grid.lo, hi: grid.hi, values: v }
}

pub fn upper_right_envelope<T: Scalar>(k: &KdeSurface<T>) -> EnvelopeGrid<T> {
    upper_right_envelope_grid(&k.grid)
}

pub fn lower_left_envelope<T: Scalar>(k: &KdeSurface<T>) -> EnvelopeGrid<T> {
    lower_left_envelope_grid(&k.grid)
}

pub fn upper_right_envelope_grid<T: Scalar>(g: &Grid<T>) -> EnvelopeGrid<T> {
    EnvelopeGrid { direction: EnvelopeDirection::UpperRight, grid: envelope_sweep(g, true) }
}

pub fn lower_left_envelope_grid<T: Scalar>(g: &Grid<T>) -> EnvelopeGrid<T> {
    EnvelopeGrid { direction: EnvelopeDirection::LowerLeft, grid: envelope_sweep(g, false) }
}

/// Positive-class term of the ensemble score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
#[serde(rename_all = "snake_case")]
pub enum PositiveEnvelope<T> {
    Kde(EnvelopeGrid<T>),
    /// `min(s_d, s_c)` of the normalized scores, clamped to the domain. It is
    /// already its own lower-left envelope.
    ZeroShotMin { lo: T, hi: T },
}

impl<T: Scalar> PositiveEnvelope<T> {
    pub fn evaluate(&self, x: T, y: T) -> T {
        match self {
            Self::Kde(env) => env.evaluate(x, y),
            Self::ZeroShotMin { lo, hi } => {
                let clamp = |v: T| if v.is_nan() { *lo } else { v.max(*lo).min(*hi) };
                clamp(x).min(clamp(y))
            }
        }
    }

    pub fn is_zero_shot(&self) -> bool {
        matches!(self, Self::ZeroShotMin { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FusionConfig<T> {
    pub grid_size: usize,
    pub domain: (T, T),
    pub bandwidth: Bandwidth<T>,
}

impl<T: Scalar> Default for FusionConfig<T> {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            domain: (T::lit(DEFAULT_DOMAIN.0), T::lit(DEFAULT_DOMAIN.1)),
            bandwidth: Bandwidth::Silverman,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FusionModel<T> {
    pub normalizer: ScoreNormalizer<T>,
    pub n_bar: EnvelopeGrid<T>,
    pub p_bar: PositiveEnvelope<T>,
}

/// Fits the normalizer and `N̄` on the negatives, and `P̄` on the positives
/// when given (otherwise the zero-shot `min` rule).
pub fn fit_fusion<T: Scalar>(
    neg: &[ScorePair<T>],
    pos: Option<&[ScorePair<T>]>,
    config: &FusionConfig<T>,
) -> Result<FusionModel<T>> {
    let normalizer = fit_normalizer(neg)?;
    let norm_neg: Vec<_> = neg.iter().map(|p| normalizer.apply(*p)).collect();
    let n_kde = fit_kde(&norm_neg, config.grid_size, config.domain, config.bandwidth)?;
    let n_bar = upper_right_envelope(&n_kde);
    let p_bar = match pos {
        Some(pos) if !pos.is_empty() => {
            let norm_pos: Vec<_> = pos.iter().map(|p| normalizer.apply(*p)).collect();
            let p_kde = fit_kde(&norm_pos, config.grid_size, config.domain, config.bandwidth)?;
            PositiveEnvelope::Kde(lower_left_envelope(&p_kde))
        }
        _ => PositiveEnvelope::ZeroShotMin { lo: config.domain.0, hi: config.domain.1 },
    };
    Ok(FusionModel { normalizer, n_bar, p_bar })
}

impl<T: Scalar> FusionModel<T> {
    /// `P̄ - N̄` at a raw score pair.
    pub fn score_raw(&self, raw: ScorePair<T>) -> T {
        let s = self.normalizer.apply(raw);
        self.p_bar.evaluate(s.s_d, s.s_c) - self.n_bar.evaluate(s.s_d, s.s_c)
    }
}

pub fn ensemble_score<T: Scalar>(model: &FusionModel<T>, det: &Detection<T>, index: usize) -> Result<T> {
    let s_c = det.s_c.ok_or(Error::MissingClassifierScore(index))?;
    Ok(model.score_raw(ScorePair::new(det.s_d, s_c)))
}

/// Sets `fused` on every detection, preserving order.
pub fn apply_fusion<T: Scalar>(model: &FusionModel<T>, dets: &[Detection<T>]) -> Result<Vec<Detection<T>>> {
    dets.iter()
        .enumerate()
        .map(|(i, d)| {
            let fused = ensemble_score(model, d, i)?;
            Ok(Detection { fused: Some(fused), ..d.clone() })
        })
        .collect()
}
