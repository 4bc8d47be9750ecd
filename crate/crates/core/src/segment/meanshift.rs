//! Flat-kernel mean shift over pixel colors, optionally joined with pixel
//! position.
//!
//! Features are scaled so the kernel is the unit ball: color by the range
//! bandwidth and position by the spatial bandwidth. Each pixel is moved to
//! the mean of the samples inside the ball around its current position
//! until the shift falls under the tolerance. The flat kernel is the shadow
//! of the Epanechnikov kernel, so [`MeanShift::density`] with that profile
//! does not decrease along a trajectory.

use rayon::prelude::*;
use std::collections::HashMap;

use super::color::LabImage;
use crate::error::{Error, Result};
use crate::model::{GeoRaster, LabeledMask};
use crate::raster;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftConfig {
    /// Kernel radius in color units.
    pub range_bandwidth: f64,
    /// Kernel radius in pixels; `None` clusters on color alone.
    pub spatial_bandwidth: Option<f64>,
    pub max_iterations: usize,
    /// Stop once a step moves less than this, in color units.
    pub convergence_tol: f64,
    /// Modes closer than this in color are merged; defaults to half the
    /// range bandwidth.
    pub merge_distance: Option<f64>,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            range_bandwidth: 8.0,
            spatial_bandwidth: Some(4.0),
            max_iterations: 50,
            convergence_tol: 0.01,
            merge_distance: None,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.range_bandwidth > 0.0) {
            return bad("range bandwidth must be positive");
        }
        if let Some(s) = self.spatial_bandwidth {
            if !(s > 0.0) {
                return bad("spatial bandwidth must be positive");
            }
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.convergence_tol > 0.0) {
            return bad("convergence tolerance must be positive");
        }
        if let Some(m) = self.merge_distance {
            if !(m >= 0.0) {
                return bad("merge distance must be non-negative");
            }
        }
        Ok(())
    }

    pub fn merge_distance(&self) -> f64 {
        self.merge_distance.unwrap_or(self.range_bandwidth / 2.0)
    }
}

/// Point in the scaled feature space: up to three color components then
/// two spatial components. Unused slots stay zero.
pub type Feature = [f64; 5];

fn dist2(a: &Feature, b: &Feature) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

type Cell = [i64; 3];

/// Mean shift state for one image.
pub struct MeanShift<'a> {
    img: &'a LabImage,
    cfg: MeanShiftConfig,
    features: Vec<Feature>,
    // color-only mode: unique features with multiplicities, bucketed by cell
    buckets: HashMap<Cell, Vec<(Feature, f64)>>,
}

impl<'a> MeanShift<'a> {
    pub fn new(img: &'a LabImage, cfg: MeanShiftConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.range_bandwidth;
        let features: Vec<Feature> = (0..img.data.len())
            .map(|i| {
                let (c, _) = img.feature(i);
                let mut f = [c[0] / h, c[1] / h, c[2] / h, 0.0, 0.0];
                if let Some(s) = cfg.spatial_bandwidth {
                    f[3] = (i % img.width) as f64 / s;
                    f[4] = (i / img.width) as f64 / s;
                }
                f
            })
            .collect();
        let mut buckets: HashMap<Cell, Vec<(Feature, f64)>> = HashMap::new();
        if cfg.spatial_bandwidth.is_none() {
            let mut counts: HashMap<[u64; 3], usize> = HashMap::new();
            let mut unique: Vec<Feature> = Vec::new();
            let mut weight: Vec<f64> = Vec::new();
            for f in &features {
                let key = [f[0].to_bits(), f[1].to_bits(), f[2].to_bits()];
                match counts.get(&key) {
                    Some(&k) => weight[k] += 1.0,
                    None => {
                        counts.insert(key, unique.len());
                        unique.push(*f);
                        weight.push(1.0);
                    }
                }
            }
            for (f, w) in unique.into_iter().zip(weight) {
                buckets.entry(cell_of(&f)).or_default().push((f, w));
            }
        }
        Ok(Self {
            img,
            cfg,
            features,
            buckets,
        })
    }

    /// Calls `visit(feature, weight)` for every sample within the unit ball
    /// around `y`.
    fn for_each_neighbour(&self, y: &Feature, mut visit: impl FnMut(&Feature, f64)) {
        match self.cfg.spatial_bandwidth {
            Some(s) => {
                let w = self.img.width as i64;
                let hgt = self.img.height as i64;
                let reach = s.ceil() as i64 + 1;
                let (cx, cy) = ((y[3] * s).round() as i64, (y[4] * s).round() as i64);
                for row in (cy - reach).max(0)..=(cy + reach).min(hgt - 1) {
                    for col in (cx - reach).max(0)..=(cx + reach).min(w - 1) {
                        let f = &self.features[(row * w + col) as usize];
                        if dist2(f, y) <= 1.0 {
                            visit(f, 1.0);
                        }
                    }
                }
            }
            None => {
                let c = cell_of(y);
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if let Some(list) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                                for (f, w) in list {
                                    if dist2(f, y) <= 1.0 {
                                        visit(f, *w);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn step(&self, y: &Feature) -> Feature {
        let mut sum = [0.0; 5];
        let mut total = 0.0;
        self.for_each_neighbour(y, |f, w| {
            for k in 0..5 {
                sum[k] += f[k] * w;
            }
            total += w;
        });
        if total == 0.0 {
            return *y;
        }
        sum.map(|v| v / total)
    }

    fn tol2(&self) -> f64 {
        let t = self.cfg.convergence_tol / self.cfg.range_bandwidth;
        t * t
    }

    /// Mode reached from pixel `i`.
    pub fn seek(&self, i: usize) -> Feature {
        let mut y = self.features[i];
        for _ in 0..self.cfg.max_iterations {
            let next = self.step(&y);
            let moved = dist2(&next, &y);
            y = next;
            if moved < self.tol2() {
                break;
            }
        }
        y
    }

    /// Every iterate visited from pixel `i`, starting with its own feature.
    pub fn trajectory(&self, i: usize) -> Vec<Feature> {
        let mut y = self.features[i];
        let mut out = vec![y];
        for _ in 0..self.cfg.max_iterations {
            let next = self.step(&y);
            let moved = dist2(&next, &y);
            y = next;
            out.push(y);
            if moved < self.tol2() {
                break;
            }
        }
        out
    }

    /// Unnormalised Epanechnikov density `sum (1 - |y - x|^2)` over samples
    /// inside the unit ball.
    pub fn density(&self, y: &Feature) -> f64 {
        let mut d = 0.0;
        self.for_each_neighbour(y, |f, w| d += w * (1.0 - dist2(f, y)));
        d
    }

    pub fn feature(&self, i: usize) -> Feature {
        self.features[i]
    }

    /// Color part of a feature, back in color units.
    pub fn color_of(&self, f: &Feature) -> Vec<f64> {
        let h = self.cfg.range_bandwidth;
        f[..self.img.dims()].iter().map(|v| v * h).collect()
    }
}

fn cell_of(f: &Feature) -> Cell {
    [f[0].floor() as i64, f[1].floor() as i64, f[2].floor() as i64]
}

/// Per-pixel mode assignment after merging.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField {
    /// Merged modes in color units (2 or 3 components).
    pub modes: Vec<Vec<f64>>,
    /// Index into `modes` for every pixel.
    pub assignment: Vec<u32>,
}

/// Runs mode seeking from every pixel and merges modes whose colors lie
/// within the merge distance of an earlier mode's representative.
pub fn mean_shift_modes(img: &LabImage, cfg: &MeanShiftConfig) -> Result<ModeField> {
    let ms = MeanShift::new(img, *cfg)?;
    let raw: Vec<Vec<f64>> = (0..img.data.len())
        .into_par_iter()
        .map(|i| ms.color_of(&ms.seek(i)))
        .collect();
    Ok(merge_modes(&raw, cfg.merge_distance()))
}

/// Greedy, order-dependent merge: each raw mode joins the first existing
/// cluster whose representative is within `radius`, else founds a new one.
/// Reported modes are member means.
pub fn merge_modes(raw: &[Vec<f64>], radius: f64) -> ModeField {
    let r2 = radius * radius;
    let cell = radius.max(1e-9);
    let key = |m: &[f64]| -> Cell {
        let mut k = [0i64; 3];
        for (d, v) in m.iter().enumerate().take(3) {
            k[d] = (v / cell).floor() as i64;
        }
        k
    };
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut grid: HashMap<Cell, Vec<u32>> = HashMap::new();
    let mut assignment = Vec::with_capacity(raw.len());
    for m in raw {
        let k = key(m);
        let mut best: Option<u32> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &id in ids {
                            let d2: f64 = reps[id as usize].iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                            if d2 <= r2 && best.map_or(true, |b| id < b) {
                                best = Some(id);
                            }
                        }
                    }
                }
            }
        }
        let id = best.unwrap_or_else(|| {
            let id = reps.len() as u32;
            reps.push(m.clone());
            sums.push((vec![0.0; m.len()], 0.0));
            grid.entry(k).or_default().push(id);
            id
        });
        let s = &mut sums[id as usize];
        for (acc, v) in s.0.iter_mut().zip(m) {
            *acc += v;
        }
        s.1 += 1.0;
        assignment.push(id);
    }
    let modes = sums.into_iter().map(|(s, n)| s.into_iter().map(|v| v / n).collect()).collect();
    ModeField { modes, assignment }
}

/// Mean shift segmentation: pixels labeled by merged mode, then split into
/// 8-connected segments.
pub fn mean_shift_segment(img: &LabImage, cfg: &MeanShiftConfig) -> Result<LabeledMask> {
    let field = mean_shift_modes(img, cfg)?;
    Ok(segments_from_modes(img, &field))
}

pub fn segments_from_modes(img: &LabImage, field: &ModeField) -> LabeledMask {
    let raster = GeoRaster {
        width: img.width,
        height: img.height,
        bands: 1,
        geo: img.geo,
        data: field.assignment.iter().map(|&m| m + 1).collect(),
    };
    let count = field.modes.len() as u32;
    raster::split_connected(&LabeledMask { raster, count })
}
