//! Evaluation metrics and overlay rendering.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::model::{project_point, GeoRaster, PointCloud, ProjectionMatrix};

/// True positives, false alarms and misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub tp: u32,
    pub fa: u32,
    pub m: u32,
}

impl Tally {
    pub fn new(tp: u32, fa: u32, m: u32) -> Self {
        Self { tp, fa, m }
    }
}

/// Precision and recall in percent.
pub fn precision_recall(t: Tally) -> Result<(f64, f64)> {
    if t.tp + t.fa == 0 {
        return Err(Error::UndefinedMetric("precision with TP + FA = 0"));
    }
    if t.tp + t.m == 0 {
        return Err(Error::UndefinedMetric("recall with TP + M = 0"));
    }
    let tp = f64::from(t.tp);
    Ok((tp / f64::from(t.tp + t.fa) * 100.0, tp / f64::from(t.tp + t.m) * 100.0))
}

/// Planimetric position of one control point as given by the image
/// georeference and by the LiDAR data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPointPair {
    pub p_image: Vec2,
    pub p_lidar: Vec2,
}

impl ControlPointPair {
    pub fn distance(&self) -> f64 {
        (self.p_image[0] - self.p_lidar[0]).hypot(self.p_image[1] - self.p_lidar[1])
    }
}

/// Mean planimetric distance over the control points, meters.
pub fn relative_shift(pairs: &[ControlPointPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(pairs.iter().map(ControlPointPair::distance).sum::<f64>() / pairs.len() as f64)
}

/// Relative reduction of the shift, percent.
pub fn shift_gain(before: f64, after: f64) -> Result<f64> {
    if before == 0.0 {
        return Err(Error::ZeroBefore);
    }
    Ok((before - after) / before * 100.0)
}

/// Rounds to two decimals, as metrics are reported.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorBy {
    Elevation,
    Intensity,
}

/// Linear blue-to-red ramp over `t` in `[0, 1]`.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// Splats every point of `cloud` projected through `p` onto a copy of
/// `image` as a single colored pixel. Points outside the image or behind
/// the principal plane are skipped. Single-band images receive the ramp's
/// luminance instead of its color.
pub fn render_overlay(image: &GeoRaster<u8>, cloud: &PointCloud, p: &ProjectionMatrix, color_by: ColorBy) -> GeoRaster<u8> {
    let mut out = image.clone();
    if cloud.is_empty() {
        return out;
    }
    let values: Vec<f64> = match (color_by, &cloud.intensity) {
        (ColorBy::Intensity, Some(i)) => i.iter().map(|&v| f64::from(v)).collect(),
        _ => cloud.points.iter().map(|p| p.z).collect(),
    };
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let splats: Vec<(usize, usize, [u8; 3])> = cloud
        .points
        .par_iter()
        .zip(values.par_iter())
        .filter_map(|(pt, &v)| {
            let (u, w) = project_point(p, pt).ok()?;
            let (c, r) = (u.round(), w.round());
            if !out.contains(c as i64, r as i64) || !c.is_finite() || !r.is_finite() {
                return None;
            }
            Some((c as usize, r as usize, ramp((v - lo) / span)))
        })
        .collect();
    for (c, r, rgb) in splats {
        if out.bands >= 3 {
            for b in 0..3 {
                out.set(c, r, b, rgb[b]);
            }
        } else {
            let y = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
            out.set(c, r, 0, y.round() as u8);
        }
    }
    out
}

/// Everything `register` reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub lidar_regions: usize,
    pub image_segments: usize,
    pub initial_pairs: usize,
    pub gtm_inliers: usize,
    pub final_inliers: usize,
    pub rms_reprojection_px: f64,
    pub control_points: usize,
    pub shift_before_m: Option<f64>,
    pub shift_after_m: Option<f64>,
    pub gain_pct: Option<f64>,
    /// Extraction/matching tallies when ground truth is known.
    pub tallies: Vec<(String, Tally)>,
}

/// Aligned text table with one row per tally and one per shift summary.
pub fn format_table(metrics: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>10}", "LiDAR regions", metrics.lidar_regions);
    let _ = writeln!(s, "{:<24} {:>10}", "image segments", metrics.image_segments);
    let _ = writeln!(s, "{:<24} {:>10}", "initial pairs", metrics.initial_pairs);
    let _ = writeln!(s, "{:<24} {:>10}", "after filtering", metrics.gtm_inliers);
    let _ = writeln!(s, "{:<24} {:>10}", "after validation", metrics.final_inliers);
    let _ = writeln!(s, "{:<24} {:>10.4}", "rms reprojection (px)", metrics.rms_reprojection_px);
    if !metrics.tallies.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>5} {:>5} {:>5} {:>10} {:>10}", "stage", "TP", "FA", "M", "precision", "recall");
    }
    for (name, t) in &metrics.tallies {
        let (p, r) = match precision_recall(*t) {
            Ok((p, r)) => (format!("{p:.2}%"), format!("{r:.2}%")),
            Err(_) => ("n/a".to_string(), "n/a".to_string()),
        };
        let _ = writeln!(s, "{:<24} {:>5} {:>5} {:>5} {:>10} {:>10}", name, t.tp, t.fa, t.m, p, r);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:>10} {:>10} {:>10}", "relative shift", "before", "after", "gain");
    let fmt = |v: Option<f64>, unit: &str| v.map_or("n/a".to_string(), |v| format!("{v:.2}{unit}"));
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>10} {:>10}",
        format!("{} control points", metrics.control_points),
        fmt(metrics.shift_before_m, " m"),
        fmt(metrics.shift_after_m, " m"),
        fmt(metrics.gain_pct, "%")
    );
    s
}
