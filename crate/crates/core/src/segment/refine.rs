//! Segment measurements and the size / MBR-filling filters.

use serde::{Deserialize, Serialize};

use crate::geometry::{self, Vec2};
use crate::lidar::rect_to_world;
use crate::model::LabeledMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment2D {
    pub label: u32,
    #[serde(skip)]
    pub pixels: Vec<(usize, usize)>,
    /// Mean pixel position `(u, v)`.
    pub centroid_px: Vec2,
    /// Centroid in world coordinates through the raster georeference.
    pub centroid: Vec2,
    pub area_px: usize,
    pub area_m2: f64,
    /// MBR corners in world coordinates.
    pub mbr: [Vec2; 4],
    /// Long-axis direction of the MBR in the world frame, `[0, pi)`.
    pub mbr_angle: f64,
    pub filling_pct: f64,
}

/// Measures every label of `mask`.
pub fn describe_segments(mask: &LabeledMask) -> Vec<Segment2D> {
    let geo = mask.raster.geo;
    mask.pixel_lists()
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, px)| !px.is_empty())
        .map(|(label, pixels)| {
            let n = pixels.len() as f64;
            let (su, sv) = pixels
                .iter()
                .fold((0.0, 0.0), |a, &(c, r)| (a.0 + c as f64, a.1 + r as f64));
            let centroid_px = [su / n, sv / n];
            let (x, y) = geo.pixel_to_world(centroid_px[0], centroid_px[1]);
            let px_rect = geometry::minimal_bounding_rectangle(&pixels);
            let world = rect_to_world(&px_rect, &geo);
            Segment2D {
                label: label as u32,
                centroid_px,
                centroid: [x, y],
                area_px: pixels.len(),
                area_m2: n * geo.pixel_area(),
                mbr: world.corners,
                mbr_angle: world.angle,
                filling_pct: geometry::filling_percentage(n, px_rect.area),
                pixels,
            }
        })
        .collect()
}

/// Drops segments whose pixel count lies outside `[min_px, max_px]`.
pub fn size_filter(mask: &LabeledMask, min_px: usize, max_px: usize) -> LabeledMask {
    assert!(min_px <= max_px, "min_px must not exceed max_px");
    let areas = mask.areas();
    mask.retain(|l| (min_px..=max_px).contains(&areas[l as usize]))
}

/// Keeps segments with filling strictly above `threshold` percent.
pub fn filling_filter(segments: Vec<Segment2D>, threshold: f64) -> Vec<Segment2D> {
    segments.into_iter().filter(|s| s.filling_pct > threshold).collect()
}
