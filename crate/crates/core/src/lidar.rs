//! Building extraction from a classified airborne LiDAR point cloud.
//!
//! The chain is: elevation threshold, vertical projection to a binary
//! mask, diamond opening, 8-connected labeling, small-region removal, and
//! finally collecting the non-ground points seeded by each labeled
//! footprint together with the footprint's outer boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Rect, Vec2};
use crate::model::{BinaryMask, GeoTransform, LabeledMask, Point3, PointClass, PointCloud};
use crate::raster;

/// Minimum elevation margin above the mean ground height, in meters.
pub const MIN_ELEVATION_MARGIN: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarParams {
    /// Structuring element size in pixels (odd, >= 3).
    pub se_size: usize,
    /// Minimum footprint area in square meters.
    pub min_area: f64,
    /// Mask resolution; `None` derives it from the point density.
    pub resolution: Option<f64>,
    /// Seed `z_G` from the lowest decile when no ground class is present.
    pub ground_fallback: bool,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            se_size: 5,
            min_area: 20.0,
            resolution: None,
            ground_fallback: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElevationSplit {
    pub threshold: f64,
    pub ground: PointCloud,
    pub non_ground: PointCloud,
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `T_e = mean(z_G) + max(2.5, std(z_G))`.
pub fn threshold_from_ground(z_ground: &[f64]) -> Result<f64> {
    if z_ground.is_empty() {
        return Err(Error::NoGroundPoints);
    }
    let (mean, std) = mean_std(z_ground);
    Ok(mean + MIN_ELEVATION_MARGIN.max(std))
}

fn ground_elevations(cloud: &PointCloud, fallback: bool) -> Result<Vec<f64>> {
    let from_class: Vec<f64> = match &cloud.class {
        Some(class) => cloud
            .points
            .iter()
            .zip(class)
            .filter(|(_, c)| **c == PointClass::Ground)
            .map(|(p, _)| p.z)
            .collect(),
        None => Vec::new(),
    };
    if !from_class.is_empty() {
        return Ok(from_class);
    }
    if !fallback {
        return Err(Error::NoGroundPoints);
    }
    let mut z: Vec<f64> = cloud.points.iter().map(|p| p.z).collect();
    z.sort_by(f64::total_cmp);
    let n = (z.len() / 10).max(1);
    z.truncate(n);
    Ok(z)
}

/// Splits the cloud at `T_e`: points strictly above go to `non_ground`.
pub fn elevation_threshold(cloud: &PointCloud, fallback: bool) -> Result<ElevationSplit> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let threshold = threshold_from_ground(&ground_elevations(cloud, fallback)?)?;
    let (above, below): (Vec<usize>, Vec<usize>) =
        (0..cloud.len()).partition(|&i| cloud.points[i].z > threshold);
    Ok(ElevationSplit {
        threshold,
        ground: cloud.subset(&below),
        non_ground: cloud.subset(&above),
    })
}

/// Planimetric point density (points per square meter over the bounding box).
pub fn point_density(cloud: &PointCloud) -> Option<f64> {
    let (x0, y0, x1, y1) = cloud.bounds_xy()?;
    let area = (x1 - x0) * (y1 - y0);
    (area > 0.0).then(|| cloud.len() as f64 / area)
}

/// Mask cell size for a given density: `1/sqrt(density)` rounded up to the
/// next half meter, so 2 pts/m² maps to 1 m and 8 pts/m² to 0.5 m.
pub fn default_resolution(density: f64) -> f64 {
    let spacing = 1.0 / density.sqrt();
    ((spacing / 0.5).ceil() * 0.5).max(0.5)
}

/// Grid covering a set of points with cells centered on multiples of
/// `resolution`.
pub fn grid_for_points(points: &[Point3], resolution: f64) -> Result<(GeoTransform, usize, usize)> {
    let cloud_bounds = PointCloud::new(points.to_vec()).bounds_xy().ok_or(Error::EmptyCloud)?;
    let (x0, y0, x1, y1) = cloud_bounds;
    let origin_x = (x0 / resolution).round() * resolution;
    let origin_y = (y1 / resolution).round() * resolution;
    let geo = GeoTransform::new(origin_x, origin_y, resolution)?;
    let width = ((x1 - origin_x) / resolution).round() as usize + 1;
    let height = ((origin_y - y0) / resolution).round() as usize + 1;
    Ok((geo, width, height))
}

/// Vertical projection of the non-ground points onto a binary mask.
pub fn vertical_project(non_ground: &PointCloud, resolution: f64) -> Result<BinaryMask> {
    if non_ground.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (geo, width, height) = grid_for_points(&non_ground.points, resolution)?;
    Ok(project_onto(&non_ground.points, geo, width, height))
}

/// Projection onto an explicit grid; points outside are ignored.
pub fn project_onto(points: &[Point3], geo: GeoTransform, width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height, 1, geo);
    for p in points {
        let (c, r) = geo.world_to_cell(p.x, p.y);
        if mask.contains(c, r) {
            mask.set(c as usize, r as usize, 0, 1);
        }
    }
    mask
}

/// Deletes labeled regions whose area (pixels times pixel area) is below
/// `min_area` square meters; survivors are renumbered contiguously.
pub fn remove_small_regions(mask: &LabeledMask, min_area: f64) -> LabeledMask {
    let areas = mask.areas();
    let px_area = mask.raster.geo.pixel_area();
    mask.retain(|l| areas[l as usize] as f64 * px_area >= min_area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region3D {
    pub label: u32,
    pub points: Vec<Point3>,
    /// Footprint pixels `(col, row)` in the building mask.
    pub footprint: Vec<(usize, usize)>,
    /// Outer boundary, clockwise in world coordinates, first vertex repeated
    /// at the end.
    pub boundary: Vec<Vec2>,
}

impl Region3D {
    /// Mean of the region's points; `z` is the mean roof elevation.
    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let s = self.points.iter().fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.x, a.1 + p.y, a.2 + p.z));
        Point3::new(s.0 / n, s.1 / n, s.2 / n)
    }
}

/// Collects, for every label, the non-ground points whose vertical
/// projection lands on it. Labels without points are dropped.
pub fn extract_building_points(non_ground: &PointCloud, mask: &LabeledMask) -> Vec<Region3D> {
    let r = &mask.raster;
    let mut members: Vec<Vec<Point3>> = vec![Vec::new(); mask.count as usize + 1];
    for p in &non_ground.points {
        let (c, row) = r.geo.world_to_cell(p.x, p.y);
        if !r.contains(c, row) {
            continue;
        }
        let l = r.get(c as usize, row as usize, 0);
        if l > 0 {
            members[l as usize].push(*p);
        }
    }
    let pixels = mask.pixel_lists();
    (1..=mask.count)
        .into_par_iter()
        .filter(|&l| !members[l as usize].is_empty())
        .map(|l| {
            let boundary = trace_boundary(mask, l, pixels[l as usize][0])
                .into_iter()
                .map(|(c, row)| {
                    let (x, y) = r.geo.pixel_to_world(c as f64, row as f64);
                    [x, y]
                })
                .collect();
            Region3D {
                label: l,
                points: members[l as usize].clone(),
                footprint: pixels[l as usize].clone(),
                boundary,
            }
        })
        .collect()
}

// Moore neighbourhood in clockwise order on screen (row axis pointing down),
// starting west.
const MOORE: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

/// Moore-neighbour tracing of the outer boundary of `label`, starting from
/// its first pixel in scan order. Returns pixel centers, closed (first
/// vertex repeated), clockwise as displayed north-up.
pub fn trace_boundary(mask: &LabeledMask, label: u32, start: (usize, usize)) -> Vec<(usize, usize)> {
    let r = &mask.raster;
    let inside = |c: i64, row: i64| r.contains(c, row) && r.get(c as usize, row as usize, 0) == label;
    // first foreground neighbour clockwise after the backtrack direction
    let sweep = |p: (i64, i64), back: usize| {
        (1..=8).map(|k| (back + k) % 8).find(|&d| inside(p.0 + MOORE[d].0, p.1 + MOORE[d].1))
    };
    let start = (start.0 as i64, start.1 as i64);
    let to_px = |v: Vec<(i64, i64)>| v.into_iter().map(|(c, r)| (c as usize, r as usize)).collect();
    // the scan-order first pixel always has a background west neighbour
    let Some(first) = sweep(start, 0) else {
        return to_px(vec![start, start]);
    };
    let mut contour = vec![start];
    let mut current = start;
    let mut d = first;
    loop {
        current = (current.0 + MOORE[d].0, current.1 + MOORE[d].1);
        let next = sweep(current, backtrack_for(d)).expect("traced pixel has a neighbour");
        contour.push(current);
        // Jacob's criterion: back at the start about to repeat the first move
        if current == start && next == first {
            break;
        }
        d = next;
    }
    to_px(contour)
}

/// Direction, seen from the newly entered pixel, of the last background
/// neighbour examined before moving along `d`.
fn backtrack_for(d: usize) -> usize {
    // Moving along d from p to q, the previously checked (background) cell
    // was p + MOORE[d - 1]. Seen from q it lies at (MOORE[d-1] - MOORE[d]),
    // which for even d is MOORE[d + 6] and for odd d is MOORE[d + 5].
    if d % 2 == 0 {
        (d + 6) % 8
    } else {
        (d + 5) % 8
    }
}

/// Minimal bounding rectangle of a footprint in world coordinates.
pub fn footprint_mbr(footprint: &[(usize, usize)], geo: &GeoTransform) -> Rect {
    let px = geometry::minimal_bounding_rectangle(footprint);
    rect_to_world(&px, geo)
}

/// Maps a pixel-frame rectangle to world coordinates. The row axis flips, so
/// the long-axis angle is mirrored.
pub fn rect_to_world(px: &Rect, geo: &GeoTransform) -> Rect {
    let corners = px.corners.map(|[c, r]| {
        let (x, y) = geo.pixel_to_world(c, r);
        [x, y]
    });
    let s = geo.resolution;
    let angle = (std::f64::consts::PI - px.angle).rem_euclid(std::f64::consts::PI);
    let angle = if angle >= std::f64::consts::PI - 1e-15 { 0.0 } else { angle };
    Rect {
        corners,
        angle,
        length: px.length * s,
        width: px.width * s,
        area: px.area * s * s,
    }
}

/// Result of the full LiDAR branch.
#[derive(Debug, Clone)]
pub struct LidarExtraction {
    pub threshold: f64,
    pub resolution: f64,
    pub mask: LabeledMask,
    pub regions: Vec<Region3D>,
}

pub fn extract_buildings(cloud: &PointCloud, params: &LidarParams) -> Result<LidarExtraction> {
    if params.se_size < 3 || params.se_size % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "structuring element size must be odd and >= 3, got {}",
            params.se_size
        )));
    }
    let split = elevation_threshold(cloud, params.ground_fallback)?;
    let resolution = match params.resolution {
        Some(r) => r,
        None => default_resolution(point_density(cloud).ok_or(Error::EmptyCloud)?),
    };
    log::info!(
        "elevation threshold {:.3} m, {} non-ground of {} points, mask resolution {} m",
        split.threshold,
        split.non_ground.len(),
        cloud.len(),
        resolution
    );
    // grid over the whole cloud so the mask extent does not depend on which
    // points happen to be above the threshold
    let (geo, width, height) = grid_for_points(&cloud.points, resolution)?;
    let binary = project_onto(&split.non_ground.points, geo, width, height);
    let opened = raster::morphological_open(&binary, params.se_size);
    let labeled = raster::label_connected(&opened);
    let mask = remove_small_regions(&labeled, params.min_area);
    let regions = extract_building_points(&split.non_ground, &mask);
    log::info!("{} building regions", regions.len());
    Ok(LidarExtraction {
        threshold: split.threshold,
        resolution,
        mask,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ground_cloud(z: &[f64]) -> PointCloud {
        let pts = z.iter().enumerate().map(|(i, &z)| Point3::new(i as f64, 0.0, z)).collect();
        PointCloud::new(pts)
            .with_class(vec![PointClass::Ground; z.len()])
            .unwrap()
    }

    fn labeled(w: usize, h: usize, res: f64, rects: &[(usize, usize, usize, usize)]) -> LabeledMask {
        let geo = GeoTransform::new(0.0, 0.0, res).unwrap();
        let mut m = BinaryMask::new(w, h, 1, geo);
        for &(c0, r0, cw, rh) in rects {
            for r in r0..r0 + rh {
                for c in c0..c0 + cw {
                    m.set(c, r, 0, 1);
                }
            }
        }
        raster::label_connected(&m)
    }

    #[test]
    fn flat_ground_uses_minimum_margin() {
        let s = elevation_threshold(&ground_cloud(&[10.0, 10.0, 10.0]), false).unwrap();
        assert_eq!(s.threshold, 12.5);
        assert!(s.non_ground.is_empty());
        assert_eq!(s.ground.len(), 3);
    }

    #[test]
    fn spread_ground_uses_population_std() {
        let t = threshold_from_ground(&[96.0, 100.0, 104.0, 100.0]).unwrap();
        // population variance (16 + 0 + 16 + 0) / 4 = 8
        assert_abs_diff_eq!(t, 100.0 + 8f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(t, 102.828_427_124_746_19, epsilon = 1e-9);
    }

    #[test]
    fn split_is_a_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 500;
        let pts: Vec<Point3> = (0..n).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen_range(0.0..20.0))).collect();
        let class = pts.iter().map(|p| if p.z < 3.0 { PointClass::Ground } else { PointClass::NonGround }).collect();
        let cloud = PointCloud::new(pts).with_class(class).unwrap();
        let s = elevation_threshold(&cloud, false).unwrap();
        assert_eq!(s.ground.len() + s.non_ground.len(), n);
        assert!(s.non_ground.points.iter().all(|p| p.z > s.threshold));
        assert!(s.ground.points.iter().all(|p| p.z <= s.threshold));
    }

    #[test]
    fn missing_ground_class_errors_unless_fallback() {
        let cloud = PointCloud::new((0..20).map(|i| Point3::new(i as f64, 0.0, i as f64)).collect());
        assert!(matches!(elevation_threshold(&cloud, false), Err(Error::NoGroundPoints)));
        // lowest decile: z in {0, 1}; mean 0.5, std 0.5 -> 3.0
        let s = elevation_threshold(&cloud, true).unwrap();
        assert_abs_diff_eq!(s.threshold, 3.0, epsilon = 1e-12);
        assert!(matches!(elevation_threshold(&PointCloud::default(), true), Err(Error::EmptyCloud)));
    }

    #[test]
    fn projection_bins_points() {
        let one = PointCloud::new(vec![Point3::new(5.0, 5.0, 9.0)]);
        let m = vertical_project(&one, 1.0).unwrap();
        assert_eq!(m.data.iter().filter(|&&v| v == 1).count(), 1);
        let two = PointCloud::new(vec![Point3::new(5.0, 5.0, 9.0), Point3::new(5.2, 4.9, 9.0)]);
        let m = vertical_project(&two, 1.0).unwrap();
        assert_eq!(m.data.iter().filter(|&&v| v == 1).count(), 1);
        assert!(matches!(vertical_project(&PointCloud::default(), 1.0), Err(Error::EmptyCloud)));
    }

    #[test]
    fn stratified_two_per_square_meter_fills_every_cell() {
        // grid-jittered sampling at spacing 1/sqrt(2) with jitter 0.3 * spacing
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = 1.0 / 2f64.sqrt();
        let n = (40.0 / s) as usize;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let jx = rng.gen_range(-0.15..0.15) * s;
                let jy = rng.gen_range(-0.15..0.15) * s;
                pts.push(Point3::new((i as f64 + 0.5) * s + jx, (j as f64 + 0.5) * s + jy, 10.0));
            }
        }
        assert_eq!(default_resolution(2.0), 1.0);
        assert_eq!(default_resolution(8.0), 0.5);
        let m = vertical_project(&PointCloud::new(pts), 1.0).unwrap();
        // interior: skip the outermost ring of cells
        let mut empty = 0;
        for r in 1..m.height - 1 {
            for c in 1..m.width - 1 {
                empty += usize::from(m.get(c, r, 0) == 0);
            }
        }
        assert_eq!(empty, 0);
    }

    #[test]
    fn small_regions_are_removed_by_area() {
        let m = labeled(30, 30, 1.0, &[(1, 1, 4, 4), (10, 10, 5, 5)]);
        let kept = remove_small_regions(&m, 20.0);
        assert_eq!(kept.count, 1);
        assert_eq!(kept.areas()[1], 25);
        let m2 = labeled(10, 10, 2.0, &[(2, 2, 3, 3)]);
        assert_eq!(remove_small_regions(&m2, 20.0).count, 1);
    }

    #[test]
    fn building_points_follow_footprints() {
        let mask = labeled(20, 20, 1.0, &[(5, 5, 10, 10)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.gen_range(4.6..14.4), -rng.gen_range(4.6..14.4), 12.0))
            .collect();
        pts.push(Point3::new(1.0, -1.0, 12.0));
        let regions = extract_building_points(&PointCloud::new(pts), &mask);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].points.len(), 50);
        assert_eq!(regions[0].footprint.len(), 100);
    }

    #[test]
    fn boundary_of_rectangle_is_closed_and_clockwise() {
        let mask = labeled(12, 12, 1.0, &[(2, 3, 5, 4)]);
        let b = trace_boundary(&mask, 1, (2, 3));
        assert_eq!(b.first(), b.last());
        // perimeter pixels of a 5x4 block
        assert_eq!(b.len() - 1, 14);
        let world: Vec<Vec2> = b.iter().map(|&(c, r)| [c as f64, -(r as f64)]).collect();
        let signed: f64 = world.windows(2).map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1]).sum();
        assert!(signed < 0.0, "expected clockwise, signed area {signed}");
    }

    #[test]
    fn boundary_of_single_pixel_and_diagonal_chain() {
        let mask = labeled(5, 5, 1.0, &[(2, 2, 1, 1)]);
        assert_eq!(trace_boundary(&mask, 1, (2, 2)), vec![(2, 2), (2, 2)]);
        let mut m = BinaryMask::new(6, 6, 1, GeoTransform::identity());
        for i in 0..4 {
            m.set(i + 1, i + 1, 0, 1);
        }
        let lm = raster::label_connected(&m);
        let b = trace_boundary(&lm, 1, (1, 1));
        assert_eq!(b.first(), b.last());
        for i in 0..4 {
            assert!(b.contains(&(i + 1, i + 1)));
        }
    }

    #[test]
    fn boundary_of_l_shape_visits_every_4_boundary_pixel() {
        let mask = labeled(20, 20, 1.0, &[(2, 2, 3, 10), (5, 9, 6, 3)]);
        let b = trace_boundary(&mask, 1, (2, 2));
        assert_eq!(b.first(), b.last());
        let r = &mask.raster;
        for row in 0..20i64 {
            for col in 0..20i64 {
                if r.get(col as usize, row as usize, 0) != 1 {
                    continue;
                }
                let edge = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                    !r.contains(col + dx, row + dy) || r.get((col + dx) as usize, (row + dy) as usize, 0) == 0
                });
                if edge {
                    assert!(b.contains(&(col as usize, row as usize)), "missing ({col},{row})");
                }
            }
        }
    }
}
