//! Stage orchestration and the JSON artifacts passed between stages.
//!
//! Each stage consumes the previous stage's artifact only, so running the
//! stages one at a time (through files) and running [`register`] produce the
//! same artifacts.

use serde::{Deserialize, Serialize};

use crate::config::{MatchMethod, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::{relative_shift, render_overlay, shift_gain, ControlPointPair, Metrics};
use crate::geometry::Vec2;
use crate::lidar::{extract_buildings, footprint_mbr};
use crate::matching::{area_direction_validate, gtm_filter_with, initial_match, ransac_filter, CenterSet};
use crate::model::{GeoRaster, GeoTransform, LabeledMask, Point3, PointCloud};
use crate::pose::{estimate_pose, Correspondence, PoseEstimate, MIN_CORRESPONDENCES};
use crate::segment::{segment_buildings, Segment2D};

pub use crate::synth::ControlPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub id: u32,
    /// Planimetric centroid of the region's points.
    pub center: Vec2,
    /// Mean roof elevation.
    pub z: f64,
    pub area_m2: f64,
    /// MBR long-axis direction in the world frame, `[0, pi)`.
    pub angle: f64,
    pub n_points: usize,
    pub boundary: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    pub threshold: f64,
    pub resolution: f64,
    pub regions: Vec<RegionRecord>,
}

impl RegionsFile {
    pub fn centers(&self) -> Result<CenterSet> {
        CenterSet::new(
            self.regions.iter().map(|r| r.id).collect(),
            self.regions.iter().map(|r| r.center).collect(),
            self.regions.iter().map(|r| r.area_m2).collect(),
            self.regions.iter().map(|r| r.angle).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentsFile {
    /// Georeference of the segmented image.
    pub geo: GeoTransform,
    pub raw_segments: u32,
    pub segments: Vec<Segment2D>,
}

impl SegmentsFile {
    pub fn centers(&self) -> Result<CenterSet> {
        CenterSet::new(
            self.segments.iter().map(|s| s.label).collect(),
            self.segments.iter().map(|s| s.centroid).collect(),
            self.segments.iter().map(|s| s.area_m2).collect(),
            self.segments.iter().map(|s| s.mbr_angle).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub lidar_id: u32,
    pub image_id: u32,
    /// Region centroid `(X, Y, mean roof Z)`.
    pub lidar_center: [f64; 3],
    /// Segment centroid in pixels.
    pub image_pixel: Vec2,
    /// Segment centroid in world coordinates.
    pub image_center: Vec2,
    pub inlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesFile {
    pub method: MatchMethod,
    /// Pre-translation applied to the LiDAR centers.
    pub translation: Vec2,
    pub initial_pairs: usize,
    pub filtered_inliers: usize,
    pub final_inliers: usize,
    pub pairs: Vec<MatchRecord>,
}

impl MatchesFile {
    /// Inlier pairs as 3D-2D correspondences.
    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.pairs
            .iter()
            .filter(|p| p.inlier)
            .map(|p| {
                let [x, y, z] = p.lidar_center;
                Correspondence::new(Point3::new(x, y, z), (p.image_pixel[0], p.image_pixel[1]))
            })
            .collect()
    }
}

/// LiDAR branch: building regions and their mask.
pub fn extract_lidar(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<(RegionsFile, LabeledMask)> {
    let ex = extract_buildings(cloud, &cfg.lidar)?;
    let geo = ex.mask.raster.geo;
    let regions = ex
        .regions
        .iter()
        .map(|r| {
            let c = r.centroid();
            RegionRecord {
                id: r.label,
                center: [c.x, c.y],
                z: c.z,
                area_m2: r.footprint.len() as f64 * geo.pixel_area(),
                angle: footprint_mbr(&r.footprint, &geo).angle,
                n_points: r.points.len(),
                boundary: r.boundary.clone(),
            }
        })
        .collect();
    let file = RegionsFile {
        threshold: ex.threshold,
        resolution: ex.resolution,
        regions,
    };
    Ok((file, ex.mask))
}

/// Image branch: building segments and their mask.
pub fn segment_image(image: &GeoRaster<u8>, cfg: &PipelineConfig) -> Result<(SegmentsFile, LabeledMask)> {
    let seg = segment_buildings(image, &cfg.image)?;
    log::info!("{} raw segments, {} kept", seg.raw_segments, seg.segments.len());
    let file = SegmentsFile {
        geo: image.geo,
        raw_segments: seg.raw_segments,
        segments: seg.segments,
    };
    Ok((file, seg.mask))
}

/// Initial matching, outlier filtering and area/direction validation.
pub fn match_centers(regions: &RegionsFile, segments: &SegmentsFile, cfg: &PipelineConfig) -> Result<MatchesFile> {
    let a = regions.centers()?;
    let b = segments.centers()?;
    let m = &cfg.matching;
    let initial = initial_match(&a, &b, m.pre_translation)?;
    log::info!(
        "{} initial pairs, pre-translation ({:.2}, {:.2})",
        initial.pairs.len(),
        initial.translation[0],
        initial.translation[1]
    );
    let shifted = a.translated(initial.translation);
    let filtered = match m.method {
        MatchMethod::Gtm => gtm_filter_with(&initial, &shifted, &b, &m.graph)?,
        MatchMethod::Ransac => ransac_filter(&initial, &shifted, &b, &m.ransac)?,
    };
    let validated = area_direction_validate(&filtered, &a, &b, m.area_ratio_tol, m.angle_tol);
    log::info!(
        "{} pairs after filtering, {} after validation",
        filtered.inlier_count(),
        validated.inlier_count()
    );
    let pairs = validated
        .pairs
        .iter()
        .map(|p| {
            let r = &regions.regions[p.a];
            let s = &segments.segments[p.b];
            MatchRecord {
                lidar_id: r.id,
                image_id: s.label,
                lidar_center: [r.center[0], r.center[1], r.z],
                image_pixel: s.centroid_px,
                image_center: s.centroid,
                inlier: p.inlier,
            }
        })
        .collect();
    Ok(MatchesFile {
        method: m.method,
        translation: initial.translation,
        initial_pairs: initial.pairs.len(),
        filtered_inliers: filtered.inlier_count(),
        final_inliers: validated.inlier_count(),
        pairs,
    })
}

/// Pose from the inlier matches. Fewer than six inliers is a degenerate
/// configuration.
pub fn estimate(matches: &MatchesFile, cfg: &PipelineConfig) -> Result<PoseEstimate> {
    let corr = matches.correspondences();
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(Error::DegenerateConfiguration(format!(
            "{} inlier matches, need at least {MIN_CORRESPONDENCES}",
            corr.len()
        )));
    }
    let est = estimate_pose(&corr, &cfg.pose)?;
    log::info!(
        "pose: rms {:.4} px after {} iterations (converged: {})",
        est.rms_reprojection,
        est.iterations,
        est.converged
    );
    Ok(est)
}

/// Control-point shift before (image georeference) and after (estimated
/// projection, back-projected onto each point's own elevation).
pub fn control_point_shifts(
    control: &[ControlPoint],
    image_geo: &GeoTransform,
    pose: &PoseEstimate,
) -> Result<(f64, f64)> {
    let mut before = Vec::with_capacity(control.len());
    let mut after = Vec::with_capacity(control.len());
    for cp in control {
        let p_lidar = [cp.world.x, cp.world.y];
        let (u, v) = cp.pixel;
        let (x, y) = image_geo.pixel_to_world(u, v);
        before.push(ControlPointPair { p_image: [x, y], p_lidar });
        let (x, y) = pose.p.backproject_to_plane(u, v, cp.world.z)?;
        after.push(ControlPointPair { p_image: [x, y], p_lidar });
    }
    Ok((relative_shift(&before)?, relative_shift(&after)?))
}

/// Every artifact of a full run.
#[derive(Debug, Clone)]
pub struct Registration {
    pub regions: RegionsFile,
    pub lidar_mask: LabeledMask,
    pub segments: SegmentsFile,
    pub image_mask: LabeledMask,
    pub matches: MatchesFile,
    pub pose: PoseEstimate,
    pub overlay: GeoRaster<u8>,
    pub metrics: Metrics,
}

/// The whole pipeline. Shift metrics are filled in when control points are
/// supplied.
pub fn register(
    cloud: &PointCloud,
    image: &GeoRaster<u8>,
    control: Option<&[ControlPoint]>,
    cfg: &PipelineConfig,
) -> Result<Registration> {
    let (regions, lidar_mask) = extract_lidar(cloud, cfg)?;
    let (segments, image_mask) = segment_image(image, cfg)?;
    let matches = match_centers(&regions, &segments, cfg)?;
    let pose = estimate(&matches, cfg)?;
    let overlay = render_overlay(image, cloud, &pose.p, cfg.overlay);
    let mut metrics = Metrics {
        lidar_regions: regions.regions.len(),
        image_segments: segments.segments.len(),
        initial_pairs: matches.initial_pairs,
        gtm_inliers: matches.filtered_inliers,
        final_inliers: matches.final_inliers,
        rms_reprojection_px: pose.rms_reprojection,
        ..Default::default()
    };
    if let Some(cps) = control.filter(|c| !c.is_empty()) {
        let (before, after) = control_point_shifts(cps, &image.geo, &pose)?;
        metrics.control_points = cps.len();
        metrics.shift_before_m = Some(before);
        metrics.shift_after_m = Some(after);
        // a shift below a nanometer is a zero shift, for which no gain exists
        metrics.gain_pct = if before < 1e-9 { None } else { shift_gain(before, after).ok() };
    }
    Ok(Registration {
        regions,
        lidar_mask,
        segments,
        image_mask,
        matches,
        pose,
        overlay,
        metrics,
    })
}
