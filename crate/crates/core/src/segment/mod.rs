//! Building segmentation of optical imagery.

pub mod color;
pub mod meanshift;
pub mod pansharpen;
pub mod refine;

pub use color::{rgb_to_lab, srgb_to_lab, LabImage};
pub use meanshift::{mean_shift_modes, mean_shift_segment, MeanShift, MeanShiftConfig, ModeField};
pub use pansharpen::{brovey, pansharpen};
pub use refine::{describe_segments, filling_filter, size_filter, Segment2D};

use crate::error::{Error, Result};
use crate::model::{GeoRaster, LabeledMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageParams {
    pub mean_shift: MeanShiftConfig,
    pub use_l: bool,
    pub min_px: usize,
    pub max_px: usize,
    /// Minimum MBR filling in percent (exclusive).
    pub filling_threshold: f64,
}

impl Default for ImageParams {
    fn default() -> Self {
        Self {
            mean_shift: MeanShiftConfig::default(),
            use_l: true,
            min_px: 50,
            max_px: 5000,
            filling_threshold: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageSegmentation {
    /// Segments surviving both filters, relabeled `1..=n` in the order of
    /// `segments`.
    pub mask: LabeledMask,
    pub segments: Vec<Segment2D>,
    /// Segment count straight out of mean shift.
    pub raw_segments: u32,
}

/// Mean shift, size filter, then MBR filling filter.
pub fn segment_buildings(rgb: &GeoRaster<u8>, params: &ImageParams) -> Result<ImageSegmentation> {
    if params.min_px > params.max_px {
        return Err(Error::InvalidArgument(format!(
            "min_px {} exceeds max_px {}",
            params.min_px, params.max_px
        )));
    }
    let lab = rgb_to_lab(rgb, params.use_l)?;
    let raw = mean_shift_segment(&lab, &params.mean_shift)?;
    let sized = size_filter(&raw, params.min_px, params.max_px);
    let described = describe_segments(&sized);
    let kept = filling_filter(described, params.filling_threshold);
    let mut keep = vec![false; sized.count as usize + 1];
    for s in &kept {
        keep[s.label as usize] = true;
    }
    let mask = sized.retain(|l| keep[l as usize]);
    // labels were renumbered in order, so re-derive them from the new mask
    let segments = describe_segments(&mask);
    log::info!(
        "mean shift: {} segments, {} after size filter, {} after filling filter",
        raw.count,
        sized.count,
        segments.len()
    );
    Ok(ImageSegmentation {
        mask,
        segments,
        raw_segments: raw.count,
    })
}
