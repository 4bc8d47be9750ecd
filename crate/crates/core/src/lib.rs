//! Building-based coarse registration of airborne LiDAR point clouds to
//! optical aerial or satellite imagery.
//!
//! Buildings are extracted independently from both data sets (elevation
//! thresholding and morphology on the LiDAR side, mean shift segmentation
//! and shape filtering on the image side), their centers are matched with
//! Graph Transformation Matching, and the matched centers drive a Gold
//! Standard estimate of the camera projection and exterior orientation.
//!
//! Module map:
//!
//! - [`model`]: points, rasters, camera pose and projection.
//! - [`raster`]: diamond morphology and connected-component labeling.
//! - [`geometry`]: convex hull and rotating-calipers bounding rectangles.
//! - [`lidar`]: building regions from a classified point cloud.
//! - [`segment`]: L*a*b* conversion, pansharpening, mean shift and segment
//!   refinement.
//! - [`matching`]: initial center matching, GTM, RANSAC and validation.
//! - [`pose`]: DLT, Gold Standard refinement and decomposition.
//! - [`eval`]: precision/recall, relative shift and overlays.
//! - [`synth`]: synthetic scenes with ground truth.
//! - [`io`], [`config`], [`pipeline`]: file formats and stage orchestration.

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod lidar;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod segment;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use model::{
    compose_projection, project_point, rotation_from_opk, CameraPose, GeoRaster, GeoTransform,
    LabeledMask, Point3, PointClass, PointCloud, ProjectionMatrix,
};
