//! Pipeline configuration: a flat `key = value` text file.
//!
//! Blank lines and everything after `#` are ignored. Keys are dotted
//! (`lidar.se_size`, `matching.k`, ...); unknown keys are an error so typos
//! do not silently fall back to defaults. See [`KEYS`] for the full list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ColorBy;
use crate::lidar::LidarParams;
use crate::matching::{GraphRule, MedianOf, Model2D, PreTranslation, RansacParams, Symmetrize};
use crate::pose::GoldStandardParams;
use crate::segment::{ImageParams, MeanShiftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Gtm,
    Ransac,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub method: MatchMethod,
    pub graph: GraphRule,
    pub ransac: RansacParams,
    pub area_ratio_tol: f64,
    /// Radians.
    pub angle_tol: f64,
    pub pre_translation: PreTranslation,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            method: MatchMethod::Gtm,
            graph: GraphRule::default(),
            ransac: RansacParams::default(),
            area_ratio_tol: 2.0,
            angle_tol: 20f64.to_radians(),
            pre_translation: PreTranslation::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    #[serde(skip)]
    pub lidar: LidarParams,
    #[serde(skip)]
    pub image: ImageParams,
    pub matching: MatchParams,
    pub pose: GoldStandardParams,
    pub overlay: ColorBy,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lidar: LidarParams::default(),
            image: ImageParams::default(),
            matching: MatchParams::default(),
            pose: GoldStandardParams::default(),
            overlay: ColorBy::Elevation,
            seed: 0,
            out: None,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "global seed; also seeds RANSAC"),
    ("out", "output directory"),
    ("lidar.se_size", "odd structuring element size >= 3"),
    ("lidar.min_area", "minimum region area, m^2"),
    ("lidar.resolution", "mask cell size in m, or auto"),
    ("lidar.ground_fallback", "use the lowest decile when no ground class (true/false)"),
    ("image.range_bandwidth", "mean shift color bandwidth, L*a*b* units"),
    ("image.spatial_bandwidth", "mean shift spatial bandwidth in px, or none"),
    ("image.max_iterations", "mean shift iterations per pixel"),
    ("image.convergence_tol", "mean shift step tolerance, color units"),
    ("image.merge_distance", "mode merge radius in color units, or auto"),
    ("image.use_l", "include L* in the feature (true/false)"),
    ("image.min_px", "minimum segment size, px"),
    ("image.max_px", "maximum segment size, px"),
    ("image.filling_threshold", "minimum MBR filling, percent (exclusive)"),
    ("matching.method", "gtm or ransac"),
    ("matching.k", "neighbours in the median K-NN graph"),
    ("matching.median_of", "all_pairs or knn"),
    ("matching.symmetrize", "union or mutual"),
    ("matching.ransac_model", "similarity or affine"),
    ("matching.ransac_tol", "RANSAC inlier tolerance, m"),
    ("matching.ransac_iterations", "RANSAC iterations"),
    ("matching.area_ratio_tol", "maximum area ratio of a pair"),
    ("matching.angle_tol_deg", "maximum MBR direction difference, degrees"),
    ("matching.pre_translation", "auto, none, largest, or dx,dy in m"),
    ("pose.max_iterations", "Gold Standard iteration cap"),
    ("pose.rel_tol", "relative error change that ends refinement"),
    ("pose.abs_tol", "rms in px below which the fit counts as exact"),
    ("overlay.color_by", "elevation or intensity"),
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?} as a number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_opt(key: &str, v: &str, none: &str) -> Result<Option<f64>> {
    if v == none {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, v) = (key.trim(), value.trim());
        let ms: &mut MeanShiftConfig = &mut self.image.mean_shift;
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.matching.ransac.seed = self.seed;
            }
            "out" => self.out = Some(PathBuf::from(v)),
            "lidar.se_size" => self.lidar.se_size = parse_num(key, v)?,
            "lidar.min_area" => self.lidar.min_area = parse_num(key, v)?,
            "lidar.resolution" => self.lidar.resolution = parse_opt(key, v, "auto")?,
            "lidar.ground_fallback" => self.lidar.ground_fallback = parse_bool(key, v)?,
            "image.range_bandwidth" => ms.range_bandwidth = parse_num(key, v)?,
            "image.spatial_bandwidth" => ms.spatial_bandwidth = parse_opt(key, v, "none")?,
            "image.max_iterations" => ms.max_iterations = parse_num(key, v)?,
            "image.convergence_tol" => ms.convergence_tol = parse_num(key, v)?,
            "image.merge_distance" => ms.merge_distance = parse_opt(key, v, "auto")?,
            "image.use_l" => self.image.use_l = parse_bool(key, v)?,
            "image.min_px" => self.image.min_px = parse_num(key, v)?,
            "image.max_px" => self.image.max_px = parse_num(key, v)?,
            "image.filling_threshold" => self.image.filling_threshold = parse_num(key, v)?,
            "matching.method" => {
                self.matching.method = match v {
                    "gtm" => MatchMethod::Gtm,
                    "ransac" => MatchMethod::Ransac,
                    _ => return Err(Error::Config(format!("{key}: expected gtm or ransac, got {v:?}"))),
                }
            }
            "matching.k" => self.matching.graph.k = parse_num(key, v)?,
            "matching.median_of" => {
                self.matching.graph.median_of = match v {
                    "all_pairs" => MedianOf::AllPairs,
                    "knn" => MedianOf::KnnDistances,
                    _ => return Err(Error::Config(format!("{key}: expected all_pairs or knn, got {v:?}"))),
                }
            }
            "matching.symmetrize" => {
                self.matching.graph.symmetrize = match v {
                    "union" => Symmetrize::Union,
                    "mutual" => Symmetrize::Mutual,
                    _ => return Err(Error::Config(format!("{key}: expected union or mutual, got {v:?}"))),
                }
            }
            "matching.ransac_model" => {
                self.matching.ransac.model = match v {
                    "similarity" => Model2D::Similarity,
                    "affine" => Model2D::Affine,
                    _ => return Err(Error::Config(format!("{key}: expected similarity or affine, got {v:?}"))),
                }
            }
            "matching.ransac_tol" => self.matching.ransac.inlier_tol = parse_num(key, v)?,
            "matching.ransac_iterations" => self.matching.ransac.iterations = parse_num(key, v)?,
            "matching.area_ratio_tol" => self.matching.area_ratio_tol = parse_num(key, v)?,
            "matching.angle_tol_deg" => self.matching.angle_tol = parse_num::<f64>(key, v)?.to_radians(),
            "matching.pre_translation" => {
                self.matching.pre_translation = match v {
                    "auto" => PreTranslation::Auto,
                    "none" => PreTranslation::None,
                    "largest" => PreTranslation::Largest,
                    _ => {
                        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                        if parts.len() != 2 {
                            return Err(Error::Config(format!(
                                "{key}: expected auto, none, largest or dx,dy, got {v:?}"
                            )));
                        }
                        PreTranslation::Given([parse_num(key, parts[0])?, parse_num(key, parts[1])?])
                    }
                }
            }
            "pose.max_iterations" => self.pose.max_iterations = parse_num(key, v)?,
            "pose.rel_tol" => self.pose.rel_tol = parse_num(key, v)?,
            "pose.abs_tol" => self.pose.abs_tol = parse_num(key, v)?,
            "overlay.color_by" => {
                self.overlay = match v {
                    "elevation" => ColorBy::Elevation,
                    "intensity" => ColorBy::Intensity,
                    _ => return Err(Error::Config(format!("{key}: expected elevation or intensity, got {v:?}"))),
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("configuration error: "))))?;
        }
        Ok(())
    }

    /// Parses and validates a configuration file; errors name the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let in_file = |e: Error| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("configuration error: ")));
        let cfg = Self::parse(&text).map_err(in_file)?;
        cfg.validate().map_err(in_file)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let l = &self.lidar;
        if l.se_size < 3 || l.se_size % 2 == 0 {
            return bad(format!("lidar.se_size must be odd and >= 3, got {}", l.se_size));
        }
        if !(l.min_area >= 0.0) {
            return bad("lidar.min_area must be >= 0".into());
        }
        if let Some(r) = l.resolution {
            if !(r > 0.0 && r.is_finite()) {
                return bad("lidar.resolution must be positive".into());
            }
        }
        self.image
            .mean_shift
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.image.min_px > self.image.max_px {
            return bad("image.min_px exceeds image.max_px".into());
        }
        if !(0.0..=100.0).contains(&self.image.filling_threshold) {
            return bad("image.filling_threshold must lie in [0, 100]".into());
        }
        let m = &self.matching;
        if m.graph.k == 0 {
            return bad("matching.k must be positive".into());
        }
        if !(m.ransac.inlier_tol > 0.0) || m.ransac.iterations == 0 {
            return bad("matching.ransac_tol and ransac_iterations must be positive".into());
        }
        if !(m.area_ratio_tol >= 1.0) {
            return bad("matching.area_ratio_tol must be >= 1".into());
        }
        if !(m.angle_tol >= 0.0) {
            return bad("matching.angle_tol_deg must be >= 0".into());
        }
        if self.pose.max_iterations == 0 || !(self.pose.rel_tol > 0.0) || !(self.pose.abs_tol >= 0.0) {
            return bad("pose tolerances must be positive".into());
        }
        Ok(())
    }
}
