//! Correspondence between LiDAR building regions and image segments.
//!
//! Every filter here takes a [`MatchSet`] and only clears `inlier` flags,
//! so the one-to-one pairing set up by [`initial_match`] is never rewired.

mod gtm;
mod initial;
mod ransac;
mod validate;

pub use gtm::{gtm_filter, gtm_filter_with, median_knn_graph, median_knn_graph_with, GraphRule, MedianKnnGraph, MedianOf, Symmetrize};
pub use initial::{initial_match, PreTranslation};
pub use ransac::{ransac_filter, Model2D, RansacParams, Transform2D};
pub use validate::{angle_difference_mod_pi, area_direction_validate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Planimetric centers with the attributes used for validation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CenterSet {
    pub ids: Vec<u32>,
    pub centers: Vec<Vec2>,
    /// Square meters.
    pub areas: Vec<f64>,
    /// MBR long-axis direction, radians.
    pub angles: Vec<f64>,
}

impl CenterSet {
    pub fn new(ids: Vec<u32>, centers: Vec<Vec2>, areas: Vec<f64>, angles: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if centers.len() != n || areas.len() != n || angles.len() != n {
            return Err(Error::InvalidArgument("center set columns differ in length".into()));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate center ids".into()));
        }
        if centers.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::InvalidArgument("non-finite center".into()));
        }
        Ok(Self {
            ids,
            centers,
            areas,
            angles,
        })
    }

    /// Centers only; areas and angles are zero.
    pub fn from_points(centers: Vec<Vec2>) -> Self {
        let n = centers.len();
        Self {
            ids: (0..n as u32).collect(),
            centers,
            areas: vec![0.0; n],
            angles: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn translated(&self, t: Vec2) -> Self {
        let mut out = self.clone();
        for c in out.centers.iter_mut() {
            c[0] += t[0];
            c[1] += t[1];
        }
        out
    }
}

/// One correspondence, as indices into the two center sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub a: usize,
    pub b: usize,
    pub inlier: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    /// Translation applied to `a` before nearest-neighbour matching.
    pub translation: Vec2,
}

impl MatchSet {
    pub fn inliers(&self) -> impl Iterator<Item = &MatchPair> {
        self.pairs.iter().filter(|p| p.inlier)
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers().count()
    }

    /// Indices (into `pairs`) of the current inliers.
    pub fn inlier_indices(&self) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.pairs[i].inlier).collect()
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut a: Vec<usize> = self.pairs.iter().map(|p| p.a).collect();
        let mut b: Vec<usize> = self.pairs.iter().map(|p| p.b).collect();
        a.sort_unstable();
        b.sort_unstable();
        a.windows(2).all(|w| w[0] != w[1]) && b.windows(2).all(|w| w[0] != w[1])
    }

    /// Copy with the pairs at `rejected` flagged as outliers.
    pub(crate) fn rejecting(&self, rejected: impl IntoIterator<Item = usize>) -> MatchSet {
        let mut out = self.clone();
        for i in rejected {
            out.pairs[i].inlier = false;
        }
        out
    }
}

pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
