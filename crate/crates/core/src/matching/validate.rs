use std::f64::consts::PI;

use super::{CenterSet, MatchSet};

/// Distance between two undirected axis directions, in `[0, pi/2]`.
pub fn angle_difference_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Rejects pairs whose areas differ by more than `area_ratio_tol` (as a
/// max/min ratio) or whose MBR axes differ by more than `angle_tol`.
pub fn area_direction_validate(
    matches: &MatchSet,
    a: &CenterSet,
    b: &CenterSet,
    area_ratio_tol: f64,
    angle_tol: f64,
) -> MatchSet {
    let rejected: Vec<usize> = matches
        .inlier_indices()
        .into_iter()
        .filter(|&i| {
            let p = matches.pairs[i];
            let (sa, sb) = (a.areas[p.a], b.areas[p.b]);
            let ratio = sa.max(sb) / sa.min(sb);
            let ok_area = ratio.is_finite() && ratio <= area_ratio_tol;
            let ok_angle = angle_difference_mod_pi(a.angles[p.a], b.angles[p.b]) <= angle_tol;
            !(ok_area && ok_angle)
        })
        .collect();
    matches.rejecting(rejected)
}
