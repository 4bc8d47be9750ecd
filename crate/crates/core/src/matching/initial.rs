use serde::{Deserialize, Serialize};

use super::{dist, CenterSet, MatchPair, MatchSet};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// How to pre-align the two center sets before nearest-neighbour matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PreTranslation {
    None,
    /// Choose between no shift and the displacements between the few
    /// largest segments of each set, keeping the candidate whose mutual
    /// pairs lie closest together (median distance). No shift is excluded
    /// when plain matching pairs fewer than half of the smaller set.
    Auto,
    /// Always use the largest-segment displacement.
    Largest,
    Given(Vec2),
}

/// Number of largest segments per set whose displacements `Auto` tries.
pub const AUTO_CANDIDATES: usize = 3;

/// Indices by decreasing area; equal areas keep index order.
fn by_area(set: &CenterSet) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&i, &j| set.areas[j].total_cmp(&set.areas[i]));
    idx
}

fn displacement(a: &CenterSet, ia: usize, b: &CenterSet, ib: usize) -> Vec2 {
    [b.centers[ib][0] - a.centers[ia][0], b.centers[ib][1] - a.centers[ia][1]]
}

/// Displacement from the largest segment of `a` to the largest of `b`.
pub fn largest_segment_translation(a: &CenterSet, b: &CenterSet) -> Vec2 {
    displacement(a, by_area(a)[0], b, by_area(b)[0])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn nearest(from: Vec2, to: &[Vec2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in to.iter().enumerate() {
        let d = dist(from, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn mutual_nearest(a: &[Vec2], b: &[Vec2]) -> Vec<MatchPair> {
    let b_to_a: Vec<usize> = b.iter().map(|&c| nearest(c, a)).collect();
    a.iter()
        .enumerate()
        .filter_map(|(i, &c)| {
            let j = nearest(c, b);
            (b_to_a[j] == i).then_some(MatchPair {
                a: i,
                b: j,
                inlier: true,
            })
        })
        .collect()
}

/// One-to-one mutual nearest-neighbour matching of `a` (shifted by the
/// chosen pre-translation) against `b`.
pub fn initial_match(a: &CenterSet, b: &CenterSet, mode: PreTranslation) -> Result<MatchSet> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("initial matching needs two non-empty center sets".into()));
    }
    let run = |t: Vec2| MatchSet {
        pairs: mutual_nearest(&a.translated(t).centers, &b.centers),
        translation: t,
    };
    let result = match mode {
        PreTranslation::None => run([0.0, 0.0]),
        PreTranslation::Given(t) => run(t),
        PreTranslation::Largest => run(largest_segment_translation(a, b)),
        PreTranslation::Auto => {
            let enough = |m: &MatchSet| m.pairs.len() as f64 >= 0.5 * a.len().min(b.len()) as f64;
            let spread = |m: &MatchSet| {
                let shifted = a.translated(m.translation);
                median(m.pairs.iter().map(|p| dist(shifted.centers[p.a], b.centers[p.b])).collect())
            };
            let plain = run([0.0, 0.0]);
            // lower spread wins, then more pairs, then the earlier candidate
            let better = |s: f64, m: &MatchSet, best: &Option<(f64, MatchSet)>| {
                best.as_ref()
                    .map_or(true, |(bs, bm)| s < *bs || (s == *bs && m.pairs.len() > bm.pairs.len()))
            };
            let mut best: Option<(f64, MatchSet)> = None;
            if enough(&plain) {
                best = Some((spread(&plain), plain));
            } else {
                log::info!("few plain matches ({}), applying a segment shift", plain.pairs.len());
            }
            let (ra, rb) = (by_area(a), by_area(b));
            for &ia in ra.iter().take(AUTO_CANDIDATES) {
                for &ib in rb.iter().take(AUTO_CANDIDATES) {
                    let m = run(displacement(a, ia, b, ib));
                    if !enough(&m) {
                        continue;
                    }
                    let s = spread(&m);
                    if better(s, &m, &best) {
                        best = Some((s, m));
                    }
                }
            }
            match best {
                Some((_, m)) => m,
                None => run(largest_segment_translation(a, b)),
            }
        }
    };
    if result.pairs.is_empty() {
        return Err(Error::NoMutualPairs);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> CenterSet {
        let centers: Vec<Vec2> = (0..12).map(|i| [(i % 4) as f64 * 60.0, (i / 4) as f64 * 55.0]).collect();
        let areas = (0..12).map(|i| 100.0 + i as f64 * 10.0).collect();
        CenterSet::new((0..12).collect(), centers, areas, vec![0.0; 12]).unwrap()
    }

    fn identity_pairs(m: &MatchSet) -> bool {
        m.pairs.iter().all(|p| p.a == p.b)
    }

    #[test]
    fn identical_sets_match_identically() {
        let a = grid();
        let m = initial_match(&a, &a, PreTranslation::Auto).unwrap();
        assert_eq!(m.pairs.len(), 12);
        assert!(identity_pairs(&m));
        assert_eq!(m.translation, [0.0, 0.0]);
    }

    #[test]
    fn large_shift_recovered_from_largest_segment() {
        let a = grid();
        let b = a.translated([40.0, 0.0]);
        let m = initial_match(&a, &b, PreTranslation::Largest).unwrap();
        assert!((m.translation[0] - 40.0).abs() < 1e-12 && m.translation[1].abs() < 1e-12);
        assert_eq!(m.pairs.len(), 12);
        assert!(identity_pairs(&m));
        // without the shift most nearest neighbours are wrong
        let plain = initial_match(&a, &b, PreTranslation::None).unwrap();
        assert!(!identity_pairs(&plain));
    }

    fn scattered() -> CenterSet {
        let centers: Vec<Vec2> = (0..12)
            .map(|i| {
                let f = i as f64;
                [(f * 37.0) % 230.0 + (f * f) % 7.0, (f * 53.0) % 170.0 + (f * 3.0) % 11.0]
            })
            .collect();
        let areas = (0..12).map(|i| 100.0 + i as f64 * 10.0).collect();
        CenterSet::new((0..12).collect(), centers, areas, vec![0.0; 12]).unwrap()
    }

    #[test]
    fn auto_survives_near_equal_largest_areas() {
        let a = scattered();
        let mut b = a.translated([40.0, -25.0]);
        // the second largest of b is marginally the largest
        b.areas[10] = a.areas[11] + 1.0;
        assert!(!identity_pairs(&initial_match(&a, &b, PreTranslation::Largest).unwrap()));
        let m = initial_match(&a, &b, PreTranslation::Auto).unwrap();
        assert!((m.translation[0] - 40.0).abs() < 1e-12 && (m.translation[1] + 25.0).abs() < 1e-12);
        assert!(identity_pairs(&m));
    }

    #[test]
    fn auto_keeps_small_shift_unshifted_when_segments_disagree() {
        let a = grid();
        let b = a.translated([1.0, 0.5]);
        let m = initial_match(&a, &b, PreTranslation::Auto).unwrap();
        assert_eq!(m.pairs.len(), 12);
        assert!(identity_pairs(&m));
    }

    #[test]
    fn extra_center_stays_unmatched() {
        let b = grid();
        let mut a = grid();
        a.ids.push(99);
        a.centers.push([500.0, 500.0]);
        a.areas.push(1.0);
        a.angles.push(0.0);
        let m = initial_match(&a, &b, PreTranslation::None).unwrap();
        assert_eq!(m.pairs.len(), 12);
        assert!(m.pairs.iter().all(|p| p.a != 12));
        assert!(m.is_one_to_one());
    }
}
