//! Planar helpers: convex hull and minimal-area bounding rectangles.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec2 = [f64; 2];

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

/// Convex hull by monotone chain. Counter-clockwise (in a y-up frame),
/// without repeated or collinear vertices.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub corners: [Vec2; 4],
    /// Direction of the long side, in `[0, pi)`.
    pub angle: f64,
    pub length: f64,
    pub width: f64,
    pub area: f64,
}

impl Rect {
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        let e = sub(self.corners[1], self.corners[0]);
        let n = sub(self.corners[3], self.corners[0]);
        let d = sub(p, self.corners[0]);
        let (le, ln) = (dot(e, e).sqrt(), dot(n, n).sqrt());
        let s = if le > 0.0 { dot(d, e) / le } else { 0.0 };
        let t = if ln > 0.0 { dot(d, n) / ln } else { 0.0 };
        s >= -tol && s <= le + tol && t >= -tol && t <= ln + tol
    }
}

fn axis_angle(v: Vec2) -> f64 {
    let a = v[1].atan2(v[0]).rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Minimal-area enclosing rectangle of a point set by rotating calipers
/// over its convex hull. One side is collinear with a hull edge.
///
/// Degenerate inputs (a single point or collinear points) give a zero-area
/// rectangle.
pub fn min_area_rect(points: &[Vec2]) -> Rect {
    assert!(!points.is_empty(), "minimal bounding rectangle of an empty set");
    let hull = convex_hull(points);
    let n = hull.len();
    if n == 1 {
        let p = hull[0];
        return Rect {
            corners: [p; 4],
            angle: 0.0,
            length: 0.0,
            width: 0.0,
            area: 0.0,
        };
    }
    if n == 2 {
        let d = sub(hull[1], hull[0]);
        let len = dot(d, d).sqrt();
        return Rect {
            corners: [hull[0], hull[1], hull[1], hull[0]],
            angle: axis_angle(d),
            length: len,
            width: 0.0,
            area: 0.0,
        };
    }

    let proj = |i: usize, dir: Vec2, base: Vec2| dot(sub(hull[i % n], base), dir);

    let mut best: Option<(f64, Rect)> = None;
    // caliper indices: max along edge, min along edge, max along normal
    let (mut right, mut left, mut top) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let d = sub(b, a);
        let len = dot(d, d).sqrt();
        let e = [d[0] / len, d[1] / len];
        let nrm = [-e[1], e[0]];
        if i == 0 {
            right = (0..n).max_by(|&p, &q| proj(p, e, a).total_cmp(&proj(q, e, a))).unwrap();
            top = (0..n).max_by(|&p, &q| proj(p, nrm, a).total_cmp(&proj(q, nrm, a))).unwrap();
            left = (0..n).min_by(|&p, &q| proj(p, e, a).total_cmp(&proj(q, e, a))).unwrap();
        } else {
            while proj(right + 1, e, a) > proj(right, e, a) {
                right = (right + 1) % n;
            }
            while proj(top + 1, nrm, a) > proj(top, nrm, a) {
                top = (top + 1) % n;
            }
            while proj(left + 1, e, a) < proj(left, e, a) {
                left = (left + 1) % n;
            }
        }
        let s_max = proj(right, e, a);
        let s_min = proj(left, e, a);
        let t_max = proj(top, nrm, a);
        let area = (s_max - s_min) * t_max;
        if best.as_ref().map_or(true, |(b, _)| area < *b) {
            let at = |s: f64, t: f64| [a[0] + e[0] * s + nrm[0] * t, a[1] + e[1] * s + nrm[1] * t];
            let along = s_max - s_min;
            let (angle, length, width) = if along >= t_max {
                (axis_angle(e), along, t_max)
            } else {
                (axis_angle(nrm), t_max, along)
            };
            best = Some((
                area,
                Rect {
                    corners: [at(s_min, 0.0), at(s_max, 0.0), at(s_max, t_max), at(s_min, t_max)],
                    angle,
                    length,
                    width,
                    area,
                },
            ));
        }
    }
    best.expect("non-empty hull").1
}

/// Corners of every unit pixel square in `pixels` (`(col, row)`), which is
/// the point set whose hull bounds the pixels' area.
pub fn pixel_corners(pixels: &[(usize, usize)]) -> Vec<Vec2> {
    let mut pts = Vec::with_capacity(pixels.len() * 4);
    for &(c, r) in pixels {
        let (x, y) = (c as f64, r as f64);
        pts.push([x - 0.5, y - 0.5]);
        pts.push([x + 0.5, y - 0.5]);
        pts.push([x + 0.5, y + 0.5]);
        pts.push([x - 0.5, y + 0.5]);
    }
    pts
}

/// Minimal bounding rectangle of a pixel set, in pixel units. Each pixel is
/// a unit square centered on `(col, row)`, so a single pixel yields a 1x1
/// rectangle. Only boundary pixels can contribute hull vertices, so interior
/// pixels are skipped.
pub fn minimal_bounding_rectangle(pixels: &[(usize, usize)]) -> Rect {
    assert!(!pixels.is_empty(), "minimal bounding rectangle of an empty pixel set");
    // per row, only the extreme columns matter for the hull
    let mut rows: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for &(c, r) in pixels {
        let e = rows.entry(r).or_insert((c, c));
        e.0 = e.0.min(c);
        e.1 = e.1.max(c);
    }
    let extremes: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|(&r, &(c0, c1))| [(c0, r), (c1, r)])
        .collect();
    min_area_rect(&pixel_corners(&extremes))
}

/// `area / mbr_area * 100`.
pub fn filling_percentage(area: f64, mbr_area: f64) -> f64 {
    assert!(mbr_area > 0.0, "MBR area must be positive");
    area / mbr_area * 100.0
}
