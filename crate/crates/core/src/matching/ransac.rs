use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist, CenterSet, MatchSet};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model2D {
    Similarity,
    Affine,
}

impl Model2D {
    pub fn min_samples(self) -> usize {
        match self {
            Model2D::Similarity => 2,
            Model2D::Affine => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub model: Model2D,
    /// Meters.
    pub inlier_tol: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            model: Model2D::Similarity,
            inlier_tol: 3.0,
            iterations: 1000,
            seed: 0,
        }
    }
}

/// `p -> A p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2D {
    pub a: [[f64; 2]; 2],
    pub t: Vec2,
}

impl Transform2D {
    pub fn apply(&self, p: Vec2) -> Vec2 {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.t[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.t[1],
        ]
    }

    /// Least-squares fit; `None` when the points are degenerate.
    pub fn fit(model: Model2D, src: &[Vec2], dst: &[Vec2]) -> Option<Self> {
        let n = src.len();
        if n < model.min_samples() {
            return None;
        }
        match model {
            Model2D::Similarity => {
                // b = alpha * a + beta over complex numbers
                let mean = |p: &[Vec2]| {
                    let s = p.iter().fold([0.0, 0.0], |s, q| [s[0] + q[0], s[1] + q[1]]);
                    [s[0] / n as f64, s[1] / n as f64]
                };
                let (ma, mb) = (mean(src), mean(dst));
                let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
                for (p, q) in src.iter().zip(dst) {
                    let (ax, ay) = (p[0] - ma[0], p[1] - ma[1]);
                    let (bx, by) = (q[0] - mb[0], q[1] - mb[1]);
                    re += bx * ax + by * ay;
                    im += by * ax - bx * ay;
                    norm += ax * ax + ay * ay;
                }
                if norm <= 1e-12 {
                    return None;
                }
                let (c, s) = (re / norm, im / norm);
                let a = [[c, -s], [s, c]];
                let t = [mb[0] - (c * ma[0] - s * ma[1]), mb[1] - (s * ma[0] + c * ma[1])];
                Some(Self { a, t })
            }
            Model2D::Affine => {
                let mut m = DMatrix::<f64>::zeros(n, 3);
                let mut bx = DVector::<f64>::zeros(n);
                let mut by = DVector::<f64>::zeros(n);
                for i in 0..n {
                    m[(i, 0)] = src[i][0];
                    m[(i, 1)] = src[i][1];
                    m[(i, 2)] = 1.0;
                    bx[i] = dst[i][0];
                    by[i] = dst[i][1];
                }
                let svd = m.svd(true, true);
                let sv = &svd.singular_values;
                if sv.min() <= 1e-9 * sv.max().max(1.0) {
                    return None;
                }
                let x = svd.solve(&bx, 1e-12).ok()?;
                let y = svd.solve(&by, 1e-12).ok()?;
                Some(Self {
                    a: [[x[0], x[1]], [y[0], y[1]]],
                    t: [x[2], y[2]],
                })
            }
        }
    }
}

struct Candidate {
    iteration: usize,
    count: usize,
    residual: f64,
}

/// RANSAC over 2D similarity or affine transforms mapping `a` centers onto
/// `b` centers. Each iteration draws from its own ChaCha stream derived from
/// the seed, so the outcome is independent of thread scheduling.
pub fn ransac_filter(matches: &MatchSet, a: &CenterSet, b: &CenterSet, params: &RansacParams) -> Result<MatchSet> {
    let idx = matches.inlier_indices();
    let need = params.model.min_samples();
    if idx.len() < need.max(3) {
        return Err(Error::TooFewPoints {
            needed: need.max(3),
            got: idx.len(),
        });
    }
    let src: Vec<Vec2> = idx.iter().map(|&i| a.centers[matches.pairs[i].a]).collect();
    let dst: Vec<Vec2> = idx.iter().map(|&i| b.centers[matches.pairs[i].b]).collect();
    let score = |t: &Transform2D| {
        let mut count = 0;
        let mut residual = 0.0;
        for (p, q) in src.iter().zip(&dst) {
            let r = dist(t.apply(*p), *q);
            if r <= params.inlier_tol {
                count += 1;
                residual += r;
            }
        }
        (count, residual)
    };
    let candidates: Vec<Candidate> = (0..params.iterations)
        .into_par_iter()
        .filter_map(|iteration| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(iteration as u64);
            let pick = sample(&mut rng, src.len(), need);
            let s: Vec<Vec2> = pick.iter().map(|i| src[i]).collect();
            let d: Vec<Vec2> = pick.iter().map(|i| dst[i]).collect();
            let t = Transform2D::fit(params.model, &s, &d)?;
            let (count, residual) = score(&t);
            Some(Candidate {
                iteration,
                count,
                residual,
            })
        })
        .collect();
    let best = candidates
        .iter()
        .min_by(|x, y| {
            y.count
                .cmp(&x.count)
                .then(x.residual.total_cmp(&y.residual))
                .then(x.iteration.cmp(&y.iteration))
        })
        .ok_or(Error::NoConsensus)?;
    if best.count <= need {
        return Err(Error::NoConsensus);
    }
    // recover the winning model, then refit on its inliers
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(best.iteration as u64);
    let pick = sample(&mut rng, src.len(), need);
    let s: Vec<Vec2> = pick.iter().map(|i| src[i]).collect();
    let d: Vec<Vec2> = pick.iter().map(|i| dst[i]).collect();
    let model = Transform2D::fit(params.model, &s, &d).ok_or(Error::NoConsensus)?;
    let inlier = |t: &Transform2D, k: usize| dist(t.apply(src[k]), dst[k]) <= params.inlier_tol;
    let support: Vec<usize> = (0..src.len()).filter(|&k| inlier(&model, k)).collect();
    let s: Vec<Vec2> = support.iter().map(|&k| src[k]).collect();
    let d: Vec<Vec2> = support.iter().map(|&k| dst[k]).collect();
    let refined = Transform2D::fit(params.model, &s, &d).unwrap_or(model);
    let final_model = if (0..src.len()).filter(|&k| inlier(&refined, k)).count() >= support.len() {
        refined
    } else {
        model
    };
    let rejected: Vec<usize> = (0..src.len()).filter(|&k| !inlier(&final_model, k)).map(|k| idx[k]).collect();
    Ok(matches.rejecting(rejected))
}
