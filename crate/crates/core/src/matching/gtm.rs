use serde::{Deserialize, Serialize};

use super::{dist, CenterSet, MatchSet};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Which distances the edge threshold is the median of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MedianOf {
    /// All pairwise distances between vertices.
    AllPairs,
    /// Only the K-NN distances.
    KnnDistances,
}

/// How directed K-NN edges become an undirected graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetrize {
    /// Edge if either endpoint lists the other.
    Union,
    /// Edge only if both endpoints list each other.
    Mutual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRule {
    pub k: usize,
    pub median_of: MedianOf,
    pub symmetrize: Symmetrize,
}

impl GraphRule {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }
}

impl Default for GraphRule {
    fn default() -> Self {
        Self {
            k: 4,
            median_of: MedianOf::AllPairs,
            symmetrize: Symmetrize::Union,
        }
    }
}

/// Median K-nearest-neighbour graph over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianKnnGraph {
    pub k: usize,
    pub n: usize,
    /// Row-major `n x n`, symmetric.
    pub adjacency: Vec<bool>,
    /// Edge length threshold.
    pub median: f64,
}

impl MedianKnnGraph {
    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i * self.n..(i + 1) * self.n].iter().filter(|&&e| e).count()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// [`median_knn_graph_with`] under the default rule with the given `k`.
pub fn median_knn_graph(points: &[Vec2], k: usize) -> Result<MedianKnnGraph> {
    median_knn_graph_with(points, &GraphRule::with_k(k))
}

/// Builds the median K-NN graph. A directed edge `i -> j` exists when `j`
/// is among the `k` nearest neighbours of `i` (ties to the lower index)
/// and `d(i, j)` does not exceed the median distance; the undirected graph
/// is then formed as set by `rule.symmetrize`.
pub fn median_knn_graph_with(points: &[Vec2], rule: &GraphRule) -> Result<MedianKnnGraph> {
    let n = points.len();
    let k = rule.k;
    if k == 0 || n <= k {
        return Err(Error::TooFewPoints { needed: k + 1, got: n });
    }
    let knn: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut others: Vec<(usize, f64)> =
                (0..n).filter(|&j| j != i).map(|j| (j, dist(points[i], points[j]))).collect();
            others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            others.truncate(k);
            others
        })
        .collect();
    let mut pool: Vec<f64> = match rule.median_of {
        MedianOf::KnnDistances => knn.iter().flatten().map(|&(_, d)| d).collect(),
        MedianOf::AllPairs => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| dist(points[i], points[j]))
            .collect(),
    };
    let med = median(&mut pool);
    let mut directed = vec![false; n * n];
    for (i, nb) in knn.iter().enumerate() {
        for &(j, d) in nb {
            if d <= med {
                directed[i * n + j] = true;
            }
        }
    }
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let (ij, ji) = (directed[i * n + j], directed[j * n + i]);
            adjacency[i * n + j] = match rule.symmetrize {
                Symmetrize::Union => ij || ji,
                Symmetrize::Mutual => ij && ji,
            };
        }
    }
    Ok(MedianKnnGraph {
        k,
        n,
        adjacency,
        median: med,
    })
}

/// [`gtm_filter_with`] under the default rule with the given `k`.
pub fn gtm_filter(matches: &MatchSet, a: &CenterSet, b: &CenterSet, k: usize) -> Result<MatchSet> {
    gtm_filter_with(matches, a, b, &GraphRule::with_k(k))
}

/// Graph Transformation Matching: repeatedly drops the pair whose vertex
/// disagrees most between the two median K-NN graphs (lowest index on
/// ties) until the graphs coincide.
pub fn gtm_filter_with(matches: &MatchSet, a: &CenterSet, b: &CenterSet, rule: &GraphRule) -> Result<MatchSet> {
    let k = rule.k;
    let mut alive = matches.inlier_indices();
    if alive.len() < k + 2 {
        return Err(Error::TooFewPoints {
            needed: k + 2,
            got: alive.len(),
        });
    }
    let mut removed = Vec::new();
    loop {
        if alive.len() <= k {
            return Err(Error::DegenerateInput(format!(
                "graph matching ran out of pairs after removing {}",
                removed.len()
            )));
        }
        let pa: Vec<Vec2> = alive.iter().map(|&i| a.centers[matches.pairs[i].a]).collect();
        let pb: Vec<Vec2> = alive.iter().map(|&i| b.centers[matches.pairs[i].b]).collect();
        let ga = median_knn_graph_with(&pa, rule)?;
        let gb = median_knn_graph_with(&pb, rule)?;
        let n = alive.len();
        let mut worst = 0;
        let mut worst_sum = 0;
        for col in 0..n {
            let sum = (0..n).filter(|&row| ga.edge(row, col) != gb.edge(row, col)).count();
            if sum > worst_sum {
                worst_sum = sum;
                worst = col;
            }
        }
        if worst_sum == 0 {
            break;
        }
        log::debug!("graph matching drops pair {} (residual {worst_sum})", alive[worst]);
        removed.push(alive.remove(worst));
    }
    Ok(matches.rejecting(removed))
}
