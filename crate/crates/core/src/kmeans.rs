//! Lloyd's k-means with k-means++ seeding on small dense point sets.

use rand::Rng;
use thiserror::Error;

/// Maximum number of Lloyd iterations.
pub const MAX_ITERS: usize = 50;

/// Independent k-means++ initializations; the lowest-inertia run is kept.
pub const RESTARTS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KMeansError {
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("points have inconsistent dimensions")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each point, numbered by first appearance in input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
}

impl KMeansResult {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Clusters `points` into at most `min(k, points.len())` groups.
///
/// Runs [`RESTARTS`] seeded initializations and keeps the one with the
/// lowest inertia, the earliest on ties. Empty clusters keep their previous
/// centroid and are dropped from the result. An empty input yields an empty
/// result.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Result<KMeansResult, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroClusters);
    }
    let Some(first) = points.first() else {
        return Ok(KMeansResult {
            assignments: Vec::new(),
            centroids: Vec::new(),
            iterations: 0,
            inertia: 0.0,
        });
    };
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(KMeansError::Ragged);
    }
    let k = k.min(points.len());
    let mut best = lloyd(points, k, dim, rng);
    for _ in 1..RESTARTS {
        let next = lloyd(points, k, dim, rng);
        if next.inertia < best.inertia {
            best = next;
        }
    }
    Ok(best)
}

fn lloyd(points: &[Vec<f64>], k: usize, dim: usize, rng: &mut impl Rng) -> KMeansResult {

    // k-means++ seeding.
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.last().expect("nonempty")));
        }
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }

    // Relabel by first appearance and drop empty clusters.
    let mut relabel = vec![usize::MAX; k];
    let mut order = Vec::new();
    for &a in &assignments {
        if relabel[a] == usize::MAX {
            relabel[a] = order.len();
            order.push(a);
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    KMeansResult {
        assignments: assignments.iter().map(|&a| relabel[a]).collect(),
        centroids: order.iter().map(|&j| centroids[j].clone()).collect(),
        iterations,
        inertia,
    }
}

/// Groups point indices by cluster label.
pub fn members(assignments: &[usize]) -> Vec<Vec<usize>> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        out[a].push(i);
    }
    out
}
