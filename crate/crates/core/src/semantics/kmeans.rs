//! KMeans++ clustering and silhouette-based choice of `k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CsgError;
use crate::linalg::{axpy, dot, norm};
use crate::rng::{seeded, streams};

pub const MAX_ITER: usize = 300;
pub const SHIFT_TOL: f64 = 1e-6;

/// Result of one clustering: canonical labels (numbered by first
/// appearance), centroids in label order, and inertia.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Member indices of each cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// KMeans++ with `restarts` independent seedings, keeping the lowest inertia.
///
/// Requires `2 <= k <= n - 1`.
pub fn cluster<V: AsRef<[f64]>>(
    features: &[V],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Clustering, CsgError> {
    let n = features.len();
    if k < 2 || k + 1 > n {
        return Err(CsgError::KOutOfRange { k, n });
    }
    Ok(kmeans(features, k, seed, restarts))
}

/// Unchecked core: any `1 <= k <= n`.
pub(crate) fn kmeans<V: AsRef<[f64]>>(
    features: &[V],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Clustering {
    let mut rng = seeded(seed, streams::KMEANS);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(features, plus_plus_init(features, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    canonicalize(best.expect("at least one restart"))
}

fn plus_plus_init<V: AsRef<[f64]>>(features: &[V], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut centroids = vec![features[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = features
        .iter()
        .map(|x| sq_dist(x.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = features[pick].as_ref().to_vec();
        for (d, x) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(x.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd<V: AsRef<[f64]>>(features: &[V], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let n = features.len();
    let k = centroids.len();
    let dim = features[0].as_ref().len();
    let mut assignment = vec![0; n];
    for _ in 0..MAX_ITER {
        let mut dists = vec![0.0; n];
        for (i, x) in features.iter().enumerate() {
            let (j, d) = nearest(x.as_ref(), &centroids);
            assignment[i] = j;
            dists[i] = d;
        }
        repair_empty(&mut assignment, &mut dists, k);

        let mut next = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in features.iter().zip(&assignment) {
            axpy(1.0, x.as_ref(), &mut next[c]);
            counts[c] += 1;
        }
        for (c, &m) in next.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= m as f64);
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < SHIFT_TOL {
            break;
        }
    }
    // Final assignment against the converged centroids.
    let mut inertia = 0.0;
    let mut dists = vec![0.0; n];
    for (i, x) in features.iter().enumerate() {
        let (j, d) = nearest(x.as_ref(), &centroids);
        assignment[i] = j;
        dists[i] = d;
    }
    if repair_empty(&mut assignment, &mut dists, k) {
        centroids = recompute(features, &assignment, k, dim);
    }
    for (i, x) in features.iter().enumerate() {
        inertia += sq_dist(x.as_ref(), &centroids[assignment[i]]);
    }
    Clustering {
        assignment,
        centroids,
        inertia,
    }
}

fn recompute<V: AsRef<[f64]>>(features: &[V], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in features.iter().zip(assignment) {
        axpy(1.0, x.as_ref(), &mut c[a]);
        counts[a] += 1;
    }
    for (v, &m) in c.iter_mut().zip(&counts) {
        v.iter_mut().for_each(|x| *x /= m.max(1) as f64);
    }
    c
}

/// Moves the farthest point of a multi-member cluster into each empty one.
/// Returns whether anything moved.
fn repair_empty(assignment: &mut [usize], dists: &mut [f64], k: usize) -> bool {
    let mut moved = false;
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return moved;
        };
        let donor = (0..assignment.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("k <= n guarantees a donor");
        assignment[donor] = empty;
        dists[donor] = 0.0;
        moved = true;
    }
}

/// Relabels clusters by order of first appearance.
fn canonicalize(c: Clustering) -> Clustering {
    let k = c.centroids.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &c.assignment {
        if map[a] == usize::MAX {
            map[a] = next;
            next += 1;
        }
    }
    let mut centroids = vec![Vec::new(); k];
    for (old, &new) in map.iter().enumerate() {
        centroids[new] = c.centroids[old].clone();
    }
    Clustering {
        assignment: c.assignment.iter().map(|&a| map[a]).collect(),
        centroids,
        inertia: c.inertia,
    }
}

/// Cosine distance `1 - cos`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        1.0
    } else {
        1.0 - dot(a, b) / d
    }
}

/// Mean silhouette under cosine distance. Points in singleton clusters
/// score 0.
pub fn silhouette<V: AsRef<[f64]>>(features: &[V], assignment: &[usize]) -> f64 {
    let n = features.len();
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if n == 0 || k < 2 {
        return 0.0;
    }
    let mut counts = vec![0usize; k];
    for &a in assignment {
        counts[a] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += cosine_distance(features[i].as_ref(), features[j].as_ref());
            }
        }
        let own = assignment[i];
        if counts[own] <= 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    /// `(k, mean silhouette)` for every candidate tried.
    pub scores: Vec<(usize, f64)>,
    pub clustering: Clustering,
}

/// Picks the `k` in `2..=min(n - 1, k_max)` with the highest mean
/// silhouette; ties go to the smaller `k`.
pub fn select_k<V: AsRef<[f64]>>(
    features: &[V],
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<KSelection, CsgError> {
    let n = features.len();
    if n < 3 {
        return Err(CsgError::TooFewCategories(n));
    }
    let first = features[0].as_ref();
    if features.iter().all(|f| f.as_ref() == first) {
        return Err(CsgError::Degenerate);
    }
    let hi = (n - 1).min(k_max);
    if hi < 2 {
        return Err(CsgError::KOutOfRange { k: hi, n });
    }
    let mut best: Option<(usize, f64, Clustering)> = None;
    let mut scores = Vec::with_capacity(hi - 1);
    for k in 2..=hi {
        let c = cluster(features, k, seed, restarts)?;
        let s = silhouette(features, &c.assignment);
        scores.push((k, s));
        if best.as_ref().is_none_or(|(_, bs, _)| s > *bs) {
            best = Some((k, s, c));
        }
    }
    let (k, _, clustering) = best.expect("non-empty range");
    Ok(KSelection {
        k,
        scores,
        clustering,
    })
}
