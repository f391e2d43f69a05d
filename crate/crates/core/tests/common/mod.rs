//! Independent reference implementations shared by the integration tests.
//! Nothing in this file calls into the library's numerics; `grad` drives the
//! library's gradients against finite differences.
#![allow(dead_code)]

pub mod grad;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(stream)));
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// hash -> embed -> mean -> project -> normalize, written from scratch.
pub struct OracleMock {
    pub p: usize,
    pub d: usize,
    pub seed: u64,
    a: Vec<f64>,
}

impl OracleMock {
    pub fn new(p: usize, d: usize, seed: u64) -> Self {
        Self {
            p,
            d,
            seed,
            a: normals(seed, 2, p * d),
        }
    }

    pub fn embed(&self, word: &str) -> Vec<f64> {
        let s = 1.0 / (self.d as f64).sqrt();
        normals(self.seed, fnv(word.as_bytes()), self.d)
            .into_iter()
            .map(|x| x * s)
            .collect()
    }

    /// Words of the prompt, with `None` marking the pseudo-word slot.
    pub fn encode(&self, words: &[Option<&str>], theta: Option<&[f64]>) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for w in words {
            let e = match w {
                Some(w) => self.embed(w),
                None => theta.unwrap().to_vec(),
            };
            for k in 0..self.d {
                mean[k] += e[k] / words.len() as f64;
            }
        }
        let mut raw = vec![0.0; self.p];
        for r in 0..self.p {
            for c in 0..self.d {
                raw[r] += self.a[r * self.d + c] * mean[c];
            }
        }
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / n).collect()
    }

    pub fn content(&self, class: &str) -> Vec<f64> {
        let words: Vec<Option<&str>> = class.split_whitespace().map(Some).collect();
        self.encode(&words, None)
    }

    pub fn style(&self, theta: &[f64]) -> Vec<f64> {
        self.encode(&[Some("a"), None, Some("style"), Some("of"), Some("a")], Some(theta))
    }

    pub fn style_content(&self, theta: &[f64], class: &str) -> Vec<f64> {
        let mut words = vec![Some("a"), None, Some("style"), Some("of"), Some("a")];
        words.extend(class.split_whitespace().map(Some));
        self.encode(&words, Some(theta))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Log-sum-exp cross-entropy with templates given as rows.
pub fn lse_ce(features: &[Vec<f64>], templates: &[Vec<f64>], labels: &[usize], scale: f64) -> f64 {
    let mut total = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        let logits: Vec<f64> = templates.iter().map(|w| scale * dot(w, f)).collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / features.len() as f64
}

pub fn pairwise_abs_mean(features: &[Vec<f64>]) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for i in 0..features.len() {
        for j in 0..features.len() {
            if i < j {
                s += dot(&features[i], &features[j]).abs();
                n += 1;
            }
        }
    }
    s / n as f64
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_units(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let flat = normals(seed, 99, n * dim);
    flat.chunks(dim).map(|c| unit(c.to_vec())).collect()
}

pub fn random_normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    normals(seed, stream, n)
}

/// Every partition of `0..n` into exactly `k` non-empty blocks, as
/// restricted-growth label vectors (first-appearance canonical).
pub fn partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, k: usize, used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n - i < k - used {
            return;
        }
        if i == n {
            if used == k {
                out.push(cur.clone());
            }
            return;
        }
        for l in 0..=used.min(k - 1) {
            cur.push(l);
            rec(i + 1, n, k, used.max(l + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, 0, &mut Vec::new(), &mut out);
    out
}

pub fn inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..dim {
            sums[l][d] += p[d];
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            (0..dim)
                .map(|d| (p[d] - sums[l][d] / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Globally inertia-optimal partition into `k` blocks.
pub fn best_partition(points: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    partitions(points.len(), k)
        .into_iter()
        .map(|l| {
            let i = inertia(points, &l, k);
            (l, i)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Mean silhouette with cosine distance; singletons score 0.
pub fn silhouette_cos(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let cosd = |a: &[f64], b: &[f64]| {
        let na = dot(a, a).sqrt();
        let nb = dot(b, b).sqrt();
        1.0 - dot(a, b) / (na * nb)
    };
    let k = labels.iter().max().unwrap() + 1;
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sum[labels[j]] += cosd(&points[i], &points[j]);
                cnt[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if cnt[own] == 0 {
            continue;
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Brute-force k selection: best silhouette over inertia-optimal
/// partitions, ties to the smaller k.
pub fn brute_select_k(points: &[Vec<f64>], k_max: usize) -> (usize, Vec<usize>) {
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for k in 2..=k_max.min(points.len() - 1) {
        let (labels, _) = best_partition(points, k);
        let s = silhouette_cos(points, &labels);
        if best.as_ref().is_none_or(|b| s > b.0) {
            best = Some((s, k, labels));
        }
    }
    let (_, k, labels) = best.unwrap();
    (k, labels)
}

/// Well-separated blobs around random unit centers.
pub fn blobs(seed: u64, sizes: &[usize], dim: usize, spread: f64) -> Vec<Vec<f64>> {
    let centers = random_units(seed, sizes.len(), dim);
    let noise = random_normals(seed, 7, sizes.iter().sum::<usize>() * dim);
    let mut out = Vec::new();
    let mut t = 0;
    for (c, &s) in centers.iter().zip(sizes) {
        for _ in 0..s {
            out.push(
                (0..dim)
                    .map(|d| {
                        t += 1;
                        c[d] * 4.0 + spread * noise[t - 1]
                    })
                    .collect(),
            );
        }
    }
    out
}
