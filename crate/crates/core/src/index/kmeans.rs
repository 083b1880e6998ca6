//! Seeded Lloyd's k-means over unit-normalized records.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves further than this (L2).
    pub tolerance: f64,
    /// Training runs on a seeded subsample of at most `k * max_points_per_centroid` records.
    pub max_points_per_centroid: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 25,
            tolerance: 1e-4,
            max_points_per_centroid: 256,
        }
    }
}

/// Returns `k` centroids, row-major.
pub(super) fn train(records: &[f32], norms: &[f32], dim: usize, k: usize, config: &KMeansConfig) -> Vec<f32> {
    let n = norms.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cap = k.saturating_mul(config.max_points_per_centroid.max(1));
    let picked: Vec<usize> = if n > cap {
        let mut idx = sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut data = Vec::with_capacity(picked.len() * dim);
    for &i in &picked {
        let inv = 1.0 / f64::from(norms[i]);
        data.extend(records[i * dim..(i + 1) * dim].iter().map(|&v| (f64::from(v) * inv) as f32));
    }

    let mut centroids = plus_plus_init(&data, dim, k, &mut rng);
    let m = picked.len();
    for _ in 0..config.max_iter {
        let csq: Vec<f64> = centroids.chunks_exact(dim).map(|c| dot(c, c)).collect();
        let labels: Vec<u32> = data
            .par_chunks(dim)
            .map(|x| nearest(x, 1.0, &centroids, &csq, dim))
            .collect();
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &c) in data.chunks_exact(dim).zip(&labels) {
            let c = c as usize;
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += f64::from(v);
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            // An empty cluster keeps its previous centroid.
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut shift = 0.0;
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let new = (s * inv) as f32;
                shift += (f64::from(new) - f64::from(*dst)).powi(2);
                *dst = new;
            }
            max_shift = max_shift.max(shift.sqrt());
        }
        if max_shift < config.tolerance || m == k {
            break;
        }
    }
    centroids
}

fn plus_plus_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let m = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..m);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Rounding can walk past the last positive weight.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.extend_from_slice(row(next));
        let c = row(next);
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(&data[i * dim..(i + 1) * dim], c);
            if nd < *d {
                *d = nd;
            }
        });
    }
    centroids
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum()
}

/// Index of the centroid nearest to `x / norm`; ties go to the lower index.
#[inline]
fn nearest(x: &[f32], norm: f64, centroids: &[f32], csq: &[f64], dim: usize) -> u32 {
    let mut best = (f64::INFINITY, 0u32);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = csq[c] - 2.0 * dot(x, row) / norm;
        if d < best.0 {
            best = (d, c as u32);
        }
    }
    best.1
}

pub(super) fn assign(records: &[f32], norms: &[f32], dim: usize, centroids: &[f32], csq: &[f64]) -> Vec<u32> {
    records
        .par_chunks(dim)
        .zip(norms.par_iter())
        .map(|(x, &n)| nearest(x, f64::from(n), centroids, csq, dim))
        .collect()
}
