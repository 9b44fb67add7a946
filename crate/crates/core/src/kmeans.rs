//! Lloyd's algorithm with k-means++ seeding, deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::MemoryError;

const MAX_ITERS: usize = 100;
const MAX_RESEEDS: usize = 16;

#[derive(Debug, Clone)]
pub struct KMeans {
    /// `k×dim`, row-major.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl KMeans {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn members(&self, i: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == i)
            .map(|(t, _)| t)
            .collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Clusters the rows of `points` (`n×dim`, row-major) into `k` groups.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<KMeans, MemoryError> {
    if dim == 0 || k == 0 {
        return Err(MemoryError::KMeans("k and dim must be positive".into()));
    }
    let n = points.len() / dim;
    if n < k {
        return Err(MemoryError::InsufficientData(format!(
            "{n} tokens for {k} clusters"
        )));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centroids[start..start + dim]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut reseeds = 0;
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(row(i), &centroids, dim);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            if reseeds == MAX_RESEEDS {
                return Err(MemoryError::KMeans(format!(
                    "cluster {empty} stayed empty after {MAX_RESEEDS} re-seeds"
                )));
            }
            reseeds += 1;
            // farthest point from its current centroid; ties to the lowest index
            let mut far = (0, -1.0);
            for (i, &l) in labels.iter().enumerate() {
                if counts[l] < 2 {
                    continue;
                }
                let d = sq_dist(row(i), &centroids[l * dim..(l + 1) * dim]);
                if d > far.1 {
                    far = (i, d);
                }
            }
            if far.1 <= 0.0 {
                return Err(MemoryError::KMeans(format!(
                    "cluster {empty} is empty and no distinct point can re-seed it"
                )));
            }
            centroids[empty * dim..(empty + 1) * dim].copy_from_slice(row(far.0));
            labels[far.0] = usize::MAX;
            continue;
        }
        for (i, &cnt) in counts.iter().enumerate() {
            for (c, s) in centroids[i * dim..(i + 1) * dim]
                .iter_mut()
                .zip(&sums[i * dim..(i + 1) * dim])
            {
                *c = s / cnt as f64;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, l) in labels.iter_mut().enumerate() {
        *l = nearest(row(i), &centroids, dim).0;
    }
    Ok(KMeans {
        centroids,
        labels,
        dim,
    })
}
