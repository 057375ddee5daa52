//! Seeded K-means (k-means++ initialization, Lloyd iterations).

use std::collections::HashSet;

use rand::Rng;

/// Result of [`kmeans`]. `centroids` is `k x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Number of distinct points (bitwise, with `-0.0 == 0.0`).
pub fn distinct_count(points: &[f64], dim: usize) -> usize {
    points
        .chunks_exact(dim)
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&w| {
                    acc += w;
                    acc > r
                })
                .unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            break;
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(next));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centroids[start..start + dim]));
        }
    }
    centroids
}

/// Assigns every point to its nearest centroid (ties to the lower index).
fn assign(points: &[f64], dim: usize, centroids: &[f64], out: &mut [usize], dist: &mut [f64]) -> f64 {
    let k = centroids.len() / dim;
    let mut inertia = 0.0;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
            if d < best.1 {
                best = (c, d);
            }
        }
        out[i] = best.0;
        dist[i] = best.1;
        inertia += best.1;
    }
    inertia
}

/// Recomputes centroids as member means. Empty clusters are re-seeded at the
/// point currently farthest from its centroid.
fn update(points: &[f64], dim: usize, centroids: &mut [f64], assignments: &[usize], dist: &mut [f64]) {
    let k = centroids.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.chunks_exact(dim).zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
            *s += v;
        }
    }
    for c in 0..k {
        let dst = &mut centroids[c * dim..(c + 1) * dim];
        if counts[c] > 0 {
            for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *d = s / counts[c] as f64;
            }
        } else {
            let far = (0..dist.len()).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
            dst.copy_from_slice(&points[far * dim..(far + 1) * dim]);
            dist[far] = 0.0;
        }
    }
}

/// K-means on `points` (`n x dim`, row-major). `k` is reduced to the number of
/// distinct points when there are fewer. Stops after `max_iter` Lloyd steps or
/// when the relative inertia decrease falls to `tol`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, max_iter: usize, tol: f64, rng: &mut impl Rng) -> KMeans {
    assert!(dim > 0 && !points.is_empty() && points.len().is_multiple_of(dim));
    let n = points.len() / dim;
    let k = k.clamp(1, distinct_count(points, dim));
    let mut centroids = plus_plus_init(points, dim, k, rng);
    let mut assignments = vec![0; n];
    let mut dist = vec![0.0; n];
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    let mut inertia = assign(points, dim, &centroids, &mut assignments, &mut dist);
    while iterations < max_iter {
        if let Some(p) = prev {
            if p - inertia <= tol * p {
                break;
            }
        }
        prev = Some(inertia);
        update(points, dim, &mut centroids, &assignments, &mut dist);
        inertia = assign(points, dim, &centroids, &mut assignments, &mut dist);
        iterations += 1;
    }
    // centroids are reported as the means of their final members
    update(points, dim, &mut centroids, &assignments, &mut dist);
    KMeans {
        k,
        dim,
        centroids,
        assignments,
        inertia,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let c = if i % 3 == 0 { [0.0, 0.0] } else { [10.0, 10.0] };
            pts.push(c[0] + rng.random_range(-1.0..1.0));
            pts.push(c[1] + rng.random_range(-1.0..1.0));
            labels.push(usize::from(i % 3 != 0));
        }
        let km = kmeans(&pts, 2, 2, 100, 1e-4, &mut ChaCha8Rng::seed_from_u64(9));
        let flip = km.assignments[0] != labels[0];
        for (a, l) in km.assignments.iter().zip(&labels) {
            assert_eq!(*a != *l, flip);
        }
    }

    #[test]
    fn reduces_k_to_distinct_points() {
        let pts = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let km = kmeans(&pts, 2, 5, 100, 1e-4, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(km.k, 2);
        assert_eq!(km.inertia, 0.0);
        assert_eq!(distinct_count(&[0.0, -0.0], 1), 1);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [0.0, 1.0, 2.0, 5.0];
        let km = kmeans(&pts, 1, 1, 100, 1e-4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(km.centroids, vec![2.0]);
    }
}
