//! Full-covariance Gaussian mixtures over RGB colors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::kmeans;
use crate::error::{Error, Result};

pub type Color = [f64; 3];
type Mat3 = [[f64; 3]; 3];

/// Smallest covariance eigenvalue kept after fitting.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Color,
    pub covariance: Mat3,
    inverse: Mat3,
    // ln weight - (3 ln 2pi + ln det) / 2
    log_scale: f64,
}

impl Component {
    fn new(weight: f64, mean: Color, covariance: Mat3) -> Self {
        let (vals, vecs) = sym_eigen(&covariance);
        let vals = vals.map(|v| v.max(COVARIANCE_FLOOR));
        let covariance = recompose(&vals, &vecs);
        let inverse = recompose(&vals.map(|v| 1.0 / v), &vecs);
        let log_det: f64 = vals.iter().map(|v| v.ln()).sum();
        Self {
            weight,
            mean,
            covariance,
            inverse,
            log_scale: weight.ln() - 0.5 * (3.0 * LN_2PI + log_det),
        }
    }

    /// `ln(weight * N(z | mean, cov))`.
    #[inline]
    pub fn log_weighted_density(&self, z: &Color) -> f64 {
        let d = [z[0] - self.mean[0], z[1] - self.mean[1], z[2] - self.mean[2]];
        let mut maha = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                maha += d[i] * self.inverse[i][j] * d[j];
            }
        }
        self.log_scale - 0.5 * maha
    }
}

/// Gaussian mixture with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Gmm {
    components: Vec<Component>,
}

impl Gmm {
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn log_likelihood(&self, z: &Color) -> f64 {
        let logs: Vec<f64> = self.components.iter().map(|c| c.log_weighted_density(z)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    /// Component with the largest weighted density and that density's negative log.
    #[inline]
    pub fn best_component(&self, z: &Color) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.components.iter().enumerate() {
            let cost = -c.log_weighted_density(z);
            if cost < best.1 {
                best = (k, cost);
            }
        }
        best
    }

    /// Maximum-likelihood refit from hard component assignments. Components
    /// with no members are dropped. Returns `None` for an empty pixel set.
    pub fn from_assignments(pixels: &[Color], assignments: &[usize], k: usize) -> Option<Self> {
        let n = pixels.len();
        if n == 0 {
            return None;
        }
        let mut stats = vec![Stats::default(); k];
        for (z, &a) in pixels.iter().zip(assignments) {
            stats[a].add(z, 1.0);
        }
        let components = stats
            .iter()
            .filter(|s| s.weight > 0.0)
            .map(|s| s.component(n as f64))
            .collect();
        Some(Self { components })
    }
}

#[derive(Clone, Default)]
struct Stats {
    weight: f64,
    sum: [f64; 3],
    outer: Mat3,
}

impl Stats {
    #[inline]
    fn add(&mut self, z: &Color, w: f64) {
        self.weight += w;
        for i in 0..3 {
            self.sum[i] += w * z[i];
            for j in 0..3 {
                self.outer[i][j] += w * z[i] * z[j];
            }
        }
    }

    fn component(&self, total: f64) -> Component {
        let mean = self.sum.map(|s| s / self.weight);
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = self.outer[i][j] / self.weight - mean[i] * mean[j];
            }
        }
        Component::new(self.weight / total, mean, cov)
    }
}

/// A fitted mixture and the mean log-likelihood after every EM step
/// (starting with the k-means initialization).
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub gmm: Gmm,
    pub log_likelihood_history: Vec<f64>,
}

pub const EM_MAX_ITERATIONS: usize = 50;
pub const EM_RELATIVE_TOLERANCE: f64 = 1e-5;

/// EM fit of a `k`-component mixture, initialized by seeded k-means++.
pub fn fit_gmm(pixels: &[Color], k: usize, seed: u64) -> Result<GmmFit> {
    if pixels.is_empty() {
        return Err(Error::arg("fit_gmm needs at least one pixel"));
    }
    if k == 0 {
        return Err(Error::arg("fit_gmm needs at least one component"));
    }
    let flat: Vec<f64> = pixels.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans(&flat, 3, k.min(pixels.len()), 10, 1e-4, &mut rng);
    let mut gmm = Gmm::from_assignments(pixels, &init.assignments, init.k).expect("non-empty");

    let n = pixels.len() as f64;
    let mut resp = vec![0.0; gmm.components.len()];
    let mut history = Vec::new();
    for _ in 0..EM_MAX_ITERATIONS {
        let kk = gmm.components.len();
        let mut stats = vec![Stats::default(); kk];
        let mut ll = 0.0;
        for z in pixels {
            let mut max = f64::NEG_INFINITY;
            for (r, c) in resp.iter_mut().zip(&gmm.components) {
                *r = c.log_weighted_density(z);
                max = max.max(*r);
            }
            let mut total = 0.0;
            for r in resp.iter_mut().take(kk) {
                *r = (*r - max).exp();
                total += *r;
            }
            ll += max + total.ln();
            for (s, r) in stats.iter_mut().zip(&resp) {
                s.add(z, r / total);
            }
        }
        let ll = ll / n;
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= EM_RELATIVE_TOLERANCE * prev.abs().max(1e-12));
        history.push(ll);
        if converged {
            break;
        }
        gmm = Gmm {
            components: stats
                .iter()
                .filter(|s| s.weight > 1e-12)
                .map(|s| s.component(n))
                .collect(),
        };
        resp.truncate(gmm.components.len());
    }
    Ok(GmmFit {
        gmm,
        log_likelihood_history: history,
    })
}

fn recompose(vals: &[f64; 3], vecs: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| vecs[i][k] * vals[k] * vecs[j][k]).sum();
        }
    }
    m
}

#[allow(clippy::needless_range_loop)]
/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix. Eigenvectors
/// are the columns of the returned matrix.
fn sym_eigen(m: &Mat3) -> ([f64; 3], Mat3) {
    let mut a = *m;
    for i in 0..3 {
        for j in 0..i {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}
