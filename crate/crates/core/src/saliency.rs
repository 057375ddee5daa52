//! Semantic and appearance dissimilarity between an observed frame and its
//! static rendering, and their fusion into a patch-level saliency grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{area_pool, pad_replicate, zscore, Grid, ImageGrid, PatchFeatureMap, RealGrid, SaliencyGrid};

/// Windowed SSIM parameters for images in `[0,1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size.is_multiple_of(2) {
            return Err(Error::arg(format!("SSIM window must be odd, got {}", self.window_size)));
        }
        if !(self.sigma > 0.0 && self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::arg("SSIM sigma and constants must be positive"));
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.window_size / 2
    }
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Valid-mode separable correlation of `src` with `taps` along both axes.
fn filter_valid(src: &RealGrid, taps: &[f64]) -> RealGrid {
    let (h, w) = src.shape();
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src.data()[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    Grid::from_fn(oh, ow, |y, x| {
        taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum()
    })
}

/// Per-pixel SSIM over Gaussian-weighted local statistics, valid mode:
/// output is `(H - n + 1) x (W - n + 1)`. RGB inputs are converted to luma.
pub fn ssim_map(observed: &ImageGrid, rendered: &ImageGrid, params: &SsimParams) -> Result<RealGrid> {
    params.validate()?;
    if observed.shape() != rendered.shape() {
        return Err(Error::dim(format!(
            "image shapes differ: {:?} vs {:?}",
            observed.shape(),
            rendered.shape()
        )));
    }
    let n = params.window_size;
    if observed.height() < n || observed.width() < n {
        return Err(Error::dim(format!(
            "image {}x{} smaller than SSIM window {n}",
            observed.height(),
            observed.width()
        )));
    }
    let a = observed.grayscale();
    let b = rendered.grayscale();
    let taps = gaussian_kernel(n, params.sigma);
    let mu_a = filter_valid(&a, &taps);
    let mu_b = filter_valid(&b, &taps);
    let aa = filter_valid(&a.map(|v| v * v), &taps);
    let bb = filter_valid(&b.map(|v| v * v), &taps);
    let ab = filter_valid(
        &Grid::new(
            a.height(),
            a.width(),
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
        )?,
        &taps,
    );
    let (c1, c2) = (params.c1, params.c2);
    let data = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
            let va = aa.data()[i] - ma * ma;
            let vb = bb.data()[i] - mb * mb;
            let cov = ab.data()[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Grid::new(mu_a.height(), mu_a.width(), data)
}

/// Mean of the unmasked SSIM map.
pub fn mean_ssim(observed: &ImageGrid, rendered: &ImageGrid, params: &SsimParams) -> Result<f64> {
    Ok(ssim_map(observed, rendered, params)?.mean())
}

/// Patch dissimilarity `1 - cos` plus the patches whose feature had zero norm
/// (those are assigned the neutral value `1`).
#[derive(Clone, Debug, PartialEq)]
pub struct DinoDissimilarity {
    pub grid: SaliencyGrid,
    pub zero_norm_patches: Vec<usize>,
}

pub fn dino_dissimilarity(observed: &PatchFeatureMap, rendered: &PatchFeatureMap) -> Result<DinoDissimilarity> {
    let shape = |m: &PatchFeatureMap| (m.grid_height(), m.grid_width(), m.dim());
    if shape(observed) != shape(rendered) {
        return Err(Error::dim(format!(
            "feature maps differ: {:?} vs {:?}",
            shape(observed),
            shape(rendered)
        )));
    }
    let mut zero = Vec::new();
    let data = (0..observed.patch_count())
        .map(|p| {
            let (fa, fb) = (observed.feature(p), rendered.feature(p));
            let (mut na, mut nb, mut ip) = (0.0f64, 0.0f64, 0.0f64);
            for (&x, &y) in fa.iter().zip(fb) {
                let (x, y) = (f64::from(x), f64::from(y));
                na += x * x;
                nb += y * y;
                ip += x * y;
            }
            if na == 0.0 || nb == 0.0 {
                zero.push(p);
                return 1.0;
            }
            let cos = (ip / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
            1.0 - cos
        })
        .collect();
    Ok(DinoDissimilarity {
        grid: Grid::new(observed.grid_height(), observed.grid_width(), data)?,
        zero_norm_patches: zero,
    })
}

/// `1 - SSIM`, re-expanded to full resolution by edge replication, then
/// area-pooled to the `grid_h x grid_w` patch grid.
pub fn ssim_dissimilarity(
    observed: &ImageGrid,
    rendered: &ImageGrid,
    params: &SsimParams,
    grid_h: usize,
    grid_w: usize,
) -> Result<SaliencyGrid> {
    let s = ssim_map(observed, rendered, params)?;
    let full = pad_replicate(&s.map(|v| 1.0 - v), params.radius());
    area_pool(&full, grid_h, grid_w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_dino: f64,
    pub w_ssim: f64,
}

impl FusionWeights {
    pub fn new(w_dino: f64, w_ssim: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_dino) || !(0.0..=1.0).contains(&w_ssim) || (w_dino + w_ssim - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "fusion weights ({w_dino}, {w_ssim}) must be in [0,1] and sum to 1"
            )));
        }
        Ok(Self { w_dino, w_ssim })
    }
}

/// Linear PSNR-to-weight schedule: the appearance weight grows with
/// rendering fidelity, clamped to `[min_ssim, max_ssim]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub pivot_db: f64,
    pub slope_per_db: f64,
    pub min_ssim: f64,
    pub max_ssim: f64,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        Self {
            pivot_db: 15.0,
            slope_per_db: 0.1,
            min_ssim: 0.2,
            max_ssim: 0.8,
        }
    }
}

impl WeightSchedule {
    pub fn weights(&self, batch_mean_psnr: f64) -> FusionWeights {
        let w_ssim = ((batch_mean_psnr - self.pivot_db) * self.slope_per_db).clamp(self.min_ssim, self.max_ssim);
        FusionWeights {
            w_dino: 1.0 - w_ssim,
            w_ssim,
        }
    }
}

/// Weights under the default schedule.
pub fn adaptive_weights(batch_mean_psnr: f64) -> FusionWeights {
    WeightSchedule::default().weights(batch_mean_psnr)
}

/// `w_dino * Z(d_dino) + w_ssim * Z(d_ssim)`.
pub fn fuse_saliency(d_dino: &SaliencyGrid, d_ssim: &SaliencyGrid, w: FusionWeights) -> Result<SaliencyGrid> {
    if d_dino.shape() != d_ssim.shape() {
        return Err(Error::dim(format!(
            "saliency shapes differ: {:?} vs {:?}",
            d_dino.shape(),
            d_ssim.shape()
        )));
    }
    let (zd, zs) = (zscore(d_dino), zscore(d_ssim));
    Grid::new(
        d_dino.height(),
        d_dino.width(),
        zd.data()
            .iter()
            .zip(zs.data())
            .map(|(a, b)| w.w_dino * a + w.w_ssim * b)
            .collect(),
    )
}
