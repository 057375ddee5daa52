//! Masked PSNR / SSIM / LPIPS and motion-mask quality (IoU, recall).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{area_pool, crop_center, BinaryMask, Grid, ImageGrid, SoftMask};
use crate::saliency::{ssim_map, SsimParams};

/// MSE below this reports [`PSNR_CAP_DB`] with the saturated flag.
pub const MSE_FLOOR: f64 = 1e-10;
pub const PSNR_CAP_DB: f64 = 100.0;

/// Per-layer spatial perceptual-difference maps `D^(l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDiffStack {
    layers: Vec<Grid<f32>>,
}

impl LayerDiffStack {
    pub fn new(layers: Vec<Grid<f32>>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::arg(format!("layer {i} has negative or non-finite values")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Grid<f32>] {
        &self.layers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    pub saturated: bool,
}

impl Psnr {
    fn from_mse(mse: f64) -> Self {
        if mse < MSE_FLOOR {
            Psnr {
                db: PSNR_CAP_DB,
                saturated: true,
            }
        } else {
            Psnr {
                db: -10.0 * mse.log10(),
                saturated: false,
            }
        }
    }
}

fn check_images(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Plain full-frame PSNR over all channels.
pub fn psnr(observed: &ImageGrid, rendered: &ImageGrid) -> Result<Psnr> {
    check_images(observed, rendered)?;
    let se: f64 = observed
        .data()
        .iter()
        .zip(rendered.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(Psnr::from_mse(se / observed.data().len() as f64))
}

/// `MSE_M = sum (I - I^)^2 M / (C sum M)`, reported as `-10 log10(MSE_M)`.
pub fn masked_psnr(observed: &ImageGrid, rendered: &ImageGrid, mask: &SoftMask) -> Result<Psnr> {
    check_images(observed, rendered)?;
    if mask.shape() != (observed.height(), observed.width()) {
        return Err(Error::dim(format!(
            "mask {:?} does not match image {:?}",
            mask.shape(),
            observed.shape()
        )));
    }
    let c = observed.channels();
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (i, &m) in mask.grid().data().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let se: f64 = observed.data()[i * c..(i + 1) * c]
            .iter()
            .zip(&rendered.data()[i * c..(i + 1) * c])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        weighted += se * m;
        total += m;
    }
    if total <= 0.0 {
        return Err(Error::EmptyMask("masked_psnr".into()));
    }
    Ok(Psnr::from_mse(weighted / (c as f64 * total)))
}

/// SSIM map averaged under the mask, after cropping the mask to the valid
/// SSIM region and area-pooling it to the map resolution.
pub fn masked_ssim(observed: &ImageGrid, rendered: &ImageGrid, mask: &SoftMask, params: &SsimParams) -> Result<f64> {
    let s = ssim_map(observed, rendered, params)?;
    if mask.shape() != (observed.height(), observed.width()) {
        return Err(Error::dim(format!(
            "mask {:?} does not match image {:?}",
            mask.shape(),
            observed.shape()
        )));
    }
    let cropped = crop_center(mask.grid(), params.radius())?;
    let pooled = area_pool(&cropped, s.height(), s.width())?;
    let total: f64 = pooled.data().iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyMask("masked_ssim: pooled mask is empty".into()));
    }
    let weighted: f64 = s.data().iter().zip(pooled.data()).map(|(v, m)| v * m).sum();
    Ok(weighted / total)
}

/// Sum over layers of the mask-weighted mean of each difference map, with the
/// mask area-pooled to each layer's resolution.
pub fn masked_lpips(diffs: &LayerDiffStack, mask: &SoftMask) -> Result<f64> {
    let mut score = 0.0;
    for (l, layer) in diffs.layers().iter().enumerate() {
        let pooled = area_pool(mask.grid(), layer.height(), layer.width())?;
        let total: f64 = pooled.data().iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyMask(format!("masked_lpips: layer {l}")));
        }
        let weighted: f64 = layer
            .data()
            .iter()
            .zip(pooled.data())
            .map(|(&d, m)| f64::from(d) * m)
            .sum();
        score += weighted / total;
    }
    Ok(score)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskQuality {
    pub iou: f64,
    pub recall: f64,
}

/// IoU and recall of a predicted mask against ground truth; both are `1` for
/// empty ground truth with empty prediction, recall is `1` for empty ground truth.
pub fn mask_iou_recall(pred: &BinaryMask, gt: &BinaryMask) -> Result<MaskQuality> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut inter, mut union, mut gt_count) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
        gt_count += g as usize;
    }
    Ok(MaskQuality {
        iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        recall: if gt_count == 0 {
            1.0
        } else {
            inter as f64 / gt_count as f64
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: String,
    pub psnr_masked: f64,
    pub ssim_masked: f64,
    pub lpips_masked: Option<f64>,
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub miou: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_frame: Vec<FrameMetrics>,
    pub summary: MetricsSummary,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    /// Aggregates per-frame values by arithmetic mean. `lpips` is reported only
    /// when every frame has it.
    pub fn from_frames(per_frame: Vec<FrameMetrics>, quality: Option<&[MaskQuality]>) -> Self {
        let lpips = if per_frame.iter().all(|f| f.lpips_masked.is_some()) {
            mean(per_frame.iter().filter_map(|f| f.lpips_masked))
        } else {
            None
        };
        let summary = MetricsSummary {
            psnr: mean(per_frame.iter().map(|f| f.psnr_masked)).unwrap_or(f64::NAN),
            ssim: mean(per_frame.iter().map(|f| f.ssim_masked)).unwrap_or(f64::NAN),
            lpips,
            miou: quality.and_then(|q| mean(q.iter().map(|m| m.iou))),
            recall: quality.and_then(|q| mean(q.iter().map(|m| m.recall))),
        };
        Self { per_frame, summary }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMaskQuality {
    pub frame: String,
    pub iou: f64,
    pub recall: f64,
}

/// Report written by mask evaluation: per-frame IoU/recall and their means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskQualityReport {
    pub per_frame: Vec<FrameMaskQuality>,
    pub summary: MaskQualitySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskQualitySummary {
    pub miou: Option<f64>,
    pub recall: Option<f64>,
}

impl MaskQualityReport {
    pub fn from_frames(per_frame: Vec<FrameMaskQuality>) -> Self {
        let summary = MaskQualitySummary {
            miou: mean(per_frame.iter().map(|f| f.iou)),
            recall: mean(per_frame.iter().map(|f| f.recall)),
        };
        Self { per_frame, summary }
    }
}
