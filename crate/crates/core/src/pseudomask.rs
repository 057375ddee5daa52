//! Pseudo motion-mask construction from rendering residuals.
//!
//! Per batch: gate frames by rendering PSNR, compute semantic (feature cosine)
//! and appearance (SSIM) dissimilarity on the patch grid, fuse them with
//! fidelity-dependent weights, cluster patch features across the batch, keep
//! clusters that are both among the most salient and consistently salient
//! across frames, then rasterize, clean up and GrabCut-refine per frame.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::grabcut::{grabcut_refine, GrabcutParams, Trimap, TrimapLabel};
use crate::grid::{
    filter_small_components, morph, upsample_nearest, BinaryMask, Grid, ImageGrid, MorphOp, PatchFeatureMap,
    SaliencyGrid,
};
use crate::metrics::psnr;
use crate::rng::{derive_seed, stream};
use crate::saliency::{
    dino_dissimilarity, fuse_saliency, ssim_dissimilarity, FusionWeights, SsimParams, WeightSchedule,
};

pub const KMEANS_MAX_ITERATIONS: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-4;

/// K-means clustering of L2-normalized patch features over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub requested_k: usize,
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    /// Per frame, the cluster index of every patch.
    pub assignments: Vec<Grid<usize>>,
}

fn normalized(feature: &[f32]) -> impl Iterator<Item = f64> + '_ {
    let norm = feature.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    feature.iter().map(move |&v| f64::from(v) * inv)
}

pub fn cluster_patches(features: &[PatchFeatureMap], k: usize, seed: u64) -> Result<ClusterModel> {
    let first = features
        .first()
        .ok_or_else(|| Error::arg("cluster_patches needs at least one frame"))?;
    let dim = first.dim();
    if dim == 0 || k == 0 {
        return Err(Error::arg("cluster_patches needs dim >= 1 and k >= 1"));
    }
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::dim("feature dims differ across frames"));
    }
    let total: usize = features.iter().map(|f| f.patch_count()).sum();
    if total < k {
        return Err(Error::arg(format!("{total} patches cannot form {k} clusters")));
    }
    let points: Vec<f64> = features
        .iter()
        .flat_map(|f| (0..f.patch_count()).flat_map(move |p| normalized(f.feature(p))))
        .collect();
    let km = kmeans(
        &points,
        dim,
        k,
        KMEANS_MAX_ITERATIONS,
        KMEANS_TOLERANCE,
        &mut stream(seed, &[0x6b6d]),
    );
    if km.k < k {
        log::info!("cluster_patches: only {} distinct features, k reduced from {k}", km.k);
    }
    let mut offset = 0;
    let assignments = features
        .iter()
        .map(|f| {
            let n = f.patch_count();
            let g = Grid::new(
                f.grid_height(),
                f.grid_width(),
                km.assignments[offset..offset + n].to_vec(),
            );
            offset += n;
            g
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel {
        k: km.k,
        requested_k: k,
        dim,
        centroids: km.centroids,
        assignments,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSelectionParams {
    pub top_fraction: f64,
    pub saliency_percentile: f64,
    pub min_frames: usize,
}

impl Default for ClusterSelectionParams {
    fn default() -> Self {
        Self {
            top_fraction: 0.05,
            saliency_percentile: 75.0,
            min_frames: 4,
        }
    }
}

impl ClusterSelectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0)
            || !(0.0..=100.0).contains(&self.saliency_percentile)
            || self.min_frames == 0
        {
            return Err(Error::arg(format!("invalid cluster selection params {self:?}")));
        }
        Ok(())
    }
}

/// Selected clusters plus the statistics the rule was evaluated on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSelection {
    pub selected: Vec<usize>,
    /// Mean fused saliency of each cluster over all its patches (`None` if empty).
    pub mean_saliency: Vec<Option<f64>>,
    /// Number of frames in which each cluster is salient.
    pub salient_frames: Vec<usize>,
}

/// Linear-interpolation percentile (`p` in `[0,100]`) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Keeps cluster `k` iff its batch-mean saliency ranks in the top
/// `ceil(top_fraction * K)` clusters and its per-frame mean saliency exceeds
/// that frame's percentile threshold in at least `min(min_frames, B)` frames.
pub fn select_motion_clusters(
    model: &ClusterModel,
    saliency: &[SaliencyGrid],
    params: &ClusterSelectionParams,
) -> Result<ClusterSelection> {
    params.validate()?;
    if saliency.len() != model.assignments.len() {
        return Err(Error::dim(format!(
            "{} saliency grids for {} frames",
            saliency.len(),
            model.assignments.len()
        )));
    }
    let k = model.k;
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let mut salient_frames = vec![0usize; k];
    for (assign, sal) in model.assignments.iter().zip(saliency) {
        if assign.shape() != sal.shape() {
            return Err(Error::dim("saliency grid does not match cluster assignments"));
        }
        let threshold = percentile(sal.data(), params.saliency_percentile);
        let mut fsum = vec![0.0; k];
        let mut fcount = vec![0usize; k];
        for (&c, &s) in assign.data().iter().zip(sal.data()) {
            fsum[c] += s;
            fcount[c] += 1;
        }
        for c in 0..k {
            sums[c] += fsum[c];
            counts[c] += fcount[c];
            if fcount[c] > 0 && fsum[c] / fcount[c] as f64 > threshold {
                salient_frames[c] += 1;
            }
        }
    }
    let mean_saliency: Vec<Option<f64>> = (0..k)
        .map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64))
        .collect();
    let mut ranked: Vec<(usize, f64)> = mean_saliency
        .iter()
        .enumerate()
        .filter_map(|(c, m)| m.map(|m| (c, m)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let top = ((params.top_fraction * k as f64).ceil() as usize).max(1);
    let need = params.min_frames.min(saliency.len());
    let mut selected: Vec<usize> = ranked
        .iter()
        .take(top)
        .map(|&(c, _)| c)
        .filter(|&c| salient_frames[c] >= need)
        .collect();
    selected.sort_unstable();
    Ok(ClusterSelection {
        selected,
        mean_saliency,
        salient_frames,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoMaskConfig {
    pub k_clusters: usize,
    pub psnr_gate_db: f64,
    pub dilate_kernel: usize,
    pub dilate_iterations: usize,
    pub min_component_fraction: f64,
    /// Erosion applied to the coarse mask to seed GrabCut.
    pub seed_erode_kernel: usize,
    pub seed_erode_iterations: usize,
    /// Width in pixels of the undecided ring around the coarse mask; pixels
    /// farther out are fixed background for GrabCut.
    pub refine_band: usize,
    pub grabcut: GrabcutParams,
    pub selection: ClusterSelectionParams,
    pub ssim: SsimParams,
    pub schedule: WeightSchedule,
    pub seed: u64,
}

impl Default for PseudoMaskConfig {
    fn default() -> Self {
        Self {
            k_clusters: 24,
            psnr_gate_db: 17.0,
            dilate_kernel: 3,
            dilate_iterations: 1,
            min_component_fraction: 0.0025,
            seed_erode_kernel: 3,
            seed_erode_iterations: 2,
            refine_band: 16,
            grabcut: GrabcutParams::default(),
            selection: ClusterSelectionParams::default(),
            ssim: SsimParams::default(),
            schedule: WeightSchedule::default(),
            seed: 0,
        }
    }
}

impl PseudoMaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_clusters == 0 || !self.psnr_gate_db.is_finite() || !(0.0..=1.0).contains(&self.min_component_fraction)
        {
            return Err(Error::arg(
                "k_clusters must be positive, psnr gate finite, component fraction in [0,1]",
            ));
        }
        self.grabcut.validate()?;
        self.selection.validate()?;
        self.ssim.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameMask {
    Mask(BinaryMask),
    Gated,
}

impl FrameMask {
    pub fn mask(&self) -> Option<&BinaryMask> {
        match self {
            FrameMask::Mask(m) => Some(m),
            FrameMask::Gated => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub psnr_db: f64,
    pub gated: bool,
    pub zero_norm_patches: usize,
    pub coarse_pixels: usize,
    pub mask_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoMaskDiagnostics {
    pub frames: Vec<FrameDiagnostics>,
    pub batch_mean_psnr_db: Option<f64>,
    pub weights: Option<FusionWeights>,
    pub effective_k: Option<usize>,
    pub selection: Option<ClusterSelection>,
    pub all_gated: bool,
    /// Patch-grid elements touched by fusion and clustering (`B * h * w`).
    pub fusion_elements: usize,
    pub cluster_points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMaskResult {
    pub frames: Vec<FrameMask>,
    /// Union of the selected clusters' patch footprints at pixel resolution,
    /// before morphology and refinement.
    pub coarse: Vec<Option<BinaryMask>>,
    pub diagnostics: PseudoMaskDiagnostics,
}

/// GrabCut trimap from a coarse mask: the eroded core is probable foreground,
/// the rest of the mask and a `band`-pixel ring around it are probable
/// background, everything else is fixed background.
pub fn seed_trimap(mask: &BinaryMask, cfg: &PseudoMaskConfig) -> Result<Trimap> {
    let mut core = morph(mask, MorphOp::Erode, cfg.seed_erode_kernel, cfg.seed_erode_iterations)?;
    if core.count_ones() == 0 {
        core = mask.clone();
    }
    let ring = morph(mask, MorphOp::Dilate, 2 * cfg.refine_band + 1, 1)?;
    Ok(Grid::from_fn(mask.height(), mask.width(), |y, x| {
        if *core.get(y, x) {
            TrimapLabel::ProbableForeground
        } else if *ring.get(y, x) {
            TrimapLabel::ProbableBackground
        } else {
            TrimapLabel::Background
        }
    }))
}

/// Builds per-frame binary motion masks for a batch of observed frames and
/// their static renderings.
pub fn build_pseudo_masks(
    observed: &[ImageGrid],
    rendered: &[ImageGrid],
    observed_features: &[PatchFeatureMap],
    rendered_features: &[PatchFeatureMap],
    cfg: &PseudoMaskConfig,
) -> Result<PseudoMaskResult> {
    cfg.validate()?;
    let b = observed.len();
    if b == 0 {
        return Err(Error::arg("empty batch"));
    }
    if rendered.len() != b || observed_features.len() != b || rendered_features.len() != b {
        return Err(Error::arg(
            "observed, rendered and feature lists must have equal length",
        ));
    }
    let (gh, gw) = (observed_features[0].grid_height(), observed_features[0].grid_width());
    let (ih, iw) = (observed[0].height(), observed[0].width());
    for i in 0..b {
        if observed[i].shape() != observed[0].shape() || rendered[i].shape() != observed[0].shape() {
            return Err(Error::dim(format!("frame {i} image shape differs")));
        }
        for f in [&observed_features[i], &rendered_features[i]] {
            if (f.grid_height(), f.grid_width()) != (gh, gw) {
                return Err(Error::dim(format!("frame {i} patch grid differs")));
            }
        }
    }
    if gh > ih || gw > iw {
        return Err(Error::dim("patch grid larger than image"));
    }

    let psnrs: Vec<f64> = observed
        .iter()
        .zip(rendered)
        .map(|(o, r)| psnr(o, r).map(|p| p.db))
        .collect::<Result<_>>()?;
    let active: Vec<usize> = (0..b).filter(|&i| psnrs[i] > cfg.psnr_gate_db).collect();

    let mut frames_diag: Vec<FrameDiagnostics> = psnrs
        .iter()
        .map(|&p| FrameDiagnostics {
            psnr_db: p,
            gated: p <= cfg.psnr_gate_db,
            zero_norm_patches: 0,
            coarse_pixels: 0,
            mask_pixels: 0,
        })
        .collect();
    let mut diagnostics = PseudoMaskDiagnostics {
        frames: Vec::new(),
        batch_mean_psnr_db: None,
        weights: None,
        effective_k: None,
        selection: None,
        all_gated: active.is_empty(),
        fusion_elements: 0,
        cluster_points: 0,
    };
    if active.is_empty() {
        log::warn!("all {b} frames fall below the {} dB rendering gate", cfg.psnr_gate_db);
        diagnostics.frames = frames_diag;
        return Ok(PseudoMaskResult {
            frames: vec![FrameMask::Gated; b],
            coarse: vec![None; b],
            diagnostics,
        });
    }

    let mean_psnr = active.iter().map(|&i| psnrs[i]).sum::<f64>() / active.len() as f64;
    let weights = cfg.schedule.weights(mean_psnr);

    let fused: Vec<(SaliencyGrid, usize)> = active
        .par_iter()
        .map(|&i| {
            let dino = dino_dissimilarity(&observed_features[i], &rendered_features[i])?;
            let ssim = ssim_dissimilarity(&observed[i], &rendered[i], &cfg.ssim, gh, gw)?;
            Ok((fuse_saliency(&dino.grid, &ssim, weights)?, dino.zero_norm_patches.len()))
        })
        .collect::<Result<_>>()?;
    let saliency: Vec<SaliencyGrid> = fused.iter().map(|(s, _)| s.clone()).collect();
    diagnostics.fusion_elements = saliency.iter().map(|s| s.len()).sum();

    let active_features: Vec<PatchFeatureMap> = active.iter().map(|&i| observed_features[i].clone()).collect();
    let model = cluster_patches(&active_features, cfg.k_clusters, cfg.seed)?;
    diagnostics.cluster_points = model.assignments.iter().map(|a| a.len()).sum();
    let selection = select_motion_clusters(&model, &saliency, &cfg.selection)?;

    let refined: Vec<(BinaryMask, BinaryMask)> = active
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let patches = model.assignments[slot].map(|c| selection.selected.binary_search(c).is_ok());
            let coarse = upsample_nearest(&patches, ih, iw);
            let grown = morph(&coarse, MorphOp::Dilate, cfg.dilate_kernel, cfg.dilate_iterations)?;
            let cleaned = filter_small_components(&grown, cfg.min_component_fraction);
            if cleaned.count_ones() == 0 {
                return Ok((coarse, cleaned));
            }
            let trimap = seed_trimap(&cleaned, cfg)?;
            let mask = grabcut_refine(
                &observed[i],
                &trimap,
                &cfg.grabcut,
                derive_seed(cfg.seed, &[0x6763, i as u64]),
            )?;
            Ok((coarse, mask))
        })
        .collect::<Result<_>>()?;

    let mut frames = vec![FrameMask::Gated; b];
    let mut coarse = vec![None; b];
    for (slot, &i) in active.iter().enumerate() {
        let (c, m) = &refined[slot];
        frames_diag[i].zero_norm_patches = fused[slot].1;
        frames_diag[i].coarse_pixels = c.count_ones();
        frames_diag[i].mask_pixels = m.count_ones();
        frames[i] = FrameMask::Mask(m.clone());
        coarse[i] = Some(c.clone());
    }
    diagnostics.frames = frames_diag;
    diagnostics.batch_mean_psnr_db = Some(mean_psnr);
    diagnostics.weights = Some(weights);
    diagnostics.effective_k = Some(model.k);
    diagnostics.selection = Some(selection);
    Ok(PseudoMaskResult {
        frames,
        coarse,
        diagnostics,
    })
}
