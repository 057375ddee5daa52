//! Transient-aware view synthesis toolkit: patch grids and morphology,
//! camera ray maps, saliency fusion, pseudo-mask construction with GrabCut
//! refinement, masked evaluation metrics and training-time augmentation.

pub mod augment;
pub mod camera;
pub mod cluster;
pub mod error;
pub mod fixtures;
pub mod grabcut;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pseudomask;
pub mod rng;
pub mod saliency;

pub use augment::{clustered_token_mask, copy_paste, dynamic_token_mask, PasteConfig, PasteObject, TokenMask};
pub use camera::{plucker_ray_map, segment_trajectory, Intrinsics, PluckerRayMap, Pose, Rot6D, TrajectorySegment};
pub use error::{Error, Result};
pub use grabcut::{grabcut_refine, GrabcutParams, Trimap, TrimapLabel};
pub use grid::{BinaryMask, Grid, ImageGrid, PatchFeatureMap, RealGrid, SaliencyGrid, SoftMask};
pub use metrics::{mask_iou_recall, masked_lpips, masked_psnr, masked_ssim, LayerDiffStack, MaskQuality, Psnr};
pub use pseudomask::{build_pseudo_masks, FrameMask, PseudoMaskConfig, PseudoMaskResult};
pub use saliency::{adaptive_weights, fuse_saliency, FusionWeights, SsimParams};
