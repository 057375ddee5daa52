use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wildsieve_core::augment::{clustered_token_mask, copy_paste, load_object_bank, PasteConfig, PasteReport};
use wildsieve_core::camera::{plucker_ray_map, segment_trajectory, CameraFile, TrajectorySegment};
use wildsieve_core::fixtures::{build_scene, SceneSpec};
use wildsieve_core::grabcut::{grabcut_with_trace, GrabcutParams};
use wildsieve_core::io::{
    ensure_dir, list_by_stem, pair_frames, read_features, read_image, read_json, read_layers, read_mask,
    read_soft_mask, read_trimap, write_features, write_image, write_json, write_mask,
};
use wildsieve_core::metrics::{
    mask_iou_recall, masked_lpips, masked_psnr, masked_ssim, FrameMaskQuality, FrameMetrics, MaskQuality,
    MaskQualityReport, MetricsReport,
};
use wildsieve_core::pseudomask::{build_pseudo_masks, FrameDiagnostics, PseudoMaskConfig, PseudoMaskDiagnostics};
use wildsieve_core::{ImageGrid, SsimParams};

use crate::{
    AugmentArgs, Command, EvalmaskArgs, FixtureArgs, GrabcutDebugArgs, MetricsArgs, PseudomaskArgs, RaymapArgs,
    SegmentArgs, TokenmaskArgs,
};

pub const ECHO_FILE: &str = "config.echo.json";

/// Everything needed to reproduce a run. The thread count is left out
/// because outputs do not depend on it.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Resolved module configuration, including knobs without flags.
    pub effective: serde_json::Value,
}

pub fn run(command: &Command) -> Result<()> {
    let (echo_dir, effective) = match command {
        Command::Pseudomask(a) => (a.out.clone(), to_value(pseudomask(a)?)?),
        Command::Metrics(a) => (parent(&a.report), to_value(metrics(a)?)?),
        Command::Evalmask(a) => (parent(&a.report), to_value(evalmask(a)?)?),
        Command::Augment(a) => (a.out.clone(), to_value(augment(a)?)?),
        Command::Raymap(a) => (a.out.clone(), to_value(raymap(a)?)?),
        Command::Tokenmask(a) => (parent(&a.out), to_value(tokenmask(a)?)?),
        Command::GrabcutDebug(a) => (parent(&a.out), to_value(grabcut_debug(a)?)?),
        Command::Segment(a) => (parent(&a.out), to_value(segment(a)?)?),
        Command::Fixture(a) => (a.out.clone(), to_value(fixture(a)?)?),
        Command::Rerun(a) => {
            let echo: ConfigEcho = read_json(&a.echo)?;
            if matches!(echo.command, Command::Rerun(_)) {
                bail!(wildsieve_core::Error::InvalidArgument(
                    "echo records another rerun".into()
                ));
            }
            log::info!("rerunning {} {} from {}", echo.tool, echo.version, a.echo.display());
            return run(&echo.command);
        }
    };
    let echo = ConfigEcho {
        tool: "wildsieve".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
        effective,
    };
    ensure_dir(&echo_dir)?;
    write_json(&echo_dir.join(ECHO_FILE), &echo)?;
    Ok(())
}

fn to_value<T: Serialize>(v: T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn parent(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(file: &Path) -> Result<()> {
    Ok(ensure_dir(&parent(file))?)
}

#[derive(Serialize)]
struct FrameEntry<'a> {
    frame: &'a str,
    mask_file: Option<String>,
    #[serde(flatten)]
    diagnostics: &'a FrameDiagnostics,
}

#[derive(Serialize)]
struct PseudomaskReport<'a> {
    frames: Vec<FrameEntry<'a>>,
    batch_mean_psnr_db: Option<f64>,
    weights: &'a Option<wildsieve_core::FusionWeights>,
    effective_k: Option<usize>,
    selection: &'a Option<wildsieve_core::pseudomask::ClusterSelection>,
    all_gated: bool,
}

fn pseudomask(a: &PseudomaskArgs) -> Result<PseudoMaskConfig> {
    let mut cfg = PseudoMaskConfig {
        k_clusters: a.k,
        psnr_gate_db: a.psnr_gate,
        seed: a.seed,
        min_component_fraction: a.min_component_fraction,
        refine_band: a.refine_band,
        ..Default::default()
    };
    cfg.grabcut.gamma = a.gamma;
    cfg.grabcut.iterations = a.grabcut_iterations;
    cfg.validate()?;

    let frames = pair_frames(&[
        (&a.observed, "png"),
        (&a.rendered, "png"),
        (&a.features, "wrzf"),
        (&a.rendered_features, "wrzf"),
    ])?;
    if frames.is_empty() {
        bail!(wildsieve_core::Error::InvalidArgument(format!(
            "no frames in {}",
            a.observed.display()
        )));
    }
    log::info!("loading {} frames", frames.len());
    let loaded: Vec<_> = frames
        .par_iter()
        .map(|(_, p)| -> wildsieve_core::Result<_> {
            Ok((
                read_image(&p[0])?,
                read_image(&p[1])?,
                read_features(&p[2])?,
                read_features(&p[3])?,
            ))
        })
        .collect::<wildsieve_core::Result<_>>()?;
    let (mut obs, mut rend, mut of, mut rf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (o, r, fo, fr) in loaded {
        obs.push(o);
        rend.push(r);
        of.push(fo);
        rf.push(fr);
    }
    let result = build_pseudo_masks(&obs, &rend, &of, &rf, &cfg)?;

    ensure_dir(&a.out)?;
    let mut written = Vec::with_capacity(frames.len());
    for ((stem, _), frame) in frames.iter().zip(&result.frames) {
        match frame.mask() {
            Some(m) => {
                let name = format!("{stem}.png");
                write_mask(&a.out.join(&name), m)?;
                written.push(Some(name));
            }
            None => written.push(None),
        }
    }
    let d: &PseudoMaskDiagnostics = &result.diagnostics;
    let report = PseudomaskReport {
        frames: frames
            .iter()
            .zip(&d.frames)
            .zip(written)
            .map(|(((stem, _), diag), mask_file)| FrameEntry {
                frame: stem,
                mask_file,
                diagnostics: diag,
            })
            .collect(),
        batch_mean_psnr_db: d.batch_mean_psnr_db,
        weights: &d.weights,
        effective_k: d.effective_k,
        selection: &d.selection,
        all_gated: d.all_gated,
    };
    write_json(&a.out.join("diagnostics.json"), &report)?;
    Ok(cfg)
}

fn metrics(a: &MetricsArgs) -> Result<SsimParams> {
    let params = SsimParams::default();
    let mut dirs: Vec<(&Path, &str)> = vec![(&a.observed, "png"), (&a.rendered, "png"), (&a.mask, "png")];
    if let Some(l) = &a.lpips {
        dirs.push((l, "wrzl"));
    }
    if let Some(g) = &a.gt {
        dirs.push((g, "png"));
    }
    let frames = pair_frames(&dirs)?;
    if frames.is_empty() {
        bail!(wildsieve_core::Error::InvalidArgument(format!(
            "no frames in {}",
            a.observed.display()
        )));
    }
    let gt_slot = 3 + usize::from(a.lpips.is_some());
    let rows: Vec<(FrameMetrics, Option<MaskQuality>)> = frames
        .par_iter()
        .map(|(stem, p)| -> wildsieve_core::Result<_> {
            let obs = read_image(&p[0])?;
            let rend = read_image(&p[1])?;
            let raw = read_soft_mask(&p[2])?;
            let mask = if a.static_region { raw.complement() } else { raw };
            let psnr = masked_psnr(&obs, &rend, &mask)?;
            let ssim = masked_ssim(&obs, &rend, &mask, &params)?;
            let lpips = match &a.lpips {
                Some(_) => Some(masked_lpips(&read_layers(&p[3])?, &mask)?),
                None => None,
            };
            let quality = match &a.gt {
                Some(_) => Some(mask_iou_recall(&read_mask(&p[2])?, &read_mask(&p[gt_slot])?)?),
                None => None,
            };
            let row = FrameMetrics {
                frame: stem.clone(),
                psnr_masked: psnr.db,
                ssim_masked: ssim,
                lpips_masked: lpips,
                saturated: psnr.saturated,
            };
            Ok((row, quality))
        })
        .collect::<wildsieve_core::Result<_>>()?;
    let quality: Option<Vec<MaskQuality>> = rows.iter().map(|r| r.1).collect();
    let report = MetricsReport::from_frames(rows.into_iter().map(|r| r.0).collect(), quality.as_deref());
    ensure_parent(&a.report)?;
    write_json(&a.report, &report)?;
    Ok(params)
}

fn evalmask(a: &EvalmaskArgs) -> Result<()> {
    let frames = pair_frames(&[(&a.pred, "png"), (&a.gt, "png")])?;
    let per_frame: Vec<FrameMaskQuality> = frames
        .par_iter()
        .map(|(stem, p)| -> wildsieve_core::Result<_> {
            let q = mask_iou_recall(&read_mask(&p[0])?, &read_mask(&p[1])?)?;
            Ok(FrameMaskQuality {
                frame: stem.clone(),
                iou: q.iou,
                recall: q.recall,
            })
        })
        .collect::<wildsieve_core::Result<_>>()?;
    ensure_parent(&a.report)?;
    write_json(&a.report, &MaskQualityReport::from_frames(per_frame))?;
    Ok(())
}

/// Stable 64-bit FNV-1a, used to key each scene's random stream by name.
fn scene_key(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Serialize)]
struct SceneReport<'a> {
    scene: &'a str,
    scene_key: u64,
    views: Vec<String>,
    #[serde(flatten)]
    report: PasteReport,
}

fn augment(a: &AugmentArgs) -> Result<PasteConfig> {
    let cfg = PasteConfig {
        max_objects: a.max_objects,
        scale_min: a.scale_min,
        scale_max: a.scale_max,
        margin_fraction: a.margin,
        blur_sigma: a.blur_sigma,
        scene_probability: a.scene_probability,
        per_view_probability: a.per_view_probability,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let bank = load_object_bank(&a.objects)?;
    let mut scenes = Vec::new();
    for entry in fs::read_dir(&a.scenes).with_context(|| format!("reading {}", a.scenes.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                scenes.push((name.to_string(), path));
            }
        }
    }
    scenes.sort();
    log::info!("augmenting {} scenes with {} objects", scenes.len(), bank.len());
    scenes
        .par_iter()
        .map(|(name, dir)| -> wildsieve_core::Result<()> {
            let views = list_by_stem(dir, "png")?;
            let images: Vec<ImageGrid> = views
                .values()
                .map(|p| read_image(p))
                .collect::<wildsieve_core::Result<_>>()?;
            let key = scene_key(name);
            let out = copy_paste(&images, &bank, &cfg, key)?;
            let scene_out = a.out.join(name);
            let mask_out = scene_out.join("paste_masks");
            ensure_dir(&mask_out)?;
            for ((stem, _), (img, mask)) in views.iter().zip(out.views.iter().zip(&out.masks)) {
                write_image(&scene_out.join(format!("{stem}.png")), img)?;
                write_mask(&mask_out.join(format!("{stem}.png")), mask)?;
            }
            let report = SceneReport {
                scene: name,
                scene_key: key,
                views: views.keys().cloned().collect(),
                report: out.report,
            };
            write_json(&scene_out.join("paste.json"), &report)
        })
        .collect::<wildsieve_core::Result<Vec<()>>>()?;
    Ok(cfg)
}

fn raymap(a: &RaymapArgs) -> Result<()> {
    if a.height == 0 || a.width == 0 {
        bail!(wildsieve_core::Error::InvalidDimension(
            "ray map size must be positive".into()
        ));
    }
    let cam = CameraFile::load(&a.camera)?;
    let poses = cam.poses()?;
    ensure_dir(&a.out)?;
    poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let map = plucker_ray_map(&cam.intrinsics, pose, a.height, a.width).to_feature_map();
            write_features(&a.out.join(format!("frame_{i:05}.wrzf")), &map)
        })
        .collect::<wildsieve_core::Result<Vec<()>>>()?;
    Ok(())
}

fn tokenmask(a: &TokenmaskArgs) -> Result<()> {
    let mask = clustered_token_mask(a.height, a.width, a.ratio, a.seed)?;
    ensure_parent(&a.out)?;
    write_mask(&a.out, &mask)?;
    Ok(())
}

#[derive(Serialize)]
struct GrabcutTrace {
    params: GrabcutParams,
    energies: Vec<f64>,
    foreground_pixels: usize,
}

fn grabcut_debug(a: &GrabcutDebugArgs) -> Result<GrabcutParams> {
    let params = GrabcutParams {
        gamma: a.gamma,
        component_count: a.components,
        iterations: a.iterations,
        ..Default::default()
    };
    let image = read_image(&a.image)?;
    let trimap = read_trimap(&a.trimap)?;
    let outcome = grabcut_with_trace(&image, &trimap, &params, a.seed)?;
    ensure_parent(&a.out)?;
    write_mask(&a.out, &outcome.mask)?;
    let trace = GrabcutTrace {
        params,
        energies: outcome.energies,
        foreground_pixels: outcome.mask.count_ones(),
    };
    println!("{}", serde_json::to_string_pretty(&trace)?);
    Ok(params)
}

fn segment(a: &SegmentArgs) -> Result<()> {
    let cam = CameraFile::load(&a.camera)?;
    let centers: Vec<_> = cam.poses()?.iter().map(|p| p.center()).collect();
    let segments: Vec<TrajectorySegment> = segment_trajectory(&centers, a.tau)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &segments)?;
    Ok(())
}

fn fixture(a: &FixtureArgs) -> Result<()> {
    let spec = SceneSpec {
        seed: a.seed,
        ..Default::default()
    };
    let scene = build_scene(&spec)?;
    let dirs = ["observed", "rendered", "features", "rendered_features", "gt"].map(|d| a.out.join(d));
    for d in &dirs {
        ensure_dir(d)?;
    }
    for f in 0..spec.frames {
        let stem = format!("frame_{f:03}");
        write_image(&dirs[0].join(format!("{stem}.png")), &scene.observed[f])?;
        write_image(&dirs[1].join(format!("{stem}.png")), &scene.rendered[f])?;
        write_features(&dirs[2].join(format!("{stem}.wrzf")), &scene.observed_features[f])?;
        write_features(&dirs[3].join(format!("{stem}.wrzf")), &scene.rendered_features[f])?;
        write_mask(&dirs[4].join(format!("{stem}.png")), &scene.ground_truth[f])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_key_is_stable() {
        assert_eq!(scene_key(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(scene_key("a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(scene_key("scene_01"), scene_key("scene_10"));
    }

    #[test]
    fn parent_of_bare_file_is_cwd() {
        assert_eq!(parent(Path::new("r.json")), PathBuf::from("."));
        assert_eq!(parent(Path::new("a/r.json")), PathBuf::from("a"));
    }
}
