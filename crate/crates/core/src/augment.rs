//! Copy-paste transient augmentation and token-grid masks.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbaImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{area_pool, threshold_grid, BinaryMask, Grid, ImageGrid, SoftMask};
use crate::rng::stream;
use crate::saliency::gaussian_kernel;

/// Patch-grid mask; `true` marks a masked (dropped) token.
pub type TokenMask = BinaryMask;

/// An RGBA sprite cropped to the tight bounding box of its nonzero alpha.
#[derive(Clone, Debug, PartialEq)]
pub struct PasteObject {
    sprite: RgbaImage,
    pub category: String,
}

impl PasteObject {
    pub fn new(sprite: RgbaImage, category: impl Into<String>) -> Result<Self> {
        let (w, h) = sprite.dimensions();
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, p) in sprite.enumerate_pixels() {
            if p.0[3] > 0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        if x0 == u32::MAX {
            return Err(Error::arg("sprite alpha is entirely zero"));
        }
        let sprite = if (x0, y0, x1, y1) == (0, 0, w, h) {
            sprite
        } else {
            imageops::crop_imm(&sprite, x0, y0, x1 - x0, y1 - y0).to_image()
        };
        Ok(Self {
            sprite,
            category: category.into(),
        })
    }

    pub fn sprite(&self) -> &RgbaImage {
        &self.sprite
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BankEntry {
    pub file: String,
    pub category: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BankManifest {
    pub objects: Vec<BankEntry>,
}

/// Loads `manifest.json` and the RGBA sprites it lists from `dir`.
pub fn load_object_bank(dir: &Path) -> Result<Vec<PasteObject>> {
    let manifest: BankManifest = crate::io::read_json(&dir.join("manifest.json"))?;
    manifest
        .objects
        .iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let img = image::open(&path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .into_rgba8();
            PasteObject::new(img, e.category.clone())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasteConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Pasted footprint's longer side as a fraction of `min(H, W)`.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Minimum gap between footprint box and each border, as a fraction of that axis.
    pub margin_fraction: f64,
    pub blur_sigma: f64,
    pub scene_probability: f64,
    pub per_view_probability: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for PasteConfig {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 2,
            scale_min: 0.25,
            scale_max: 0.35,
            margin_fraction: 0.15,
            blur_sigma: 3.0,
            scene_probability: 0.5,
            per_view_probability: 0.8,
            max_attempts: 100,
            seed: 0,
        }
    }
}

impl PasteConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.min_objects == 0
            || self.min_objects > self.max_objects
            || !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 1.0)
            || !(0.0..0.5).contains(&self.margin_fraction)
            || self.blur_sigma.is_nan()
            || self.blur_sigma < 0.0
            || !prob(self.scene_probability)
            || !prob(self.per_view_probability)
        {
            return Err(Error::arg(format!("invalid paste config {self:?}")));
        }
        Ok(())
    }
}

/// Where one object landed. `y`, `x`, `height`, `width` describe the tight box
/// of its mask footprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub object: usize,
    pub category: String,
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
    pub footprint_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasteReport {
    pub augmented: bool,
    pub per_view: bool,
    pub placements: Vec<Vec<PlacementRecord>>,
    pub skipped_objects: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PasteOutput {
    pub views: Vec<ImageGrid>,
    pub masks: Vec<BinaryMask>,
    pub report: PasteReport,
}

struct Placement {
    record: PlacementRecord,
    rgb: Vec<[f64; 3]>,
    footprint: Vec<bool>,
    feather: Vec<f64>,
}

/// Gaussian blur with zero padding, same size.
fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps = gaussian_kernel(2 * r as usize + 1, sigma);
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let o = k as isize - r;
                    let (yy, xx) = if along_x { (y, x + o) } else { (y + o, x) };
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        acc += t * src[yy as usize * w + xx as usize];
                    }
                }
                out[y as usize * w + x as usize] = acc;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn draw_placement(
    rng: &mut impl Rng,
    bank: &[PasteObject],
    (h, w): (usize, usize),
    cfg: &PasteConfig,
) -> Option<Placement> {
    let side = h.min(w) as f64;
    let lo = (cfg.scale_min * side).ceil() as u32;
    let hi = (cfg.scale_max * side).floor() as u32;
    if lo == 0 || lo > hi {
        return None;
    }
    for _ in 0..cfg.max_attempts {
        let object = rng.random_range(0..bank.len());
        let target = rng.random_range(lo..=hi);
        let sprite = bank[object].sprite();
        let (sw, sh) = sprite.dimensions();
        let longer = sw.max(sh) as f64;
        let rw = ((sw as f64 * target as f64 / longer).round() as u32).max(1);
        let rh = ((sh as f64 * target as f64 / longer).round() as u32).max(1);
        let resized = imageops::resize(sprite, rw, rh, FilterType::Triangle);

        // footprint: alpha > 0.5
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, p) in resized.enumerate_pixels() {
            if p.0[3] >= 128 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        if x0 == u32::MAX {
            continue;
        }
        let (fw, fh) = ((x1 - x0) as usize, (y1 - y0) as usize);
        let fl = fw.max(fh) as f64;
        if fl < cfg.scale_min * side || fl > cfg.scale_max * side {
            continue;
        }
        let y_lo = (cfg.margin_fraction * h as f64).ceil() as usize;
        let x_lo = (cfg.margin_fraction * w as f64).ceil() as usize;
        let y_hi = ((1.0 - cfg.margin_fraction) * h as f64).floor() as isize - fh as isize;
        let x_hi = ((1.0 - cfg.margin_fraction) * w as f64).floor() as isize - fw as isize;
        if y_hi < y_lo as isize || x_hi < x_lo as isize {
            continue;
        }
        let y = rng.random_range(y_lo..=y_hi as usize);
        let x = rng.random_range(x_lo..=x_hi as usize);

        let crop = imageops::crop_imm(&resized, x0, y0, fw as u32, fh as u32).to_image();
        let rgb: Vec<[f64; 3]> = crop
            .pixels()
            .map(|p| [0, 1, 2].map(|c| f64::from(p.0[c]) / 255.0))
            .collect();
        let alpha: Vec<f64> = crop.pixels().map(|p| f64::from(p.0[3]) / 255.0).collect();
        let footprint: Vec<bool> = crop.pixels().map(|p| p.0[3] >= 128).collect();
        let feather = blur(&alpha, fh, fw, cfg.blur_sigma);
        return Some(Placement {
            record: PlacementRecord {
                object,
                category: bank[object].category.clone(),
                y,
                x,
                height: fh,
                width: fw,
                footprint_pixels: footprint.iter().filter(|&&f| f).count(),
            },
            rgb,
            footprint,
            feather,
        });
    }
    None
}

fn draw_plan(
    rng: &mut impl Rng,
    bank: &[PasteObject],
    shape: (usize, usize),
    cfg: &PasteConfig,
) -> (Vec<Placement>, usize) {
    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut placed = Vec::with_capacity(count);
    let mut skipped = 0;
    for _ in 0..count {
        match draw_placement(rng, bank, shape, cfg) {
            Some(p) => placed.push(p),
            None => {
                log::warn!(
                    "could not place an object within {} attempts; skipped",
                    cfg.max_attempts
                );
                skipped += 1;
            }
        }
    }
    (placed, skipped)
}

fn composite(view: &ImageGrid, plan: &[Placement]) -> (ImageGrid, BinaryMask) {
    let mut out = view.clone();
    let mut mask = Grid::filled(view.height(), view.width(), false);
    for p in plan {
        let r = &p.record;
        for dy in 0..r.height {
            for dx in 0..r.width {
                let i = dy * r.width + dx;
                let (y, x) = (r.y + dy, r.x + dx);
                let a = p.feather[i];
                let bg = out.rgb(y, x);
                let px: Vec<f64> = (0..3).map(|c| a * p.rgb[i][c] + (1.0 - a) * bg[c]).collect();
                if view.channels() == 3 {
                    out.set_pixel(y, x, &px);
                } else {
                    out.set_pixel(y, x, &[0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]]);
                }
                if p.footprint[i] {
                    mask.set(y, x, true);
                }
            }
        }
    }
    (out, mask)
}

/// Pastes bank objects into the views of one scene. Randomness comes from
/// streams keyed by `(cfg.seed, scene_id)` and `(cfg.seed, scene_id, view)`.
pub fn copy_paste(views: &[ImageGrid], bank: &[PasteObject], cfg: &PasteConfig, scene_id: u64) -> Result<PasteOutput> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(Error::arg("object bank is empty"));
    }
    let Some(first) = views.first() else {
        return Err(Error::arg("scene has no views"));
    };
    let shape = (first.height(), first.width());
    if views.iter().any(|v| (v.height(), v.width()) != shape) {
        return Err(Error::dim("all views must share one size"));
    }
    let mut scene_rng = stream(cfg.seed, &[scene_id, 0]);
    let augmented = scene_rng.random_bool(cfg.scene_probability);
    if !augmented {
        return Ok(PasteOutput {
            views: views.to_vec(),
            masks: vec![Grid::filled(shape.0, shape.1, false); views.len()],
            report: PasteReport {
                augmented: false,
                per_view: false,
                placements: vec![Vec::new(); views.len()],
                skipped_objects: 0,
            },
        });
    }
    let per_view = scene_rng.random_bool(cfg.per_view_probability);
    let shared = (!per_view).then(|| draw_plan(&mut scene_rng, bank, shape, cfg));

    let mut out = PasteOutput {
        views: Vec::with_capacity(views.len()),
        masks: Vec::with_capacity(views.len()),
        report: PasteReport {
            augmented,
            per_view,
            placements: Vec::with_capacity(views.len()),
            skipped_objects: shared.as_ref().map_or(0, |s| s.1),
        },
    };
    for (i, view) in views.iter().enumerate() {
        let own;
        let plan = match &shared {
            Some((plan, _)) => plan,
            None => {
                let mut rng = stream(cfg.seed, &[scene_id, 1 + i as u64]);
                own = draw_plan(&mut rng, bank, shape, cfg);
                out.report.skipped_objects += own.1;
                &own.0
            }
        };
        let (img, mask) = composite(view, plan);
        out.views.push(img);
        out.masks.push(mask);
        out.report
            .placements
            .push(plan.iter().map(|p| p.record.clone()).collect());
    }
    Ok(out)
}

/// A 4-connected block of `round(ratio * h * w)` tokens grown from a random
/// seed token, expanding through a randomly ordered frontier.
pub fn clustered_token_mask(h: usize, w: usize, ratio: f64, seed: u64) -> Result<TokenMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::arg(format!("mask ratio {ratio} outside [0,1]")));
    }
    let total = h * w;
    let target = (ratio * total as f64).round() as usize;
    let mut mask = Grid::filled(h, w, false);
    if target == 0 {
        return Ok(mask);
    }
    let mut rng = stream(seed, &[0x746f6b]);
    let mut queued = vec![false; total];
    let start = rng.random_range(0..total);
    let mut frontier = vec![start];
    queued[start] = true;
    let mut count = 0;
    while count < target {
        let pick = rng.random_range(0..frontier.len());
        let t = frontier.swap_remove(pick);
        mask.data_mut()[t] = true;
        count += 1;
        let (y, x) = (t / w, t % w);
        let mut push = |n: usize| {
            if !queued[n] {
                queued[n] = true;
                frontier.push(n);
            }
        };
        if y > 0 {
            push(t - w);
        }
        if y + 1 < h {
            push(t + w);
        }
        if x > 0 {
            push(t - 1);
        }
        if x + 1 < w {
            push(t + 1);
        }
    }
    Ok(mask)
}

/// True if the set tokens form a single 4-connected component (or none).
pub fn is_four_connected(mask: &TokenMask) -> bool {
    let (h, w) = mask.shape();
    let Some(start) = mask.data().iter().position(|&v| v) else {
        return true;
    };
    let mut seen = vec![false; h * w];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(t) = stack.pop() {
        count += 1;
        let (y, x) = (t / w, t % w);
        let mut nbrs = Vec::with_capacity(4);
        if y > 0 {
            nbrs.push(t - w);
        }
        if y + 1 < h {
            nbrs.push(t + w);
        }
        if x > 0 {
            nbrs.push(t - 1);
        }
        if x + 1 < w {
            nbrs.push(t + 1);
        }
        for n in nbrs {
            if mask.data()[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    count == mask.count_ones()
}

/// Token mask from a per-pixel motion probability: area-pool to the patch
/// grid, then mark patches whose score strictly exceeds `tau`.
pub fn dynamic_token_mask(motion_prob: &SoftMask, patch: usize, tau: f64) -> Result<TokenMask> {
    let (h, w) = motion_prob.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "{h}x{w} is not divisible into {patch}-pixel patches"
        )));
    }
    let pooled = area_pool(motion_prob.grid(), h / patch, w / patch)?;
    Ok(threshold_grid(&pooled, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgba;
    use proptest::prelude::*;

    fn disc_sprite(w: u32, h: u32) -> RgbaImage {
        RgbaImage::from_fn(w, h, |x, y| {
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            let inside = ((x as f64 + 0.5 - cx) / cx).powi(2) + ((y as f64 + 0.5 - cy) / cy).powi(2) <= 1.0;
            Rgba([200, 40, 30, if inside { 255 } else { 0 }])
        })
    }

    fn bank() -> Vec<PasteObject> {
        vec![
            PasteObject::new(disc_sprite(60, 40), "blob").unwrap(),
            PasteObject::new(disc_sprite(30, 90), "tall").unwrap(),
        ]
    }

    fn views(n: usize, size: usize) -> Vec<ImageGrid> {
        (0..n)
            .map(|i| ImageGrid::filled(size, size, 3, 0.1 + 0.1 * i as f64).unwrap())
            .collect()
    }

    #[test]
    fn sprite_is_cropped_tight() {
        let mut img = RgbaImage::new(10, 10);
        img.put_pixel(3, 4, Rgba([1, 2, 3, 9]));
        img.put_pixel(6, 5, Rgba([1, 2, 3, 9]));
        let o = PasteObject::new(img, "x").unwrap();
        assert_eq!(o.sprite().dimensions(), (4, 2));
        assert!(PasteObject::new(RgbaImage::new(3, 3), "empty").is_err());
    }

    #[test]
    fn zero_probability_is_identity() {
        let cfg = PasteConfig {
            scene_probability: 0.0,
            ..Default::default()
        };
        let v = views(3, 64);
        let out = copy_paste(&v, &bank(), &cfg, 7).unwrap();
        assert_eq!(out.views, v);
        assert!(out.masks.iter().all(|m| m.count_ones() == 0));
        assert!(!out.report.augmented);
    }

    #[test]
    fn empty_bank_rejected() {
        assert!(matches!(
            copy_paste(&views(1, 32), &[], &PasteConfig::default(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn shared_plan_repeats_across_views() {
        let cfg = PasteConfig {
            scene_probability: 1.0,
            per_view_probability: 0.0,
            ..Default::default()
        };
        let out = copy_paste(&views(3, 128), &bank(), &cfg, 1).unwrap();
        assert!(!out.report.per_view);
        assert_eq!(out.report.placements[0], out.report.placements[2]);
        assert_eq!(out.masks[0], out.masks[1]);
        assert!(out.masks[0].count_ones() > 0);
    }

    #[test]
    fn adding_views_keeps_earlier_draws() {
        let cfg = PasteConfig {
            scene_probability: 1.0,
            per_view_probability: 1.0,
            ..Default::default()
        };
        let two = copy_paste(&views(2, 128), &bank(), &cfg, 3).unwrap();
        let three = copy_paste(&views(3, 128), &bank(), &cfg, 3).unwrap();
        assert_eq!(two.report.placements[..], three.report.placements[..2]);
    }

    #[test]
    fn unplaceable_objects_are_skipped() {
        // 0.45 of the side never fits inside 30% margins
        let cfg = PasteConfig {
            scene_probability: 1.0,
            scale_min: 0.45,
            scale_max: 0.5,
            margin_fraction: 0.3,
            max_attempts: 5,
            ..Default::default()
        };
        let out = copy_paste(&views(1, 64), &bank(), &cfg, 0).unwrap();
        assert!(out.report.skipped_objects >= 1);
        assert_eq!(out.masks[0].count_ones(), 0);
    }

    #[test]
    fn token_mask_examples() {
        let m = clustered_token_mask(16, 16, 0.10, 42).unwrap();
        assert_eq!(m.count_ones(), 26);
        assert!(is_four_connected(&m));
        assert_eq!(m, clustered_token_mask(16, 16, 0.10, 42).unwrap());
        assert_eq!(clustered_token_mask(16, 16, 0.0, 1).unwrap().count_ones(), 0);
        assert_eq!(clustered_token_mask(16, 16, 1.0, 1).unwrap().count_ones(), 256);
        assert!(clustered_token_mask(4, 4, 1.5, 1).is_err());
    }

    #[test]
    fn connectivity_checker() {
        let diag = Grid::from_fn(3, 3, |y, x| y == x);
        assert!(!is_four_connected(&diag));
        assert!(is_four_connected(&Grid::filled(3, 3, false)));
    }

    #[test]
    fn dynamic_token_examples() {
        let zero = SoftMask::new(Grid::filled(64, 64, 0.0)).unwrap();
        assert_eq!(dynamic_token_mask(&zero, 16, 0.5).unwrap().count_ones(), 0);
        let one = SoftMask::new(Grid::from_fn(64, 64, |y, x| {
            if (16..32).contains(&y) && (32..48).contains(&x) {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let t = dynamic_token_mask(&one, 16, 0.5).unwrap();
        assert_eq!(t.shape(), (4, 4));
        assert_eq!(t.count_ones(), 1);
        assert!(*t.get(1, 2));
        let half = SoftMask::new(Grid::filled(32, 32, 0.5)).unwrap();
        assert_eq!(dynamic_token_mask(&half, 16, 0.5).unwrap().count_ones(), 0);
        assert!(matches!(
            dynamic_token_mask(&half, 5, 0.5),
            Err(Error::InvalidDimension(_))
        ));
    }

    proptest! {
        #[test]
        fn token_count_is_exact(h in 1usize..20, w in 1usize..20, ratio in 0.0f64..=1.0, seed in any::<u64>()) {
            let m = clustered_token_mask(h, w, ratio, seed).unwrap();
            prop_assert_eq!(m.count_ones(), (ratio * (h * w) as f64).round() as usize);
            prop_assert!(is_four_connected(&m));
        }

        #[test]
        fn paste_is_deterministic_and_masks_nonempty(scene in any::<u64>()) {
            let cfg = PasteConfig { scene_probability: 1.0, ..Default::default() };
            let a = copy_paste(&views(2, 96), &bank(), &cfg, scene).unwrap();
            let b = copy_paste(&views(2, 96), &bank(), &cfg, scene).unwrap();
            prop_assert_eq!(&a, &b);
            for recs in &a.report.placements {
                for r in recs {
                    prop_assert!(r.footprint_pixels > 0);
                }
            }
        }
    }
}
