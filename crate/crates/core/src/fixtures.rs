//! Synthetic scenes with known ground truth: a textured static background,
//! a faithful static rendering, and a solid-colored square transient that
//! moves across some frames. Patch features mimic a semantic backbone: each
//! background patch carries one of a few texture-class embeddings, and the
//! transient contributes its own embedding in proportion to patch coverage.

use rand::Rng;

use crate::error::Result;
use crate::grid::{BinaryMask, Grid, ImageGrid, PatchFeatureMap};
use crate::metrics::psnr;
use crate::rng::stream;

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub size: usize,
    pub patch: usize,
    pub frames: usize,
    /// Frames `0..mover_frames` contain the transient; the rest are clean.
    pub mover_frames: usize,
    pub mover_side: usize,
    pub feature_dim: usize,
    pub texture_classes: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            size: 256,
            patch: 16,
            frames: 8,
            mover_frames: 6,
            mover_side: 48,
            feature_dim: 32,
            texture_classes: 6,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub observed: Vec<ImageGrid>,
    pub rendered: Vec<ImageGrid>,
    pub observed_features: Vec<PatchFeatureMap>,
    pub rendered_features: Vec<PatchFeatureMap>,
    pub ground_truth: Vec<BinaryMask>,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.35, 0.45, 0.30],
    [0.55, 0.55, 0.50],
    [0.30, 0.38, 0.55],
    [0.50, 0.42, 0.32],
    [0.25, 0.30, 0.28],
    [0.62, 0.60, 0.66],
];
const MOVER_COLOR: [f64; 3] = [0.86, 0.16, 0.12];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Top-left corner of the transient in frame `f`.
pub fn mover_origin(spec: &SceneSpec, f: usize) -> (usize, usize) {
    let span = spec.size - spec.mover_side - 2 * spec.patch;
    let steps = spec.mover_frames.max(2) - 1;
    let y = spec.patch + 5 + (span - 10) * f / steps;
    let x = spec.patch + 3 + (span - 6) * (steps - f.min(steps)) / steps;
    (y.min(spec.size - spec.mover_side), x.min(spec.size - spec.mover_side))
}

pub fn build_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let (n, p, d) = (spec.size, spec.patch, spec.feature_dim);
    let g = n / p;
    let mut rng = stream(spec.seed, &[0]);

    // background: 8x8 texture cells drawn from the palette plus fine noise
    let cell = 8;
    let cells = n.div_ceil(cell);
    let cell_color: Vec<[f64; 3]> = (0..cells * cells)
        .map(|_| {
            let base = PALETTE[rng.random_range(0..PALETTE.len())];
            base.map(|c| c + rng.random_range(-0.05..0.05))
        })
        .collect();
    let mut background = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let c = cell_color[(y / cell) * cells + x / cell];
            let shade = 0.04 * ((x as f64 / 9.0).sin() + (y as f64 / 13.0).cos());
            for ch in c {
                background.push((ch + shade + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0));
            }
        }
    }

    // texture-class embeddings and the transient embedding, all mutually distinct
    let class_vecs: Vec<Vec<f64>> = (0..spec.texture_classes)
        .map(|_| unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let mover_vec = unit((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let patch_class: Vec<usize> = (0..g * g).map(|_| rng.random_range(0..spec.texture_classes)).collect();
    let bg_features: Vec<Vec<f64>> = patch_class
        .iter()
        .map(|&c| {
            unit(
                class_vecs[c]
                    .iter()
                    .map(|v| v + rng.random_range(-0.08..0.08))
                    .collect(),
            )
        })
        .collect();

    let mut scene = SyntheticScene {
        observed: Vec::new(),
        rendered: Vec::new(),
        observed_features: Vec::new(),
        rendered_features: Vec::new(),
        ground_truth: Vec::new(),
    };
    for f in 0..spec.frames {
        let mut frng = stream(spec.seed, &[1, f as u64]);
        let has_mover = f < spec.mover_frames;
        let (my, mx) = mover_origin(spec, f);
        let inside = |y: usize, x: usize| {
            has_mover && (my..my + spec.mover_side).contains(&y) && (mx..mx + spec.mover_side).contains(&x)
        };
        let gt = Grid::from_fn(n, n, inside);

        let mut obs = background.clone();
        for y in 0..n {
            for x in 0..n {
                if inside(y, x) {
                    let i = (y * n + x) * 3;
                    let jitter = 0.03 * (((x + y) % 5) as f64 / 4.0 - 0.5);
                    for c in 0..3 {
                        obs[i + c] = (MOVER_COLOR[c] + jitter).clamp(0.0, 1.0);
                    }
                }
            }
        }
        let rend: Vec<f64> = background
            .iter()
            .map(|v| (v + frng.random_range(-0.01..0.01)).clamp(0.0, 1.0))
            .collect();

        let mut of = Vec::with_capacity(g * g * d);
        let mut rf = Vec::with_capacity(g * g * d);
        for py in 0..g {
            for px in 0..g {
                let q = py * g + px;
                let cover =
                    (0..p * p).filter(|i| inside(py * p + i / p, px * p + i % p)).count() as f64 / (p * p) as f64;
                let o = unit(
                    bg_features[q]
                        .iter()
                        .zip(&mover_vec)
                        .map(|(b, m)| (1.0 - cover) * b + cover * m + frng.random_range(-0.01..0.01))
                        .collect(),
                );
                let r = unit(
                    bg_features[q]
                        .iter()
                        .map(|b| b + frng.random_range(-0.01..0.01))
                        .collect(),
                );
                of.extend(o.iter().map(|&v| v as f32));
                rf.extend(r.iter().map(|&v| v as f32));
            }
        }
        scene.observed.push(ImageGrid::new(n, n, 3, obs)?);
        scene.rendered.push(ImageGrid::new(n, n, 3, rend)?);
        scene.observed_features.push(PatchFeatureMap::new(g, g, d, of)?);
        scene.rendered_features.push(PatchFeatureMap::new(g, g, d, rf)?);
        scene.ground_truth.push(gt);
    }
    Ok(scene)
}

/// Adds seeded uniform noise to `img`, with amplitude bisected so the result
/// has PSNR `target_db` against `img` (within 0.05 dB).
pub fn degrade_to_psnr(img: &ImageGrid, target_db: f64, seed: u64) -> Result<ImageGrid> {
    let mut rng = stream(seed, &[0xdead]);
    let noise: Vec<f64> = (0..img.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let apply = |amp: f64| {
        let data = img
            .data()
            .iter()
            .zip(&noise)
            .map(|(v, n)| (v + amp * n).clamp(0.0, 1.0))
            .collect();
        ImageGrid::new(img.height(), img.width(), img.channels(), data)
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if psnr(img, &apply(mid)?)?.db > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    apply(0.5 * (lo + hi))
}
