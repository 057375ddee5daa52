//! Raster and patch-grid primitives: images, masks, feature maps, and the
//! pooling / normalization / morphology operations shared by every stage.

use crate::error::{Error, Result};

/// A row-major 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Real-valued grid. Used for SSIM maps, dissimilarity maps and pooled masks.
pub type RealGrid = Grid<f64>;

/// Patch-resolution saliency (z-scored values are unbounded).
pub type SaliencyGrid = RealGrid;

/// `{0,1}` mask; `true` marks foreground (dynamic) pixels.
pub type BinaryMask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }
}

impl RealGrid {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl BinaryMask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn to_real(&self) -> RealGrid {
        self.map(|&v| if v { 1.0 } else { 0.0 })
    }

    /// Pointwise subset test.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        }
    }
}

/// Image with unit-interval intensities, row-major, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::dim(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("image intensity {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Writes one pixel; values are clamped to `[0,1]`.
    pub fn set_pixel(&mut self, y: usize, x: usize, value: &[f64]) {
        let i = (y * self.width + x) * self.channels;
        for (dst, &v) in self.data[i..i + self.channels].iter_mut().zip(value) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// RGB color of a pixel; single-channel images replicate the gray value.
    #[inline]
    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let p = self.pixel(y, x);
        if self.channels == 3 {
            [p[0], p[1], p[2]]
        } else {
            [p[0]; 3]
        }
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`; identity for single-channel images.
    pub fn grayscale(&self) -> RealGrid {
        if self.channels == 1 {
            return Grid {
                height: self.height,
                width: self.width,
                data: self.data.clone(),
            };
        }
        Grid {
            height: self.height,
            width: self.width,
            data: self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }
}

/// Real mask in `[0,1]` used to weight metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask(RealGrid);

impl SoftMask {
    pub fn new(grid: RealGrid) -> Result<Self> {
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("soft mask value {v} outside [0,1]")));
        }
        Ok(Self(grid))
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1.0))
    }

    /// Complement `1 - M`, e.g. the static region of a transient mask.
    pub fn complement(&self) -> Self {
        Self(self.0.map(|v| 1.0 - v))
    }

    pub fn grid(&self) -> &RealGrid {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

impl From<&BinaryMask> for SoftMask {
    fn from(m: &BinaryMask) -> Self {
        SoftMask(m.to_real())
    }
}

/// Per-patch embedding grid, `h x w x d`, row-major, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatureMap {
    grid_height: usize,
    grid_width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl PatchFeatureMap {
    pub fn new(grid_height: usize, grid_width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid_height * grid_width * dim {
            return Err(Error::dim(format!(
                "feature map {grid_height}x{grid_width}x{dim} needs {} values, got {}",
                grid_height * grid_width * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("feature map contains non-finite values"));
        }
        Ok(Self {
            grid_height,
            grid_width,
            dim,
            data,
        })
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector of patch `p` in row-major patch order.
    #[inline]
    pub fn feature(&self, p: usize) -> &[f32] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn patch_count(&self) -> usize {
        self.grid_height * self.grid_width
    }
}

/// Per-axis overlap weights for area pooling `src -> dst` cells.
///
/// Output cell `i` covers `[i*src/dst, (i+1)*src/dst)`; working in units of
/// `1/dst` source pixels keeps the overlaps integral.
fn pool_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|i| {
            let lo = i * src;
            let hi = (i + 1) * src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|r| {
                    let overlap = hi.min((r + 1) * dst) - lo.max(r * dst);
                    (overlap > 0).then(|| (r, overlap as f64 / src as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted downsampling with exact fractional coverage.
pub fn area_pool(src: &RealGrid, target_h: usize, target_w: usize) -> Result<RealGrid> {
    let (h, w) = src.shape();
    if h == 0 || w == 0 || target_h == 0 || target_w == 0 {
        return Err(Error::dim("area_pool on a zero-sized grid"));
    }
    if target_h > h || target_w > w {
        return Err(Error::dim(format!(
            "area_pool target {target_h}x{target_w} exceeds source {h}x{w}"
        )));
    }
    if (target_h, target_w) == (h, w) {
        return Ok(src.clone());
    }
    let wy = pool_weights(h, target_h);
    let wx = pool_weights(w, target_w);
    // rows first, then columns
    let mut rows = vec![0.0; target_h * w];
    for (i, taps) in wy.iter().enumerate() {
        for &(r, wt) in taps {
            let src_row = &src.data()[r * w..(r + 1) * w];
            for (dst, &v) in rows[i * w..(i + 1) * w].iter_mut().zip(src_row) {
                *dst += wt * v;
            }
        }
    }
    let mut out = vec![0.0; target_h * target_w];
    for i in 0..target_h {
        let row = &rows[i * w..(i + 1) * w];
        for (j, taps) in wx.iter().enumerate() {
            out[i * target_w + j] = taps.iter().map(|&(c, wt)| wt * row[c]).sum();
        }
    }
    Grid::new(target_h, target_w, out)
}

/// Population standard deviation below which a grid is treated as flat.
pub const ZSCORE_SIGMA_FLOOR: f64 = 1e-8;

/// `(D - mean) / std` over the whole grid, population std; flat grids map to zero.
pub fn zscore(src: &RealGrid) -> RealGrid {
    let n = src.len() as f64;
    let mean = src.mean();
    let var = src.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma.is_nan() || sigma < ZSCORE_SIGMA_FLOOR {
        return src.map(|_| 0.0);
    }
    src.map(|v| (v - mean) / sigma)
}

/// Strict threshold: a pixel is set iff its value exceeds `tau`.
pub fn threshold_mask(src: &SoftMask, tau: f64) -> BinaryMask {
    threshold_grid(src.grid(), tau)
}

pub(crate) fn threshold_grid(src: &RealGrid, tau: f64) -> BinaryMask {
    src.map(|&v| v > tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Dilate,
    Erode,
}

/// Square-element dilation or erosion, repeated `iterations` times.
/// Pixels outside the frame count as background for both operations.
pub fn morph(src: &BinaryMask, op: MorphOp, kernel: usize, iterations: usize) -> Result<BinaryMask> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::arg(format!("morphology kernel must be odd, got {kernel}")));
    }
    let r = kernel / 2;
    let mut cur = src.clone();
    for _ in 0..iterations {
        cur = morph_once(&cur, op, r);
    }
    Ok(cur)
}

fn morph_once(src: &BinaryMask, op: MorphOp, r: usize) -> BinaryMask {
    let (h, w) = src.shape();
    let dilate = op == MorphOp::Dilate;
    // A square element separates into a horizontal pass and a vertical pass.
    let pass = |get: &dyn Fn(isize) -> Option<bool>, i: isize| -> bool {
        let mut acc = !dilate;
        for k in -(r as isize)..=(r as isize) {
            let v = get(i + k).unwrap_or(false);
            if dilate {
                acc |= v;
            } else {
                acc &= v;
            }
        }
        acc
    };
    let mut horiz = Grid::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let get = |xx: isize| (xx >= 0 && (xx as usize) < w).then(|| *src.get(y, xx as usize));
            horiz.set(y, x, pass(&get, x as isize));
        }
    }
    let mut out = Grid::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let get = |yy: isize| (yy >= 0 && (yy as usize) < h).then(|| *horiz.get(yy as usize, x));
            out.set(y, x, pass(&get, y as isize));
        }
    }
    out
}

/// Labels 8-connected foreground components. Background is `0`, components
/// are numbered from `1` in raster order of their first pixel. Returns the
/// label grid and the pixel count of each component (index `label - 1`).
pub fn label_components(src: &BinaryMask) -> (Grid<u32>, Vec<usize>) {
    let (h, w) = src.shape();
    let mut labels = Grid::filled(h, w, 0u32);
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !src.data()[start] || labels.data()[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0;
        labels.data_mut()[start] = label;
        stack.push(start);
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if src.data()[q] && labels.data()[q] == 0 {
                        labels.data_mut()[q] = label;
                        stack.push(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Removes 8-connected components smaller than `min_area_fraction * H * W` pixels.
pub fn filter_small_components(src: &BinaryMask, min_area_fraction: f64) -> BinaryMask {
    let min_area = min_area_fraction * src.len() as f64;
    let (labels, sizes) = label_components(src);
    labels.map(|&l| l != 0 && sizes[l as usize - 1] as f64 >= min_area)
}

/// Nearest-neighbor upsampling of a patch-grid mask to `height x width`.
pub fn upsample_nearest(src: &BinaryMask, height: usize, width: usize) -> BinaryMask {
    let (h, w) = src.shape();
    Grid::from_fn(height, width, |y, x| *src.get(y * h / height, x * w / width))
}

/// Central crop removing `margin` cells from every side.
pub fn crop_center(src: &RealGrid, margin: usize) -> Result<RealGrid> {
    let (h, w) = src.shape();
    if 2 * margin >= h || 2 * margin >= w {
        return Err(Error::dim(format!("cannot crop {margin} from each side of {h}x{w}")));
    }
    Ok(Grid::from_fn(h - 2 * margin, w - 2 * margin, |y, x| {
        *src.get(y + margin, x + margin)
    }))
}

/// Pads by `margin` on every side, replicating edge values.
pub fn pad_replicate(src: &RealGrid, margin: usize) -> RealGrid {
    let (h, w) = src.shape();
    Grid::from_fn(h + 2 * margin, w + 2 * margin, |y, x| {
        let sy = y.saturating_sub(margin).min(h - 1);
        let sx = x.saturating_sub(margin).min(w - 1);
        *src.get(sy, sx)
    })
}
