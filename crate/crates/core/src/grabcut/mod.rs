//! GrabCut segmentation: alternating GMM color models and graph cuts.
//!
//! Energy minimized per outer iteration (source side = foreground):
//!
//! ```text
//! E(a) = sum_n D_{a_n}(z_n) + sum_{(m,n) neighbors, a_m != a_n} gamma * exp(-beta |z_m - z_n|^2) / dist(m, n)
//! D_a(z) = min_k [ -ln pi_k - ln N(z | mu_k, Sigma_k) ]   over the class-a mixture
//! ```

pub mod gmm;
pub mod maxflow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, ImageGrid};
use crate::rng::derive_seed;

pub use gmm::{fit_gmm, Color, Gmm, GmmFit};
pub use maxflow::{min_cut, CutResult, FlowGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrimapLabel {
    Background,
    ProbableBackground,
    ProbableForeground,
    Foreground,
}

impl TrimapLabel {
    pub fn is_fixed(self) -> bool {
        matches!(self, TrimapLabel::Background | TrimapLabel::Foreground)
    }

    pub fn is_foreground(self) -> bool {
        matches!(self, TrimapLabel::ProbableForeground | TrimapLabel::Foreground)
    }

    /// PNG gray level used by the trimap file convention.
    pub fn to_level(self) -> u8 {
        match self {
            TrimapLabel::Background => 0,
            TrimapLabel::ProbableBackground => 85,
            TrimapLabel::ProbableForeground => 170,
            TrimapLabel::Foreground => 255,
        }
    }

    /// Inverse of [`to_level`](Self::to_level), rounding to the nearest level.
    pub fn from_level(v: u8) -> Self {
        match v {
            0..=42 => TrimapLabel::Background,
            43..=127 => TrimapLabel::ProbableBackground,
            128..=212 => TrimapLabel::ProbableForeground,
            _ => TrimapLabel::Foreground,
        }
    }
}

pub type Trimap = Grid<TrimapLabel>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrabcutParams {
    pub gamma: f64,
    pub component_count: usize,
    pub iterations: usize,
    /// 4 or 8.
    pub connectivity: usize,
}

impl Default for GrabcutParams {
    fn default() -> Self {
        Self {
            gamma: 50.0,
            component_count: 5,
            iterations: 5,
            connectivity: 8,
        }
    }
}

impl GrabcutParams {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 || self.iterations == 0 || self.component_count == 0 {
            return Err(Error::arg("grabcut needs gamma > 0, iterations >= 1, components >= 1"));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(Error::arg(format!(
                "connectivity must be 4 or 8, got {}",
                self.connectivity
            )));
        }
        Ok(())
    }

    fn offsets(&self) -> &'static [(isize, isize)] {
        // forward half-neighborhood; each unordered pair appears once
        if self.connectivity == 8 {
            &[(0, 1), (1, -1), (1, 0), (1, 1)]
        } else {
            &[(0, 1), (1, 0)]
        }
    }
}

/// Final mask plus the total energy after each outer iteration.
#[derive(Clone, Debug)]
pub struct GrabcutOutcome {
    pub mask: BinaryMask,
    pub energies: Vec<f64>,
}

/// Cost used for a class whose mixture has no pixels to model.
const EMPTY_CLASS_COST: f64 = 1e6;

struct Pair {
    a: usize,
    b: usize,
    weight: f64,
}

struct Problem<'a> {
    colors: Vec<Color>,
    trimap: &'a Trimap,
    pairs: Vec<Pair>,
    params: GrabcutParams,
}

impl Problem<'_> {
    fn class_cost(gmm: Option<&Gmm>, z: &Color) -> f64 {
        gmm.map_or(EMPTY_CLASS_COST, |g| g.best_component(z).1)
    }

    fn energy(&self, labels: &[bool], fg: Option<&Gmm>, bg: Option<&Gmm>) -> f64 {
        let data: f64 = self
            .colors
            .iter()
            .zip(labels)
            .map(|(z, &l)| Self::class_cost(if l { fg } else { bg }, z))
            .sum();
        let smooth: f64 = self
            .pairs
            .iter()
            .filter(|p| labels[p.a] != labels[p.b])
            .map(|p| p.weight)
            .sum();
        data + smooth
    }

    /// Hard-assignment refit of one class's mixture.
    fn refit(&self, labels: &[bool], class: bool, gmm: Option<&Gmm>) -> Option<Gmm> {
        let gmm = gmm?;
        let (pixels, assign): (Vec<Color>, Vec<usize>) = self
            .colors
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(z, _)| (*z, gmm.best_component(z).0))
            .unzip();
        Gmm::from_assignments(&pixels, &assign, gmm.components().len())
    }

    fn cut(&self, labels: &mut [bool], fg: Option<&Gmm>, bg: Option<&Gmm>) -> Result<()> {
        let n = self.colors.len();
        let mut node = vec![usize::MAX; n];
        let mut count = 0;
        for (i, t) in self.trimap.data().iter().enumerate() {
            if !t.is_fixed() {
                node[i] = count;
                count += 1;
            }
        }
        if count == 0 {
            return Ok(());
        }
        // source cap = cost of background, sink cap = cost of foreground
        let mut unary = vec![(0.0, 0.0); count];
        for (i, z) in self.colors.iter().enumerate() {
            if node[i] != usize::MAX {
                unary[node[i]] = (Self::class_cost(bg, z), Self::class_cost(fg, z));
            }
        }
        let mut graph = FlowGraph::new(count);
        for p in &self.pairs {
            match (node[p.a], node[p.b]) {
                (u, v) if u != usize::MAX && v != usize::MAX => graph.add_edge(u, v, p.weight, p.weight),
                (u, usize::MAX) if u != usize::MAX => fold_fixed(&mut unary[u], labels[p.b], p.weight),
                (usize::MAX, v) if v != usize::MAX => fold_fixed(&mut unary[v], labels[p.a], p.weight),
                _ => {}
            }
        }
        for (u, (a, b)) in unary.into_iter().enumerate() {
            let m = a.min(b);
            graph.add_terminal(u, a - m, b - m);
        }
        let cut = graph.solve()?;
        for (i, &u) in node.iter().enumerate() {
            if u != usize::MAX {
                labels[i] = cut.source_side[u];
            }
        }
        Ok(())
    }
}

/// A pair with a fixed neighbor becomes a unary term on the free pixel.
fn fold_fixed(unary: &mut (f64, f64), neighbor_fg: bool, w: f64) {
    if neighbor_fg {
        unary.0 += w;
    } else {
        unary.1 += w;
    }
}

/// `beta = 1 / (2 E[|z_m - z_n|^2])` over the neighbor pairs.
fn neighbor_pairs(image: &ImageGrid, colors: &[Color], params: &GrabcutParams) -> Vec<Pair> {
    let (h, w) = (image.height() as isize, image.width() as isize);
    let mut raw = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for &(dy, dx) in params.offsets() {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h || nx >= w {
                    continue;
                }
                let a = (y * w + x) as usize;
                let b = (ny * w + nx) as usize;
                let d2: f64 = (0..3).map(|c| (colors[a][c] - colors[b][c]).powi(2)).sum();
                let dist = if dy != 0 && dx != 0 {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                raw.push((a, b, d2, dist));
            }
        }
    }
    let mean = raw.iter().map(|r| r.2).sum::<f64>() / raw.len().max(1) as f64;
    let beta = if mean > 0.0 { 1.0 / (2.0 * mean) } else { 0.0 };
    raw.into_iter()
        .map(|(a, b, d2, dist)| Pair {
            a,
            b,
            weight: params.gamma * (-beta * d2).exp() / dist,
        })
        .collect()
}

/// Refines `trimap` on `image`. Definite labels are never changed.
pub fn grabcut_refine(image: &ImageGrid, trimap: &Trimap, params: &GrabcutParams, seed: u64) -> Result<BinaryMask> {
    Ok(grabcut_with_trace(image, trimap, params, seed)?.mask)
}

/// [`grabcut_refine`] that also reports the energy after every iteration.
pub fn grabcut_with_trace(
    image: &ImageGrid,
    trimap: &Trimap,
    params: &GrabcutParams,
    seed: u64,
) -> Result<GrabcutOutcome> {
    params.validate()?;
    if trimap.shape() != (image.height(), image.width()) {
        return Err(Error::dim(format!(
            "trimap {:?} does not match image {}x{}",
            trimap.shape(),
            image.height(),
            image.width()
        )));
    }
    if !trimap.data().iter().any(|t| t.is_foreground()) {
        return Err(Error::arg("trimap has no foreground pixels"));
    }
    let mut labels: Vec<bool> = trimap.data().iter().map(|t| t.is_foreground()).collect();
    let shape = (image.height(), image.width());
    if trimap.data().iter().all(|t| t.is_fixed()) {
        return Ok(GrabcutOutcome {
            mask: Grid::new(shape.0, shape.1, labels)?,
            energies: Vec::new(),
        });
    }

    let colors: Vec<Color> = (0..image.height())
        .flat_map(|y| (0..image.width()).map(move |x| (y, x)))
        .map(|(y, x)| image.rgb(y, x))
        .collect();
    let problem = Problem {
        pairs: neighbor_pairs(image, &colors, params),
        colors,
        trimap,
        params: *params,
    };

    let fit_class = |class: bool, stream: u64| -> Result<Option<Gmm>> {
        let px: Vec<Color> = problem
            .colors
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == class)
            .map(|(z, _)| *z)
            .collect();
        if px.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            fit_gmm(&px, problem.params.component_count, derive_seed(seed, &[stream]))?.gmm,
        ))
    };
    let mut fg = fit_class(true, 1)?;
    let mut bg = fit_class(false, 0)?;

    let mut energies = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        fg = problem.refit(&labels, true, fg.as_ref());
        bg = problem.refit(&labels, false, bg.as_ref());
        problem.cut(&mut labels, fg.as_ref(), bg.as_ref())?;
        energies.push(problem.energy(&labels, fg.as_ref(), bg.as_ref()));
        // a class emptied by the cut cannot come back without a model
        if fg.is_none() || bg.is_none() {
            break;
        }
    }
    Ok(GrabcutOutcome {
        mask: Grid::new(shape.0, shape.1, labels)?,
        energies,
    })
}
