//! Nucleus shape sets and the similarity measures used to prune and refine them.
//!
//! * [`ssim`] / [`ssim_gradient`]: sliding-window SSIM with uniform weights and
//!   its exact gradient with respect to the first argument.
//! * [`cw_ssim`]: complex-wavelet SSIM over an undecimated complex steerable
//!   pyramid; used only for pruning, never differentiated.
//! * [`eliminate_shapes`]: greedy grouping of near-duplicate expert shapes.
//! * [`shape_learning_loss`] / [`shape_learning_gradient`]: the SSIM anchor
//!   that keeps learnable shapes close to the reference set.

use std::f64::consts::PI;
use std::ops::Deref;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{same_dims, Grid2D};

/// Square shape mask. Expert and reference shapes are binary; learnable
/// shapes may take any finite value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid2D", into = "Grid2D")]
pub struct Shape(Grid2D);

impl Shape {
    pub fn new(grid: Grid2D) -> Result<Self> {
        if grid.height() != grid.width() {
            return Err(Error::dim(format!(
                "shape must be square, got {}x{}",
                grid.height(),
                grid.width()
            )));
        }
        Ok(Self(grid))
    }

    pub fn side(&self) -> usize {
        self.0.height()
    }

    pub fn grid(&self) -> &Grid2D {
        &self.0
    }

    pub fn grid_mut(&mut self) -> &mut Grid2D {
        &mut self.0
    }

    pub fn is_binary(&self) -> bool {
        self.0.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

impl Deref for Shape {
    type Target = Grid2D;

    fn deref(&self) -> &Grid2D {
        &self.0
    }
}

impl TryFrom<Grid2D> for Shape {
    type Error = Error;

    fn try_from(grid: Grid2D) -> Result<Self> {
        Shape::new(grid)
    }
}

impl From<Shape> for Grid2D {
    fn from(s: Shape) -> Grid2D {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Expert,
    Reference,
    Learnable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSet {
    kind: ShapeKind,
    shapes: Vec<Shape>,
}

impl ShapeSet {
    /// All members must share a side length; expert and reference sets must be binary.
    pub fn new(kind: ShapeKind, shapes: Vec<Shape>) -> Result<Self> {
        if let Some(first) = shapes.first() {
            let side = first.side();
            if let Some(bad) = shapes.iter().position(|s| s.side() != side) {
                return Err(Error::dim(format!(
                    "shape {bad} has side {} but shape 0 has side {side}",
                    shapes[bad].side()
                )));
            }
        }
        if kind != ShapeKind::Learnable {
            if let Some(bad) = shapes.iter().position(|s| !s.is_binary()) {
                return Err(Error::invalid(format!("{kind:?} shape {bad} is not binary")));
            }
        }
        Ok(Self { kind, shapes })
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn shapes_mut(&mut self) -> &mut [Shape] {
        &mut self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn side(&self) -> Option<usize> {
        self.shapes.first().map(Shape::side)
    }

    /// Same shapes, relabelled as a learnable set (the initializer for shape learning).
    pub fn to_learnable(&self) -> ShapeSet {
        ShapeSet {
            kind: ShapeKind::Learnable,
            shapes: self.shapes.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// SSIM

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    /// Side of the square sliding window (stride 1).
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 8,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::invalid("ssim window must be >= 1"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::invalid("ssim c1 and c2 must be > 0"));
        }
        Ok(())
    }
}

fn check_window(a: &Grid2D, window: usize) -> Result<()> {
    let (h, w) = a.dims();
    if window > h || window > w {
        return Err(Error::dim(format!(
            "ssim window {window} larger than {h}x{w} input"
        )));
    }
    Ok(())
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn window_stats(a: &Grid2D, b: &Grid2D, r0: usize, c0: usize, win: usize) -> WindowStats {
    let n = (win * win) as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in r0..r0 + win {
        for c in c0..c0 + win {
            sx += a.get(r, c);
            sy += b.get(r, c);
        }
    }
    let (mu_x, mu_y) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for r in r0..r0 + win {
        for c in c0..c0 + win {
            let dx = a.get(r, c) - mu_x;
            let dy = b.get(r, c) - mu_y;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    WindowStats {
        mu_x,
        mu_y,
        var_x: vx / n,
        var_y: vy / n,
        cov: cxy / n,
    }
}

/// Mean SSIM over all `window`x`window` patches (population statistics).
pub fn ssim(a: &Grid2D, b: &Grid2D, config: &SsimConfig) -> Result<f64> {
    config.validate()?;
    same_dims(a, b, "ssim")?;
    check_window(a, config.window)?;
    let win = config.window;
    let (h, w) = a.dims();
    let (nr, nc) = (h - win + 1, w - win + 1);
    let mut total = 0.0;
    for r0 in 0..nr {
        for c0 in 0..nc {
            let s = window_stats(a, b, r0, c0, win);
            let lum = (2.0 * s.mu_x * s.mu_y + config.c1)
                / (s.mu_x * s.mu_x + s.mu_y * s.mu_y + config.c1);
            let cs = (2.0 * s.cov + config.c2) / (s.var_x + s.var_y + config.c2);
            total += lum * cs;
        }
    }
    Ok(total / (nr * nc) as f64)
}

/// Gradient of [`ssim`]`(a, b)` with respect to every entry of `a`.
pub fn ssim_gradient(a: &Grid2D, b: &Grid2D, config: &SsimConfig) -> Result<Grid2D> {
    config.validate()?;
    same_dims(a, b, "ssim_gradient")?;
    check_window(a, config.window)?;
    let win = config.window;
    let (h, w) = a.dims();
    let (nr, nc) = (h - win + 1, w - win + 1);
    let n = (win * win) as f64;
    let scale = 1.0 / (nr * nc) as f64;
    let mut grad = Grid2D::zeros(h, w);
    for r0 in 0..nr {
        for c0 in 0..nc {
            let s = window_stats(a, b, r0, c0, win);
            let a1 = 2.0 * s.mu_x * s.mu_y + config.c1;
            let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + config.c1;
            let a2 = 2.0 * s.cov + config.c2;
            let b2 = s.var_x + s.var_y + config.c2;
            let lum = a1 / b1;
            let cs = a2 / b2;
            // d lum / d mu_x, spread uniformly over the window
            let d_mu = cs * (2.0 * s.mu_y * b1 - a1 * 2.0 * s.mu_x) / (b1 * b1) / n;
            let k_cov = lum * 2.0 / b2 / n;
            let k_var = -lum * a2 / (b2 * b2) * 2.0 / n;
            for r in r0..r0 + win {
                for c in c0..c0 + win {
                    let dx = a.get(r, c) - s.mu_x;
                    let dy = b.get(r, c) - s.mu_y;
                    let g = d_mu + k_cov * dy + k_var * dx;
                    let cur = grad.get(r, c);
                    grad.set(r, c, cur + scale * g);
                }
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Complex steerable pyramid and CW-SSIM

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwSsimConfig {
    pub levels: usize,
    pub orientations: usize,
    /// Stabilizer added to numerator and denominator of each local index.
    pub k: f64,
    /// Side of the local comparison window on each subband.
    pub window: usize,
}

impl Default for CwSsimConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            orientations: 6,
            k: 0.01,
            window: 7,
        }
    }
}

impl CwSsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid("cw-ssim levels must be >= 1"));
        }
        if self.orientations < 2 {
            return Err(Error::invalid("cw-ssim orientations must be >= 2"));
        }
        if !(self.k > 0.0) {
            return Err(Error::invalid("cw-ssim k must be > 0"));
        }
        if self.window == 0 {
            return Err(Error::invalid("cw-ssim window must be >= 1"));
        }
        Ok(())
    }
}

/// Complex subband coefficients, `levels * orientations` bands, each the size
/// of the input (the pyramid is undecimated).
#[derive(Debug, Clone)]
pub struct Subbands {
    pub height: usize,
    pub width: usize,
    /// Band order: level-major, then orientation.
    pub bands: Vec<Vec<Complex64>>,
}

impl Subbands {
    pub fn energy(&self) -> f64 {
        self.bands
            .iter()
            .flat_map(|b| b.iter())
            .map(|c| c.norm_sqr())
            .sum()
    }
}

/// Radial lowpass with a log2 raised-cosine transition over `[pi/4, pi/2]`.
fn radial_low(r: f64) -> f64 {
    if r <= PI / 4.0 {
        1.0
    } else if r >= PI / 2.0 {
        0.0
    } else {
        (PI / 2.0 * (4.0 * r / PI).log2()).cos()
    }
}

fn radial_high(r: f64) -> f64 {
    if r <= PI / 4.0 {
        0.0
    } else if r >= PI / 2.0 {
        1.0
    } else {
        (PI / 2.0 * (4.0 * r / PI).log2()).sin()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Signed angular frequency for DFT bin `k` of an `n`-point transform.
fn freq(k: usize, n: usize) -> f64 {
    let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
    2.0 * PI * k / n as f64
}

/// Frequency response of band (`level`, `orientation`) at angular frequency `(wy, wx)`.
///
/// Radial part: `H(2^l r) * L(2^(l-1) r)`; angular part: one-sided
/// `2 * alpha * cos(theta - pi o / K)^(K-1)`, which makes the output analytic.
pub fn band_response(level: usize, orientation: usize, orientations: usize, wy: f64, wx: f64) -> f64 {
    let r = wy.hypot(wx);
    if r == 0.0 {
        return 0.0;
    }
    let s = (1u64 << level) as f64;
    let radial = radial_high(r * s) * radial_low(r * s / 2.0);
    if radial == 0.0 {
        return 0.0;
    }
    let kk = orientations;
    let alpha = 2f64.powi(kk as i32 - 1) * factorial(kk - 1)
        / ((kk as f64) * factorial(2 * (kk - 1))).sqrt();
    let theta = wy.atan2(wx);
    let mut d = theta - PI * orientation as f64 / kk as f64;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d <= -PI {
        d += 2.0 * PI;
    }
    if d.abs() >= PI / 2.0 {
        return 0.0;
    }
    radial * 2.0 * alpha * d.cos().powi(kk as i32 - 1)
}

fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = data[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            data[r * w + c] = col[r];
        }
    }
    if inverse {
        let norm = 1.0 / (h * w) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }
}

/// Complex steerable pyramid subbands of a grid.
pub fn complex_wavelet_coeffs(grid: &Grid2D, config: &CwSsimConfig) -> Result<Subbands> {
    config.validate()?;
    let (h, w) = grid.dims();
    let min_side = 1usize << config.levels;
    if h < min_side || w < min_side {
        return Err(Error::dim(format!(
            "{h}x{w} input too small for {} pyramid levels (need >= {min_side})",
            config.levels
        )));
    }
    let mut spectrum: Vec<Complex64> = grid
        .as_slice()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft2(&mut spectrum, h, w, false);

    let mut bands = Vec::with_capacity(config.levels * config.orientations);
    for level in 0..config.levels {
        for o in 0..config.orientations {
            let mut band = spectrum.clone();
            for r in 0..h {
                let wy = freq(r, h);
                for c in 0..w {
                    band[r * w + c] *= band_response(level, o, config.orientations, wy, freq(c, w));
                }
            }
            fft2(&mut band, h, w, true);
            bands.push(band);
        }
    }
    Ok(Subbands {
        height: h,
        width: w,
        bands,
    })
}

/// CW-SSIM between two precomputed coefficient sets.
pub fn cw_ssim_coeffs(a: &Subbands, b: &Subbands, config: &CwSsimConfig) -> Result<f64> {
    if (a.height, a.width, a.bands.len()) != (b.height, b.width, b.bands.len()) {
        return Err(Error::dim("cw_ssim: subband layouts differ"));
    }
    let (h, w) = (a.height, a.width);
    let win = config.window;
    if win > h || win > w {
        return Err(Error::dim(format!(
            "cw-ssim window {win} larger than {h}x{w} input"
        )));
    }
    let (nr, nc) = (h - win + 1, w - win + 1);
    let mut total = 0.0;
    for (ba, bb) in a.bands.iter().zip(&b.bands) {
        let mut band_total = 0.0;
        for r0 in 0..nr {
            for c0 in 0..nc {
                let mut cross = Complex64::new(0.0, 0.0);
                let (mut ea, mut eb) = (0.0, 0.0);
                for r in r0..r0 + win {
                    for c in c0..c0 + win {
                        let x = ba[r * w + c];
                        let y = bb[r * w + c];
                        cross += x * y.conj();
                        ea += x.norm_sqr();
                        eb += y.norm_sqr();
                    }
                }
                band_total += (2.0 * cross.norm() + config.k) / (ea + eb + config.k);
            }
        }
        total += band_total / (nr * nc) as f64;
    }
    Ok(total / a.bands.len() as f64)
}

/// CW-SSIM averaged over all local windows and all subbands.
pub fn cw_ssim(a: &Grid2D, b: &Grid2D, config: &CwSsimConfig) -> Result<f64> {
    same_dims(a, b, "cw_ssim")?;
    let ca = complex_wavelet_coeffs(a, config)?;
    let cb = complex_wavelet_coeffs(b, config)?;
    cw_ssim_coeffs(&ca, &cb, config)
}

/// Full pairwise CW-SSIM matrix.
pub fn similarity_matrix(shapes: &[Shape], config: &CwSsimConfig) -> Result<Vec<Vec<f64>>> {
    let coeffs = shapes
        .iter()
        .map(|s| complex_wavelet_coeffs(s, config))
        .collect::<Result<Vec<_>>>()?;
    let n = shapes.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = cw_ssim_coeffs(&coeffs[i], &coeffs[j], config)?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// Greedy grouping: the first remaining shape absorbs every remaining shape
/// whose CW-SSIM with it exceeds `threshold`; repeat until none remain.
/// Returns the groups as indices into `shapes`, first member first.
pub fn group_shapes(shapes: &[Shape], threshold: f64, config: &CwSsimConfig) -> Result<Vec<Vec<usize>>> {
    if shapes.is_empty() {
        return Err(Error::invalid("cannot prune an empty shape set"));
    }
    let coeffs = shapes
        .iter()
        .map(|s| complex_wavelet_coeffs(s, config))
        .collect::<Result<Vec<_>>>()?;
    let mut remaining: Vec<usize> = (0..shapes.len()).collect();
    let mut groups = Vec::new();
    while let Some((&head, rest)) = remaining.split_first() {
        let mut group = vec![head];
        let mut keep = Vec::new();
        for &l in rest {
            if cw_ssim_coeffs(&coeffs[head], &coeffs[l], config)? > threshold {
                group.push(l);
            } else {
                keep.push(l);
            }
        }
        groups.push(group);
        remaining = keep;
    }
    Ok(groups)
}

/// Reduce an expert set to a reference set, one representative (the first
/// member) per group of near-duplicates.
pub fn eliminate_shapes(expert: &ShapeSet, threshold: f64, config: &CwSsimConfig) -> Result<ShapeSet> {
    let groups = group_shapes(expert.shapes(), threshold, config)?;
    let reps = groups
        .iter()
        .map(|g| expert.shapes()[g[0]].clone())
        .collect();
    ShapeSet::new(ShapeKind::Reference, reps)
}

// ---------------------------------------------------------------------------
// Shape learning regularizer

fn check_cardinality(learnable: &ShapeSet, reference: &ShapeSet) -> Result<()> {
    if learnable.len() != reference.len() {
        return Err(Error::dim(format!(
            "learnable set has {} shapes, reference set has {}",
            learnable.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// `-gamma * sum_i sum_j SSIM(learnable_i, reference_j)`.
pub fn shape_learning_loss(
    learnable: &ShapeSet,
    reference: &ShapeSet,
    gamma: f64,
    config: &SsimConfig,
) -> Result<f64> {
    check_cardinality(learnable, reference)?;
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for l in learnable.shapes() {
        for r in reference.shapes() {
            total += ssim(l, r, config)?;
        }
    }
    Ok(-gamma * total)
}

/// Gradient of [`shape_learning_loss`] with respect to each learnable shape.
pub fn shape_learning_gradient(
    learnable: &ShapeSet,
    reference: &ShapeSet,
    gamma: f64,
    config: &SsimConfig,
) -> Result<Vec<Grid2D>> {
    check_cardinality(learnable, reference)?;
    learnable
        .shapes()
        .iter()
        .map(|l| {
            let mut g = Grid2D::zeros(l.side(), l.side());
            if gamma != 0.0 {
                for r in reference.shapes() {
                    let d = ssim_gradient(l, r, config)?;
                    for (acc, v) in g.as_mut_slice().iter_mut().zip(d.as_slice()) {
                        *acc -= gamma * v;
                    }
                }
            }
            Ok(g)
        })
        .collect()
}
