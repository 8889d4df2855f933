//! Dense 2-D kernels shared by the rest of the crate.
//!
//! Convolution convention: every `conv*` function here is a *true*
//! convolution, i.e. the kernel is flipped,
//!
//! ```text
//! out(i, j) = sum_{u,v} k(u, v) * x(i - u + cy, j - v + cx)
//! ```
//!
//! where `(cy, cx)` is the kernel anchor (the center for [`conv2d_same`], the
//! origin for [`conv2d_full`]). Samples outside the input are zero. The
//! network layers and the shape-prior term use the same convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grid of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("empty grid {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::dim(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at ({}, {})",
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "empty grid {height}x{width}");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "empty grid {height}x{width}");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Grid2D) -> Result<f64> {
        same_dims(self, other, "dot")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Copy of the `h`x`w` block whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || row + h > self.height || col + w > self.width {
            return Err(Error::dim(format!(
                "crop {h}x{w} at ({row}, {col}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(h, w, |r, c| self.get(row + r, col + c)))
    }
}

pub(crate) fn same_dims(a: &Grid2D, b: &Grid2D, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "{what}: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Elementwise product.
pub fn hadamard(a: &Grid2D, b: &Grid2D) -> Result<Grid2D> {
    same_dims(a, b, "hadamard")?;
    Ok(Grid2D {
        height: a.height,
        width: a.width,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
    })
}

/// Same-size convolution with a centered odd kernel and zero padding.
pub fn conv2d_same(input: &Grid2D, kernel: &Grid2D) -> Result<Grid2D> {
    let (kh, kw) = kernel.dims();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::dim(format!("kernel {kh}x{kw} must be odd-sized")));
    }
    let (h, w) = input.dims();
    let (cy, cx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Grid2D::zeros(h, w);
    for u in 0..kh {
        for v in 0..kw {
            let k = kernel.get(u, v);
            if k == 0.0 {
                continue;
            }
            // out(i, j) += k * x(i + dy, j + dx)
            let dy = cy - u as isize;
            let dx = cx - v as isize;
            let (r0, r1) = valid_range(h, dy);
            let (c0, c1) = valid_range(w, dx);
            for i in r0..r1 {
                let src = ((i as isize + dy) as usize) * w;
                let dst = i * w;
                for j in c0..c1 {
                    out.values[dst + j] += k * input.values[src + (j as isize + dx) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Range of output indices `i` for which `i + shift` lies in `0..len`.
#[inline]
pub(crate) fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Full convolution: output is `(h + kh - 1) x (w + kw - 1)`; any kernel size.
pub fn conv2d_full(input: &Grid2D, kernel: &Grid2D) -> Grid2D {
    let (h, w) = input.dims();
    let (kh, kw) = kernel.dims();
    let (oh, ow) = (h + kh - 1, w + kw - 1);
    let mut out = Grid2D::zeros(oh, ow);
    for a in 0..h {
        for b in 0..w {
            let x = input.get(a, b);
            if x == 0.0 {
                continue;
            }
            for u in 0..kh {
                let row = (a + u) * ow + b;
                let krow = u * kw;
                for v in 0..kw {
                    out.values[row + v] += x * kernel.values[krow + v];
                }
            }
        }
    }
    out
}

/// Valid cross-correlation, `out(u, v) = sum_{a,b} big(u + a, v + b) * small(a, b)`.
///
/// This is the adjoint of [`conv2d_full`] with respect to either operand.
pub fn correlate_valid(big: &Grid2D, small: &Grid2D) -> Result<Grid2D> {
    let (bh, bw) = big.dims();
    let (sh, sw) = small.dims();
    if sh > bh || sw > bw {
        return Err(Error::dim(format!(
            "correlate_valid: {sh}x{sw} does not fit in {bh}x{bw}"
        )));
    }
    let (oh, ow) = (bh - sh + 1, bw - sw + 1);
    let mut out = Grid2D::zeros(oh, ow);
    for a in 0..sh {
        for b in 0..sw {
            let s = small.get(a, b);
            if s == 0.0 {
                continue;
            }
            for u in 0..oh {
                let src = (u + a) * bw + b;
                let dst = u * ow;
                for v in 0..ow {
                    out.values[dst + v] += s * big.values[src + v];
                }
            }
        }
    }
    Ok(out)
}

/// Winner coordinates of a max pooling pass, one per output cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRoute {
    height: usize,
    width: usize,
    window: usize,
    /// Flat row-major index of the winning input cell for each output cell.
    argmax: Vec<usize>,
}

impl PoolRoute {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// `(row, col)` of the input cell that won output cell `(row, col)`.
    pub fn winner(&self, row: usize, col: usize) -> (usize, usize) {
        let idx = self.argmax[row * self.width + col];
        (idx / self.width, idx % self.width)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.argmax
    }
}

/// Stride-1 max pooling over a centered `p`x`p` window. Cells outside the grid
/// never win. Ties go to the first cell in row-major order.
pub fn max_pool_same(input: &Grid2D, p: usize) -> Result<(Grid2D, PoolRoute)> {
    let (h, w) = input.dims();
    if p.is_multiple_of(2) {
        return Err(Error::invalid(format!("pooling window {p} must be odd")));
    }
    if p > 2 * h.min(w) {
        return Err(Error::invalid(format!(
            "pooling window {p} too large for {h}x{w} input"
        )));
    }
    let r = p / 2;

    // Separable: row pass then column pass. Each pass keeps the earliest
    // index among equal maxima, which composes to row-major-first overall.
    let mut row_val = vec![0.0; h * w];
    let mut row_arg = vec![0usize; h * w];
    for i in 0..h {
        for j in 0..w {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(w - 1);
            let mut best = lo;
            for c in lo + 1..=hi {
                if input.values[i * w + c] > input.values[i * w + best] {
                    best = c;
                }
            }
            row_val[i * w + j] = input.values[i * w + best];
            row_arg[i * w + j] = i * w + best;
        }
    }
    let mut out = Grid2D::zeros(h, w);
    let mut argmax = vec![0usize; h * w];
    for i in 0..h {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(h - 1);
        for j in 0..w {
            let mut best = lo;
            for rr in lo + 1..=hi {
                if row_val[rr * w + j] > row_val[best * w + j] {
                    best = rr;
                }
            }
            out.values[i * w + j] = row_val[best * w + j];
            argmax[i * w + j] = row_arg[best * w + j];
        }
    }
    Ok((
        out,
        PoolRoute {
            height: h,
            width: w,
            window: p,
            argmax,
        },
    ))
}

/// Adjoint of [`max_pool_same`]: each upstream value lands on its winner.
pub fn route_gradient(upstream: &Grid2D, route: &PoolRoute) -> Result<Grid2D> {
    if upstream.dims() != route.dims() {
        let (rh, rw) = route.dims();
        return Err(Error::dim(format!(
            "route {rh}x{rw} vs upstream {}x{}",
            upstream.height, upstream.width
        )));
    }
    let mut out = Grid2D::zeros(upstream.height, upstream.width);
    for (g, &idx) in upstream.values.iter().zip(&route.argmax) {
        out.values[idx] += g;
    }
    Ok(out)
}

/// Centered isotropic Gaussian scaled so that the center value is exactly 1.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Grid2D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if size.is_multiple_of(2) {
        return Err(Error::dim(format!("kernel size {size} must be odd")));
    }
    let c = (size / 2) as f64;
    let denom = 2.0 * sigma * sigma;
    Ok(Grid2D::from_fn(size, size, |r, col| {
        let dy = r as f64 - c;
        let dx = col as f64 - c;
        (-(dy * dy + dx * dx) / denom).exp()
    }))
}
