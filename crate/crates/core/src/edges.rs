//! Canny edge detection producing the binary edge map used by the shape prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid2D;

/// Binary edge map: 1 on edges, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap(Grid2D);

impl EdgeMap {
    /// Wraps a grid, rejecting anything that is not strictly 0/1.
    pub fn from_grid(grid: Grid2D) -> Result<Self> {
        if grid.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("edge map must be binary"));
        }
        Ok(Self(grid))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid2D::zeros(height, width))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.0
    }

    pub fn into_grid(self) -> Grid2D {
        self.0
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self(self.0.crop(row, col, h, w)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CannyConfig {
    /// Gaussian pre-smoothing sigma in pixels.
    pub blur_sigma: f64,
    /// Hysteresis low threshold, as a fraction of the maximum gradient magnitude.
    pub low_threshold: f64,
    /// Hysteresis high threshold, as a fraction of the maximum gradient magnitude.
    pub high_threshold: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.4,
            low_threshold: 0.1,
            high_threshold: 0.3,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma > 0.0) {
            return Err(Error::invalid("canny blur_sigma must be > 0"));
        }
        if !(0.0 < self.low_threshold
            && self.low_threshold < self.high_threshold
            && self.high_threshold <= 1.0)
        {
            return Err(Error::invalid(
                "canny thresholds must satisfy 0 < low < high <= 1",
            ));
        }
        Ok(())
    }
}

/// Gaussian smoothing, Sobel gradients, non-maximum suppression and 8-connected
/// hysteresis. Borders are replicated so flat images produce no edges.
pub fn canny(image: &Grid2D, config: &CannyConfig) -> Result<EdgeMap> {
    config.validate()?;
    let (h, w) = image.dims();
    if h < 5 || w < 5 {
        return Err(Error::dim(format!("canny needs at least 5x5, got {h}x{w}")));
    }

    let smooth = gaussian_blur(image, config.blur_sigma);
    let (gx, gy) = sobel(&smooth, h, w);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let max_mag = mag.iter().copied().fold(0.0, f64::max);
    if max_mag <= 1e-12 {
        return Ok(EdgeMap::zeros(h, w));
    }

    let thin = non_max_suppression(&mag, &gx, &gy, h, w);
    let low = config.low_threshold * max_mag;
    let high = config.high_threshold * max_mag;
    Ok(EdgeMap(hysteresis(&thin, low, high, h, w)))
}

fn gaussian_blur(image: &Grid2D, sigma: f64) -> Vec<f64> {
    let (h, w) = image.dims();
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();

    let src = image.as_slice();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, d) in taps.iter().zip(-radius..=radius) {
                let cc = (c as isize + d).clamp(0, w as isize - 1) as usize;
                acc += t * src[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, d) in taps.iter().zip(-radius..=radius) {
                let rr = (r as isize + d).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[rr * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

fn sobel(img: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        img[r * w + c]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            gx[i] = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            gy[i] = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        }
    }
    (gx, gy)
}

/// Keeps a pixel when it beats its backward neighbor along the quantized
/// gradient direction and is not beaten by the forward one, so a symmetric
/// two-pixel ridge thins to one pixel.
fn non_max_suppression(mag: &[f64], gx: &[f64], gy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let get = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            mag[r as usize * w + c as usize]
        }
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            // angle folded into [0, 180)
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dr, dc): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (ri, ci) = (r as isize, c as isize);
            let back = get(ri - dr, ci - dc);
            let fwd = get(ri + dr, ci + dc);
            if m > back && m >= fwd {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(thin: &[f64], low: f64, high: f64, h: usize, w: usize) -> Grid2D {
    let mut edges = vec![0.0; h * w];
    let mut stack = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high && m > 0.0 {
            edges[i] = 1.0;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if edges[j] == 0.0 && thin[j] >= low && thin[j] > 0.0 {
                    edges[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Grid2D::new(h, w, edges).expect("edge values are finite")
}
