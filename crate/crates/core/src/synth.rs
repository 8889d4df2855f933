//! Synthetic shapes and the desk-scale nucleus dataset.
//!
//! The binary primitives double as shape-prior fixtures; [`generate_dataset`]
//! renders images of noisy elliptical nuclei with known centers plus a few
//! nucleus-like distractors (small bright specks and streaks).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid2D;
use crate::shapes::{Shape, ShapeKind, ShapeSet};

fn ellipse_inside(r: f64, c: f64, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> bool {
    let (dy, dx) = (r - cy, c - cx);
    let (s, co) = angle.sin_cos();
    let u = dx * co + dy * s;
    let v = -dx * s + dy * co;
    (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
}

/// Outer boundary of a binary region: inside cells with a 4-neighbor outside
/// (or on the grid border).
fn boundary_of(side: usize, inside: impl Fn(usize, usize) -> bool) -> Grid2D {
    Grid2D::from_fn(side, side, |r, c| {
        if !inside(r, c) {
            return 0.0;
        }
        let edge = r == 0
            || c == 0
            || r + 1 == side
            || c + 1 == side
            || !inside(r - 1, c)
            || !inside(r + 1, c)
            || !inside(r, c - 1)
            || !inside(r, c + 1);
        if edge {
            1.0
        } else {
            0.0
        }
    })
}

/// One-pixel boundary of an ellipse with semi-axes `rx` (along `angle`) and `ry`.
pub fn ellipse_ring(side: usize, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> Grid2D {
    boundary_of(side, |r, c| {
        ellipse_inside(r as f64, c as f64, cy, cx, ry, rx, angle)
    })
}

pub fn filled_ellipse(side: usize, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> Grid2D {
    Grid2D::from_fn(side, side, |r, c| {
        if ellipse_inside(r as f64, c as f64, cy, cx, ry, rx, angle) {
            1.0
        } else {
            0.0
        }
    })
}

/// Boundary of the axis-aligned square `[top, top+len) x [left, left+len)`.
pub fn square_ring(side: usize, top: usize, left: usize, len: usize) -> Grid2D {
    boundary_of(side, |r, c| {
        (top..top + len).contains(&r) && (left..left + len).contains(&c)
    })
}

/// Filled axis-aligned rectangle, half-open ranges.
pub fn bar(side: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Grid2D {
    Grid2D::from_fn(side, side, |r, c| {
        if rows.contains(&r) && cols.contains(&c) {
            1.0
        } else {
            0.0
        }
    })
}

/// Boundary of an L: a vertical arm `[top, top+len) x [left, left+thick)` joined
/// with a horizontal foot along the bottom.
pub fn l_boundary(side: usize, top: usize, left: usize, len: usize, thick: usize) -> Grid2D {
    boundary_of(side, |r, c| {
        let vertical = (top..top + len).contains(&r) && (left..left + thick).contains(&c);
        let foot = (top + len - thick..top + len).contains(&r) && (left..left + len).contains(&c);
        vertical || foot
    })
}

/// Translate by `(dy, dx)` with zero fill.
pub fn shift(grid: &Grid2D, dy: isize, dx: isize) -> Grid2D {
    let (h, w) = grid.dims();
    Grid2D::from_fn(h, w, |r, c| {
        let (sr, sc) = (r as isize - dy, c as isize - dx);
        if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
            0.0
        } else {
            grid.get(sr as usize, sc as usize)
        }
    })
}

/// Expert-style shape set of elliptical nucleus boundaries, including some
/// deliberate near-duplicates for the pruning step to remove.
pub fn expert_shapes(side: usize) -> Result<ShapeSet> {
    if side < 12 {
        return Err(Error::invalid(format!("shape side {side} too small (need >= 12)")));
    }
    let c = (side as f64 - 1.0) / 2.0;
    // semi-axes scale with the side so 20 and 30 px sets look alike
    let s = side as f64 / 20.0;
    let q = std::f64::consts::FRAC_PI_4;
    let specs: [(f64, f64, f64); 12] = [
        (6.0, 6.0, 0.0),
        (6.0, 6.5, 0.0),
        (5.0, 6.5, 0.0),
        (5.0, 6.5, 2.0 * q),
        (5.0, 7.0, q),
        (5.0, 7.0, 3.0 * q),
        (4.0, 5.0, 0.0),
        (4.0, 5.0, 2.0 * q),
        (4.0, 7.5, 0.0),
        (4.0, 7.5, 2.0 * q),
        (4.5, 4.5, 0.0),
        (7.5, 7.5, 0.0),
    ];
    let shapes = specs
        .iter()
        .map(|&(ry, rx, a)| Shape::new(ellipse_ring(side, c, c, ry * s, rx * s, a)))
        .collect::<Result<Vec<_>>>()?;
    ShapeSet::new(ShapeKind::Expert, shapes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub images: usize,
    pub size: usize,
    pub min_nuclei: usize,
    pub max_nuclei: usize,
    pub min_axis: f64,
    pub max_axis: f64,
    pub noise_sigma: f64,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images: 60,
            size: 128,
            min_nuclei: 10,
            max_nuclei: 25,
            min_axis: 4.0,
            max_axis: 7.0,
            noise_sigma: 0.08,
            distractors: 10,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 || self.size < 40 {
            return Err(Error::invalid("synth needs >= 1 image of size >= 40"));
        }
        if self.min_nuclei > self.max_nuclei || self.max_nuclei == 0 {
            return Err(Error::invalid("synth nuclei range is empty"));
        }
        if !(0.0 < self.min_axis && self.min_axis <= self.max_axis) {
            return Err(Error::invalid("synth axis range is invalid"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("synth noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image: Grid2D,
    pub centers: Vec<(usize, usize)>,
}

struct Nucleus {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    level: f64,
}

pub fn generate_dataset(config: &SynthConfig) -> Result<Vec<SynthImage>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.images)
        .map(|_| Ok(generate_image(config, &mut rng)))
        .collect()
}

fn generate_image(config: &SynthConfig, rng: &mut ChaCha8Rng) -> SynthImage {
    let size = config.size;
    let margin = config.max_axis.ceil() as usize + 2;
    let target = rng.gen_range(config.min_nuclei..=config.max_nuclei);

    let mut nuclei: Vec<Nucleus> = Vec::with_capacity(target);
    let mut attempts = 0;
    while nuclei.len() < target && attempts < 20_000 {
        attempts += 1;
        let cy = rng.gen_range(margin..size - margin) as f64;
        let cx = rng.gen_range(margin..size - margin) as f64;
        let a = rng.gen_range(config.min_axis..=config.max_axis);
        let b = rng.gen_range(config.min_axis..=config.max_axis);
        let (ry, rx) = if a < b { (a, b) } else { (b, a) };
        let clear = nuclei.iter().all(|n| {
            let d = ((n.cy - cy).powi(2) + (n.cx - cx).powi(2)).sqrt();
            // neighbors may touch, as in dense tissue
            d >= 0.8 * (n.rx + rx)
        });
        if clear {
            nuclei.push(Nucleus {
                cy,
                cx,
                ry,
                rx,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                level: rng.gen_range(0.4..0.75),
            });
        }
    }

    let background = rng.gen_range(0.15..0.3);
    let tilt_y = rng.gen_range(-0.05..0.05);
    let tilt_x = rng.gen_range(-0.05..0.05);
    let mut img = Grid2D::from_fn(size, size, |r, c| {
        background + tilt_y * (r as f64 / size as f64) + tilt_x * (c as f64 / size as f64)
    });

    for n in &nuclei {
        paint_ellipse(&mut img, n);
        // chromatin texture: a few darker and brighter spots inside the nucleus
        for _ in 0..3 {
            let (sy, sx) = (rng.gen_range(-0.6..0.6) * n.ry, rng.gen_range(-0.6..0.6) * n.rx);
            let amp = rng.gen_range(-0.12..0.08);
            add_spot(&mut img, n.cy + sy, n.cx + sx, rng.gen_range(1.0..2.0), amp);
        }
    }

    // distractors: compact bright specks (too small to be nuclei) and thin streaks
    for k in 0..config.distractors {
        let cy = rng.gen_range(4..size - 4) as f64;
        let cx = rng.gen_range(4..size - 4) as f64;
        let level = rng.gen_range(0.5..0.8);
        let (ry, rx) = if k % 2 == 0 {
            let r = rng.gen_range(1.2..2.2);
            (r, r)
        } else {
            (rng.gen_range(0.6..1.0), rng.gen_range(6.0..10.0))
        };
        paint_ellipse(
            &mut img,
            &Nucleus {
                cy,
                cx,
                ry,
                rx,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                level,
            },
        );
    }

    if config.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, config.noise_sigma).expect("sigma validated");
        for v in img.as_mut_slice() {
            *v += noise.sample(rng);
        }
    }
    for v in img.as_mut_slice() {
        *v = v.clamp(0.0, 1.0);
    }

    let centers = nuclei
        .iter()
        .map(|n| (n.cy as usize, n.cx as usize))
        .collect();
    SynthImage {
        image: img,
        centers,
    }
}

fn add_spot(img: &mut Grid2D, cy: f64, cx: f64, sigma: f64, amp: f64) {
    let (h, w) = img.dims();
    let reach = (3.0 * sigma).ceil() as isize;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (r, c) = (cy.round() as isize + dr, cx.round() as isize + dc);
            if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                continue;
            }
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let v = img.get(r as usize, c as usize) + amp * (-d2 / (2.0 * sigma * sigma)).exp();
            img.set(r as usize, c as usize, v);
        }
    }
}

/// Anti-aliased ellipse with a slightly darker rim.
fn paint_ellipse(img: &mut Grid2D, n: &Nucleus) {
    let (h, w) = img.dims();
    let reach = n.rx.max(n.ry) + 2.0;
    let r0 = (n.cy - reach).floor().max(0.0) as usize;
    let r1 = ((n.cy + reach).ceil() as usize).min(h - 1);
    let c0 = (n.cx - reach).floor().max(0.0) as usize;
    let c1 = ((n.cx + reach).ceil() as usize).min(w - 1);
    let (s, co) = n.angle.sin_cos();
    for r in r0..=r1 {
        for c in c0..=c1 {
            let (dy, dx) = (r as f64 - n.cy, c as f64 - n.cx);
            let u = dx * co + dy * s;
            let v = -dx * s + dy * co;
            let t = ((u / n.rx).powi(2) + (v / n.ry).powi(2)).sqrt();
            let cover = ((1.0 - t) * n.ry.min(n.rx) + 0.5).clamp(0.0, 1.0);
            if cover > 0.0 {
                let shade = n.level * (1.0 - 0.15 * t.min(1.0));
                let cur = img.get(r, c);
                img.set(r, c, cur + cover * (shade - cur));
            }
        }
    }
}
