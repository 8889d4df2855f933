//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls the routine it is checking.

#![allow(dead_code)]

pub mod ablation;

use nucprior::data::TrainingTuple;
use nucprior::edges::{canny, CannyConfig};
use nucprior::network::{
    backward, kink_signature, total_loss, HyperParams, NetworkConfig, NetworkParams,
};
use nucprior::numerics::Grid2D;
use nucprior::shapes::{Shape, ShapeKind, ShapeSet};
use nucprior::synth;
use rand::Rng;

/// Direct quadruple loop: `out(i,j) = sum_{u,v} k(u,v) x(i-u+cy, j-v+cx)`.
pub fn brute_conv_same(x: &Grid2D, k: &Grid2D) -> Grid2D {
    let (h, w) = x.dims();
    let (kh, kw) = k.dims();
    let (cy, cx) = ((kh / 2) as isize, (kw / 2) as isize);
    Grid2D::from_fn(h, w, |i, j| {
        let mut s = 0.0;
        for u in 0..kh {
            for v in 0..kw {
                let r = i as isize - u as isize + cy;
                let c = j as isize - v as isize + cx;
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    s += k.get(u, v) * x.get(r as usize, c as usize);
                }
            }
        }
        s
    })
}

/// Window maximum by scanning; returns the value and the first (row-major) arg max.
pub fn brute_pool_same(x: &Grid2D, p: usize) -> (Grid2D, Vec<(usize, usize)>) {
    let (h, w) = x.dims();
    let half = (p / 2) as isize;
    let mut winners = Vec::with_capacity(h * w);
    let out = Grid2D::from_fn(h, w, |i, j| {
        let mut best = f64::NEG_INFINITY;
        let mut at = (0, 0);
        for r in (i as isize - half)..=(i as isize + half) {
            for c in (j as isize - half)..=(j as isize + half) {
                if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                    continue;
                }
                let v = x.get(r as usize, c as usize);
                if v > best {
                    best = v;
                    at = (r as usize, c as usize);
                }
            }
        }
        winners.push(at);
        best
    });
    (out, winners)
}

pub fn random_grid(rng: &mut impl Rng, h: usize, w: usize, lo: f64, hi: f64) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.gen_range(lo..hi))
}

/// Maximum bipartite matching size by augmenting paths (Kuhn), pairs
/// allowed when within `radius`.
pub fn brute_max_matching(dets: &[(usize, usize)], gt: &[(usize, usize)], radius: f64) -> usize {
    fn within(a: (usize, usize), b: (usize, usize), r: f64) -> bool {
        let dr = a.0 as f64 - b.0 as f64;
        let dc = a.1 as f64 - b.1 as f64;
        dr * dr + dc * dc <= r * r
    }
    fn augment(
        d: usize,
        dets: &[(usize, usize)],
        gt: &[(usize, usize)],
        r: f64,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for g in 0..gt.len() {
            if within(dets[d], gt[g], r) && !seen[g] {
                seen[g] = true;
                if owner[g].is_none_or(|o| augment(o, dets, gt, r, seen, owner)) {
                    owner[g] = Some(d);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; gt.len()];
    let mut count = 0;
    for d in 0..dets.len() {
        let mut seen = vec![false; gt.len()];
        if augment(d, dets, gt, radius, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}

/// Smooth test image with a few bright blobs, so edges and thresholds are non-trivial.
pub fn blob_image(h: usize, w: usize, blobs: &[(f64, f64, f64)]) -> Grid2D {
    Grid2D::from_fn(h, w, |r, c| {
        let mut v: f64 = 0.1;
        for &(cy, cx, rad) in blobs {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            v += 0.8 * (-d2 / (2.0 * rad * rad)).exp();
        }
        v.min(1.0)
    })
}

/// A small training tuple with a Canny edge map of its own image.
pub fn blob_tuple(h: usize, w: usize) -> TrainingTuple {
    let centers = vec![(h / 3, w / 3), (2 * h / 3, 2 * w / 3)];
    let x = blob_image(
        h,
        w,
        &centers
            .iter()
            .map(|&(r, c)| (r as f64, c as f64, 2.0))
            .collect::<Vec<_>>(),
    );
    let edge = canny(&x, &CannyConfig::default()).unwrap();
    let y = nucprior::data::synth_labels(&centers, h, w, 2.0, 7).unwrap();
    TrainingTuple::new(x, edge, y, centers).unwrap()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Relative error with an absolute floor so entries that are both ~0 compare as equal.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Central differences of `total_loss` against `backward`, over every
/// parameter whose perturbation leaves the kink signature unchanged.
pub fn finite_difference_check(
    sample: &TrainingTuple,
    params: &NetworkParams,
    shapes_ref: Option<&ShapeSet>,
    hyper: &HyperParams,
    step: f64,
) -> FdReport {
    let (_, grads) = backward(sample, params, shapes_ref, hyper).unwrap();
    let analytic = grads.flat();
    let base = params.flat();
    assert_eq!(analytic.len(), base.len());
    let sig0 = kink_signature(sample, params, shapes_ref, hyper).unwrap();
    let mut report = FdReport::default();
    let mut probe = params.clone();
    for k in 0..base.len() {
        let eval = |probe: &mut NetworkParams, delta: f64| {
            let mut v = base.clone();
            v[k] += delta;
            probe.set_flat(&v).unwrap();
            let sig = kink_signature(sample, probe, shapes_ref, hyper).unwrap();
            (total_loss(sample, probe, shapes_ref, hyper).unwrap().total, sig == sig0)
        };
        let (lp, okp) = eval(&mut probe, step);
        let (lm, okm) = eval(&mut probe, -step);
        if !(okp && okm) {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * step);
        report.max_rel = report.max_rel.max(rel_err(analytic[k], numeric));
        report.checked += 1;
    }
    report
}

/// Depth 3, 4 channels. The output bias lifts ŷ around `T_p` so the
/// threshold mask of the prior is partly active.
pub fn tiny_network() -> NetworkParams {
    let mut p = NetworkParams::init(
        NetworkConfig {
            depth: 3,
            channels: 4,
            first_kernel: 5,
            mid_kernel: 3,
        },
        42,
    )
    .unwrap();
    p.layers[2].bias[0] = 0.2;
    p
}

/// Two 8×8 elliptical rings.
pub fn ring_reference() -> ShapeSet {
    let a = synth::ellipse_ring(8, 3.5, 3.5, 3.0, 2.0, 0.0);
    let b = synth::ellipse_ring(8, 3.5, 3.5, 2.0, 3.0, 0.4);
    ShapeSet::new(
        ShapeKind::Reference,
        vec![Shape::new(a).unwrap(), Shape::new(b).unwrap()],
    )
    .unwrap()
}

/// The reference rings perturbed, so the anchor gradient is non-zero.
pub fn ring_learnable() -> ShapeSet {
    let mut l = ring_reference().to_learnable();
    for (q, s) in l.shapes_mut().iter_mut().enumerate() {
        for (k, v) in s.grid_mut().as_mut_slice().iter_mut().enumerate() {
            *v += 0.15 * (((k * 7 + q * 3) % 11) as f64 / 11.0 - 0.5);
        }
    }
    l
}
