//! Peak detection on predicted label maps and golden-region evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid2D;

/// `(row, col)` pixel coordinate.
pub type Center = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Values at or below this are discarded before peak search.
    pub threshold: f64,
    /// Half-width of the square neighborhood a peak must dominate.
    pub nms_radius: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            nms_radius: 6,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("detection threshold must lie in [0, 1]"));
        }
        if self.nms_radius == 0 {
            return Err(Error::invalid("nms_radius must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Euclidean radius (inclusive) of the golden region around each center.
    pub golden_radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { golden_radius: 6.0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.golden_radius >= 1.0) {
            return Err(Error::invalid("golden_radius must be >= 1"));
        }
        Ok(())
    }
}

/// Local maxima of the clamped map, each with its value, in row-major order.
///
/// A cell is a peak when no cell in its `(2r+1)^2` neighborhood is larger and
/// no earlier cell (row-major) is equal, so plateaus yield their first cell.
/// Thresholding at `T` and then searching gives exactly the peaks whose value
/// exceeds `T`, which is what [`detect`] and [`pr_curve`] rely on.
pub fn local_maxima(yhat: &Grid2D, radius: usize) -> Vec<(Center, f64)> {
    let (h, w) = yhat.dims();
    let at = |r: usize, c: usize| yhat.get(r, c).clamp(0.0, 1.0);
    let mut peaks = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = at(r, c);
            if v <= 0.0 {
                continue;
            }
            let mut is_peak = true;
            'scan: for rr in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
                for cc in c.saturating_sub(radius)..=(c + radius).min(w - 1) {
                    if (rr, cc) == (r, c) {
                        continue;
                    }
                    let n = at(rr, cc);
                    let earlier = (rr, cc) < (r, c);
                    if n > v || (earlier && n == v) {
                        is_peak = false;
                        break 'scan;
                    }
                }
            }
            if is_peak {
                peaks.push(((r, c), v));
            }
        }
    }
    peaks
}

/// Clamp to [0, 1], drop values not above the threshold, report strict local maxima.
pub fn detect(yhat: &Grid2D, config: &DetectionConfig) -> Vec<Center> {
    local_maxima(yhat, config.nms_radius)
        .into_iter()
        .filter(|&(_, v)| v > config.threshold)
        .map(|(c, _)| c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Outcome of one-to-one matching: which detections hit which centers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub counts: MatchCounts,
    /// `(detection index, center index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_centers: Vec<usize>,
}

fn dist_sq(a: Center, b: Center) -> f64 {
    let dy = a.0 as f64 - b.0 as f64;
    let dx = a.1 as f64 - b.1 as f64;
    dy * dy + dx * dx
}

/// Greedy nearest-first one-to-one matching inside golden regions.
///
/// Candidate pairs within `golden_radius` are taken in ascending distance;
/// ties go to the row-major-smaller detection, then center, so the result
/// does not depend on the order of `detections`.
pub fn match_golden(detections: &[Center], gt: &[Center], config: &EvalConfig) -> Matching {
    let r2 = config.golden_radius * config.golden_radius;
    let mut candidates: Vec<(f64, Center, Center, usize, usize)> = Vec::new();
    for (i, &d) in detections.iter().enumerate() {
        for (j, &g) in gt.iter().enumerate() {
            let d2 = dist_sq(d, g);
            if d2 <= r2 {
                candidates.push((d2, d, g, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
            .then(a.4.cmp(&b.4))
    });
    let mut det_used = vec![false; detections.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, _, _, i, j) in candidates {
        if !det_used[i] && !gt_used[j] {
            det_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    let unmatched_detections: Vec<usize> = (0..detections.len()).filter(|&i| !det_used[i]).collect();
    let unmatched_centers: Vec<usize> = (0..gt.len()).filter(|&j| !gt_used[j]).collect();
    Matching {
        counts: MatchCounts {
            tp: pairs.len(),
            fp: unmatched_detections.len(),
            fn_: unmatched_centers.len(),
        },
        pairs,
        unmatched_detections,
        unmatched_centers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with fixed conventions for empty denominators:
/// nothing detected and nothing to find scores 1 across the board; otherwise
/// an empty denominator scores 0.
pub fn prf1(counts: MatchCounts) -> MatchReport {
    let MatchCounts { tp, fp, fn_ } = counts;
    let (precision, recall) = if tp + fp == 0 && tp + fn_ == 0 {
        (1.0, 1.0)
    } else {
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        (p, r)
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MatchReport {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Point with the largest mean F1 (first one on ties).
    pub best: PrPoint,
}

/// Evenly spaced thresholds `0, step, 2*step, ...` up to and including 1.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid("threshold step must lie in (0, 1]"));
    }
    let n = (1.0 / step).round() as usize;
    if (n as f64 * step - 1.0).abs() < 1e-9 {
        // k / n rather than k * step keeps values like 0.15 exact
        return Ok((0..=n).map(|k| k as f64 / n as f64).collect());
    }
    let mut grid: Vec<f64> = (0..)
        .map(|k| k as f64 * step)
        .take_while(|&t| t < 1.0)
        .collect();
    grid.push(1.0);
    Ok(grid)
}

/// Sweep thresholds; at each one, precision, recall and F1 are averaged over images.
pub fn pr_curve(
    yhats: &[Grid2D],
    gts: &[Vec<Center>],
    detection: &DetectionConfig,
    eval: &EvalConfig,
    thresholds: &[f64],
) -> Result<PrCurve> {
    if yhats.is_empty() {
        return Err(Error::invalid("pr_curve needs at least one test image"));
    }
    if yhats.len() != gts.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} ground-truth sets",
            yhats.len(),
            gts.len()
        )));
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("thresholds must be non-empty and ascending"));
    }
    let peaks: Vec<Vec<(Center, f64)>> = yhats
        .iter()
        .map(|y| local_maxima(y, detection.nms_radius))
        .collect();
    let n = yhats.len() as f64;
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for (pk, gt) in peaks.iter().zip(gts) {
            let dets: Vec<Center> = pk.iter().filter(|(_, v)| *v > t).map(|(c, _)| *c).collect();
            let rep = prf1(match_golden(&dets, gt, eval).counts);
            p += rep.precision;
            r += rep.recall;
            f += rep.f1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: p / n,
            recall: r / n,
            f1: f / n,
        });
    }
    let best = points
        .iter()
        .copied()
        .fold(None::<PrPoint>, |acc, p| match acc {
            Some(b) if b.f1 >= p.f1 => Some(b),
            _ => Some(p),
        })
        .expect("at least one threshold");
    Ok(PrCurve { points, best })
}
