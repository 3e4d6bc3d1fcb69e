//! Saliency evaluation measures on `H×W` maps: structure measure, mean
//! F-measure, mean enhanced-alignment measure and mean absolute error.
//!
//! Predictions are probabilities in `[0, 1]`; ground truth is binary with
//! values above 0.5 counted as foreground.

use crate::error::{Error, Result};

/// Weight of the object term in the structure measure.
pub const S_ALPHA: f64 = 0.5;
/// `β²` of the F-measure.
pub const F_BETA2: f64 = 0.3;
/// Thresholds `τ_i = i/256`, `i = 1..=255`.
pub const THRESHOLDS: usize = 255;

/// A prediction and its ground truth, both row-major `h×w`.
#[derive(Clone, Copy, Debug)]
pub struct MapPair<'a> {
    pub pred: &'a [f64],
    pub gt: &'a [f64],
    pub h: usize,
    pub w: usize,
}

impl<'a> MapPair<'a> {
    pub fn new(pred: &'a [f64], gt: &'a [f64], h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || pred.len() != h * w || gt.len() != h * w {
            return Err(Error::Invalid(format!(
                "maps of {} and {} values do not describe a {h}x{w} image",
                pred.len(),
                gt.len()
            )));
        }
        if pred.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid("predictions must lie in [0, 1]".into()));
        }
        Ok(Self { pred, gt, h, w })
    }

    fn fg(&self, i: usize) -> bool {
        self.gt[i] > 0.5
    }
}

/// All four measures of one image.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub s_measure: f64,
    pub f_measure_mean: f64,
    pub e_measure_mean: f64,
    pub mae: f64,
}

impl Scores {
    pub fn of(m: &MapPair) -> Self {
        Self { s_measure: s_measure(m), f_measure_mean: f_measure_mean(m), e_measure_mean: e_measure_mean(m), mae: mae(m) }
    }

    /// Column-wise mean.
    pub fn mean(all: &[Scores]) -> Self {
        let n = all.len().max(1) as f64;
        let sum = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / n;
        Self {
            s_measure: sum(|s| s.s_measure),
            f_measure_mean: sum(|s| s.f_measure_mean),
            e_measure_mean: sum(|s| s.e_measure_mean),
            mae: sum(|s| s.mae),
        }
    }
}

pub fn mae(m: &MapPair) -> f64 {
    let gt = |i: usize| if m.fg(i) { 1.0 } else { 0.0 };
    m.pred.iter().enumerate().map(|(i, p)| (p - gt(i)).abs()).sum::<f64>() / m.pred.len() as f64
}

/// Number of thresholds `i/256` (`1 ≤ i ≤ 255`) at or below `p`.
fn levels_at_or_below(p: f64) -> usize {
    ((p * 256.0).floor() as usize).min(THRESHOLDS)
}

/// For each threshold index `i` (1-based), the number of predicted
/// foreground pixels and how many of them are true foreground.
fn threshold_counts(m: &MapPair) -> (Vec<usize>, Vec<usize>) {
    // Histogram by level, then suffix sums: pixel counts at p ≥ τ_i.
    let mut all = vec![0usize; THRESHOLDS + 2];
    let mut hit = vec![0usize; THRESHOLDS + 2];
    for (i, &p) in m.pred.iter().enumerate() {
        let k = levels_at_or_below(p);
        all[k] += 1;
        if m.fg(i) {
            hit[k] += 1;
        }
    }
    for k in (0..=THRESHOLDS).rev() {
        all[k] += all[k + 1];
        hit[k] += hit[k + 1];
    }
    (all, hit)
}

fn f_score(tp: usize, pred_fg: usize, gt_fg: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / pred_fg as f64;
    let r = tp as f64 / gt_fg as f64;
    (1.0 + F_BETA2) * p * r / (F_BETA2 * p + r)
}

/// F-measure averaged over the 255 thresholds. An empty prediction or an
/// empty ground truth scores zero at that threshold.
pub fn f_measure_mean(m: &MapPair) -> f64 {
    let gt_fg = (0..m.gt.len()).filter(|&i| m.fg(i)).count();
    let (all, hit) = threshold_counts(m);
    (1..=THRESHOLDS).map(|i| f_score(hit[i], all[i], gt_fg)).sum::<f64>() / THRESHOLDS as f64
}

/// Sum over pixels of the enhanced alignment `(1 + ξ)²/4` for a binarised
/// prediction with `tp` true and `fp` false foreground pixels.
fn enhanced_sum(tp: usize, fp: usize, gt_fg: usize, n: usize) -> f64 {
    let pred_fg = tp + fp;
    if gt_fg == 0 {
        return (n - pred_fg) as f64;
    }
    if gt_fg == n {
        return pred_fg as f64;
    }
    let fn_ = gt_fg - tp;
    let tn = n - pred_fg - fn_;
    let mp = pred_fg as f64 / n as f64;
    let mg = gt_fg as f64 / n as f64;
    let parts = [(tp, 1.0 - mp, 1.0 - mg), (fp, 1.0 - mp, -mg), (fn_, -mp, 1.0 - mg), (tn, -mp, -mg)];
    parts
        .iter()
        .map(|&(count, a, b)| {
            let xi = 2.0 * a * b / (a * a + b * b);
            count as f64 * (xi + 1.0).powi(2) / 4.0
        })
        .sum()
}

/// Enhanced-alignment measure averaged over the 255 thresholds,
/// normalised by the pixel count.
pub fn e_measure_mean(m: &MapPair) -> f64 {
    let n = m.pred.len();
    let gt_fg = (0..n).filter(|&i| m.fg(i)).count();
    let (all, hit) = threshold_counts(m);
    (1..=THRESHOLDS)
        .map(|i| enhanced_sum(hit[i], all[i] - hit[i], gt_fg, n) / n as f64)
        .sum::<f64>()
        / THRESHOLDS as f64
}

/// Mean and unbiased standard deviation; a single value has deviation 0.
fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    let var = if n > 1 { v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt())
}

fn object_similarity(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma)
}

/// Region SSIM of one quadrant; rows `r0..r1`, columns `c0..c1`.
fn quadrant_ssim(m: &MapPair, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    let n = (r1 - r0) * (c1 - c0);
    if n == 0 {
        return 0.0;
    }
    let idx = || (r0..r1).flat_map(move |r| (c0..c1).map(move |c| r * m.w + c));
    let g = |i: usize| if m.fg(i) { 1.0 } else { 0.0 };
    let x = idx().map(|i| m.pred[i]).sum::<f64>() / n as f64;
    let y = idx().map(g).sum::<f64>() / n as f64;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let sx = idx().map(|i| (m.pred[i] - x).powi(2)).sum::<f64>() / denom;
    let sy = idx().map(|i| (g(i) - y).powi(2)).sum::<f64>() / denom;
    let sxy = idx().map(|i| (m.pred[i] - x) * (g(i) - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure: `α·S_object + (1−α)·S_region`, with the usual
/// special cases for empty and full ground truth.
pub fn s_measure(m: &MapPair) -> f64 {
    let n = m.pred.len();
    let fg: Vec<bool> = (0..n).map(|i| m.fg(i)).collect();
    let count = fg.iter().filter(|&&f| f).count();
    let mean_pred = m.pred.iter().sum::<f64>() / n as f64;
    if count == 0 {
        return 1.0 - mean_pred;
    }
    if count == n {
        return mean_pred;
    }
    let u = count as f64 / n as f64;
    let fg_vals = (0..n).filter(|&i| fg[i]).map(|i| m.pred[i]);
    let bg_vals = (0..n).filter(|&i| !fg[i]).map(|i| 1.0 - m.pred[i]);
    let object = u * object_similarity(fg_vals) + (1.0 - u) * object_similarity(bg_vals);

    // Split at the foreground centroid rounded half-to-even (1-based, as an exclusive
    // bound for the top-left block).
    let (mut sy, mut sx) = (0usize, 0usize);
    for i in (0..n).filter(|&i| fg[i]) {
        sy += i / m.w;
        sx += i % m.w;
    }
    let cy = (sy as f64 / count as f64).round_ties_even() as usize + 1;
    let cx = (sx as f64 / count as f64).round_ties_even() as usize + 1;
    let (h, w) = (m.h, m.w);
    let (cy, cx) = (cy.min(h), cx.min(w));
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let region = w1 * quadrant_ssim(m, 0, cy, 0, cx)
        + w2 * quadrant_ssim(m, 0, cy, cx, w)
        + w3 * quadrant_ssim(m, cy, h, 0, cx)
        + w4 * quadrant_ssim(m, cy, h, cx, w);
    (S_ALPHA * object + (1.0 - S_ALPHA) * region).max(0.0)
}
