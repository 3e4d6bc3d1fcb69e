//! Brute-force reference implementations of the saliency measures, written
//! as plain per-threshold and per-pixel loops with no shared code paths.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const THRESHOLDS: usize = 255;

fn binary_gt(gt: &[f64]) -> Vec<f64> {
    gt.iter().map(|&g| if g > 0.5 { 1.0 } else { 0.0 }).collect()
}

fn binarize(pred: &[f64], tau: f64) -> Vec<f64> {
    pred.iter().map(|&p| if p >= tau { 1.0 } else { 0.0 }).collect()
}

pub fn mae(pred: &[f64], gt: &[f64]) -> f64 {
    let g = binary_gt(gt);
    pred.iter().zip(&g).map(|(p, q)| (p - q).abs()).sum::<f64>() / pred.len() as f64
}

pub fn f_mean(pred: &[f64], gt: &[f64]) -> f64 {
    let g = binary_gt(gt);
    let mut total = 0.0;
    for i in 1..=THRESHOLDS {
        let b = binarize(pred, i as f64 / 256.0);
        let tp: f64 = b.iter().zip(&g).map(|(x, y)| x * y).sum();
        let pp: f64 = b.iter().sum();
        let gp: f64 = g.iter().sum();
        let f = if tp == 0.0 {
            0.0
        } else {
            let (prec, rec) = (tp / pp, tp / gp);
            1.3 * prec * rec / (0.3 * prec + rec)
        };
        total += f;
    }
    total / THRESHOLDS as f64
}

pub fn e_mean(pred: &[f64], gt: &[f64]) -> f64 {
    let g = binary_gt(gt);
    let n = g.len() as f64;
    let gsum: f64 = g.iter().sum();
    let mut total = 0.0;
    for i in 1..=THRESHOLDS {
        let b = binarize(pred, i as f64 / 256.0);
        let enhanced: Vec<f64> = if gsum == 0.0 {
            b.iter().map(|x| 1.0 - x).collect()
        } else if gsum == n {
            b.clone()
        } else {
            let mb = b.iter().sum::<f64>() / n;
            let mg = gsum / n;
            b.iter()
                .zip(&g)
                .map(|(x, y)| {
                    let (u, v) = (x - mb, y - mg);
                    let align = 2.0 * u * v / (u * u + v * v);
                    (align + 1.0) * (align + 1.0) / 4.0
                })
                .collect()
        };
        total += enhanced.iter().sum::<f64>() / n;
    }
    total / THRESHOLDS as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn ssim(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let d = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cxy = 0.0;
    for k in 0..n {
        vx += (x[k] - mx) * (x[k] - mx);
        vy += (y[k] - my) * (y[k] - my);
        cxy += (x[k] - mx) * (y[k] - my);
    }
    let (vx, vy, cxy) = (vx / d, vy / d, cxy / d);
    let num = 4.0 * mx * my * cxy;
    let den = (mx * mx + my * my) * (vx + vy);
    if num != 0.0 {
        num / den
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let g = binary_gt(gt);
    let gm = mean(&g);
    if gm == 0.0 {
        return 1.0 - mean(pred);
    }
    if gm == 1.0 {
        return mean(pred);
    }
    let obj = |vals: Vec<f64>| {
        let m = mean(&vals);
        2.0 * m / (m * m + 1.0 + sample_std(&vals))
    };
    let fg: Vec<f64> = (0..h * w).filter(|&i| g[i] == 1.0).map(|i| pred[i]).collect();
    let bg: Vec<f64> = (0..h * w).filter(|&i| g[i] == 0.0).map(|i| 1.0 - pred[i]).collect();
    let object = gm * obj(fg) + (1.0 - gm) * obj(bg);

    let (mut ry, mut rx, mut k) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if g[r * w + c] == 1.0 {
                ry += r as f64;
                rx += c as f64;
                k += 1.0;
            }
        }
    }
    let cy = ((ry / k).round_ties_even() as usize + 1).min(h);
    let cx = ((rx / k).round_ties_even() as usize + 1).min(w);
    let mut region = 0.0;
    for (rs, cs) in [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)] {
        let mut px = Vec::new();
        let mut gy = Vec::new();
        for r in rs.clone() {
            for c in cs.clone() {
                px.push(pred[r * w + c]);
                gy.push(g[r * w + c]);
            }
        }
        region += px.len() as f64 / (h * w) as f64 * ssim(&px, &gy);
    }
    (0.5 * object + 0.5 * region).max(0.0)
}

/// A random `h×w` case: a predicted map that is partly quantised to the
/// threshold grid (to exercise ties) and a rectangle-plus-noise ground truth,
/// occasionally empty or full.
pub fn random_case(seed: u64, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h * w;
    let gt: Vec<f64> = match seed % 10 {
        0 => vec![0.0; n],
        1 => vec![1.0; n],
        _ => {
            let (r0, c0) = (rng.gen_range(0..h), rng.gen_range(0..w));
            let (r1, c1) = (rng.gen_range(r0..h) + 1, rng.gen_range(c0..w) + 1);
            (0..n)
                .map(|i| {
                    let (r, c) = (i / w, i % w);
                    let inside = (r0..r1).contains(&r) && (c0..c1).contains(&c);
                    let flip = rng.gen_bool(0.1);
                    if inside != flip {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    let pred = (0..n)
        .map(|i| match rng.gen_range(0..4) {
            0 => rng.gen_range(0..=256) as f64 / 256.0,
            1 => (gt[i] * 0.8 + rng.gen_range(0.0..0.2)).min(1.0),
            _ => rng.gen_range(0.0..=1.0),
        })
        .collect();
    (pred, gt)
}
