//! Synthetic RGB + auxiliary-modality saliency scenes, their on-disk layout
//! and the manifest that indexes them.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pnm;
use crate::tensor::Tensor;

/// Fraction of samples whose auxiliary channel ignores the scene layout.
pub const DECORRELATED_FRACTION: f64 = 0.2;
pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.60;
pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub id: usize,
    pub seed: u64,
    pub rgb: Tensor<f64>,
    pub aux: Tensor<f64>,
    pub gt: Tensor<f64>,
    /// The auxiliary channel carries no information about the mask.
    pub decorrelated: bool,
}

impl SyntheticSample {
    pub fn height(&self) -> usize {
        self.gt.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.gt.shape()[2]
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.gt.sum_f64() / self.gt.len() as f64
    }
}

/// Seed of sample `id` under dataset seed `seed`.
pub fn sample_seed(seed: u64, id: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng.gen()
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, rot: f64 },
    Rect { cy: f64, cx: f64, hy: f64, hx: f64 },
    Blob { cy: f64, cx: f64, r: f64, k: f64, amp: f64, phase: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Self {
        let s = h.min(w);
        let cy = rng.gen_range(0.2..0.8) * h;
        let cx = rng.gen_range(0.2..0.8) * w;
        match rng.gen_range(0..3) {
            0 => Shape::Ellipse {
                cy,
                cx,
                ry: rng.gen_range(0.1..0.3) * s,
                rx: rng.gen_range(0.1..0.3) * s,
                rot: rng.gen_range(0.0..PI),
            },
            1 => Shape::Rect { cy, cx, hy: rng.gen_range(0.08..0.25) * s, hx: rng.gen_range(0.08..0.25) * s },
            _ => Shape::Blob {
                cy,
                cx,
                r: rng.gen_range(0.12..0.28) * s,
                k: rng.gen_range(2..6) as f64,
                amp: rng.gen_range(0.1..0.3),
                phase: rng.gen_range(0.0..2.0 * PI),
            },
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, rot } => {
                let (dy, dx) = (y - cy, x - cx);
                let (c, s) = (rot.cos(), rot.sin());
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { cy, cx, hy, hx } => (y - cy).abs() <= hy && (x - cx).abs() <= hx,
            Shape::Blob { cy, cx, r, k, amp, phase } => {
                let (dy, dx) = (y - cy, x - cx);
                let theta = dy.atan2(dx);
                (dy * dy + dx * dx).sqrt() <= r * (1.0 + amp * (k * theta + phase).sin())
            }
        }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Renders one scene: 1–3 shapes of a single hue on a textured background
/// of a different hue, and a depth-like auxiliary map in which the shapes
/// are nearer (brighter) than the background.
pub fn generate_sample(id: usize, seed: u64, h: usize, w: usize) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let mut mask = vec![0.0; h * w];
    loop {
        let shapes: Vec<Shape> = (0..rng.gen_range(1..=3)).map(|_| Shape::random(&mut rng, hf, wf)).collect();
        for (i, m) in mask.iter_mut().enumerate() {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            *m = if shapes.iter().any(|s| s.contains(y, x)) { 1.0 } else { 0.0 };
        }
        let frac = mask.iter().sum::<f64>() / mask.len() as f64;
        if (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            break;
        }
    }

    let bg_hue = rng.gen_range(0.0..1.0);
    let fg_hue = bg_hue + rng.gen_range(0.3..0.7);
    let bg = hsv(bg_hue, rng.gen_range(0.2..0.5), rng.gen_range(0.3..0.6));
    let fg = hsv(fg_hue, rng.gen_range(0.6..0.95), rng.gen_range(0.7..0.95));
    let (fy, fx, ph) = (rng.gen_range(0.05..0.25), rng.gen_range(0.05..0.25), rng.gen_range(0.0..2.0 * PI));
    let noise = Normal::new(0.0, 0.04).expect("valid deviation");
    let plane = h * w;
    let mut rgb = vec![0.0; 3 * plane];
    for i in 0..plane {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let texture = 0.08 * (fy * y + fx * x + ph).sin() * (0.7 * fx * y - fy * x).cos();
        for c in 0..3 {
            let base = if mask[i] > 0.5 { fg[c] } else { bg[c] + texture };
            rgb[c * plane + i] = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let decorrelated = rng.gen_bool(DECORRELATED_FRACTION);
    let (gy, gx) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    let near = rng.gen_range(0.65..0.9);
    let aux_noise = Normal::new(0.0, 0.05).expect("valid deviation");
    let aux: Vec<f64> = (0..plane)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / hf, (i % w) as f64 / wf);
            let far = 0.35 + gy * (y - 0.5) + gx * (x - 0.5);
            let v = if decorrelated {
                0.5 + 0.4 * (2.0 * PI * (gy * 3.0 * y + gx * 3.0 * x)).sin()
            } else if mask[i] > 0.5 {
                near - 0.05 * y
            } else {
                far
            };
            (v + aux_noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();

    SyntheticSample {
        id,
        seed,
        rgb: pnm::quantize(&Tensor::from_parts(vec![3, h, w], rgb)),
        aux: pnm::quantize(&Tensor::from_parts(vec![1, h, w], aux)),
        gt: Tensor::from_parts(vec![1, h, w], mask),
        decorrelated,
    }
}

/// Samples `ids` of the dataset with seed `seed`, generated in parallel.
pub fn generate_ids(ids: std::ops::Range<usize>, h: usize, w: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    if ids.is_empty() {
        return Err(Error::Invalid("a dataset needs at least one sample".into()));
    }
    if h < 8 || w < 8 {
        return Err(Error::Invalid(format!("images of {h}x{w} are too small")));
    }
    Ok(ids.into_par_iter().map(|id| generate_sample(id, sample_seed(seed, id), h, w)).collect())
}

pub fn generate_dataset(n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    generate_ids(0..n, h, w, seed)
}

/// One manifest line: `id rgb_path aux_path gt_path seed`, paths relative
/// to the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub rgb: PathBuf,
    pub aux: PathBuf,
    pub gt: PathBuf,
    pub seed: u64,
}

/// Writes every sample as `NNNNN_rgb.ppm`, `NNNNN_aux.pgm`, `NNNNN_gt.pgm`
/// and the manifest into `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for s in samples {
        let names = [
            format!("{:05}_rgb.ppm", s.id),
            format!("{:05}_aux.pgm", s.id),
            format!("{:05}_gt.pgm", s.id),
        ];
        pnm::save(&dir.join(&names[0]), &s.rgb)?;
        pnm::save(&dir.join(&names[1]), &s.aux)?;
        pnm::save(&dir.join(&names[2]), &s.gt)?;
        writeln!(manifest, "{} {} {} {} {}", s.id, names[0], names[1], names[2], s.seed)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest)?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let bad = |n: usize, d: &str| Error::Format { what: "manifest", detail: format!("line {n}: {d}") };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [id, rgb, aux, gt, seed] = f[..] else {
            return Err(bad(n + 1, "expected `id rgb_path aux_path gt_path seed`"));
        };
        out.push(ManifestEntry {
            id: id.parse().map_err(|_| bad(n + 1, "bad id"))?,
            rgb: rgb.into(),
            aux: aux.into(),
            gt: gt.into(),
            seed: seed.parse().map_err(|_| bad(n + 1, "bad seed"))?,
        });
    }
    Ok(out)
}

/// Reads a dataset written by [`write_dataset`]. Ground truth is
/// re-binarised at 0.5.
pub fn load_dataset(manifest: &Path) -> Result<Vec<SyntheticSample>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_par_iter()
        .map(|e| {
            let rgb = pnm::load(&root.join(&e.rgb))?;
            let aux = pnm::load(&root.join(&e.aux))?;
            let gt = pnm::load(&root.join(&e.gt))?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            if rgb.shape()[0] != 3 || aux.shape()[0] != 1 || gt.shape()[0] != 1 {
                return Err(Error::Format { what: "dataset", detail: format!("sample {} has wrong channel counts", e.id) });
            }
            if rgb.shape()[1..] != gt.shape()[1..] || aux.shape()[1..] != gt.shape()[1..] {
                return Err(Error::Format { what: "dataset", detail: format!("sample {} has mismatched sizes", e.id) });
            }
            Ok(SyntheticSample { id: e.id, seed: e.seed, rgb, aux, gt, decorrelated: false })
        })
        .collect()
}
