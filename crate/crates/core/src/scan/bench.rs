use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{recurrence, ScanKernel};
use super::ScanDirection;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kernel: &'static str,
    pub length: usize,
    pub dh: usize,
    pub threads: usize,
    pub elements_per_sec: f64,
    pub max_residual_vs_sequential: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const HEADER: &'static str = "kernel,length,Dh,threads,elements_per_sec,max_residual_vs_sequential";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6e},{:.3e}",
                r.kernel, r.length, r.dh, r.threads, r.elements_per_sec, r.max_residual_vs_sequential
            );
        }
        out
    }
}

/// Times both kernels on a single scan line of each length with `dh`
/// channels (fp64), best of `reps` runs, and records the parallel kernel's
/// deviation from the sequential one.
pub fn bench_scan(lengths: &[usize], dh: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    if lengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("benchmark lengths must be sorted ascending"));
    }
    if dh == 0 || reps == 0 || lengths.contains(&0) {
        return Err(invalid("benchmark needs positive lengths, Dh and repetitions"));
    }
    let threads = rayon::current_num_threads();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BenchReport::default();
    for &len in lengths {
        let a: Vec<f64> = (0..dh).map(|_| rng.gen_range(-0.999..0.999)).collect();
        let u: Vec<f64> = (0..dh * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut outputs = Vec::new();
        for kernel in [ScanKernel::Sequential, ScanKernel::Parallel] {
            let mut best = f64::INFINITY;
            let mut out = Vec::new();
            for _ in 0..reps {
                let t0 = Instant::now();
                out = recurrence(&a, &u, 1, len, ScanDirection::LeftToRight, kernel);
                best = best.min(t0.elapsed().as_secs_f64());
            }
            let elements = (dh * len) as f64;
            let residual = outputs
                .first()
                .map(|s: &Vec<f64>| s.iter().zip(&out).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                .unwrap_or(0.0);
            report.rows.push(BenchRow {
                kernel: match kernel {
                    ScanKernel::Sequential => "sequential",
                    ScanKernel::Parallel => "parallel",
                },
                length: len,
                dh,
                threads,
                elements_per_sec: elements / best.max(1e-9),
                max_residual_vs_sequential: residual,
            });
            outputs.push(out);
        }
    }
    Ok(report)
}
