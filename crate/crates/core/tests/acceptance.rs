//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `DGSSM_ACCEPT=1,4,5` restricts the run to the listed criteria; the
//! others print SKIP. Failures are always printed; the exit status is
//! non-zero for them only with `DGSSM_ACCEPT_STRICT=1`, so a criterion that
//! does not hold at desk scale is reported without stopping the rest of the
//! workspace tests.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use dgssm::ablate::{ablate, checkpoint_bytes};
use dgssm::autodiff::ReduceOp;
use dgssm::config::RunConfig;
use dgssm::data::generate_ids;
use dgssm::diffusion::{denoise_truncated, encode_latent, forward_noise, LatentState, NoisePredictor, NoiseSchedule};
use dgssm::eval::evaluate;
use dgssm::gradcheck::{check_gradients, GradCheckOptions};
use dgssm::loss::LossWeights;
use dgssm::metrics::{e_measure_mean, f_measure_mean, s_measure, MapPair};
use dgssm::network::{Flags, Model, NetInput, NetworkConfig, Outputs};
use dgssm::params::Binding;
use dgssm::scan::{bench_scan, scan_parallel, scan_sequential, MultiScaleConfig, ScanDirection, ScanKernel, ScanParams};
use dgssm::train::{log_csv, train};
use dgssm::{Result, Tape, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

// 1. Parallel and sequential scans agree.
fn scan_equivalence() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let len = rng.gen_range(1..=4096usize);
        let divisors: Vec<usize> = (1..=len).filter(|d| len % d == 0).collect();
        let h = divisors[rng.gen_range(0..divisors.len())];
        let w = len / h;
        let dh = [1, 4, 16][rng.gen_range(0..3)];
        let (din, dout) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let dir = ScanDirection::ALL[rng.gen_range(0..4)];
        let params = ScanParams::new(
            uniform(&[dh], -0.999, 0.999, &mut rng),
            randn(&[dh, din], &mut rng),
            randn(&[dout, dh], &mut rng),
        )?;
        let x = randn(&[din, h, w], &mut rng);
        let d = scan_sequential(&x, &params, dir)?.max_abs_diff(&scan_parallel(&x, &params, dir)?);
        worst = worst.max(d);
    }
    let t = secs(start.elapsed());
    Ok(outcome(
        worst < 1e-10 && t < 60.0,
        format!("max |parallel - sequential| {worst:.2e} over 500 configs (< 1e-10), {t:.1} s (< 60 s)"),
    ))
}

type Objective = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// `Σ f(x)·r` for a fixed random weighting `r` of the op output.
fn weighted(r: Tensor<f64>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Objective {
    Box::new(move |t, v| {
        let y = f(t, v)?;
        let rv = t.constant(r.clone());
        let p = t.mul(y, rv)?;
        t.sum_all(p)
    })
}

fn op_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, Objective)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rng = &mut rng;
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, Objective)> = Vec::new();
    let (c, h, w) = (2, 6, 8);
    macro_rules! case {
        ($name:expr, [$($inp:expr),*], $out:expr, $f:expr) => {{
            let inputs = vec![$($inp),*];
            let r = randn(&$out, rng);
            cases.push(($name, inputs, weighted(r, $f)));
        }};
    }
    let x = |rng: &mut ChaCha8Rng| randn(&[c, h, w], rng);
    case!("add", [x(rng), randn(&[w], rng)], [c, h, w], |t, v| t.add(v[0], v[1]));
    case!("sub", [x(rng), x(rng)], [c, h, w], |t, v| t.sub(v[0], v[1]));
    case!("mul", [x(rng), randn(&[h, 1], rng)], [c, h, w], |t, v| t.mul(v[0], v[1]));
    case!("div", [x(rng), uniform(&[c, h, w], 0.5, 2.0, rng)], [c, h, w], |t, v| t.div(v[0], v[1]));
    case!("neg", [x(rng)], [c, h, w], |t, v| t.neg(v[0]));
    case!("abs", [uniform(&[c, h, w], 0.1, 1.0, rng).map(|v| if (v * 1e3) as i64 % 2 == 0 { v } else { -v })], [c, h, w], |t, v| t.abs(v[0]));
    case!("exp", [x(rng)], [c, h, w], |t, v| t.exp(v[0]));
    case!("ln", [uniform(&[c, h, w], 0.2, 3.0, rng)], [c, h, w], |t, v| t.ln(v[0]));
    case!("sqrt", [uniform(&[c, h, w], 0.2, 3.0, rng)], [c, h, w], |t, v| t.sqrt(v[0]));
    case!("square", [x(rng)], [c, h, w], |t, v| t.square(v[0]));
    case!("sigmoid", [x(rng)], [c, h, w], |t, v| t.sigmoid(v[0]));
    case!("tanh", [x(rng)], [c, h, w], |t, v| t.tanh(v[0]));
    case!("silu", [x(rng)], [c, h, w], |t, v| t.silu(v[0]));
    case!("soft_bound", [randn(&[c, h, w], rng).map(|v| 4.0 * v)], [c, h, w], |t, v| t.soft_bound(v[0], 3.0));
    case!("clamp", [uniform(&[c, h, w], -2.0, 2.0, rng).map(|v| if (v.abs() - 1.0).abs() < 0.05 { 0.5 * v } else { v })], [c, h, w], |t, v| t.clamp(v[0], -1.0, 1.0));
    case!("add_scalar", [x(rng)], [c, h, w], |t, v| t.add_scalar(v[0], 0.7));
    case!("mul_scalar", [x(rng)], [c, h, w], |t, v| t.mul_scalar(v[0], -1.3));
    case!("rsub_scalar", [x(rng)], [c, h, w], |t, v| t.rsub_scalar(2.0, v[0]));
    case!("matmul", [randn(&[5, 7], rng), randn(&[7, 3], rng)], [5, 3], |t, v| t.matmul(v[0], v[1]));
    case!("linear", [randn(&[7], rng), randn(&[4, 7], rng), randn(&[4], rng)], [4], |t, v| t.linear(v[0], v[1], Some(v[2])));
    case!("conv2d", [x(rng), randn(&[3, c, 3, 3], rng)], [3, 3, 4], |t, v| t.conv2d(v[0], v[1], 2, 1));
    case!("conv_same", [x(rng), randn(&[3, c, 3, 3], rng), randn(&[3], rng)], [3, h, w], |t, v| t.conv_same(v[0], v[1], Some(v[2])));
    case!("conv1x1", [x(rng), randn(&[3, c], rng), randn(&[3], rng)], [3, h, w], |t, v| t.conv1x1(v[0], v[1], Some(v[2])));
    case!("add_channel_bias", [x(rng), randn(&[c], rng)], [c, h, w], |t, v| t.add_channel_bias(v[0], v[1]));
    case!("avg_pool2d", [x(rng)], [c, 3, 4], |t, v| t.avg_pool2d(v[0], 2));
    case!("global_avg_pool", [x(rng)], [c], |t, v| t.global_avg_pool(v[0]));
    case!("resize_nearest", [randn(&[c, 3, 4], rng)], [c, 7, 9], |t, v| t.resize_nearest(v[0], 7, 9));
    case!("pad_replicate", [x(rng)], [c, h + 2, w + 2], |t, v| t.pad_replicate(v[0], 1));
    case!("concat", [x(rng), randn(&[1, h, w], rng)], [c + 1, h, w], |t, v| t.concat(&[v[0], v[1]]));
    case!("reshape", [x(rng)], [c * h, w], move |t, v| t.reshape(v[0], &[c * h, w]));
    case!("reduce_sum", [x(rng)], [c, w], |t, v| t.reduce(ReduceOp::Sum, v[0], &[1]));
    case!("reduce_mean", [x(rng)], [h, w], |t, v| t.reduce(ReduceOp::Mean, v[0], &[0]));
    case!("reduce_max", [x(rng)], [c], |t, v| t.reduce(ReduceOp::Max, v[0], &[1, 2]));
    case!("mean_all", [x(rng)], [], |t, v| t.mean_all(v[0]));
    case!("l2_normalize", [randn(&[9], rng)], [9], |t, v| t.l2_normalize(v[0]));
    case!("sobel_edges", [uniform(&[1, h, w], 0.0, 1.0, rng)], [1, h, w], |t, v| t.sobel_edges(v[0]));
    case!(
        "fuse_modalities",
        [uniform(&[3, h, w], 0.0, 1.0, rng), uniform(&[1, h, w], 0.0, 1.0, rng), randn(&[5, 4], rng), randn(&[5], rng)],
        [5, h, w],
        |t, v| t.fuse_modalities(v[0], Some(v[1]), 1, v[2], v[3])
    );
    case!("project_prior", [randn(&[4, 2, 3], rng), randn(&[3, 4], rng)], [3, h, w], move |t, v| t.project_prior(v[0], v[1], h, w));
    case!(
        "ssm_scan",
        [x(rng), uniform(&[4], -0.9, 0.9, rng), randn(&[4, c], rng), randn(&[3, 4], rng)],
        [3, h, w],
        |t, v| t.ssm_scan(v[0], v[1], v[2], v[3], &ScanDirection::ALL, ScanKernel::Parallel)
    );
    case!(
        "ssm_scan_multiscale",
        [x(rng), uniform(&[4], -0.9, 0.9, rng), randn(&[4, c], rng), randn(&[3, 4], rng)],
        [3, h, w],
        |t, v| {
            let cfg = MultiScaleConfig::all_directions(vec![1, 2]).expect("valid scales");
            t.ssm_scan_multiscale(v[0], v[1], v[2], v[3], &cfg, ScanKernel::Sequential)
        }
    );
    case!(
        "modulate_scan",
        [uniform(&[4], -0.5, 0.5, rng), randn(&[4, 3], rng), randn(&[5], rng), randn(&[4, 5], rng).map(|v| 0.3 * v), randn(&[4, 5], rng)],
        [4, 3],
        |t, v| {
            // Both outputs enter: b_eff + b_eff * a_eff.
            let (a, b) = t.modulate_scan(v[0], v[1], v[2], v[3], v[4])?;
            let a = t.reshape(a, &[4, 1])?;
            let ab = t.mul(b, a)?;
            t.add(b, ab)
        }
    );
    let gt = Tensor::from_fn(&[1, h, w], |i| if (2..5).contains(&(i / w)) && (1..6).contains(&(i % w)) { 1.0 } else { 0.0 });
    for (name, which) in [("bce_loss", 0), ("iou_loss", 1), ("edge_loss", 2)] {
        let g = gt.clone();
        let f: Objective = Box::new(move |t, v| {
            let p = t.sigmoid(v[0])?;
            match which {
                0 => t.bce_loss(p, &g),
                1 => t.iou_loss(p, &g),
                _ => t.edge_loss(p, &g),
            }
        });
        cases.push((name, vec![randn(&[1, h, w], rng)], f));
    }
    // The teacher (last embedding) is detached, so it enters as a constant.
    let teacher = randn(&[6], rng);
    let kd: Objective = Box::new(move |t, v| {
        let tv = t.constant(teacher.clone());
        t.kd_loss(&[v[0], v[1], tv])
    });
    cases.push(("kd_loss", vec![randn(&[6], rng), randn(&[6], rng)], kd));
    cases
}

fn small_config(flags: Flags) -> NetworkConfig {
    NetworkConfig { widths: vec![8, 16], state_dim: 4, prompt_dim: 8, embed_dim: 8, flags, ..Default::default() }
}

/// Relative error of the full loss gradient at 20 sampled parameter
/// coordinates. Zero-initialised tensors are randomised so that every path
/// carries gradient. The detached teacher embedding is frozen at its value
/// for the unperturbed parameters, which is what the analytic gradient
/// differentiates.
fn composed_check(flags: Flags, seed: u64) -> Result<f64> {
    let mut model = Model::<f64>::new(small_config(flags), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params.tensors_mut() {
        if t.data().iter().all(|&v| v == 0.0) {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    let (h, w) = (16, 16);
    let rgb = uniform(&[3, h, w], 0.0, 1.0, &mut rng);
    let aux = uniform(&[1, h, w], 0.0, 1.0, &mut rng);
    let gt = Tensor::from_fn(&[1, h, w], |i| if (4..11).contains(&(i / w)) && (5..13).contains(&(i % w)) { 1.0 } else { 0.0 });
    let prior = flags.needs_prior().then(|| model.prior(&rgb, Some(&aux), seed)).transpose()?;
    let input = NetInput { rgb, aux: Some(aux), prior };
    let weights = LossWeights::defaults(model.config.refine_iters);

    let teacher = if flags.kd {
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape, false);
        let out = model.forward(&mut tape, &bind, &input)?;
        Some(tape.value(*out.embeddings.last().expect("kd embeddings")).clone())
    } else {
        None
    };
    let opts = GradCheckOptions { sample: Some(20), seed, floor: 1e-5, ..Default::default() };
    let report = check_gradients(
        model.params.tensors(),
        |tape, vars| {
            let bind = Binding::from_vars(vars.to_vec());
            let mut out: Outputs = model.forward(tape, &bind, &input)?;
            if let (Some(t), Some(last)) = (&teacher, out.embeddings.last_mut()) {
                *last = tape.constant(t.clone());
            }
            Ok(tape.total_loss(&out, &gt, &weights, &flags)?.0)
        },
        &opts,
    )?;
    Ok(report.max_rel_err())
}

// 2. Per-op and composed gradients against central differences.
fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst_op = ("", 0.0f64);
    let cases = op_cases();
    let n_ops = cases.len();
    for (i, (name, inputs, f)) in cases.into_iter().enumerate() {
        let opts = GradCheckOptions { sample: Some(20), seed: i as u64, ..Default::default() };
        let e = check_gradients(&inputs, |t, v| f(t, v), &opts)?.max_rel_err();
        if e >= worst_op.1 {
            worst_op = (name, e);
        }
    }
    let full = composed_check(Flags::full(), 21)?;
    let base = composed_check(Flags::baseline(), 22)?;
    let t = secs(start.elapsed());
    Ok(outcome(
        worst_op.1 < 1e-5 && full < 1e-3 && base < 1e-3 && t < 300.0,
        format!(
            "{n_ops} ops, worst {} rel err {:.2e} (< 1e-5); composed full {full:.2e}, baseline {base:.2e} (< 1e-3); {t:.1} s (< 300 s)",
            worst_op.0, worst_op.1
        ),
    ))
}

struct Oracle<'a> {
    sched: &'a NoiseSchedule,
    z0: &'a Tensor<f64>,
}

impl NoisePredictor<f64> for Oracle<'_> {
    fn predict(&self, z: &Tensor<f64>, t: usize) -> Result<Tensor<f64>> {
        let ab = self.sched.alpha_bar()[t];
        Ok(Tensor::from_fn(z.shape(), |i| (z.data()[i] - ab.sqrt() * self.z0.data()[i]) / (1.0 - ab).sqrt()))
    }
}

// 3. Forward-noise moments and oracle recovery.
fn diffusion_moments() -> Result<Outcome> {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = uniform(&[4, 16, 16], 0.0, 1.0, &mut rng);
    let z0 = encode_latent(&image, 4)?;
    let n = z0.z.len();
    let draws = 10_000;
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for t in [1, 25, 50, 100] {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for _ in 0..draws {
            let eps = randn(z0.z.shape(), &mut rng);
            let zt = forward_noise(&sched, &z0, t, &eps)?;
            for (k, &v) in zt.z.data().iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        let ab = sched.alpha_bar()[t];
        let mut pooled_var = 0.0;
        for k in 0..n {
            let m = sum[k] / draws as f64;
            mean_err = mean_err.max((m - ab.sqrt() * z0.z.data()[k]).abs());
            pooled_var += (sq[k] - draws as f64 * m * m) / (draws - 1) as f64;
        }
        pooled_var /= n as f64;
        var_err = var_err.max((pooled_var / (1.0 - ab) - 1.0).abs());
    }
    let oracle = Oracle { sched: &sched, z0: &z0.z };
    let mut recover = 0.0f64;
    for t in [1, 25, 50, 100] {
        let eps = randn(z0.z.shape(), &mut rng);
        let zt = forward_noise(&sched, &z0, t, &eps)?;
        let back: LatentState<f64> = denoise_truncated(&sched, &zt, t, &oracle)?;
        recover = recover.max(back.z.max_abs_diff(&z0.z));
    }
    Ok(outcome(
        mean_err < 0.05 && var_err < 0.05 && recover < 1e-8,
        format!(
            "t in {{1,25,50,100}}, {draws} draws: max mean err {mean_err:.4} (< 0.05), max var rel err {:.2}% (< 5%); oracle recovery {recover:.2e} (< 1e-8)",
            100.0 * var_err
        ),
    ))
}

// 4. Every refinement output equals the coarse map at initialisation.
fn identity_at_init() -> Result<Outcome> {
    let sample = &generate_ids(0..1, 64, 64, 42)?[0];
    let mut ok = true;
    let mut checked = 0;
    for seed in [42u64, 7] {
        let m64 = Model::<f64>::new(NetworkConfig::default(), seed)?;
        let m32 = m64.cast::<f32>();
        let p64 = {
            let (rgb, aux) = (sample.rgb.clone(), sample.aux.clone());
            let prior = Some(m64.prior(&rgb, Some(&aux), sample.seed)?);
            m64.predict(&NetInput { rgb, aux: Some(aux), prior })?
        };
        let p32 = {
            let (rgb, aux): (Tensor<f32>, Tensor<f32>) = (sample.rgb.cast(), sample.aux.cast());
            let prior = Some(m32.prior(&rgb, Some(&aux), sample.seed)?);
            m32.predict(&NetInput { rgb, aux: Some(aux), prior })?
        };
        ok &= p64.maps.len() == 2 + m64.config.refine_iters;
        ok &= p64.maps[1..].iter().all(|m| m == &p64.maps[0]);
        ok &= p64.stages.iter().zip(&p64.mixed).all(|(a, b)| a == b);
        ok &= p32.maps[1..].iter().all(|m| m == &p32.maps[0]);
        ok &= p32.stages.iter().zip(&p32.mixed).all(|(a, b)| a == b);
        checked += p64.maps.len() + p64.stages.len();
    }
    Ok(outcome(ok, format!("default model, 64x64, two seeds, fp64 and fp32: {checked} tensors per precision compared bitwise")))
}

// 5. Measures against the brute-force loops.
fn metric_oracles() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let (p, g) = common::random_case(1000 + seed, 8, 8);
        let m = MapPair::new(&p, &g, 8, 8)?;
        worst = worst
            .max((s_measure(&m) - common::s_measure(&p, &g, 8, 8)).abs())
            .max((f_measure_mean(&m) - common::f_mean(&p, &g)).abs())
            .max((e_measure_mean(&m) - common::e_mean(&p, &g)).abs());
    }
    let mut perfect = 0.0f64;
    for seed in 0..50 {
        let (_, g) = common::random_case(2000 + seed, 8, 8);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let m = MapPair::new(&g, &g, 8, 8)?;
        for v in [s_measure(&m), f_measure_mean(&m), e_measure_mean(&m)] {
            perfect = perfect.max((v - 1.0).abs());
        }
    }
    Ok(outcome(
        worst < 1e-12 && perfect < 1e-9,
        format!("50 random 8x8 cases: max diff {worst:.2e} (< 1e-12); pred == gt within {perfect:.2e} of 1 (<= 1e-9)"),
    ))
}

struct TrainingRuns {
    loss: (f64, f64),
    full_fm: f64,
    base_fm: f64,
    rows: usize,
    table_lines: usize,
    regressions: Vec<&'static str>,
    full_secs: f64,
}

fn desk_protocol() -> Result<TrainingRuns> {
    let cfg = RunConfig::default();
    let train_set = generate_ids(0..cfg.train_samples, cfg.image_size, cfg.image_size, cfg.seed)?;
    let test = generate_ids(cfg.train_samples..cfg.train_samples + cfg.test_samples, cfg.image_size, cfg.image_size, cfg.seed)?;
    let mut started = Instant::now();
    let mut full_secs = 0.0;
    let report = ablate::<f32>(&cfg, &train_set, &test, |r| {
        let t = secs(started.elapsed());
        if r.flags == Flags::full() {
            full_secs = t;
        }
        println!("    {:<22} F_m {:.4}  loss {:.4} -> {:.4}  {t:.0} s", r.label, r.scores.f_measure_mean, r.first_loss, r.final_loss);
        started = Instant::now();
    })?;
    let full = report.rows.last().expect("seven rows");
    let md = report.to_markdown();
    Ok(TrainingRuns {
        loss: (full.first_loss, full.final_loss),
        full_fm: full.scores.f_measure_mean,
        base_fm: report.rows[0].scores.f_measure_mean,
        rows: report.rows.len(),
        table_lines: md.lines().take_while(|l| l.starts_with('|')).count(),
        regressions: report.regressions().iter().map(|&i| report.rows[i].label).collect(),
        full_secs,
    })
}

// 6. Seed-42 training regression (the full row of the ladder).
fn training_regression(r: &TrainingRuns) -> Outcome {
    outcome(
        r.loss.1 < r.loss.0 && r.full_fm >= 0.90 && r.full_secs < 900.0,
        format!(
            "seed 42, 200 x 64x64, 30 epochs: loss {:.4} -> {:.4}; held-out F_m {:.4} (>= 0.90); train+eval {:.0} s (< 900 s)",
            r.loss.0, r.loss.1, r.full_fm, r.full_secs
        ),
    )
}

// 7. Ablation direction and table shape.
fn ablation_direction(r: &TrainingRuns) -> Outcome {
    let reg = if r.regressions.is_empty() { "none".to_string() } else { r.regressions.join(", ") };
    outcome(
        r.full_fm >= r.base_fm && r.rows == 7 && r.table_lines == 9,
        format!(
            "full F_m {:.4} vs baseline {:.4}; {} rows, {} table lines; per-row F_m regressions (reported only): {reg}",
            r.full_fm, r.base_fm, r.rows, r.table_lines
        ),
    )
}

// 8. Two single-threaded train+eval runs give identical bytes.
fn determinism() -> Result<Outcome> {
    let mut cfg = RunConfig::default();
    for (k, v) in [("train_samples", "16"), ("test_samples", "8"), ("image_size", "32"), ("epochs", "2"), ("denoiser_epochs", "2")] {
        cfg.set(k, v)?;
    }
    let train_set = generate_ids(0..cfg.train_samples, 32, 32, cfg.seed)?;
    let test = generate_ids(cfg.train_samples..cfg.train_samples + cfg.test_samples, 32, 32, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let run = || -> Result<(Vec<u8>, String, String)> {
        pool.install(|| {
            let out = train::<f32>(&cfg, &train_set)?;
            let eval = evaluate(&out.model, &test)?;
            Ok((checkpoint_bytes(&out.model)?, log_csv(&out.log), eval.to_csv()))
        })
    };
    let a = run()?;
    let b = run()?;
    Ok(outcome(
        a == b,
        format!(
            "16 train / 8 test samples at 32x32, 2 epochs, full model: checkpoint ({} bytes), train log and eval CSV identical: {}",
            a.0.len(),
            a == b
        ),
    ))
}

// 9. Benchmark CSV.
fn benchmark() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let report = bench_scan(&cfg.bench_lengths, cfg.bench_state_dim, cfg.bench_reps, cfg.seed)?;
    let csv = report.to_csv();
    let worst = report.rows.iter().map(|r| r.max_residual_vs_sequential).fold(0.0, f64::max);
    let header_ok = csv.lines().next() == Some("kernel,length,Dh,threads,elements_per_sec,max_residual_vs_sequential");
    let speed: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.kernel == "parallel")
        .map(|r| format!("L={} {:.2e}/s", r.length, r.elements_per_sec))
        .collect();
    Ok(outcome(
        header_ok && worst < 1e-10 && !report.rows.is_empty(),
        format!("{} rows, max residual {worst:.2e} (< 1e-10); parallel throughput {}", report.rows.len(), speed.join(", ")),
    ))
}

fn main() -> ExitCode {
    let selected: Option<Vec<usize>> =
        std::env::var("DGSSM_ACCEPT").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |k: usize| selected.as_ref().is_none_or(|s| s.contains(&k));
    let names = [
        "scan oracle equivalence",
        "gradient suite",
        "diffusion moments",
        "identity at init",
        "metric oracles",
        "desk-scale training regression",
        "ablation direction",
        "determinism",
        "benchmark artifact",
    ];
    let mut failed = 0;
    let mut report = |k: usize, r: Result<Outcome>| {
        let (tag, detail) = match r {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {k} {tag} {}: {detail}", names[k - 1]);
    };
    let simple: [(usize, fn() -> Result<Outcome>); 5] =
        [(1, scan_equivalence), (2, gradient_suite), (3, diffusion_moments), (4, identity_at_init), (5, metric_oracles)];
    for (k, f) in simple {
        if want(k) {
            report(k, f());
        } else {
            println!("criterion {k} SKIP {}", names[k - 1]);
        }
    }
    if want(6) || want(7) {
        match desk_protocol() {
            Ok(runs) => {
                for (k, o) in [(6, training_regression(&runs)), (7, ablation_direction(&runs))] {
                    if want(k) {
                        report(k, Ok(o));
                    }
                }
            }
            Err(e) => {
                for k in [6, 7].into_iter().filter(|&k| want(k)) {
                    report(k, Err(dgssm::Error::Invalid(e.to_string())));
                }
            }
        }
    }
    for k in [6, 7] {
        if !want(k) {
            println!("criterion {k} SKIP {}", names[k - 1]);
        }
    }
    for (k, f) in [(8usize, determinism as fn() -> Result<Outcome>), (9, benchmark)] {
        if want(k) {
            report(k, f());
        } else {
            println!("criterion {k} SKIP {}", names[k - 1]);
        }
    }
    if failed == 0 {
        println!("all selected criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("{failed} criteria failed");
    if std::env::var("DGSSM_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
