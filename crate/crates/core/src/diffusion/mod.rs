//! Latent diffusion used as a frozen structural prior: a fixed analytic
//! latent encoder, closed-form forward noising, and a short deterministic
//! reverse trajectory driven by a small learned noise predictor.

mod denoiser;

pub use denoiser::{train_denoiser, Denoiser, DenoiserTraining};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Tensor};

/// Spatial downsampling factor of the latent encoder.
pub const LATENT_STRIDE: usize = 8;
/// Variance floor of the latent standardisation.
pub const VAR_FLOOR: f64 = 1e-6;

/// Noise schedule over steps `0..=T`. `beta[0] = 0` so that
/// `alpha_bar[t] = Π_{s≤t} (1 − beta[s])` with `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta` rising linearly from `beta_start` at step 1 to `beta_end` at
    /// step `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid(format!("bad schedule: T={steps}, beta {beta_start}..{beta_end}")));
        }
        let mut beta = vec![0.0];
        for s in 1..=steps {
            let f = if steps == 1 { 0.0 } else { (s - 1) as f64 / (steps - 1) as f64 };
            beta.push(beta_start + (beta_end - beta_start) * f);
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { steps, beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            Err(Error::StepOutOfRange { step: t, max: self.steps })
        } else {
            Ok(())
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(100, 1e-4, 0.02).expect("valid default schedule")
    }
}

/// A latent `z (Cz,Hz,Wz)` at diffusion step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub z: Tensor<T>,
    pub t: usize,
}

/// Orthonormal DCT-II rows, used as a fixed channel mix `(cz, c)`.
pub fn channel_mix(cz: usize, c: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(cz * c);
    for k in 0..cz {
        let norm = if k == 0 { (1.0 / c as f64).sqrt() } else { (2.0 / c as f64).sqrt() };
        for j in 0..c {
            m.push(norm * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / c as f64).cos());
        }
    }
    m
}

/// Fixed latent encoder: 8× average pooling, DCT channel mix to `cz`
/// channels, then per-channel standardisation with variance floor 1e-6.
pub fn encode_latent<T: Real>(image: &Tensor<T>, cz: usize) -> Result<LatentState<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::ShapeMismatch { op: "encode_latent", lhs: image.shape().to_vec(), rhs: vec![0, 0, 0] });
    };
    if h % LATENT_STRIDE != 0 || w % LATENT_STRIDE != 0 {
        return Err(invalid(format!("image {h}x{w} not divisible by {LATENT_STRIDE}")));
    }
    if cz == 0 {
        return Err(invalid("latent needs at least one channel"));
    }
    let (hz, wz) = (h / LATENT_STRIDE, w / LATENT_STRIDE);
    let plane = hz * wz;
    let inv = 1.0 / (LATENT_STRIDE * LATENT_STRIDE) as f64;
    let mut pooled = vec![0.0f64; c * plane];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                pooled[ch * plane + (y / LATENT_STRIDE) * wz + x / LATENT_STRIDE] += image.data()[(ch * h + y) * w + x].f64();
            }
        }
    }
    pooled.iter_mut().for_each(|v| *v *= inv);
    let mix = channel_mix(cz, c);
    let mut z = vec![0.0f64; cz * plane];
    for k in 0..cz {
        for j in 0..c {
            let m = mix[k * c + j];
            for p in 0..plane {
                z[k * plane + p] += m * pooled[j * plane + p];
            }
        }
    }
    for chan in z.chunks_mut(plane) {
        let mean = chan.iter().sum::<f64>() / plane as f64;
        let var = chan.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let sd = var.max(VAR_FLOOR).sqrt();
        chan.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    let z = Tensor::from_parts(vec![cz, hz, wz], z.into_iter().map(T::of).collect());
    Ok(LatentState { z, t: 0 })
}

/// `z_t = √ᾱ_t · z0 + √(1−ᾱ_t) · eps`.
pub fn forward_noise<T: Real>(
    sched: &NoiseSchedule,
    z0: &LatentState<T>,
    t: usize,
    eps: &Tensor<T>,
) -> Result<LatentState<T>> {
    sched.check(t)?;
    if eps.shape() != z0.z.shape() {
        return Err(Error::ShapeMismatch { op: "forward_noise", lhs: z0.z.shape().to_vec(), rhs: eps.shape().to_vec() });
    }
    let ab = sched.alpha_bar[t];
    let (a, b) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
    let data = z0.z.data().iter().zip(eps.data()).map(|(&z, &e)| a * z + b * e).collect();
    Ok(LatentState { z: Tensor::from_parts(z0.z.shape().to_vec(), data), t })
}

/// Predicts the noise component `ε̂(z_t, t)`.
pub trait NoisePredictor<T: Real> {
    fn predict(&self, z: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

/// Predicts zero noise.
pub struct ZeroPredictor;

impl<T: Real> NoisePredictor<T> for ZeroPredictor {
    fn predict(&self, z: &Tensor<T>, _t: usize) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(z.shape()))
    }
}

/// `k` deterministic reverse steps
/// `z_{s−1} = (z_s − β_s/√(1−ᾱ_s) · ε̂(z_s, s)) / √(1−β_s)`.
pub fn denoise_truncated<T: Real, P: NoisePredictor<T> + ?Sized>(
    sched: &NoiseSchedule,
    zt: &LatentState<T>,
    k: usize,
    predictor: &P,
) -> Result<LatentState<T>> {
    sched.check(zt.t)?;
    if k > zt.t {
        return Err(invalid(format!("{k} reverse steps requested from step {}", zt.t)));
    }
    let mut z = zt.z.clone();
    for s in ((zt.t - k + 1)..=zt.t).rev() {
        let eps = predictor.predict(&z, s)?;
        if eps.shape() != z.shape() {
            return Err(Error::ShapeMismatch { op: "denoise", lhs: z.shape().to_vec(), rhs: eps.shape().to_vec() });
        }
        let beta = sched.beta[s];
        let c_eps = T::of(beta / (1.0 - sched.alpha_bar[s]).sqrt());
        let inv = T::of(1.0 / (1.0 - beta).sqrt());
        z.data_mut().iter_mut().zip(eps.data()).for_each(|(v, &e)| *v = (*v - c_eps * e) * inv);
        if !z.is_finite() {
            return Err(Error::NonFinite("reverse diffusion step"));
        }
    }
    Ok(LatentState { z, t: zt.t - k })
}

/// Noising depth and reverse-step count that produce the prior latent
/// `z_{t*}` with `t* = noise_step − reverse_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PriorConfig {
    pub latent_channels: usize,
    pub noise_step: usize,
    pub reverse_steps: usize,
}

impl PriorConfig {
    /// Noise to `T/2`, then `T/4` reverse steps.
    pub fn for_schedule(sched: &NoiseSchedule, latent_channels: usize) -> Self {
        Self { latent_channels, noise_step: sched.steps() / 2, reverse_steps: sched.steps() / 4 }
    }

    pub fn t_star(&self) -> usize {
        self.noise_step - self.reverse_steps
    }
}

/// Encodes `image`, noises it to `noise_step` with noise drawn from `seed`,
/// and runs the truncated reverse process.
pub fn structural_prior<T: Real, P: NoisePredictor<T> + ?Sized>(
    image: &Tensor<T>,
    sched: &NoiseSchedule,
    cfg: &PriorConfig,
    predictor: &P,
    seed: u64,
) -> Result<LatentState<T>> {
    let z0 = encode_latent(image, cfg.latent_channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Tensor::from_fn(z0.z.shape(), |_| T::of(StandardNormal.sample(&mut rng)));
    let zt = forward_noise(sched, &z0, cfg.noise_step, &eps)?;
    denoise_truncated(sched, &zt, cfg.reverse_steps, predictor)
}

impl<T: Real> Tape<T> {
    /// `1×1` projection of a latent `(Cz,Hz,Wz)` with `w (C,Cz)` followed by
    /// nearest-neighbour resizing to `(C,h,w)`.
    pub fn project_prior(&mut self, z: Var, w: Var, h: usize, wd: usize) -> Result<Var> {
        let s = self.shape(w).to_vec();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch { op: "project_prior", lhs: s, rhs: vec![0, 0] });
        }
        let k = self.reshape(w, &[s[0], s[1], 1, 1])?;
        let y = self.conv2d(z, k, 1, 0)?;
        self.resize_nearest(y, h, wd)
    }
}

/// Non-differentiated [`Tape::project_prior`].
pub fn project_prior<T: Real>(z: &Tensor<T>, w: &Tensor<T>, h: usize, wd: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (zv, wv) = (tape.constant(z.clone()), tape.constant(w.clone()));
    let y = tape.project_prior(zv, wv, h, wd)?;
    Ok(tape.value(y).clone())
}
