use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{forward_noise, LatentState, NoisePredictor, NoiseSchedule};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{batch_gradients, Sgd};
use crate::params::{init_normal, Binding, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

const WIDTH: usize = 16;
const EMBED: usize = 16;
const KIND: &str = "denoiser";

/// Three 3×3 convolutions (`Cz → 16 → 16 → Cz`) with SiLU activations and a
/// sinusoidal step embedding added as a per-channel bias to the two hidden
/// layers.
#[derive(Clone, Debug)]
pub struct Denoiser<T> {
    pub params: ParamStore<T>,
    latent_channels: usize,
    ids: [ParamId; 8],
}

impl<T: Real> Denoiser<T> {
    pub fn new(latent_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cz = latent_channels;
        let mut p = ParamStore::new();
        let ids = [
            p.add("den.conv1.w", init_normal(&[WIDTH, cz, 3, 3], cz * 9, 2.0, &mut rng)),
            p.add("den.conv1.b", Tensor::zeros(&[WIDTH])),
            p.add("den.temb1.w", init_normal(&[WIDTH, EMBED], EMBED, 1.0, &mut rng)),
            p.add("den.conv2.w", init_normal(&[WIDTH, WIDTH, 3, 3], WIDTH * 9, 2.0, &mut rng)),
            p.add("den.conv2.b", Tensor::zeros(&[WIDTH])),
            p.add("den.temb2.w", init_normal(&[WIDTH, EMBED], EMBED, 1.0, &mut rng)),
            p.add("den.conv3.w", init_normal(&[cz, WIDTH, 3, 3], WIDTH * 9, 0.1, &mut rng)),
            p.add("den.conv3.b", Tensor::zeros(&[cz])),
        ];
        Self { params: p, latent_channels, ids }
    }

    pub fn cast<U: Real>(&self) -> Denoiser<U> {
        Denoiser { params: self.params.cast(), latent_channels: self.latent_channels, ids: self.ids }
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    /// Sinusoidal embedding of step `t`.
    pub fn step_embedding(t: usize) -> Tensor<T> {
        Tensor::from_fn(&[EMBED], |i| {
            let freq = 10_000f64.powf(-((i / 2 * 2) as f64) / EMBED as f64);
            let arg = t as f64 * freq;
            T::of(if i % 2 == 0 { arg.sin() } else { arg.cos() })
        })
    }

    /// Builds `ε̂(z, t)` on `tape` with parameters bound in `bind`.
    pub fn forward(&self, tape: &mut Tape<T>, bind: &Binding, z: Var, t: usize) -> Result<Var> {
        let v = |i: usize| bind.var(self.ids[i]);
        let emb = tape.constant(Self::step_embedding(t));
        let mut h = z;
        for layer in 0..2 {
            let base = layer * 3;
            let y = tape.conv_same(h, v(base), Some(v(base + 1)))?;
            let tb = tape.linear(emb, v(base + 2), None)?;
            let y = tape.add_channel_bias(y, tb)?;
            h = tape.silu(y)?;
        }
        tape.conv_same(h, v(6), Some(v(7)))
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let meta = vec![("latent_channels".to_string(), self.latent_channels.to_string())];
        self.params.write_checkpoint(w, KIND, &meta)
    }

    pub fn load(r: &mut impl BufRead) -> Result<Self> {
        let ck = ParamStore::<T>::read_checkpoint(r)?;
        let bad = |detail: String| Error::Format { what: "denoiser checkpoint", detail };
        if ck.kind != KIND {
            return Err(bad(format!("kind {:?}", ck.kind)));
        }
        let cz: usize = ck
            .meta("latent_channels")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing latent_channels".into()))?;
        let fresh = Self::new(cz, 0);
        if fresh.params.len() != ck.params.len()
            || fresh.params.iter().zip(ck.params.iter()).any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape())
        {
            return Err(bad("parameter layout does not match".into()));
        }
        Ok(Self { params: ck.params, latent_channels: cz, ids: fresh.ids })
    }
}

impl<T: Real> NoisePredictor<T> for Denoiser<T> {
    fn predict(&self, z: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let y = self.forward(&mut tape, &bind, zv, t)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Debug)]
pub struct DenoiserTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DenoiserTraining {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 8, lr: 0.01, seed: 0 }
    }
}

/// Fits a denoiser to the noise-prediction objective `mean (ε − ε̂(z_t, t))²`
/// with `t` uniform in `1..=T`. Returns the model and the mean loss of each
/// epoch.
pub fn train_denoiser<T: Real>(
    latents: &[LatentState<T>],
    sched: &NoiseSchedule,
    cfg: &DenoiserTraining,
) -> Result<(Denoiser<T>, Vec<f64>)> {
    let cz = latents.first().map(|l| l.z.shape()[0]).unwrap_or(1);
    let mut model = Denoiser::new(cz, cfg.seed);
    let mut opt = Sgd::new(cfg.lr, 0.9).with_clip(5.0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let items: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.gen())).collect();
            let (grads, loss) = batch_gradients(&model.params, &items, |&(i, draw)| {
                let mut r = ChaCha8Rng::seed_from_u64(draw);
                let t = r.gen_range(1..=sched.steps());
                let eps = Tensor::from_fn(latents[i].z.shape(), |_| T::of(StandardNormal.sample(&mut r)));
                let zt = forward_noise(sched, &latents[i], t, &eps)?;
                let mut tape = Tape::new();
                let bind = model.params.bind(&mut tape, true);
                let zv = tape.constant(zt.z);
                let pred = model.forward(&mut tape, &bind, zv, t)?;
                let target = tape.constant(eps);
                let d = tape.sub(pred, target)?;
                let d = tape.square(d)?;
                let loss = tape.mean_all(d)?;
                let value = tape.value(loss).item().f64();
                let mut g = tape.backward(loss)?;
                Ok((bind.gradients(&model.params, &mut g), value))
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("denoiser loss {loss} in epoch {epoch}")));
            }
            opt.step(&mut model.params, &grads)?;
            total += loss * batch.len() as f64;
        }
        history.push(total / latents.len().max(1) as f64);
    }
    Ok((model, history))
}
