//! Training of the full pipeline: denoiser fit (when the prior is used),
//! prior caching, then minibatch SGD on the saliency objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::SyntheticSample;
use crate::diffusion::{encode_latent, train_denoiser, DenoiserTraining};
use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::network::{Model, NetInput};
use crate::optim::{batch_gradients_with, Sgd};
use crate::autodiff::Tape;
use crate::tensor::{Real, Tensor};

/// A sample converted to the working precision, prior included.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub id: usize,
    pub input: NetInput<T>,
    pub gt: Tensor<T>,
}

/// Converts samples and, when the model uses it, computes each sample's
/// prior once with the sample's own seed.
pub fn prepare<T: Real>(model: &Model<T>, samples: &[SyntheticSample]) -> Result<Vec<Prepared<T>>> {
    samples
        .par_iter()
        .map(|s| {
            let rgb: Tensor<T> = s.rgb.cast();
            let aux: Tensor<T> = s.aux.cast();
            model.config.check_input(s.height(), s.width())?;
            let prior =
                if model.config.flags.needs_prior() { Some(model.prior(&rgb, Some(&aux), s.seed)?) } else { None };
            Ok(Prepared { id: s.id, input: NetInput { rgb, aux: Some(aux), prior }, gt: s.gt.cast() })
        })
        .collect()
}

/// Mean loss terms and gradient norm of one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub bce: f64,
    pub iou: f64,
    pub edge: f64,
    pub kd: f64,
    pub progressive: f64,
    pub grad_norm: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,loss,bce,iou,edge,kd,progressive,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.epoch, self.loss, self.bce, self.iou, self.edge, self.kd, self.progressive, self.grad_norm
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{}\n", EpochLog::HEADER);
    for e in log {
        out.push_str(&e.csv_row());
        out.push('\n');
    }
    out
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    /// Mean noise-prediction loss per denoiser epoch; empty without prior.
    pub denoiser_log: Vec<f64>,
}

/// Fits the frozen denoiser on the latents of the training images.
pub fn fit_denoiser<T: Real>(model: &mut Model<T>, cfg: &RunConfig, samples: &[SyntheticSample]) -> Result<Vec<f64>> {
    let latents = samples
        .par_iter()
        .map(|s| encode_latent(&model.prior_image(&s.rgb.cast(), Some(&s.aux.cast()))?, model.config.latent_channels))
        .collect::<Result<Vec<_>>>()?;
    let settings = DenoiserTraining {
        epochs: cfg.denoiser_epochs,
        batch_size: cfg.batch_size,
        lr: cfg.denoiser_lr,
        seed: cfg.seed,
    };
    let (den, hist) = train_denoiser(&latents, model.schedule(), &settings)?;
    model.denoiser = den;
    Ok(hist)
}

fn add_breakdown(acc: &mut EpochLog, b: &LossBreakdown, weight: f64) {
    acc.loss += b.total * weight;
    acc.bce += b.bce * weight;
    acc.iou += b.iou * weight;
    acc.edge += b.edge * weight;
    acc.kd += b.kd * weight;
    acc.progressive += b.progressive.iter().sum::<f64>() * weight;
}

/// One sample's gradient, loss and term breakdown.
pub fn sample_gradients<T: Real>(model: &Model<T>, cfg: &RunConfig, p: &Prepared<T>) -> Result<(Vec<Vec<T>>, f64, LossBreakdown)> {
    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape, true);
    let out = model.forward(&mut tape, &bind, &p.input)?;
    let (loss, br) = tape.total_loss(&out, &p.gt, &cfg.weights, &model.config.flags)?;
    let mut g = tape.backward(loss)?;
    Ok((bind.gradients(&model.params, &mut g), br.total, br))
}

/// Trains a fresh model for `cfg` on `samples`. With `epochs = 0` the
/// initialised model is returned.
pub fn train<T: Real>(cfg: &RunConfig, samples: &[SyntheticSample]) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    let mut model = Model::<T>::new(cfg.network.clone(), cfg.seed)?;
    let denoiser_log = if model.config.flags.needs_prior() { fit_denoiser(&mut model, cfg, samples)? } else { Vec::new() };
    let data = prepare(&model, samples)?;

    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    if cfg.clip_norm > 0.0 {
        opt = opt.with_clip(cfg.clip_norm);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1_000 + epoch as u64);
        order.shuffle(&mut rng);
        let mut entry = EpochLog { epoch, ..Default::default() };
        let batches = order.chunks(cfg.batch_size).count();
        for batch in order.chunks(cfg.batch_size) {
            let (grads, loss, parts) =
                batch_gradients_with(&model.params, batch, |&i| sample_gradients(&model, cfg, &data[i]))?;
            if !loss.is_finite() {
                let detail: Vec<String> =
                    batch.iter().zip(&parts).map(|(&i, b)| format!("sample {}: {b:?}", data[i].id)).collect();
                return Err(Error::Diverged(format!("loss {loss} in epoch {epoch}; {}", detail.join("; "))));
            }
            entry.grad_norm += opt.step(&mut model.params, &grads)? / batches as f64;
            for b in &parts {
                add_breakdown(&mut entry, b, 1.0 / data.len() as f64);
            }
        }
        log.push(entry);
    }
    Ok(TrainOutcome { model, log, denoiser_log })
}
