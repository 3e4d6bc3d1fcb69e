//! The saliency network: prior-injected, prompt-conditioned multi-scale scan
//! encoder, scan decoder, edge-aware refinement head and iterative
//! prior-conditioned refinement, all operating on a per-sample tape.

mod config;
mod ops;

use std::io::{BufRead, Write};

pub use config::{Flags, NetworkConfig};
pub use ops::{sobel_edges, sobel_kernel, LOGIT_BOUND};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::diffusion::{structural_prior, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::params::{init_normal, Binding, ParamId, ParamStore};
use crate::scan::{MultiScaleConfig, ScanDirection, ScanKernel, A_BOUND};
use crate::tensor::{Real, Tensor};

const MODEL_KIND: &str = "dgssm-model";
const DENOISER_PREFIX: &str = "den.";
const EDGE_FEATS: usize = 4;
const PRIOR_FEATS: usize = 4;
const REFINE_WIDTH: usize = 8;

/// One sample as seen by the network. `prior` is the latent `z_{t*}`,
/// required whenever the configuration uses the diffusion prior.
#[derive(Clone, Debug)]
pub struct NetInput<T> {
    pub rgb: Tensor<T>,
    pub aux: Option<Tensor<T>>,
    pub prior: Option<Tensor<T>>,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Outputs {
    /// Logits of the coarse map, the edge-refined map, then each refinement
    /// iterate.
    pub logits: Vec<Var>,
    /// Sigmoid of `logits`: `Ŝ_0, Ŝ_b, Ŝ_1, …, Ŝ_K`.
    pub maps: Vec<Var>,
    /// Stage outputs `F^(l)`, finest first.
    pub stages: Vec<Var>,
    /// Scan branch outputs `F_m^(l)` before the prior interaction.
    pub mixed: Vec<Var>,
    /// Sobel magnitude of `Ŝ_0` when the edge head is active.
    pub edges: Option<Var>,
    /// Normalised stage embeddings when distillation is active.
    pub embeddings: Vec<Var>,
}

impl Outputs {
    pub fn final_map(&self) -> Var {
        *self.maps.last().expect("at least two maps")
    }

    /// `Ŝ_1, …, Ŝ_K`.
    pub fn iterates(&self) -> &[Var] {
        &self.maps[2..]
    }
}

/// Plain tensors of one forward pass.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub maps: Vec<Tensor<T>>,
    pub logits: Vec<Tensor<T>>,
    pub stages: Vec<Tensor<T>>,
    pub mixed: Vec<Tensor<T>>,
}

impl<T: Real> Prediction<T> {
    pub fn final_map(&self) -> &Tensor<T> {
        self.maps.last().expect("at least two maps")
    }
}

#[derive(Clone, Copy, Debug)]
struct ScanIds {
    theta: ParamId,
    b: ParamId,
    c: ParamId,
}

#[derive(Clone, Debug)]
struct StageIds {
    scan: ScanIds,
    res_w: ParamId,
    res_b: ParamId,
    phi: Option<[ParamId; 4]>,
    modulation: Option<[ParamId; 2]>,
    psi: Option<ParamId>,
    lambda: Option<ParamId>,
    eta: Option<ParamId>,
}

/// Projection, two convolutions (weights and biases).
type HeadIds = [ParamId; 5];

#[derive(Clone, Debug)]
struct Ids {
    stem: [ParamId; 2],
    stages: Vec<StageIds>,
    lateral: Vec<[ParamId; 2]>,
    blocks: Vec<ScanIds>,
    head: [ParamId; 2],
    barh: Option<HeadIds>,
    imdr: Option<HeadIds>,
}

/// Deterministic per-parameter generator: the draws of a parameter depend
/// only on the seed and its name, not on which other components exist.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
}

impl<T: Real> Builder<'_, T> {
    fn normal(&mut self, name: &str, shape: &[usize], fan_in: usize, gain: f64) -> ParamId {
        let t = init_normal(shape, fan_in, gain, &mut param_rng(self.seed, name));
        self.store.add(name, t)
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    /// Transition targets spread over `[0.5, 0.95]`; input rows scaled by
    /// `1 − a` so the steady-state response has unit gain; trailing
    /// `prior_cols` input columns start at zero. The `terms` scan outputs
    /// that get summed are strongly correlated, so the readout variance is
    /// divided by `terms²` rather than `terms`.
    fn scan(&mut self, prefix: &str, dh: usize, din: usize, prior_cols: usize, dout: usize, terms: usize) -> ScanIds {
        let targets: Vec<f64> =
            (0..dh).map(|k| 0.5 + 0.45 * if dh > 1 { k as f64 / (dh - 1) as f64 } else { 0.0 }).collect();
        let theta = Tensor::from_fn(&[dh], |k| {
            let q = targets[k] / A_BOUND;
            T::of((q / (1.0 - q)).ln())
        });
        let theta = self.store.add(format!("{prefix}.theta"), theta);
        let free = din - prior_cols;
        let mut b: Tensor<T> = init_normal(&[dh, din], free.max(1), 1.0, &mut param_rng(self.seed, &format!("{prefix}.b")));
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            let (k, j) = (i / din, i % din);
            *v = if j >= free { T::zero() } else { *v * T::of(1.0 - targets[k]) };
        }
        let b = self.store.add(format!("{prefix}.b"), b);
        let c = self.normal(&format!("{prefix}.c"), &[dout, dh], dh * terms * terms, 0.5);
        ScanIds { theta, b, c }
    }

    fn head(&mut self, prefix: &str, proj_in: usize, proj_out: usize, conv_in: usize) -> HeadIds {
        [
            self.normal(&format!("{prefix}.proj"), &[proj_out, proj_in], proj_in, 1.0),
            self.normal(&format!("{prefix}.conv1.w"), &[REFINE_WIDTH, conv_in, 3, 3], conv_in * 9, 2.0),
            self.zeros(&format!("{prefix}.conv1.b"), &[REFINE_WIDTH]),
            self.zeros(&format!("{prefix}.conv2.w"), &[1, REFINE_WIDTH, 3, 3]),
            self.zeros(&format!("{prefix}.conv2.b"), &[1]),
        ]
    }
}

fn build<T: Real>(cfg: &NetworkConfig, seed: u64) -> (ParamStore<T>, Ids) {
    let f = cfg.flags;
    let mut store = ParamStore::new();
    let mut bld = Builder { store: &mut store, seed };
    let fused_in = 3 + cfg.aux_channels;
    let stem = [
        bld.normal("stem.w", &[cfg.stem_width, fused_in], fused_in, 1.0),
        bld.zeros("stem.b", &[cfg.stem_width]),
    ];
    let terms = if f.msss { cfg.scales.len() * cfg.directions.len() } else { 1 };
    let cz = if f.dsp { cfg.latent_channels } else { 0 };
    let mut stages = Vec::new();
    let mut cin = cfg.stem_width;
    for (l, &width) in cfg.widths.iter().enumerate() {
        let p = format!("enc{l}");
        let din = cin + cz;
        let scan = bld.scan(&format!("{p}.scan"), cfg.state_dim, din, cz, width, terms);
        let res_w = bld.normal(&format!("{p}.res.w"), &[width, din], din, 0.5);
        let res_b = bld.zeros(&format!("{p}.res.b"), &[width]);
        let (phi, modulation) = if f.asp {
            let dp = cfg.prompt_dim;
            (
                Some([
                    bld.normal(&format!("{p}.prompt.w1"), &[dp, din], din, 1.0),
                    bld.zeros(&format!("{p}.prompt.b1"), &[dp]),
                    bld.normal(&format!("{p}.prompt.w2"), &[dp, dp], dp, 1.0),
                    bld.zeros(&format!("{p}.prompt.b2"), &[dp]),
                ]),
                Some([
                    bld.zeros(&format!("{p}.prompt.scale"), &[cfg.state_dim, dp]),
                    bld.zeros(&format!("{p}.prompt.shift"), &[cfg.state_dim, dp]),
                ]),
            )
        } else {
            (None, None)
        };
        let (psi, lambda) = if f.dsp {
            (
                Some(bld.normal(&format!("{p}.prior.w"), &[width, cz], cz, 1.0)),
                Some(bld.store.add(format!("{p}.prior.lambda"), Tensor::scalar(T::zero()))),
            )
        } else {
            (None, None)
        };
        let eta = f.kd.then(|| bld.normal(&format!("{p}.embed"), &[cfg.embed_dim, width], width, 1.0));
        stages.push(StageIds { scan, res_w, res_b, phi, modulation, psi, lambda, eta });
        cin = width;
    }
    let dw = cfg.decoder_width;
    let mut lateral = Vec::new();
    let mut blocks = Vec::new();
    for (l, &width) in cfg.widths.iter().enumerate() {
        lateral.push([
            bld.normal(&format!("dec{l}.lat.w"), &[dw, width], width, 1.0),
            bld.zeros(&format!("dec{l}.lat.b"), &[dw]),
        ]);
        blocks.push(bld.scan(&format!("dec{l}.scan"), cfg.state_dim, dw, 0, dw, 1));
    }
    let head = [bld.normal("head.w", &[1, dw, 3, 3], dw * 9, 1.0), bld.zeros("head.b", &[1])];
    let barh = f.barh.then(|| bld.head("edge", dw, EDGE_FEATS, 2 + EDGE_FEATS));
    let imdr = f.imdr.then(|| bld.head("refine", cfg.latent_channels, PRIOR_FEATS, 1 + PRIOR_FEATS));
    (store, Ids { stem, stages, lateral, blocks, head, barh, imdr })
}

/// Network parameters together with the frozen denoiser that produces the
/// structural prior.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub denoiser: Denoiser<T>,
    pub kernel: ScanKernel,
    schedule: NoiseSchedule,
    ids: Ids,
}

impl<T: Real> Model<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, ids) = build(&config, seed);
        let denoiser = Denoiser::new(config.latent_channels, seed);
        let schedule = config.schedule()?;
        Ok(Self { config, params, denoiser, kernel: ScanKernel::Sequential, schedule, ids })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            denoiser: self.denoiser.cast(),
            kernel: self.kernel,
            schedule: self.schedule.clone(),
            ids: self.ids.clone(),
        }
    }

    /// The image the latent encoder sees: `rgb` stacked with `aux` (zeros
    /// when absent).
    pub fn prior_image(&self, rgb: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
        let mut data = rgb.data().to_vec();
        match aux {
            Some(a) => data.extend_from_slice(a.data()),
            None => data.resize(data.len() + self.config.aux_channels * h * w, T::zero()),
        }
        Tensor::new(&[3 + self.config.aux_channels, h, w], data)
    }

    /// `z_{t*}` for one image, with the forward-noise draw seeded by `seed`.
    pub fn prior(&self, rgb: &Tensor<T>, aux: Option<&Tensor<T>>, seed: u64) -> Result<Tensor<T>> {
        let image = self.prior_image(rgb, aux)?;
        Ok(structural_prior(&image, &self.schedule, &self.config.prior(), &self.denoiser, seed)?.z)
    }

    fn stage_scan_config(&self, h: usize, w: usize) -> Result<MultiScaleConfig> {
        if self.config.flags.msss {
            let scales = self.config.scales.iter().copied().filter(|&s| h.is_multiple_of(s) && w.is_multiple_of(s)).collect();
            MultiScaleConfig::new(scales, self.config.directions.clone())
        } else {
            MultiScaleConfig::new(vec![1], vec![ScanDirection::LeftToRight])
        }
    }

    fn transition(&self, tape: &mut Tape<T>, bind: &Binding, ids: &ScanIds) -> Result<Var> {
        let a = tape.sigmoid(bind.var(ids.theta))?;
        tape.mul_scalar(a, A_BOUND)
    }

    /// Builds the full forward pass on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, bind: &Binding, input: &NetInput<T>) -> Result<Outputs> {
        let cfg = &self.config;
        let f = cfg.flags;
        let v = |id: ParamId| bind.var(id);
        let rs = input.rgb.shape();
        if rs.len() != 3 || rs[0] != 3 {
            return Err(Error::ShapeMismatch { op: "forward", lhs: rs.to_vec(), rhs: vec![3, 0, 0] });
        }
        let (h, w) = (rs[1], rs[2]);
        cfg.check_input(h, w)?;

        let rgb = tape.constant(input.rgb.clone());
        let aux = input.aux.as_ref().map(|a| tape.constant(a.clone()));
        let mut x = tape.fuse_modalities(rgb, aux, cfg.aux_channels, v(self.ids.stem[0]), v(self.ids.stem[1]))?;
        let z = if f.needs_prior() {
            let p = input.prior.as_ref().ok_or_else(|| Error::Invalid("model needs the diffusion prior".into()))?;
            let zs = p.shape();
            if zs.len() != 3 || zs[0] != cfg.latent_channels {
                return Err(Error::ShapeMismatch { op: "forward prior", lhs: zs.to_vec(), rhs: vec![cfg.latent_channels] });
            }
            Some(tape.constant(p.clone()))
        } else {
            None
        };

        let mut stages = Vec::with_capacity(cfg.depth());
        let mut mixed = Vec::with_capacity(cfg.depth());
        for (l, st) in self.ids.stages.iter().enumerate() {
            let (hl, wl) = (tape.shape(x)[1], tape.shape(x)[2]);
            let xt = match (f.dsp, z) {
                (true, Some(z)) => {
                    let zr = tape.resize_nearest(z, hl, wl)?;
                    tape.concat(&[x, zr])?
                }
                _ => x,
            };
            let a = self.transition(tape, bind, &st.scan)?;
            let (a, b) = match (st.phi, st.modulation) {
                (Some([w1, b1, w2, b2]), Some([ws, wb])) => {
                    let g = tape.global_avg_pool(xt)?;
                    let hdn = tape.linear(g, v(w1), Some(v(b1)))?;
                    let hdn = tape.tanh(hdn)?;
                    let p = tape.linear(hdn, v(w2), Some(v(b2)))?;
                    tape.modulate_scan(a, v(st.scan.b), p, v(ws), v(wb))?
                }
                _ => (a, v(st.scan.b)),
            };
            let ms = self.stage_scan_config(hl, wl)?;
            let s = tape.ssm_scan_multiscale(xt, a, b, v(st.scan.c), &ms, self.kernel)?;
            let r = tape.conv1x1(xt, v(st.res_w), Some(v(st.res_b)))?;
            let fm = tape.add(s, r)?;
            let fm = tape.silu(fm)?;
            let fl = match (st.psi, st.lambda, z) {
                (Some(psi), Some(lambda), Some(z)) => {
                    let pz = tape.project_prior(z, v(psi), hl, wl)?;
                    let pz = tape.mul(v(lambda), pz)?;
                    tape.add(fm, pz)?
                }
                _ => fm,
            };
            mixed.push(fm);
            stages.push(fl);
            if l + 1 < cfg.depth() {
                x = tape.avg_pool2d(fl, 2)?;
            }
        }

        // Top-down decoder with one scan block per level.
        let single = MultiScaleConfig::new(vec![1], vec![ScanDirection::LeftToRight])?;
        let mut t: Option<Var> = None;
        for l in (0..cfg.depth()).rev() {
            let [lw, lb] = self.ids.lateral[l];
            let lat = tape.conv1x1(stages[l], v(lw), Some(v(lb)))?;
            let y = match t {
                None => lat,
                Some(prev) => {
                    let (hl, wl) = (tape.shape(lat)[1], tape.shape(lat)[2]);
                    let up = tape.resize_nearest(prev, hl, wl)?;
                    tape.add(up, lat)?
                }
            };
            let blk = self.ids.blocks[l];
            let a = self.transition(tape, bind, &blk)?;
            let s = tape.ssm_scan_multiscale(y, a, v(blk.b), v(blk.c), &single, self.kernel)?;
            let y = tape.add(y, s)?;
            t = Some(tape.silu(y)?);
        }
        let dec = t.expect("at least one stage");
        let l0 = tape.conv_same(dec, v(self.ids.head[0]), Some(v(self.ids.head[1])))?;
        let h0 = l0;
        let l0 = tape.soft_bound(h0, LOGIT_BOUND)?;
        let s0 = tape.sigmoid(l0)?;
        let mut logits = vec![l0];
        let mut maps = vec![s0];

        let mut edges = None;
        let lb = match self.ids.barh {
            Some([proj, c1w, c1b, c2w, c2b]) => {
                let e = tape.sobel_edges(s0)?;
                edges = Some(e);
                let pf = tape.conv1x1(dec, v(proj), None)?;
                let cat = tape.concat(&[s0, e, pf])?;
                let y = tape.conv_same(cat, v(c1w), Some(v(c1b)))?;
                let y = tape.silu(y)?;
                let r = tape.conv_same(y, v(c2w), Some(v(c2b)))?;
                Some(tape.add(h0, r)?)
            }
            None => None,
        };
        // Residuals accumulate on the unbounded pre-activation; every
        // emitted logit goes through the same soft bound.
        let (hb, lb, sb) = match lb {
            Some(hb) => {
                let lb = tape.soft_bound(hb, LOGIT_BOUND)?;
                (hb, lb, tape.sigmoid(lb)?)
            }
            None => (h0, l0, s0),
        };
        logits.push(lb);
        maps.push(sb);

        if let (Some([proj, c1w, c1b, c2w, c2b]), Some(z)) = (self.ids.imdr, z) {
            let cond = tape.project_prior(z, v(proj), h, w)?;
            let mut hk = hb;
            let mut sk = sb;
            for _ in 0..cfg.refine_iters {
                let cat = tape.concat(&[sk, cond])?;
                let y = tape.conv_same(cat, v(c1w), Some(v(c1b)))?;
                let y = tape.silu(y)?;
                let r = tape.conv_same(y, v(c2w), Some(v(c2b)))?;
                hk = tape.add(hk, r)?;
                let lk = tape.soft_bound(hk, LOGIT_BOUND)?;
                sk = tape.sigmoid(lk)?;
                logits.push(lk);
                maps.push(sk);
            }
        }

        let mut embeddings = Vec::new();
        for (st, &fl) in self.ids.stages.iter().zip(&stages) {
            if let Some(eta) = st.eta {
                let g = tape.global_avg_pool(fl)?;
                let e = tape.linear(g, v(eta), None)?;
                embeddings.push(tape.l2_normalize(e)?);
            }
        }
        Ok(Outputs { logits, maps, stages, mixed, edges, embeddings })
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, input: &NetInput<T>) -> Result<Prediction<T>> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bind, input)?;
        let get = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        Ok(Prediction {
            maps: get(&out.maps),
            logits: get(&out.logits),
            stages: get(&out.stages),
            mixed: get(&out.mixed),
        })
    }

    /// Writes the configuration, network parameters and denoiser parameters.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let mut all = self.params.clone();
        for (name, t) in self.denoiser.params.iter() {
            all.add(name, t.clone());
        }
        all.write_checkpoint(w, MODEL_KIND, &self.config.to_pairs())
    }

    pub fn load(r: &mut impl BufRead) -> Result<Self> {
        let ck = ParamStore::<T>::read_checkpoint(r)?;
        let bad = |detail: String| Error::Format { what: "model checkpoint", detail };
        if ck.kind != MODEL_KIND {
            return Err(bad(format!("kind {:?}", ck.kind)));
        }
        let config = NetworkConfig::from_pairs(&ck.meta)?;
        let mut model = Self::new(config, 0)?;
        let (mut net, mut den) = (ParamStore::new(), ParamStore::new());
        for (name, t) in ck.params.iter() {
            let target = if name.starts_with(DENOISER_PREFIX) { &mut den } else { &mut net };
            target.add(name, t.clone());
        }
        for (have, want) in [(&net, &model.params), (&den, &model.denoiser.params)] {
            let same = have.len() == want.len()
                && have.iter().zip(want.iter()).all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
            if !same {
                return Err(bad("parameter layout does not match the recorded configuration".into()));
            }
        }
        model.params = net;
        model.denoiser.params = den;
        Ok(model)
    }
}
