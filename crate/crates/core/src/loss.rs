//! Training objective: main BCE + IoU on the final map, edge agreement,
//! stage self-distillation and progressive supervision of the refinement
//! iterates.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::{Flags, Outputs};
use crate::tensor::{Real, Tensor};

/// Probability clamp used by every cross-entropy.
pub const PROB_EPS: f64 = 1e-6;
/// Smoothing constant of the IoU loss.
pub const IOU_EPS: f64 = 1.0;
/// Largest Sobel magnitude of a step edge; edge maps are divided by it.
pub const EDGE_SCALE: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub delta: f64,
    /// One weight per refinement iterate.
    pub omega: Vec<f64>,
}

impl LossWeights {
    /// `γ = 1`, `δ = 0.1`, `ω_k = 0.4·k/K`.
    pub fn defaults(iters: usize) -> Self {
        Self { gamma: 1.0, delta: 0.1, omega: Self::ramp(iters) }
    }

    pub fn ramp(iters: usize) -> Vec<f64> {
        (1..=iters).map(|k| 0.4 * k as f64 / iters as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || self.delta < 0.0 || self.omega.iter().any(|&w| w < 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Values of every term of one loss evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    pub iou: f64,
    pub edge: f64,
    pub kd: f64,
    pub progressive: Vec<f64>,
    pub total: f64,
}

fn clamp_prob<T: Real>(v: T) -> T {
    v.max(T::of(PROB_EPS)).min(T::of(1.0 - PROB_EPS))
}

/// Elementwise `−(g ln p + (1−g) ln(1−p))` with `p` clamped, for plain
/// values.
fn cross_entropy<T: Real>(p: T, g: T) -> T {
    let p = clamp_prob(p);
    -(g * p.ln() + (T::one() - g) * (T::one() - p).ln())
}

impl<T: Real> Tape<T> {
    /// Per-pixel binary cross-entropy of `pred` against the constant `gt`.
    fn bce_map(&mut self, pred: Var, gt: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != gt.shape() {
            return Err(Error::ShapeMismatch { op: "bce", lhs: self.shape(pred).to_vec(), rhs: gt.shape().to_vec() });
        }
        let p = self.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)?;
        let lp = self.ln(p)?;
        let q = self.rsub_scalar(1.0, p)?;
        let lq = self.ln(q)?;
        let g = self.constant(gt.clone());
        let ng = self.constant(gt.map(|v| T::one() - v));
        let a = self.mul(g, lp)?;
        let b = self.mul(ng, lq)?;
        let s = self.add(a, b)?;
        self.neg(s)
    }

    /// Mean binary cross-entropy, predictions clamped to `[1e-6, 1−1e-6]`.
    pub fn bce_loss(&mut self, pred: Var, gt: &Tensor<T>) -> Result<Var> {
        let m = self.bce_map(pred, gt)?;
        self.mean_all(m)
    }

    /// `1 − (Σpg + 1) / (Σp + Σg − Σpg + 1)`.
    pub fn iou_loss(&mut self, pred: Var, gt: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != gt.shape() {
            return Err(Error::ShapeMismatch { op: "iou", lhs: self.shape(pred).to_vec(), rhs: gt.shape().to_vec() });
        }
        let g = self.constant(gt.clone());
        let pg = self.mul(pred, g)?;
        let inter = self.sum_all(pg)?;
        let sp = self.sum_all(pred)?;
        let union = self.add_scalar(sp, gt.sum_f64() + IOU_EPS)?;
        let union = self.sub(union, inter)?;
        let num = self.add_scalar(inter, IOU_EPS)?;
        let ratio = self.div(num, union)?;
        self.rsub_scalar(1.0, ratio)
    }

    /// Cross-entropy between the scaled Sobel maps `min(E/4, 1)` of `pred`
    /// and `gt`, minus the entropy of the target so that a perfect
    /// prediction scores exactly zero.
    pub fn edge_loss(&mut self, pred: Var, gt: &Tensor<T>) -> Result<Var> {
        let target = crate::network::sobel_edges(gt)?.map(|v| (v / T::of(EDGE_SCALE)).min(T::one()));
        let e = self.sobel_edges(pred)?;
        let e = self.mul_scalar(e, 1.0 / EDGE_SCALE)?;
        let e = self.clamp(e, 0.0, 1.0)?;
        let ce = self.bce_map(e, &target)?;
        let entropy = self.constant(target.map(|g| cross_entropy(g, g)));
        let kl = self.sub(ce, entropy)?;
        self.mean_all(kl)
    }

    /// `Σ_{l<L−1} ‖e_l − sg(e_{L−1})‖²` over normalised stage embeddings,
    /// the deepest one detached.
    pub fn kd_loss(&mut self, embeddings: &[Var]) -> Result<Var> {
        let (&teacher, students) = embeddings
            .split_last()
            .ok_or_else(|| Error::Invalid("distillation needs at least one embedding".into()))?;
        let teacher = self.detach(teacher);
        let mut acc = self.constant(Tensor::scalar(T::zero()));
        for &s in students {
            let d = self.sub(s, teacher)?;
            let d = self.square(d)?;
            let d = self.sum_all(d)?;
            acc = self.add(acc, d)?;
        }
        Ok(acc)
    }

    /// The full objective for one sample. Terms belonging to disabled
    /// components are left out.
    pub fn total_loss(
        &mut self,
        out: &Outputs,
        gt: &Tensor<T>,
        w: &LossWeights,
        flags: &Flags,
    ) -> Result<(Var, LossBreakdown)> {
        let iterates = out.iterates();
        if flags.imdr && w.omega.len() != iterates.len() {
            return Err(Error::Config(format!(
                "{} progressive weights for {} refinement iterates",
                w.omega.len(),
                iterates.len()
            )));
        }
        let fin = out.final_map();
        let mut br = LossBreakdown::default();
        let bce = self.bce_loss(fin, gt)?;
        let iou = self.iou_loss(fin, gt)?;
        br.bce = self.value(bce).item().f64();
        br.iou = self.value(iou).item().f64();
        let mut total = self.add(bce, iou)?;
        if flags.barh {
            let e = self.edge_loss(fin, gt)?;
            br.edge = self.value(e).item().f64();
            let e = self.mul_scalar(e, w.gamma)?;
            total = self.add(total, e)?;
        }
        if flags.kd {
            let k = self.kd_loss(&out.embeddings)?;
            br.kd = self.value(k).item().f64();
            let k = self.mul_scalar(k, w.delta)?;
            total = self.add(total, k)?;
        }
        if flags.imdr {
            for (&s, &om) in iterates.iter().zip(&w.omega) {
                let b = self.bce_loss(s, gt)?;
                let i = self.iou_loss(s, gt)?;
                let p = self.add(b, i)?;
                br.progressive.push(self.value(p).item().f64());
                let p = self.mul_scalar(p, om)?;
                total = self.add(total, p)?;
            }
        }
        br.total = self.value(total).item().f64();
        Ok((total, br))
    }
}
