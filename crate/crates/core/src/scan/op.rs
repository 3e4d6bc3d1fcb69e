use super::kernel::{recurrence, recurrence_sequential, Lines, ScanKernel};
use super::{MultiScaleConfig, ScanDirection};
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// State-space scan of `x (Din,H,W)` summed over `dirs`:
    /// `y = Σ_d C·h_d` with `h_d[i+1] = diag(a)·h_d[i] + B·x[i]` along the
    /// lines of direction `d`.
    ///
    /// `a (Dh)`, `b (Dh,Din)`, `c (Dout,Dh)`; output `(Dout,H,W)`.
    pub fn ssm_scan(&mut self, x: Var, a: Var, b: Var, c: Var, dirs: &[ScanDirection], kernel: ScanKernel) -> Result<Var> {
        let (sx, sa, sb, sc) = (
            self.shape(x).to_vec(),
            self.shape(a).to_vec(),
            self.shape(b).to_vec(),
            self.shape(c).to_vec(),
        );
        let [din, h, w] = sx[..] else {
            return Err(Error::ShapeMismatch { op: "ssm_scan", lhs: sx, rhs: vec![0, 0, 0] });
        };
        let dh = sa.first().copied().unwrap_or(0);
        if sa.len() != 1 || sb != [dh, din] || sc.len() != 2 || sc[1] != dh {
            return Err(Error::ShapeMismatch { op: "ssm_scan", lhs: sx, rhs: [sa, sb, sc].concat() });
        }
        if dirs.is_empty() {
            return Err(invalid("ssm_scan needs at least one direction"));
        }
        let dout = sc[0];
        let hw = h * w;
        let dirs = dirs.to_vec();

        let mut u = vec![T::zero(); dh * hw];
        gemm_nn(dh, din, hw, self.value(b).data(), self.value(x).data(), &mut u);
        let av = self.value(a).data().to_vec();
        let states: Vec<Vec<T>> = dirs.iter().map(|&d| recurrence(&av, &u, h, w, d, kernel)).collect();
        let mut hsum = states[0].clone();
        for s in &states[1..] {
            hsum.iter_mut().zip(s).for_each(|(acc, &v)| *acc += v);
        }
        if hsum.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ssm_scan state"));
        }
        let mut y = vec![T::zero(); dout * hw];
        gemm_nn(dout, dh, hw, self.value(c).data(), &hsum, &mut y);
        let value = Tensor::from_parts(vec![dout, h, w], y);

        self.record("ssm_scan", value, &[x, a, b, c], move |ctx| {
            let (xv, av, bv, cv) = (
                ctx.inputs[0].data(),
                ctx.inputs[1].data(),
                ctx.inputs[2].data(),
                ctx.inputs[3].data(),
            );
            let g = ctx.grad;
            let gc = ctx.needs[3].then(|| {
                let mut gc = vec![T::zero(); dout * dh];
                gemm_nt(dout, hw, dh, g, &hsum, &mut gc);
                gc
            });
            if !(ctx.needs[0] || ctx.needs[1] || ctx.needs[2]) {
                return vec![None, None, None, gc];
            }
            let mut gh = vec![T::zero(); dh * hw];
            gemm_tn(dh, dout, hw, cv, g, &mut gh);

            // The adjoint of a scan is the same scan run the other way.
            let mut gu = vec![T::zero(); dh * hw];
            let mut ga = vec![T::zero(); dh];
            for (&d, hd) in dirs.iter().zip(&states) {
                let lam = recurrence_sequential(av, &gh, h, w, d.opposite());
                gu.iter_mut().zip(&lam).for_each(|(acc, &v)| *acc += v);
                if ctx.needs[1] {
                    let lines = Lines::new(h, w, d);
                    for (k, gak) in ga.iter_mut().enumerate() {
                        let (lk, hk) = (&lam[k * hw..(k + 1) * hw], &hd[k * hw..(k + 1) * hw]);
                        let mut acc = T::zero();
                        for line in 0..lines.count {
                            let mut prev = T::zero();
                            for i in 0..lines.len {
                                let p = lines.pos(line, i);
                                acc += lk[p] * prev;
                                prev = hk[p];
                            }
                        }
                        *gak += acc;
                    }
                }
            }
            let gb = ctx.needs[2].then(|| {
                let mut gb = vec![T::zero(); dh * din];
                gemm_nt(dh, hw, din, &gu, xv, &mut gb);
                gb
            });
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![T::zero(); din * hw];
                gemm_tn(din, dh, hw, bv, &gu, &mut gx);
                gx
            });
            vec![gx, ctx.needs[1].then_some(ga), gb, gc]
        })
    }

    /// `Σ_s Σ_d upsample_s(scan_d(avgpool_s(x)))` with shared parameters.
    pub fn ssm_scan_multiscale(
        &mut self,
        x: Var,
        a: Var,
        b: Var,
        c: Var,
        cfg: &MultiScaleConfig,
        kernel: ScanKernel,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch { op: "scan_multiscale", lhs: s, rhs: vec![0, 0, 0] });
        }
        let (h, w) = (s[1], s[2]);
        let mut acc: Option<Var> = None;
        for &scale in cfg.scales() {
            if h % scale != 0 || w % scale != 0 {
                return Err(invalid(format!("scan scale {scale} does not divide {h}x{w}")));
            }
            let pooled = self.avg_pool2d(x, scale)?;
            let y = self.ssm_scan(pooled, a, b, c, cfg.directions(), kernel)?;
            let y = self.resize_nearest(y, h, w)?;
            acc = Some(match acc {
                None => y,
                Some(prev) => self.add(prev, y)?,
            });
        }
        acc.ok_or_else(|| invalid("empty scale list"))
    }

    /// Prompt conditioning of the scan parameters:
    /// `a_eff = clamp(a · (1 + tanh(W_s p)), ±0.999)`, `B_eff = B + (W_b p) 1ᵀ`.
    pub fn modulate_scan(&mut self, a: Var, b: Var, prompt: Var, w_scale: Var, w_shift: Var) -> Result<(Var, Var)> {
        let dh = self.shape(a)[0];
        let scale = self.linear(prompt, w_scale, None)?;
        let scale = self.tanh(scale)?;
        let scale = self.add_scalar(scale, 1.0)?;
        let a_eff = self.mul(a, scale)?;
        let a_eff = self.clamp(a_eff, -super::A_BOUND, super::A_BOUND)?;
        let shift = self.linear(prompt, w_shift, None)?;
        let shift = self.reshape(shift, &[dh, 1])?;
        let b_eff = self.add(b, shift)?;
        Ok((a_eff, b_eff))
    }
}
