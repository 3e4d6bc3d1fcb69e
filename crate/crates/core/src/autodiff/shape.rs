use super::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::{numel, Real, Tensor};

fn chw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::ShapeMismatch { op, lhs: shape.to_vec(), rhs: vec![0, 0, 0] }),
    }
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        self.record("reshape", value, &[x], |ctx| vec![Some(ctx.grad.to_vec())])
    }

    /// Concatenates along the leading (channel) axis. Trailing dims must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| invalid("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut lens = Vec::with_capacity(xs.len());
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::ShapeMismatch { op: "concat", lhs: self.shape(*first).to_vec(), rhs: s.to_vec() });
            }
            lead += s[0];
            lens.push(self.value(x).len());
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::from_parts(shape, data);
        self.record("concat", value, xs, move |ctx| {
            let mut off = 0;
            lens.iter()
                .zip(&ctx.needs)
                .map(|(&n, &need)| {
                    let g = need.then(|| ctx.grad[off..off + n].to_vec());
                    off += n;
                    g
                })
                .collect()
        })
    }

    /// Non-overlapping `s×s` average pooling of `(C,H,W)`; H and W must be
    /// divisible by `s`.
    pub fn avg_pool2d(&mut self, x: Var, s: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "avg_pool2d")?;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(invalid(format!("avg_pool2d factor {s} does not divide {h}x{w}")));
        }
        if s == 1 {
            return Ok(x);
        }
        let (oh, ow) = (h / s, w / s);
        let inv = T::one() / T::of((s * s) as f64);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                let row = &xv[(ch * h + y) * w..(ch * h + y + 1) * w];
                let orow = &mut out[(ch * oh + y / s) * ow..(ch * oh + y / s + 1) * ow];
                for (xi, &v) in row.iter().enumerate() {
                    orow[xi / s] += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::from_parts(vec![c, oh, ow], out);
        self.record("avg_pool2d", value, &[x], move |ctx| {
            let g = ctx.grad;
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    let grow = &g[(ch * oh + y / s) * ow..(ch * oh + y / s + 1) * ow];
                    for (xi, d) in gx[(ch * h + y) * w..(ch * h + y + 1) * w].iter_mut().enumerate() {
                        *d = grow[xi / s] * inv;
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Nearest-neighbour resize of `(C,H,W)` to `(C,oh,ow)`; source index is
    /// `floor(i·H/oh)`.
    pub fn resize_nearest(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "resize_nearest")?;
        if oh == 0 || ow == 0 {
            return Err(invalid("resize to empty size"));
        }
        if oh == h && ow == w {
            return Ok(x);
        }
        let rows: Vec<usize> = (0..oh).map(|i| i * h / oh).collect();
        let cols: Vec<usize> = (0..ow).map(|j| j * w / ow).collect();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for &r in &rows {
                let src = &xv[(ch * h + r) * w..(ch * h + r + 1) * w];
                out.extend(cols.iter().map(|&q| src[q]));
            }
        }
        let value = Tensor::from_parts(vec![c, oh, ow], out);
        self.record("resize_nearest", value, &[x], move |ctx| {
            let g = ctx.grad;
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for (i, &r) in rows.iter().enumerate() {
                    let grow = &g[(ch * oh + i) * ow..(ch * oh + i + 1) * ow];
                    let dst = &mut gx[(ch * h + r) * w..(ch * h + r + 1) * w];
                    for (j, &q) in cols.iter().enumerate() {
                        dst[q] += grow[j];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Pads `(C,H,W)` by `p` on every side, repeating the border values.
    pub fn pad_replicate(&mut self, x: Var, p: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "pad_replicate")?;
        if p == 0 {
            return Ok(x);
        }
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let src_row = move |i: usize| i.saturating_sub(p).min(h - 1);
        let src_col = move |j: usize| j.saturating_sub(p).min(w - 1);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            for i in 0..ph {
                let src = &xv[(ch * h + src_row(i)) * w..(ch * h + src_row(i) + 1) * w];
                out.extend((0..pw).map(|j| src[src_col(j)]));
            }
        }
        let value = Tensor::from_parts(vec![c, ph, pw], out);
        self.record("pad_replicate", value, &[x], move |ctx| {
            let g = ctx.grad;
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for i in 0..ph {
                    let r = src_row(i);
                    for j in 0..pw {
                        gx[(ch * h + r) * w + src_col(j)] += g[(ch * ph + i) * pw + j];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        debug_assert!(numel(shape) > 0);
        self.constant(Tensor::zeros(shape))
    }
}
