use super::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

impl<T: Real> Tape<T> {
    /// Reduces over `axes`, removing them from the shape. Reducing every
    /// axis yields a scalar of shape `[]`.
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes.is_empty() {
            return Err(invalid("empty reduction axis list"));
        }
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() || reduced[a] {
                return Err(invalid(format!("bad reduction axes {axes:?} for shape {shape:?}")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let group: usize = shape.iter().zip(&reduced).filter(|(_, &r)| r).map(|(&d, _)| d).product();

        // Output index of each input element.
        let n = shape.len();
        let mut out_strides = vec![0usize; n];
        let mut s = 1;
        for d in (0..n).rev() {
            if !reduced[d] {
                out_strides[d] = s;
                s *= shape[d];
            }
        }
        let xv = self.value(x).data();
        let mut target = Vec::with_capacity(xv.len());
        let mut counter = vec![0usize; n];
        let mut cur = 0usize;
        for _ in 0..xv.len() {
            target.push(cur);
            for d in (0..n).rev() {
                counter[d] += 1;
                cur += out_strides[d];
                if counter[d] < shape[d] {
                    break;
                }
                cur -= out_strides[d] * counter[d];
                counter[d] = 0;
            }
        }

        let mut out = match op {
            ReduceOp::Max => vec![T::neg_infinity(); out_len],
            _ => vec![T::zero(); out_len],
        };
        let mut argmax = if op == ReduceOp::Max { vec![usize::MAX; out_len] } else { Vec::new() };
        for (i, (&v, &o)) in xv.iter().zip(&target).enumerate() {
            match op {
                ReduceOp::Sum | ReduceOp::Mean => out[o] += v,
                ReduceOp::Max => {
                    if argmax[o] == usize::MAX || v > out[o] {
                        out[o] = v;
                        argmax[o] = i;
                    }
                }
            }
        }
        if op == ReduceOp::Mean {
            let inv = T::one() / T::of(group as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let name = match op {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        };
        let in_len = xv.len();
        let value = Tensor::from_parts(out_shape, out);
        self.record(name, value, &[x], move |ctx| {
            let g = ctx.grad;
            let gx = match op {
                ReduceOp::Sum => target.iter().map(|&o| g[o]).collect(),
                ReduceOp::Mean => {
                    let inv = T::one() / T::of(group as f64);
                    target.iter().map(|&o| g[o] * inv).collect()
                }
                ReduceOp::Max => {
                    let mut gx = vec![T::zero(); in_len];
                    for (o, &i) in argmax.iter().enumerate() {
                        gx[i] += g[o];
                    }
                    gx
                }
            };
            vec![Some(gx)]
        })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if axes.is_empty() {
            return Ok(x);
        }
        self.reduce(ReduceOp::Sum, x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if axes.is_empty() {
            return Ok(x);
        }
        self.reduce(ReduceOp::Mean, x, &axes)
    }

    /// Global average pooling: `(C,H,W) -> (C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, &[1, 2])
    }
}
