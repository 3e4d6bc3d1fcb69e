use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    /// Partial derivatives (d/da, d/db) at (a, b).
    #[inline]
    fn partials<T: Real>(self, a: T, b: T) -> (T, T) {
        match self {
            BinaryOp::Add => (T::one(), T::one()),
            BinaryOp::Sub => (T::one(), -T::one()),
            BinaryOp::Mul => (b, a),
            BinaryOp::Div => (T::one() / b, -a / (b * b)),
        }
    }
}

/// Broadcast shape under trailing-dimension alignment.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index into a source of shape
/// `src` broadcast against it.
fn broadcast_index(out: &[usize], src: &[usize]) -> Vec<usize> {
    let n = out.len();
    let offset = n - src.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let total = numel(out);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..total {
        idx.push(cur);
        for d in (0..n).rev() {
            counter[d] += 1;
            cur += strides[d];
            if counter[d] < out[d] {
                break;
            }
            cur -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

enum Layout {
    Same,
    ScalarB,
    ScalarA,
    General(Vec<usize>, Vec<usize>),
}

impl<T: Real> Tape<T> {
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::ShapeMismatch {
            op: op.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let layout = if sa == sb {
            Layout::Same
        } else if numel(&sb) == 1 && sa == out_shape {
            Layout::ScalarB
        } else if numel(&sa) == 1 && sb == out_shape {
            Layout::ScalarA
        } else {
            Layout::General(broadcast_index(&out_shape, &sa), broadcast_index(&out_shape, &sb))
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match &layout {
            Layout::Same => av.iter().zip(bv).map(|(&x, &y)| op.apply(x, y)).collect(),
            Layout::ScalarB => av.iter().map(|&x| op.apply(x, bv[0])).collect(),
            Layout::ScalarA => bv.iter().map(|&y| op.apply(av[0], y)).collect(),
            Layout::General(ia, ib) => ia.iter().zip(ib).map(|(&i, &j)| op.apply(av[i], bv[j])).collect(),
        };
        let value = Tensor::from_parts(out_shape, data);
        let (na, nb) = (numel(&sa), numel(&sb));
        self.record(op.name(), value, &[a, b], move |ctx| {
            let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let g = ctx.grad;
            let mut ga = ctx.needs[0].then(|| vec![T::zero(); na]);
            let mut gb = ctx.needs[1].then(|| vec![T::zero(); nb]);
            let mut visit = |o: usize, i: usize, j: usize| {
                let (pa, pb) = op.partials(x[i], y[j]);
                if let Some(ga) = ga.as_mut() {
                    ga[i] += g[o] * pa;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += g[o] * pb;
                }
            };
            match &layout {
                Layout::Same => (0..g.len()).for_each(|o| visit(o, o, o)),
                Layout::ScalarB => (0..g.len()).for_each(|o| visit(o, o, 0)),
                Layout::ScalarA => (0..g.len()).for_each(|o| visit(o, 0, o)),
                Layout::General(ia, ib) => (0..g.len()).for_each(|o| visit(o, ia[o], ib[o])),
            }
            vec![ga, gb]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// Applies `f` elementwise. `df(x, y)` is the derivative at input `x`
    /// with output `y = f(x)`.
    pub fn unary<F, D>(&mut self, name: &'static str, x: Var, f: F, df: D) -> Result<Var>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + 'static,
    {
        let value = self.value(x).map(&f);
        self.record(name, value, &[x], move |ctx| {
            let (xs, ys) = (ctx.inputs[0].data(), ctx.output.data());
            let gx = ctx
                .grad
                .iter()
                .zip(xs.iter().zip(ys))
                .map(|(&g, (&xv, &yv))| g * df(xv, yv))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        self.unary("add_scalar", x, move |v| v + s, |_, _| T::one())
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        self.unary("mul_scalar", x, move |v| v * s, move |_, _| s)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary("neg", x, |v| -v, |_, _| -T::one())
    }

    /// `s - x`
    pub fn rsub_scalar(&mut self, s: f64, x: Var) -> Result<Var> {
        let s = T::of(s);
        self.unary("rsub_scalar", x, move |v| s - v, |_, _| -T::one())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |xv, _| xv + xv)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary("ln", x, |v| v.ln(), |xv, _| T::one() / xv)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, |v| v.sqrt(), |_, y| T::of(0.5) / y)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "abs",
            x,
            |v| v.abs(),
            |xv, _| {
                if xv > T::zero() {
                    T::one()
                } else if xv < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// `x · sigmoid(x)`
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "silu",
            x,
            |v| v * sigmoid(v),
            |xv, _| {
                let s = sigmoid(xv);
                s + xv * s * (T::one() - s)
            },
        )
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(
            "clamp",
            x,
            move |v| v.max(lo).min(hi),
            move |xv, _| if xv >= lo && xv <= hi { T::one() } else { T::zero() },
        )
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
