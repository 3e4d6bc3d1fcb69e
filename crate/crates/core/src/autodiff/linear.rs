use super::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::linalg::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// `(m,k) · (k,n) -> (m,n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::from_parts(vec![m, n], out);
        self.record("matmul", value, &[a, b], move |ctx| {
            let (av, bv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
            let ga = ctx.needs[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                gemm_nt(m, n, k, g, bv, &mut ga);
                ga
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                gemm_tn(k, m, n, av, g, &mut gb);
                gb
            });
            vec![ga, gb]
        })
    }

    /// Dense layer on a vector: `w (m,n) · x (n) + b (m)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let n = self.value(x).len();
        let col = self.reshape(x, &[n, 1])?;
        let y = self.matmul(w, col)?;
        let m = self.shape(y)[0];
        let y = self.reshape(y, &[m])?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Cross-correlation (no kernel flip) of `x (C_in,H,W)` with
    /// `kernel (C_out,C_in,kh,kw)` under zero padding.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sk[1] != sx[0] {
            return Err(Error::ShapeMismatch { op: "conv2d", lhs: sx, rhs: sk });
        }
        if sk[2] % 2 == 0 || sk[3] % 2 == 0 {
            return Err(invalid(format!("conv2d kernel dims must be odd, got {sk:?}")));
        }
        if stride == 0 {
            return Err(invalid("conv2d stride must be positive"));
        }
        if sk[2] > sx[1] + 2 * pad || sk[3] > sx[2] + 2 * pad {
            return Err(invalid(format!("conv2d kernel {sk:?} larger than padded input {sx:?} (pad {pad})")));
        }
        let geom = ConvGeom { c_in: sx[0], h: sx[1], w: sx[2], kh: sk[2], kw: sk[3], stride, pad };
        let c_out = sk[0];
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let plane = oh * ow;
        let rows = geom.col_rows();
        let pointwise = geom.kh == 1 && geom.kw == 1 && stride == 1 && pad == 0;

        let col = if pointwise {
            None
        } else {
            let mut col = vec![T::zero(); rows * plane];
            im2col(&geom, self.value(x).data(), &mut col);
            Some(col)
        };
        let mut out = vec![T::zero(); c_out * plane];
        {
            let src = col.as_deref().unwrap_or_else(|| self.value(x).data());
            gemm_nn(c_out, rows, plane, self.value(kernel).data(), src, &mut out);
        }
        let value = Tensor::from_parts(vec![c_out, oh, ow], out);
        self.record("conv2d", value, &[x, kernel], move |ctx| {
            let (xv, kv, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
            let src = col.as_deref().unwrap_or(xv);
            let gk = ctx.needs[1].then(|| {
                let mut gk = vec![T::zero(); c_out * rows];
                gemm_nt(c_out, plane, rows, g, src, &mut gk);
                gk
            });
            let gx = ctx.needs[0].then(|| {
                let mut dcol = vec![T::zero(); rows * plane];
                gemm_tn(rows, c_out, plane, kv, g, &mut dcol);
                if pointwise {
                    dcol
                } else {
                    let mut gx = vec![T::zero(); xv.len()];
                    col2im(&geom, &dcol, &mut gx);
                    gx
                }
            });
            vec![gx, gk]
        })
    }

    /// Adds a per-channel bias `b (C)` to `x (C,H,W)`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 3 || sb != [sx[0]] {
            return Err(Error::ShapeMismatch { op: "add_channel_bias", lhs: sx, rhs: sb });
        }
        let plane = sx[1] * sx[2];
        let bv = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .zip(bv)
            .flat_map(|(row, &bias)| row.iter().map(move |&v| v + bias))
            .collect();
        let value = Tensor::from_parts(sx, data);
        self.record("add_channel_bias", value, &[x, b], move |ctx| {
            let g = ctx.grad;
            let gx = ctx.needs[0].then(|| g.to_vec());
            let gb = ctx.needs[1].then(|| g.chunks(plane).map(|c| c.iter().copied().sum()).collect());
            vec![gx, gb]
        })
    }

    /// `conv2d` followed by an optional channel bias, stride 1, "same" padding.
    pub fn conv_same(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let k = self.shape(kernel)[2];
        let y = self.conv2d(x, kernel, 1, k / 2)?;
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }
}
