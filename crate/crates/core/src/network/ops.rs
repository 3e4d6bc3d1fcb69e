use crate::autodiff::{ReduceOp, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Logit of `1 − 1e-6`: coarse saliency logits are kept inside
/// `±LOGIT_BOUND` so that the coarse map stays in `[1e-6, 1 − 1e-6]`.
pub const LOGIT_BOUND: f64 = 13.815_509_557_963_774;

/// Horizontal and vertical Sobel kernels stacked as `(2,1,3,3)`.
pub fn sobel_kernel<T: Real>() -> Tensor<T> {
    const K: [f64; 18] = [
        -1., 0., 1., -2., 0., 2., -1., 0., 1., //
        -1., -2., -1., 0., 0., 0., 1., 2., 1.,
    ];
    Tensor::from_parts(vec![2, 1, 3, 3], K.iter().map(|&v| T::of(v)).collect())
}

impl<T: Real> Tape<T> {
    /// `|Gx ∗ s| + |Gy ∗ s|` of a `(1,H,W)` map with replicate padding.
    pub fn sobel_edges(&mut self, s: Var) -> Result<Var> {
        let shape = self.shape(s).to_vec();
        let [1, h, w] = shape[..] else {
            return Err(Error::ShapeMismatch { op: "sobel_edges", lhs: shape, rhs: vec![1, 0, 0] });
        };
        let padded = self.pad_replicate(s, 1)?;
        let k = self.constant(sobel_kernel());
        let g = self.conv2d(padded, k, 1, 0)?;
        let g = self.abs(g)?;
        let e = self.reduce(ReduceOp::Sum, g, &[0])?;
        self.reshape(e, &[1, h, w])
    }

    /// Concatenates `rgb` with `aux` (or `aux_channels` zero planes when
    /// absent) and applies a `1×1` projection `w (C,3+Ca)` with bias `b`.
    pub fn fuse_modalities(&mut self, rgb: Var, aux: Option<Var>, aux_channels: usize, w: Var, b: Var) -> Result<Var> {
        let rs = self.shape(rgb).to_vec();
        if rs.len() != 3 {
            return Err(Error::ShapeMismatch { op: "fuse_modalities", lhs: rs, rhs: vec![3, 0, 0] });
        }
        let aux = match aux {
            Some(a) => {
                let s = self.shape(a).to_vec();
                if s.len() != 3 || s[1..] != rs[1..] || s[0] != aux_channels {
                    return Err(Error::ShapeMismatch { op: "fuse_modalities", lhs: rs, rhs: s });
                }
                Some(a)
            }
            None if aux_channels > 0 => Some(self.zeros(&[aux_channels, rs[1], rs[2]])),
            None => None,
        };
        let x = match aux {
            Some(a) => self.concat(&[rgb, a])?,
            None => rgb,
        };
        self.conv1x1(x, w, Some(b))
    }

    /// Pointwise channel projection `w (Cout,Cin)` of `(Cin,H,W)`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let s = self.shape(w).to_vec();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch { op: "conv1x1", lhs: s, rhs: vec![0, 0] });
        }
        let k = self.reshape(w, &[s[0], s[1], 1, 1])?;
        let y = self.conv2d(x, k, 1, 0)?;
        match b {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    /// `bound·tanh(x / bound)`: a smooth limit to `(−bound, bound)` that
    /// keeps a gradient everywhere, unlike a hard clamp.
    pub fn soft_bound(&mut self, x: Var, bound: f64) -> Result<Var> {
        let y = self.mul_scalar(x, 1.0 / bound)?;
        let y = self.tanh(y)?;
        self.mul_scalar(y, bound)
    }

    /// `x / sqrt(Σx² + 1e-12)`.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let sq = self.square(x)?;
        let n = self.sum_all(sq)?;
        let n = self.add_scalar(n, 1e-12)?;
        let n = self.sqrt(n)?;
        self.div(x, n)
    }
}

/// Non-differentiated Sobel magnitude of a `(1,H,W)` map.
pub fn sobel_edges<T: Real>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let e = tape.sobel_edges(v)?;
    Ok(tape.value(e).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_bound_matches_clamp() {
        let p: f64 = 1.0 - 1e-6;
        assert!(((p / (1.0 - p)).ln() - LOGIT_BOUND).abs() < 1e-9);
    }

    #[test]
    fn constant_map_has_no_edges() {
        let e = sobel_edges(&Tensor::<f64>::full(&[1, 5, 6], 0.3)).unwrap();
        assert!(e.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn vertical_step_by_hand() {
        // 0 in columns 0..2, 1 in columns 2..5.
        let s = Tensor::<f64>::from_fn(&[1, 5, 5], |i| if i % 5 >= 2 { 1.0 } else { 0.0 });
        let e = sobel_edges(&s).unwrap();
        for r in 0..5 {
            let row = &e.data()[r * 5..r * 5 + 5];
            assert_eq!(row, &[0.0, 4.0, 4.0, 0.0, 0.0], "row {r}");
        }
    }

    #[test]
    fn polarity_invariant() {
        let s = Tensor::<f64>::from_fn(&[1, 6, 7], |i| ((i * 13) % 7) as f64 / 7.0);
        let e1 = sobel_edges(&s).unwrap();
        let e2 = sobel_edges(&s.map(|v| 1.0 - v)).unwrap();
        assert!(e1.max_abs_diff(&e2) < 1e-14);
    }

    #[test]
    fn fusion_pads_missing_aux() {
        let mut tape = Tape::<f64>::new();
        let rgb = tape.constant(Tensor::from_fn(&[3, 2, 2], |i| i as f64));
        let eye = tape.constant(Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.fuse_modalities(rgb, None, 1, eye, b).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[..12], tape.value(rgb).data());
        assert!(v[12..].iter().all(|&x| x == 0.0));
        let aux = tape.constant(Tensor::full(&[1, 2, 2], 7.0));
        let y = tape.fuse_modalities(rgb, Some(aux), 1, eye, b).unwrap();
        assert_eq!(&tape.value(y).data()[12..], &[7.0; 4]);
        let bad = tape.constant(Tensor::full(&[1, 3, 2], 7.0));
        assert!(tape.fuse_modalities(rgb, Some(bad), 1, eye, b).is_err());
    }
}
