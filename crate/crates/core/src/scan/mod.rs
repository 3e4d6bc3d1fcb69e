//! Multi-directional, multi-scale diagonal state-space scanning over
//! `(C, H, W)` feature grids.
//!
//! The tape-level ops live in [`op`]; this module holds the parameter types
//! and the pure (non-differentiated) entry points used by tests, the
//! benchmark and the FFI layer.

mod bench;
pub mod kernel;
mod op;

use std::fmt;
use std::str::FromStr;

pub use bench::{bench_scan, BenchReport, BenchRow};
pub use kernel::ScanKernel;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Tensor};

/// Bound on the magnitude of every effective transition coefficient.
pub const A_BOUND: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScanDirection {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::LeftToRight,
        ScanDirection::RightToLeft,
        ScanDirection::TopToBottom,
        ScanDirection::BottomToTop,
    ];

    pub fn opposite(self) -> Self {
        match self {
            Self::LeftToRight => Self::RightToLeft,
            Self::RightToLeft => Self::LeftToRight,
            Self::TopToBottom => Self::BottomToTop,
            Self::BottomToTop => Self::TopToBottom,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Self::LeftToRight | Self::RightToLeft)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LeftToRight => "lr",
            Self::RightToLeft => "rl",
            Self::TopToBottom => "tb",
            Self::BottomToTop => "bt",
        }
    }
}

impl fmt::Display for ScanDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| invalid(format!("unknown scan direction {s:?} (expected lr, rl, tb or bt)")))
    }
}

/// Scales (pooling factors, ascending, starting at 1) and directions whose
/// scans are summed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiScaleConfig {
    scales: Vec<usize>,
    directions: Vec<ScanDirection>,
}

impl MultiScaleConfig {
    pub fn new(scales: Vec<usize>, directions: Vec<ScanDirection>) -> Result<Self> {
        if scales.first() != Some(&1) {
            return Err(invalid(format!("scales must start at 1, got {scales:?}")));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("scales must be strictly ascending, got {scales:?}")));
        }
        if directions.is_empty() {
            return Err(invalid("direction set is empty"));
        }
        let mut seen = directions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != directions.len() {
            return Err(invalid(format!("repeated scan direction in {directions:?}")));
        }
        Ok(Self { scales, directions })
    }

    /// All four directions at the given scales.
    pub fn all_directions(scales: Vec<usize>) -> Result<Self> {
        Self::new(scales, ScanDirection::ALL.to_vec())
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn directions(&self) -> &[ScanDirection] {
        &self.directions
    }

    pub fn max_scale(&self) -> usize {
        *self.scales.last().expect("validated non-empty")
    }
}

/// Parameters of one scan: diagonal transition `a_diag (Dh)`, input map
/// `b (Dh,Din)`, readout `c_out (Dout,Dh)` and the prompt modulation
/// `prompt_scale (Dh)` / `prompt_shift (Dh)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanParams<T: Real> {
    pub a_diag: Tensor<T>,
    pub b: Tensor<T>,
    pub c_out: Tensor<T>,
    pub prompt_scale: Tensor<T>,
    pub prompt_shift: Tensor<T>,
}

impl<T: Real> ScanParams<T> {
    /// Unmodulated parameters (scale 1, shift 0).
    pub fn new(a_diag: Tensor<T>, b: Tensor<T>, c_out: Tensor<T>) -> Result<Self> {
        let dh = a_diag.len();
        let p = Self { a_diag, b, c_out, prompt_scale: Tensor::ones(&[dh]), prompt_shift: Tensor::zeros(&[dh]) };
        p.validate()?;
        Ok(p)
    }

    pub fn state_dim(&self) -> usize {
        self.a_diag.len()
    }

    pub fn input_dim(&self) -> usize {
        self.b.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.c_out.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let dh = self.a_diag.len();
        let ok = self.a_diag.ndim() == 1
            && self.b.ndim() == 2
            && self.b.shape()[0] == dh
            && self.c_out.ndim() == 2
            && self.c_out.shape()[1] == dh
            && self.prompt_scale.shape() == [dh]
            && self.prompt_shift.shape() == [dh];
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "scan params",
                lhs: self.a_diag.shape().to_vec(),
                rhs: [self.b.shape(), self.c_out.shape(), self.prompt_scale.shape(), self.prompt_shift.shape()].concat(),
            })
        }
    }

    /// `clamp(a · scale, ±0.999)`.
    pub fn effective_a(&self) -> Tensor<T> {
        let bound = T::of(A_BOUND);
        let data = self
            .a_diag
            .data()
            .iter()
            .zip(self.prompt_scale.data())
            .map(|(&a, &s)| (a * s).max(-bound).min(bound))
            .collect();
        Tensor::from_parts(vec![self.a_diag.len()], data)
    }

    /// `B + shift 1ᵀ`.
    pub fn effective_b(&self) -> Tensor<T> {
        let din = self.input_dim();
        let shift = self.prompt_shift.data();
        let data = self.b.data().iter().enumerate().map(|(i, &v)| v + shift[i / din]).collect();
        Tensor::from_parts(self.b.shape().to_vec(), data)
    }
}

/// Learned prompt projections `W_s, W_b : (Dh, Dp)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptProjection<T: Real> {
    pub w_scale: Tensor<T>,
    pub w_shift: Tensor<T>,
}

impl<T: Real> PromptProjection<T> {
    pub fn zeros(dh: usize, dp: usize) -> Self {
        Self { w_scale: Tensor::zeros(&[dh, dp]), w_shift: Tensor::zeros(&[dh, dp]) }
    }
}

fn run<T: Real>(
    x: &Tensor<T>,
    params: &ScanParams<T>,
    body: impl FnOnce(&mut Tape<T>, [Var; 4]) -> Result<Var>,
) -> Result<Tensor<T>> {
    params.validate()?;
    let mut tape = Tape::new();
    let vars = [
        tape.constant(x.clone()),
        tape.constant(params.effective_a()),
        tape.constant(params.effective_b()),
        tape.constant(params.c_out.clone()),
    ];
    let y = body(&mut tape, vars)?;
    Ok(tape.value(y).clone())
}

/// Reference scan along one direction with a plain sequential loop.
pub fn scan_sequential<T: Real>(x: &Tensor<T>, params: &ScanParams<T>, dir: ScanDirection) -> Result<Tensor<T>> {
    run(x, params, |t, [x, a, b, c]| t.ssm_scan(x, a, b, c, &[dir], ScanKernel::Sequential))
}

/// Same result as [`scan_sequential`] computed with the work-efficient
/// parallel prefix scan.
pub fn scan_parallel<T: Real>(x: &Tensor<T>, params: &ScanParams<T>, dir: ScanDirection) -> Result<Tensor<T>> {
    run(x, params, |t, [x, a, b, c]| t.ssm_scan(x, a, b, c, &[dir], ScanKernel::Parallel))
}

pub fn scan_multiscale<T: Real>(
    x: &Tensor<T>,
    params: &ScanParams<T>,
    cfg: &MultiScaleConfig,
    kernel: ScanKernel,
) -> Result<Tensor<T>> {
    run(x, params, |t, [x, a, b, c]| t.ssm_scan_multiscale(x, a, b, c, cfg, kernel))
}

/// Sets `prompt_scale = 1 + tanh(W_s p)` and `prompt_shift = W_b p`.
pub fn apply_prompt<T: Real>(params: &ScanParams<T>, proj: &PromptProjection<T>, p: &Tensor<T>) -> Result<ScanParams<T>> {
    let dh = params.state_dim();
    let dp = p.len();
    if p.ndim() != 1 || proj.w_scale.shape() != [dh, dp] || proj.w_shift.shape() != [dh, dp] {
        return Err(Error::ShapeMismatch {
            op: "apply_prompt",
            lhs: p.shape().to_vec(),
            rhs: [proj.w_scale.shape(), proj.w_shift.shape()].concat(),
        });
    }
    let mut tape = Tape::new();
    let (pv, ws, wb) = (tape.constant(p.clone()), tape.constant(proj.w_scale.clone()), tape.constant(proj.w_shift.clone()));
    let s = tape.linear(pv, ws, None)?;
    let s = tape.tanh(s)?;
    let s = tape.add_scalar(s, 1.0)?;
    let b = tape.linear(pv, wb, None)?;
    Ok(ScanParams {
        prompt_scale: tape.value(s).clone(),
        prompt_shift: tape.value(b).clone(),
        ..params.clone()
    })
}
