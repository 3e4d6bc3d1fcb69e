//! Central finite-difference verification of tape gradients (fp64 only).
//!
//! The numerical side only ever runs forward passes on fresh tapes, so it
//! never touches a backward rule.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check this many randomly drawn coordinates across all inputs, or all
    /// of them when `None`.
    pub sample: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, sample: None, seed: 0, floor: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares d`f`/d`inputs` from the tape against central differences.
/// `f` must build a scalar from the given input vars.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let sizes: Vec<usize> = inputs.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let flat: Vec<usize> = match opts.sample {
        Some(n) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = sample(&mut rng, total, n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let eval = |which: usize, index: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut t = t.clone();
                if k == which {
                    t.data_mut()[index] += delta;
                }
                tape.constant(t)
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(invalid("gradcheck objective must be scalar"));
        }
        Ok(v.item())
    };

    let mut coords = Vec::with_capacity(flat.len());
    for g in flat {
        let (mut input, mut index) = (0, g);
        while index >= sizes[input] {
            index -= sizes[input];
            input += 1;
        }
        let analytic = grads.get(vars[input]).map(|t| t.data()[index]).unwrap_or(0.0);
        let numeric = (eval(input, index, opts.step)? - eval(input, index, -opts.step)?) / (2.0 * opts.step);
        coords.push(CoordCheck { input, index, analytic, numeric, rel_err: rel_err(analytic, numeric, opts.floor) });
    }
    Ok(GradCheckReport { coords })
}
