use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Runs `per_item` on every item in parallel and averages the returned
/// gradients and losses. Reduction follows item order, so the result does
/// not depend on the thread count.
pub fn batch_gradients<T, S, F>(params: &ParamStore<T>, items: &[S], per_item: F) -> Result<(Vec<Vec<T>>, f64)>
where
    T: Real,
    S: Sync,
    F: Fn(&S) -> Result<(Vec<Vec<T>>, f64)> + Sync,
{
    let (g, l, _) = batch_gradients_with(params, items, |s| per_item(s).map(|(g, l)| (g, l, ())))?;
    Ok((g, l))
}

/// [`batch_gradients`] that also hands back one extra value per item, in
/// item order.
pub fn batch_gradients_with<T, S, X, F>(
    params: &ParamStore<T>,
    items: &[S],
    per_item: F,
) -> Result<(Vec<Vec<T>>, f64, Vec<X>)>
where
    T: Real,
    S: Sync,
    X: Send,
    F: Fn(&S) -> Result<(Vec<Vec<T>>, f64, X)> + Sync,
{
    if items.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let results: Vec<(Vec<Vec<T>>, f64, X)> = items.par_iter().map(&per_item).collect::<Result<_>>()?;
    let mut total: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
    let mut loss = 0.0;
    let mut extra = Vec::with_capacity(results.len());
    for (grads, l, x) in results {
        for (acc, g) in total.iter_mut().zip(&grads) {
            acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v);
        }
        loss += l;
        extra.push(x);
    }
    let inv = T::of(1.0 / items.len() as f64);
    total.iter_mut().flatten().for_each(|v| *v *= inv);
    Ok((total, loss / items.len() as f64, extra))
}

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    /// Rescales the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, clip_norm: None, velocity: Vec::new() }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    /// Applies one update. `grads` is ordered like the store's parameters.
    /// Returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<f64> {
        if grads.len() != params.len() {
            return Err(Error::Invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        let norm = grads.iter().flatten().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = match self.clip_norm {
            Some(c) if norm > c => T::of(c / norm),
            _ => T::one(),
        };
        if self.velocity.is_empty() {
            self.velocity = params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        }
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for ((p, v), g) in params.tensors_mut().iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((pi, vi), &gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mu * *vi + gi * scale;
                *pi -= lr * *vi;
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn momentum_accumulates() {
        let mut p = ParamStore::<f64>::new();
        p.add("x", Tensor::scalar(1.0));
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(&mut p, &[vec![1.0]]).unwrap();
        assert!((p.tensors()[0].item() - 0.9).abs() < 1e-15);
        opt.step(&mut p, &[vec![1.0]]).unwrap();
        assert!((p.tensors()[0].item() - (0.9 - 0.19)).abs() < 1e-15);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamStore::<f64>::new();
        p.add("x", Tensor::from_f64(&[2], &[3.0, -2.0]).unwrap());
        let mut opt = Sgd::new(0.05, 0.9);
        for _ in 0..300 {
            let g = p.tensors()[0].data().iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &[g]).unwrap();
        }
        assert!(p.tensors()[0].data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn clipping_and_errors() {
        let mut p = ParamStore::<f64>::new();
        p.add("x", Tensor::scalar(0.0));
        let mut opt = Sgd::new(1.0, 0.0).with_clip(1.0);
        assert_eq!(opt.step(&mut p, &[vec![10.0]]).unwrap(), 10.0);
        assert_eq!(p.tensors()[0].item(), -1.0);
        assert!(opt.step(&mut p, &[vec![f64::NAN]]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }
}
