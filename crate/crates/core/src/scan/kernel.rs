//! Diagonal linear recurrences along the scan lines of a `(D, H, W)` grid.
//!
//! For every channel `k` and every line of the chosen direction the
//! kernels compute `h[i+1] = a[k]·h[i] + u[i]` from `h[0] = 0` and store
//! `h[i+1]` at the grid position of token `i`.

use rayon::prelude::*;

use super::ScanDirection;
use crate::tensor::Real;

/// Lines shorter than this are swept serially inside the parallel kernel.
const LEVEL_PAR_MIN: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanKernel {
    #[default]
    Sequential,
    Parallel,
}

/// Traversal of one `(H, W)` plane: `count` lines of `len` tokens, line `l`
/// starting at `start(l)` and advancing by `step`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lines {
    pub count: usize,
    pub len: usize,
    h: usize,
    w: usize,
    dir: ScanDirection,
}

impl Lines {
    pub fn new(h: usize, w: usize, dir: ScanDirection) -> Self {
        let (count, len) = if dir.is_horizontal() { (h, w) } else { (w, h) };
        Self { count, len, h, w, dir }
    }

    #[inline]
    pub fn start(&self, line: usize) -> usize {
        match self.dir {
            ScanDirection::LeftToRight => line * self.w,
            ScanDirection::RightToLeft => line * self.w + self.w - 1,
            ScanDirection::TopToBottom => line,
            ScanDirection::BottomToTop => (self.h - 1) * self.w + line,
        }
    }

    #[inline]
    pub fn step(&self) -> isize {
        match self.dir {
            ScanDirection::LeftToRight => 1,
            ScanDirection::RightToLeft => -1,
            ScanDirection::TopToBottom => self.w as isize,
            ScanDirection::BottomToTop => -(self.w as isize),
        }
    }

    #[inline]
    pub fn pos(&self, line: usize, i: usize) -> usize {
        (self.start(line) as isize + i as isize * self.step()) as usize
    }
}

/// Runs the recurrence over every channel plane of `u` (`a.len()` planes of
/// `h·w`).
pub fn recurrence<T: Real>(a: &[T], u: &[T], h: usize, w: usize, dir: ScanDirection, kernel: ScanKernel) -> Vec<T> {
    match kernel {
        ScanKernel::Sequential => recurrence_sequential(a, u, h, w, dir),
        ScanKernel::Parallel => recurrence_parallel(a, u, h, w, dir),
    }
}

pub fn recurrence_sequential<T: Real>(a: &[T], u: &[T], h: usize, w: usize, dir: ScanDirection) -> Vec<T> {
    let plane = h * w;
    debug_assert_eq!(u.len(), a.len() * plane);
    let lines = Lines::new(h, w, dir);
    let mut out = vec![T::zero(); u.len()];
    for (k, &ak) in a.iter().enumerate() {
        let src = &u[k * plane..(k + 1) * plane];
        let dst = &mut out[k * plane..(k + 1) * plane];
        for line in 0..lines.count {
            let mut state = T::zero();
            let (mut p, step) = (lines.start(line) as isize, lines.step());
            for _ in 0..lines.len {
                state = ak * state + src[p as usize];
                dst[p as usize] = state;
                p += step;
            }
        }
    }
    out
}

/// Work-efficient (Blelloch) scan of every line, parallel across channels
/// and lines. The combination tree is fixed, so the result does not depend
/// on the number of worker threads.
pub fn recurrence_parallel<T: Real>(a: &[T], u: &[T], h: usize, w: usize, dir: ScanDirection) -> Vec<T> {
    let plane = h * w;
    debug_assert_eq!(u.len(), a.len() * plane);
    let lines = Lines::new(h, w, dir);
    let mut out = vec![T::zero(); u.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(k, dst)| {
        let src = &u[k * plane..(k + 1) * plane];
        let ak = a[k];
        let scanned: Vec<Vec<T>> = (0..lines.count)
            .into_par_iter()
            .map(|line| {
                let tokens: Vec<T> = (0..lines.len).map(|i| src[lines.pos(line, i)]).collect();
                blelloch_line(ak, &tokens)
            })
            .collect();
        for (line, states) in scanned.iter().enumerate() {
            for (i, &s) in states.iter().enumerate() {
                dst[lines.pos(line, i)] = s;
            }
        }
    });
    out
}

/// `(a2, b2) ∘ (a1, b1)`: apply `first`, then `second`.
#[inline]
fn compose<T: Real>(first: (T, T), second: (T, T)) -> (T, T) {
    (second.0 * first.0, second.0 * first.1 + second.1)
}

/// Inclusive scan of `h[i+1] = a·h[i] + u[i]` by up-sweep/down-sweep over
/// the affine maps `(a, u[i])`, padded with identities to a power of two.
pub fn blelloch_line<T: Real>(a: T, u: &[T]) -> Vec<T> {
    let n = u.len();
    if n == 0 {
        return Vec::new();
    }
    let m = n.next_power_of_two();
    let identity = (T::one(), T::zero());
    let mut tree: Vec<(T, T)> = u.iter().map(|&b| (a, b)).collect();
    tree.resize(m, identity);
    let parallel = m >= LEVEL_PAR_MIN;

    let mut s = 1;
    while s < m {
        let up = |chunk: &mut [(T, T)]| chunk[2 * s - 1] = compose(chunk[s - 1], chunk[2 * s - 1]);
        if parallel && m / (2 * s) >= 64 {
            tree.par_chunks_mut(2 * s).for_each(up);
        } else {
            tree.chunks_mut(2 * s).for_each(up);
        }
        s *= 2;
    }

    tree[m - 1] = identity;
    let mut s = m / 2;
    while s >= 1 {
        let down = |chunk: &mut [(T, T)]| {
            let left = chunk[s - 1];
            chunk[s - 1] = chunk[2 * s - 1];
            chunk[2 * s - 1] = compose(chunk[2 * s - 1], left);
        };
        if parallel && m / (2 * s) >= 64 {
            tree.par_chunks_mut(2 * s).for_each(down);
        } else {
            tree.chunks_mut(2 * s).for_each(down);
        }
        s /= 2;
    }

    tree.iter().zip(u).map(|(&(_, prefix), &b)| a * prefix + b).collect()
}
