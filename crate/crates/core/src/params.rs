//! Named parameter collections, their binding to a tape, and the checkpoint
//! container shared by every trained artifact.
//!
//! Checkpoint layout (text header, then binary tensors):
//!
//! ```text
//! DGSSM-CHECKPOINT v1
//! kind <kind>
//! meta <key> <value...>      (any number)
//! params <n>
//! param <name> <d0> <d1> ...  (n lines, in storage order)
//! end
//! <n TNSR v1 records>
//! ```

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Registers every parameter on `tape`, as a gradient-tracking leaf when
    /// `track` is set and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape<T>, track: bool) -> Binding {
        let vars = self
            .tensors
            .iter()
            .map(|t| if track { tape.leaf(t.clone().with_grad()) } else { tape.constant(t.clone()) })
            .collect();
        Binding { vars }
    }

    pub fn write_checkpoint(&self, w: &mut impl Write, kind: &str, meta: &[(String, String)]) -> Result<()> {
        let mut head = format!("DGSSM-CHECKPOINT v1\nkind {kind}\n");
        for (k, v) in meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        head.push_str(&format!("params {}\n", self.len()));
        for (name, t) in self.iter() {
            head.push_str("param ");
            head.push_str(name);
            for d in t.shape() {
                head.push_str(&format!(" {d}"));
            }
            head.push('\n');
        }
        head.push_str("end\n");
        w.write_all(head.as_bytes())?;
        for t in &self.tensors {
            t.write_to(w)?;
        }
        Ok(())
    }

    /// Reads a checkpoint, returning its kind, metadata and parameters.
    pub fn read_checkpoint(r: &mut impl BufRead) -> Result<Checkpoint<T>> {
        let bad = |detail: String| Error::Format { what: "checkpoint", detail };
        let mut line = String::new();
        let mut next = |r: &mut dyn BufRead| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format { what: "checkpoint", detail: "unexpected end of header".into() });
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next(r)? != "DGSSM-CHECKPOINT v1" {
            return Err(bad("missing DGSSM-CHECKPOINT v1 magic".into()));
        }
        let kind = next(r)?
            .strip_prefix("kind ")
            .map(str::to_string)
            .ok_or_else(|| bad("missing kind line".into()))?;
        let mut meta = Vec::new();
        let count = loop {
            let l = next(r)?;
            if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.push((k.to_string(), v.to_string()));
            } else if let Some(n) = l.strip_prefix("params ") {
                break n.parse::<usize>().map_err(|_| bad(format!("bad parameter count {n:?}")))?;
            } else {
                return Err(bad(format!("unexpected header line {l:?}")));
            }
        };
        let mut decl = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next(r)?;
            let mut f = l.split(' ');
            if f.next() != Some("param") {
                return Err(bad(format!("expected param line, got {l:?}")));
            }
            let name = f.next().ok_or_else(|| bad(format!("unnamed parameter in {l:?}")))?.to_string();
            let shape = f
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad shape in {l:?}")))?;
            decl.push((name, shape));
        }
        if next(r)? != "end" {
            return Err(bad("missing end of header".into()));
        }
        let mut params = ParamStore::new();
        for (name, shape) in decl {
            let t = Tensor::read_from(r)?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!("{name}: header shape {shape:?}, payload {:?}", t.shape())));
            }
            params.add(name, t);
        }
        Ok(Checkpoint { kind, meta, params })
    }
}

pub struct Checkpoint<T> {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub params: ParamStore<T>,
}

impl<T> Checkpoint<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wraps vars already registered on a tape, one per parameter in store
    /// order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Moves the gradient of every bound parameter out of `grads`; missing
    /// gradients become zeros.
    pub fn gradients<T: Real>(&self, store: &ParamStore<T>, grads: &mut Gradients<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| grads.take(v).map(Tensor::into_data).unwrap_or_else(|| vec![T::zero(); t.len()]))
            .collect()
    }
}

/// Zero-mean normal initialisation with variance `gain / fan_in`.
pub fn init_normal<T: Real>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}
