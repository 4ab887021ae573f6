//! Named parameter storage shared by every model component.
//!
//! Components hold [`ParamId`]s; a forward pass binds them to tape leaves
//! through a [`Binder`], which registers each parameter at most once per tape
//! so gradients from repeated uses (shared Siamese branches, recurrent steps)
//! accumulate on a single leaf.

use std::sync::Arc;

use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight tensor drawn from Glorot-uniform with the given fans.
    Weight { fan_in: usize, fan_out: usize },
    /// Bias vector, initialized to zero.
    Bias,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    kind: ParamKind,
    value: Arc<Tensor>,
}

/// Ordered, named collection of learnable tensors.
///
/// Values sit behind `Arc` so tapes can reference them without copying;
/// mutation goes through copy-on-write, which also makes cloning a store
/// (for best-epoch snapshots) cheap.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            kind,
            value: Arc::new(value),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]. Parameters that
/// received no adjoint hold `None`, which reads as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<f64>) {
        self.grads[id.0] = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self` elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => m.iter_mut().zip(theirs).for_each(|(a, b)| *a += b),
                None => *mine = Some(theirs.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Binds parameters to leaves of one tape, registering each lazily.
pub struct Binder<'s> {
    store: &'s ParamStore,
    vars: Vec<Option<Var>>,
    requires_grad: bool,
}

impl<'s> Binder<'s> {
    /// `requires_grad = false` gives an inference-only binding.
    pub fn new(store: &'s ParamStore, requires_grad: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            requires_grad,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = tape.leaf(self.store.shared(id), self.requires_grad);
        self.vars[id.0] = Some(v);
        v
    }

    /// Collects leaf adjoints after `tape.backward`.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        let grads = self
            .vars
            .iter()
            .map(|v| v.and_then(|v| tape.grad(v)).map(Tensor::into_data))
            .collect();
        Gradients { grads }
    }
}

/// Registers parameters under a name prefix, drawing initial values from a
/// caller-supplied initializer.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    init: &'a mut dyn FnMut(ParamKind, &[usize]) -> Tensor,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(
        store: &'a mut ParamStore,
        init: &'a mut dyn FnMut(ParamKind, &[usize]) -> Tensor,
    ) -> Self {
        Self {
            store,
            init,
            prefix: String::new(),
        }
    }

    /// Runs `f` with `segment` appended to the name prefix.
    pub fn scoped<T>(&mut self, segment: &str, f: impl FnOnce(&mut ParamBuilder<'_>) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() {
            segment.to_owned()
        } else {
            format!("{saved}.{segment}")
        };
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn weight(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        self.add(name, ParamKind::Weight { fan_in, fan_out }, shape)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> ParamId {
        self.add(name, ParamKind::Bias, &[len])
    }

    fn add(&mut self, name: &str, kind: ParamKind, shape: &[usize]) -> ParamId {
        let value = (self.init)(kind, shape);
        assert_eq!(
            value.shape(),
            shape,
            "initializer returned wrong shape for {name}"
        );
        let full = if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.insert(full, kind, value)
    }
}

/// Initializer that fills every parameter with zeros.
pub fn zero_init(_: ParamKind, shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}
