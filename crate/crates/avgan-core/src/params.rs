//! Named parameter storage shared by the model modules.
//!
//! Parameters persist across iterations; each forward pass inserts them into
//! the current graph as leaves via a [`Bind`], which also controls freezing
//! (a frozen bind inserts constants, so backward never produces gradients
//! for that store — the phase-1/phase-2 alternation of WGAN training).
//! Non-trainable entries (batch-norm running statistics) live here too so
//! checkpoints capture them.

use crate::error::{Error, Result};
use crate::graph::{Graph, GradMap, Value};
use crate::tensor::Tensor;
use crate::Scalar;
use std::collections::HashMap;

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
    /// Accumulated gradient; backward results add here until cleared.
    pub grad: Option<Tensor<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, trainable, grad: None });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        debug_assert_eq!(self.entries[id].value.shape(), value.shape());
        self.entries[id].value = value;
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Total number of trainable elements.
    pub fn trainable_numel(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Add `g` into the entry's accumulated gradient.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id];
        if e.value.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match parameter {} {:?}",
                g.shape(),
                e.name,
                e.value.shape()
            )));
        }
        match &mut e.grad {
            None => e.grad = Some(g.clone()),
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
        }
        Ok(())
    }
}

/// Per-graph cache of parameter leaves. `frozen` inserts parameters as
/// constants so no gradient flows to them.
pub struct Bind {
    frozen: bool,
    cache: Vec<Option<Value>>,
}

impl Bind {
    pub fn new<T: Scalar>(store: &ParamStore<T>, frozen: bool) -> Self {
        Bind { frozen, cache: vec![None; store.len()] }
    }

    /// Bind ids 0..n directly to existing graph nodes. Gradient-check
    /// plumbing: lets parameter tensors live as ordinary leaves.
    pub fn from_values(vals: &[Value]) -> Self {
        Bind { frozen: false, cache: vals.iter().map(|&v| Some(v)).collect() }
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    /// Leaf for parameter `id` in graph `g`, created on first use.
    pub fn get<T: Scalar>(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId) -> Value {
        if let Some(v) = self.cache[id] {
            return v;
        }
        let e = store.entry(id);
        let v = g.leaf(e.value.clone(), e.trainable && !self.frozen);
        self.cache[id] = Some(v);
        v
    }

    /// After a backward pass: pull each bound parameter's gradient out of the
    /// graph and accumulate it into the store.
    pub fn harvest_grads<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &mut ParamStore<T>,
        map: &GradMap,
    ) -> Result<()> {
        for (id, slot) in self.cache.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(gt) = g.grad_tensor(map, *v) {
                    store.accumulate_grad(id, &gt)?;
                }
            }
        }
        Ok(())
    }

    /// The bound leaves (for `backward_wrt` target lists).
    pub fn bound_values(&self) -> Vec<Value> {
        self.cache.iter().filter_map(|v| *v).collect()
    }
}
