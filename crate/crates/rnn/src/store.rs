use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::value::Value;

/// Handle to one distinct parameter storage (value + gradient pair).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

/// Handle to one shared recurrent-state cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellId(usize);

/// Per-step bookkeeping shared by every handle of one recurrent module:
/// the time-step counter, the recurrent state history, the gradOutputs
/// recorded by stepwise backward calls, and the recurrent gradient being
/// carried down during a BPTT walk.
#[derive(Debug, Default)]
pub struct RecurrentCell {
    /// Number of forwards since the last forget; also the index of the last
    /// forwarded step (steps are 1-based).
    pub step: usize,
    /// Stepwise backward calls seen since the last forward; the next recorded
    /// gradOutput targets step `step - backwards_since_forward`.
    pub backwards_since_forward: usize,
    /// Recurrent state per step (the output, or `{h, c}` for an LSTM).
    pub hist: BTreeMap<usize, Value>,
    /// GradOutputs recorded by stepwise backward calls, keyed by step.
    pub grad_outputs: BTreeMap<usize, Value>,
    /// Gradient w.r.t. the recurrent state, flowing from step t+1 into step t.
    pub rec_grad: Option<Value>,
}

impl RecurrentCell {
    pub fn reset(&mut self) {
        *self = RecurrentCell::default();
    }

    /// Drops history/gradOutput entries older than `keep_from`.
    pub fn evict_before(&mut self, keep_from: usize) {
        self.hist.retain(|&k, _| k >= keep_from);
        self.grad_outputs.retain(|&k, _| k >= keep_from);
    }
}

/// Arena owning every parameter, parameter gradient, and recurrent-state cell
/// of a network, plus the run's random number generator.
///
/// Modules hold `ParamId`/`CellId` handles instead of tensors, so a step clone
/// is a cheap structural copy that aliases the original's storage. Updating a
/// shared parameter therefore happens exactly once per distinct storage, and
/// the number of distinct storages is independent of sequence length.
#[derive(Debug)]
pub struct Store {
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
    cells: Vec<RecurrentCell>,
    pub rng: Rng,
}

impl Store {
    pub fn new(seed: u64) -> Store {
        Store {
            params: Vec::new(),
            grads: Vec::new(),
            cells: Vec::new(),
            rng: Rng::new(seed),
        }
    }

    pub fn add_param(&mut self, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.params.push(value);
        id
    }

    pub fn add_cell(&mut self) -> CellId {
        let id = CellId(self.cells.len());
        self.cells.push(RecurrentCell::default());
        id
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    /// Overwrites a parameter; the new value must keep the shape.
    pub fn set_param(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.params[id.0].shape() {
            return Err(Error::Shape(format!(
                "set_param: shape {:?} does not match existing {:?}",
                value.shape(),
                self.params[id.0].shape()
            )));
        }
        self.params[id.0] = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn cell(&self, id: CellId) -> &RecurrentCell {
        &self.cells[id.0]
    }

    pub fn cell_mut(&mut self, id: CellId) -> &mut RecurrentCell {
        &mut self.cells[id.0]
    }

    /// Number of distinct parameter storages in the arena.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the gradients of the given parameters (duplicates are fine).
    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.grads[id.0].fill(0.0);
        }
    }

    /// Applies `p <- p - lr * g` once per distinct storage.
    pub fn sgd_step(&mut self, ids: &[ParamId], lr: f64) {
        let mut seen = vec![false; self.params.len()];
        for &id in ids {
            if seen[id.0] {
                continue;
            }
            seen[id.0] = true;
            let g = &self.grads[id.0];
            self.params[id.0]
                .add_scaled(g, -lr)
                .expect("parameter and gradient shapes always match");
        }
    }
}
