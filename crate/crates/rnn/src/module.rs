use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::store::{CellId, ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Last forward's input/output, kept by every module for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct IoCache {
    pub input: Option<Value>,
    pub output: Option<Value>,
}

/// Serialized form of one module: a type tag, config integers and children.
/// Floating-point config values are stored as their IEEE-754 bit patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct SerNode {
    pub tag: String,
    pub config: Vec<i64>,
    pub children: Vec<SerNode>,
}

impl SerNode {
    pub fn leaf(tag: &str, config: Vec<i64>) -> SerNode {
        SerNode {
            tag: tag.to_string(),
            config,
            children: Vec::new(),
        }
    }
}

/// A differentiable transformation of `input` to `output`.
///
/// `forward` caches its input and output; `backward` returns the gradient
/// w.r.t. the input and accumulates gradients w.r.t. the parameters into the
/// store (zeroing is explicit via [`zero_grad_parameters`]). Parameters live
/// in the [`Store`]; `step_clone` copies the structure while aliasing the
/// parameter storages, which is how time-step clones share weights.
pub trait Module: Send {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value>;

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value)
        -> Result<Value>;

    /// One step of a reverse-order BPTT walk at time-step `t`.
    ///
    /// For ordinary modules this replays `backward` on the cached input:
    /// inside a per-step clone the cache holds exactly the step-`t`
    /// activations. Containers route the call to their children and
    /// recurrent modules add the gradient carried from step `t+1`.
    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let _ = t;
        let input = self
            .io()
            .input
            .clone()
            .ok_or_else(|| Error::Protocol("bptt step before forward".into()))?;
        self.backward(store, &input, grad_output)
    }

    fn io(&self) -> &IoCache;

    fn io_mut(&mut self) -> &mut IoCache;

    /// Last forward result.
    fn output(&self) -> Option<&Value> {
        self.io().output.as_ref()
    }

    /// Appends this module's parameter handles in declaration order.
    /// Shared parameters appear once per holder; callers dedup.
    fn collect_params(&self, out: &mut Vec<ParamId>);

    /// Structural copy with fresh activation state and aliased parameter and
    /// recurrent-state storages.
    fn step_clone(&self) -> Box<dyn Module>;

    /// Whether this module is, or contains, a recurrent instance.
    fn contains_recurrent(&self) -> bool {
        false
    }

    /// Switches between training (full step caching) and evaluation
    /// (constant-memory) behavior. Containers propagate to children.
    fn set_training(&mut self, training: bool) {
        let _ = training;
    }

    /// Resets time-step counters and recurrent state; parameters untouched.
    fn forget(&mut self, store: &mut Store) {
        let _ = store;
    }

    /// Assigns a per-example reward to every stochastic node in the tree.
    fn reinforce(&mut self, reward: &Tensor) {
        let _ = reward;
    }

    /// Access to the recurrent interface when this module manages its own
    /// time-step recursion.
    fn as_recurrent(&mut self) -> Option<&mut dyn RecurrentModule> {
        None
    }

    /// Serialized description of this module (structure and config, no state).
    fn ser_node(&self) -> SerNode;
}

/// The stepwise interface of modules that manage their own time-step
/// recursion: per-step clones sharing parameters, a bounded state history,
/// and truncated backpropagation through time.
pub trait RecurrentModule: Module {
    /// BPTT window: gradients propagate through at most `rho` steps.
    fn rho(&self) -> usize;

    fn cell_id(&self) -> CellId;

    /// Per-step input gradients, available after `backward_through_time`.
    fn grad_inputs(&self) -> &BTreeMap<usize, Value>;

    fn grad_inputs_mut(&mut self) -> &mut BTreeMap<usize, Value>;

    /// Module output at step `t`, if still cached.
    fn output_at(&self, store: &Store, t: usize) -> Option<Value>;

    /// Recurrent state at step `t` (same as the output except for cells that
    /// carry extra state, like the LSTM's `{h, c}` pair).
    fn state_at(&self, store: &Store, t: usize) -> Option<Value> {
        store.cell(self.cell_id()).hist.get(&t).cloned()
    }

    /// Declared output width, when the module knows it.
    fn output_size(&self) -> Option<usize> {
        None
    }

    /// Number of live per-step states (clones plus cached history entries).
    fn live_step_states(&self, store: &Store) -> usize;

    /// Index of the last forwarded step (0 when fresh).
    fn current_step(&self, store: &Store) -> usize {
        store.cell(self.cell_id()).step
    }

    /// Runs truncated BPTT over the last `min(N, rho)` forwarded steps using
    /// the gradOutputs recorded by stepwise `backward` calls. Per-step input
    /// gradients become available through `grad_inputs` afterwards.
    fn backward_through_time(&mut self, store: &mut Store) -> Result<()> {
        let last = store.cell(self.cell_id()).step;
        let first = (last + 1).saturating_sub(self.rho()).max(1);
        self.backward_through_time_from(store, first)
    }

    /// BPTT restricted to steps `first..=last`; used by sequence decorators to
    /// stop the walk at a sequence boundary in remember mode.
    fn backward_through_time_from(&mut self, store: &mut Store, first: usize) -> Result<()> {
        let cell_id = self.cell_id();
        let last = store.cell(cell_id).step;
        if store.cell(cell_id).grad_outputs.is_empty() {
            return Err(Error::Protocol(
                "backwardThroughTime with no stored gradOutputs".into(),
            ));
        }
        let first = first.max((last + 1).saturating_sub(self.rho())).max(1);
        store.cell_mut(cell_id).rec_grad = None;
        self.grad_inputs_mut().clear();
        for t in (first..=last).rev() {
            let grad_output = match store.cell(cell_id).grad_outputs.get(&t) {
                Some(g) => g.clone(),
                None => self
                    .output_at(store, t)
                    .ok_or_else(|| {
                        Error::Protocol(format!("no cached output for step {t} during BPTT"))
                    })?
                    .zeros_like(),
            };
            let grad_input = self.bptt_step(store, t, &grad_output)?;
            self.grad_inputs_mut().insert(t, grad_input);
        }
        Ok(())
    }
}

/// Collects a module's parameter handles, deduplicated in declaration order.
pub fn unique_params(module: &dyn Module) -> Vec<ParamId> {
    let mut ids = Vec::new();
    module.collect_params(&mut ids);
    let mut seen = std::collections::HashSet::new();
    ids.retain(|id| seen.insert(*id));
    ids
}

/// Zeroes the gradient buffer of every parameter owned by `module`.
pub fn zero_grad_parameters(module: &dyn Module, store: &mut Store) {
    store.zero_grads(&unique_params(module));
}

/// Applies `p <- p - lr * g` to every parameter of `module`, exactly once per
/// distinct storage even when parameters are shared between clones.
pub fn update_parameters(module: &dyn Module, store: &mut Store, lr: f64) {
    store.sgd_step(&unique_params(module), lr);
}
