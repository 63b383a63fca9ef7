use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::module::{IoCache, Module, RecurrentModule, SerNode};
use crate::recurrent::{
    advance_step, commit_step, evict_bank, live_states, record_grad_output, DEFAULT_RHO,
};
use crate::store::{CellId, ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Adapts any module to the stepwise recurrent interface.
///
/// Each successive forward routes through the step clone for that time-step;
/// clones share parameters and parameter gradients with the original. For
/// decorated modules that are themselves recurrent (or contain recurrent
/// instances) the clones alias the original's state cell, so clone and
/// original behave as one and the same module and only the non-recurrent
/// parts are effectively duplicated per step.
pub struct Recursor {
    rho: usize,
    cell: CellId,
    proto: Box<dyn Module>,
    bank: BTreeMap<usize, Box<dyn Module>>,
    grad_inputs: BTreeMap<usize, Value>,
    io: IoCache,
    training: bool,
}

impl Recursor {
    pub fn new(store: &mut Store, module: Box<dyn Module>) -> Recursor {
        Recursor::with_rho(store, module, DEFAULT_RHO)
    }

    pub fn with_rho(store: &mut Store, module: Box<dyn Module>, rho: usize) -> Recursor {
        Recursor {
            rho: rho.max(1),
            cell: store.add_cell(),
            proto: module,
            bank: BTreeMap::new(),
            grad_inputs: BTreeMap::new(),
            io: IoCache::default(),
            training: true,
        }
    }

    /// Number of live step clones.
    pub fn clone_count(&self) -> usize {
        self.bank.len()
    }
}

impl Module for Recursor {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let t = advance_step(store, self.cell);
        let output = if self.training {
            let clone = self
                .bank
                .entry(t)
                .or_insert_with(|| self.proto.step_clone());
            clone.forward(store, input)?
        } else {
            self.proto.forward(store, input)?
        };
        commit_step(store, self.cell, t, output.clone(), self.rho, self.training);
        if self.training {
            evict_bank(&mut self.bank, t, self.rho);
        }
        self.io.input = Some(input.clone());
        self.io.output = Some(output.clone());
        Ok(output)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        record_grad_output(store, self.cell, input, grad_output)
    }

    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let clone = self.bank.get_mut(&t).ok_or_else(|| {
            Error::Protocol(format!(
                "Recursor: no step clone for step {t}; outside the BPTT window or not in training mode"
            ))
        })?;
        clone.bptt_step(store, t, grad_output)
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.proto.collect_params(out);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Recursor {
            rho: self.rho,
            cell: self.cell,
            proto: self.proto.step_clone(),
            bank: BTreeMap::new(),
            grad_inputs: BTreeMap::new(),
            io: IoCache::default(),
            training: self.training,
        })
    }

    fn contains_recurrent(&self) -> bool {
        true
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
        self.proto.set_training(training);
        self.bank.values_mut().for_each(|c| c.set_training(training));
    }

    fn forget(&mut self, store: &mut Store) {
        store.cell_mut(self.cell).reset();
        self.bank.clear();
        self.grad_inputs.clear();
        self.proto.forget(store);
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.proto.reinforce(reward);
        self.bank.values_mut().for_each(|c| c.reinforce(reward));
    }

    fn as_recurrent(&mut self) -> Option<&mut dyn RecurrentModule> {
        Some(self)
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "recursor".into(),
            config: vec![self.rho as i64],
            children: vec![self.proto.ser_node()],
        }
    }
}

impl RecurrentModule for Recursor {
    fn rho(&self) -> usize {
        self.rho
    }

    fn cell_id(&self) -> CellId {
        self.cell
    }

    fn grad_inputs(&self) -> &BTreeMap<usize, Value> {
        &self.grad_inputs
    }

    fn grad_inputs_mut(&mut self) -> &mut BTreeMap<usize, Value> {
        &mut self.grad_inputs
    }

    fn output_at(&self, store: &Store, t: usize) -> Option<Value> {
        store.cell(self.cell).hist.get(&t).cloned()
    }

    fn live_step_states(&self, store: &Store) -> usize {
        live_states(&self.bank, store, self.cell)
    }
}
