use std::collections::BTreeMap;

use crate::containers::{CAddTable, ParallelTable, Sequential};
use crate::error::{Error, Result};
use crate::layers::Add;
use crate::module::{IoCache, Module, RecurrentModule, SerNode};
use crate::recurrent::{advance_step, commit_step, evict_bank, record_grad_output};
use crate::store::{CellId, ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Simple recurrent layer: `output(t) = transfer(inputLayer(x_t) +
/// feedbackLayer(output(t-1)))`.
///
/// The first step has no previous output; it applies a learned additive
/// initial bias of size `start_size` (initialized to zero) to the input
/// layer's result instead.
pub struct Recurrent {
    start_size: usize,
    rho: usize,
    cell: CellId,
    initial_bias: ParamId,
    // Constructor prototypes, kept for serialization.
    input_layer: Box<dyn Module>,
    feedback_layer: Box<dyn Module>,
    transfer: Box<dyn Module>,
    // Assembled per-step graphs sharing the prototypes' parameters.
    proto_first: Box<dyn Module>,
    proto_rest: Box<dyn Module>,
    bank_first: Option<Box<dyn Module>>,
    bank: BTreeMap<usize, Box<dyn Module>>,
    grad_inputs: BTreeMap<usize, Value>,
    io: IoCache,
    training: bool,
}

impl Recurrent {
    pub fn new(
        store: &mut Store,
        start_size: usize,
        input_layer: Box<dyn Module>,
        feedback_layer: Box<dyn Module>,
        transfer: Box<dyn Module>,
        rho: usize,
    ) -> Result<Recurrent> {
        if start_size == 0 || rho == 0 {
            return Err(Error::Config(
                "Recurrent: start size and rho must be positive".into(),
            ));
        }
        let initial = Add::new(store, start_size)?;
        let initial_bias = initial.bias_id();
        let proto_first: Box<dyn Module> = Box::new(
            Sequential::new()
                .add(input_layer.step_clone())
                .add(Box::new(initial))
                .add(transfer.step_clone()),
        );
        let proto_rest: Box<dyn Module> = Box::new(
            Sequential::new()
                .add(Box::new(
                    ParallelTable::new()
                        .add(input_layer.step_clone())
                        .add(feedback_layer.step_clone()),
                ))
                .add(Box::new(CAddTable::new()))
                .add(transfer.step_clone()),
        );
        Ok(Recurrent {
            start_size,
            rho,
            cell: store.add_cell(),
            initial_bias,
            input_layer,
            feedback_layer,
            transfer,
            proto_first,
            proto_rest,
            bank_first: None,
            bank: BTreeMap::new(),
            grad_inputs: BTreeMap::new(),
            io: IoCache::default(),
            training: true,
        })
    }

    pub fn initial_bias_id(&self) -> ParamId {
        self.initial_bias
    }
}

impl Module for Recurrent {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let t = advance_step(store, self.cell);
        let output = if t == 1 {
            let module: &mut Box<dyn Module> = if self.training {
                self.bank_first
                    .get_or_insert_with(|| self.proto_first.step_clone())
            } else {
                &mut self.proto_first
            };
            module.forward(store, input)?
        } else {
            let prev = store
                .cell(self.cell)
                .hist
                .get(&(t - 1))
                .cloned()
                .ok_or_else(|| {
                    Error::Protocol(format!("Recurrent: output for step {} missing", t - 1))
                })?;
            let step_input = Value::table(vec![input.clone(), prev]);
            if self.training {
                let clone = self
                    .bank
                    .entry(t)
                    .or_insert_with(|| self.proto_rest.step_clone());
                clone.forward(store, &step_input)?
            } else {
                self.proto_rest.forward(store, &step_input)?
            }
        };
        commit_step(store, self.cell, t, output.clone(), self.rho, self.training);
        if self.training {
            evict_bank(&mut self.bank, t, self.rho);
            if t.saturating_sub(self.rho) >= 1 {
                self.bank_first = None;
            }
        }
        self.io.input = Some(input.clone());
        self.io.output = Some(output.clone());
        Ok(output)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        record_grad_output(store, self.cell, input, grad_output)
    }

    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let rec = {
            let cell = store.cell_mut(self.cell);
            if t == cell.step {
                cell.rec_grad = None;
            }
            cell.rec_grad.take()
        };
        let total = match rec {
            Some(g) => grad_output.add(&g)?,
            None => grad_output.clone(),
        };
        if t == 1 {
            let module = self.bank_first.as_mut().ok_or_else(|| {
                Error::Protocol("Recurrent: step-1 clone missing during BPTT".into())
            })?;
            store.cell_mut(self.cell).rec_grad = None;
            module.bptt_step(store, t, &total)
        } else {
            let clone = self.bank.get_mut(&t).ok_or_else(|| {
                Error::Protocol(format!(
                    "Recurrent: no step clone for step {t}; outside the BPTT window or not in training mode"
                ))
            })?;
            let grad_in = clone.bptt_step(store, t, &total)?;
            let mut parts = grad_in.into_table()?;
            let g_prev = parts.pop().unwrap();
            let gx = parts.pop().unwrap();
            store.cell_mut(self.cell).rec_grad = Some(g_prev);
            Ok(gx)
        }
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.proto_first.collect_params(out);
        self.proto_rest.collect_params(out);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Recurrent {
            start_size: self.start_size,
            rho: self.rho,
            cell: self.cell,
            initial_bias: self.initial_bias,
            input_layer: self.input_layer.step_clone(),
            feedback_layer: self.feedback_layer.step_clone(),
            transfer: self.transfer.step_clone(),
            proto_first: self.proto_first.step_clone(),
            proto_rest: self.proto_rest.step_clone(),
            bank_first: None,
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
        self.proto_first.set_training(training);
        self.proto_rest.set_training(training);
        if let Some(m) = self.bank_first.as_mut() {
            m.set_training(training);
        }
        self.bank.values_mut().for_each(|c| c.set_training(training));
    }

    fn forget(&mut self, store: &mut Store) {
        store.cell_mut(self.cell).reset();
        self.bank.clear();
        self.bank_first = None;
        self.grad_inputs.clear();
        self.proto_first.forget(store);
        self.proto_rest.forget(store);
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.proto_first.reinforce(reward);
        self.proto_rest.reinforce(reward);
        if let Some(m) = self.bank_first.as_mut() {
            m.reinforce(reward);
        }
        self.bank.values_mut().for_each(|c| c.reinforce(reward));
    }

    fn as_recurrent(&mut self) -> Option<&mut dyn RecurrentModule> {
        Some(self)
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "recurrent".into(),
            config: vec![self.start_size as i64, self.rho as i64],
            children: vec![
                self.input_layer.ser_node(),
                self.feedback_layer.ser_node(),
                self.transfer.ser_node(),
            ],
        }
    }
}

impl RecurrentModule for Recurrent {
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

    fn output_size(&self) -> Option<usize> {
        Some(self.start_size)
    }

    fn live_step_states(&self, store: &Store) -> usize {
        let extra = usize::from(self.bank_first.is_some());
        (self.bank.len() + extra)
            .max(store.cell(self.cell).hist.len())
            .max(store.cell(self.cell).grad_outputs.len())
    }
}
