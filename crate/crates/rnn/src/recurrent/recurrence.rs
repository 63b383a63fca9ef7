use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::module::{IoCache, Module, RecurrentModule, SerNode};
use crate::recurrent::{
    advance_step, commit_step, evict_bank, leading_dim, live_states, record_grad_output,
    DEFAULT_RHO,
};
use crate::store::{CellId, ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// General recurrence container: the decorated module maps the table
/// `{input(t), output(t-1)}` to `output(t)`.
///
/// The first step feeds a zero tensor of size `[batch, output_size]` as the
/// previous output. `n_input_dim` declares the non-batch rank of the input so
/// the batch size can be inferred under the batch-first convention.
pub struct Recurrence {
    output_size: usize,
    n_input_dim: usize,
    rho: usize,
    cell: CellId,
    proto: Box<dyn Module>,
    bank: BTreeMap<usize, Box<dyn Module>>,
    grad_inputs: BTreeMap<usize, Value>,
    io: IoCache,
    training: bool,
}

impl Recurrence {
    pub fn new(
        store: &mut Store,
        module: Box<dyn Module>,
        output_size: usize,
        n_input_dim: usize,
    ) -> Result<Recurrence> {
        Recurrence::with_rho(store, module, output_size, n_input_dim, DEFAULT_RHO)
    }

    pub fn with_rho(
        store: &mut Store,
        module: Box<dyn Module>,
        output_size: usize,
        n_input_dim: usize,
        rho: usize,
    ) -> Result<Recurrence> {
        if output_size == 0 || rho == 0 {
            return Err(Error::Config(
                "Recurrence: output size and rho must be positive".into(),
            ));
        }
        Ok(Recurrence {
            output_size,
            n_input_dim,
            rho,
            cell: store.add_cell(),
            proto: module,
            bank: BTreeMap::new(),
            grad_inputs: BTreeMap::new(),
            io: IoCache::default(),
            training: true,
        })
    }

    fn check_input(&self, input: &Value) -> Result<usize> {
        if let Value::Tensor(t) = input {
            if t.ndim() > self.n_input_dim + 1 {
                return Err(Error::Shape(format!(
                    "Recurrence: input rank {} exceeds declared nInputDim {} plus batch",
                    t.ndim(),
                    self.n_input_dim
                )));
            }
        }
        Ok(leading_dim(input))
    }
}

impl Module for Recurrence {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let batch = self.check_input(input)?;
        let t = advance_step(store, self.cell);
        let prev = if t == 1 {
            Value::Tensor(Tensor::zeros(vec![batch, self.output_size]))
        } else {
            store
                .cell(self.cell)
                .hist
                .get(&(t - 1))
                .cloned()
                .ok_or_else(|| {
                    Error::Protocol(format!("Recurrence: output for step {} missing", t - 1))
                })?
        };
        let step_input = Value::table(vec![input.clone(), prev]);
        let output = if self.training {
            let clone = self
                .bank
                .entry(t)
                .or_insert_with(|| self.proto.step_clone());
            clone.forward(store, &step_input)?
        } else {
            self.proto.forward(store, &step_input)?
        };
        let out_t = output.as_tensor().map_err(|_| {
            Error::Shape("Recurrence: the decorated module must output a tensor".into())
        })?;
        if out_t.ndim() != 2 || out_t.shape()[1] != self.output_size {
            return Err(Error::Shape(format!(
                "Recurrence: module output {:?} does not match declared output size {}",
                out_t.shape(),
                self.output_size
            )));
        }
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
        let clone = self.bank.get_mut(&t).ok_or_else(|| {
            Error::Protocol(format!(
                "Recurrence: no step clone for step {t}; outside the BPTT window or not in training mode"
            ))
        })?;
        let grad_in = clone.bptt_step(store, t, &total)?;
        let mut parts = grad_in.into_table()?;
        let g_prev = parts.pop().unwrap();
        let gx = parts.pop().unwrap();
        store.cell_mut(self.cell).rec_grad = if t > 1 { Some(g_prev) } else { None };
        Ok(gx)
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
        Box::new(Recurrence {
            output_size: self.output_size,
            n_input_dim: self.n_input_dim,
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
            tag: "recurrence".into(),
            config: vec![
                self.output_size as i64,
                self.n_input_dim as i64,
                self.rho as i64,
            ],
            children: vec![self.proto.ser_node()],
        }
    }
}

impl RecurrentModule for Recurrence {
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
        Some(self.output_size)
    }

    fn live_step_states(&self, store: &Store) -> usize {
        live_states(&self.bank, store, self.cell)
    }
}
