use std::collections::BTreeMap;

use crate::containers::{CAddTable, CMulTable, ConcatTable, SelectTable, Sequential};
use crate::error::{Error, Result};
use crate::layers::{CMul, Linear, Sigmoid, Tanh};
use crate::module::{IoCache, Module, RecurrentModule, SerNode};
use crate::recurrent::{
    advance_step, commit_step, evict_bank, live_states, record_grad_output, DEFAULT_RHO,
};
use crate::store::{CellId, ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Handles of the LSTM weights, grouped by gate. The cell-to-gate
/// (peephole) connections are diagonal and stored as vectors.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_xi: ParamId,
    pub b_i: ParamId,
    pub w_hi: ParamId,
    pub w_ci: ParamId,
    pub w_xf: ParamId,
    pub b_f: ParamId,
    pub w_hf: ParamId,
    pub w_cf: ParamId,
    pub w_xz: ParamId,
    pub b_z: ParamId,
    pub w_hz: ParamId,
    pub w_xo: ParamId,
    pub b_o: ParamId,
    pub w_ho: ParamId,
    pub w_co: ParamId,
}

fn seq(children: Vec<Box<dyn Module>>) -> Box<dyn Module> {
    let mut s = Sequential::new();
    for c in children {
        s.push(c);
    }
    Box::new(s)
}

fn sel(i: i64) -> Box<dyn Module> {
    Box::new(SelectTable::new(i))
}

/// One step of the cell as a composite graph, `{x, h_prev, c_prev} -> {h, c}`.
///
/// The stages thread the values each later gate still needs:
/// `{x,h,c} -> {i,f,z,x,h,c} -> {c_t,x,h} -> {o,c_t} -> {h_t,c_t}`.
fn build_step_graph(
    store: &mut Store,
    in_size: usize,
    out_size: usize,
) -> Result<(Box<dyn Module>, LstmParams)> {
    let lin_xi = Linear::new(store, in_size, out_size)?;
    let lin_hi = Linear::with_bias(store, out_size, out_size, false)?;
    let mul_ci = CMul::new(store, out_size)?;
    let lin_xf = Linear::new(store, in_size, out_size)?;
    let lin_hf = Linear::with_bias(store, out_size, out_size, false)?;
    let mul_cf = CMul::new(store, out_size)?;
    let lin_xz = Linear::new(store, in_size, out_size)?;
    let lin_hz = Linear::with_bias(store, out_size, out_size, false)?;
    let lin_xo = Linear::new(store, in_size, out_size)?;
    let lin_ho = Linear::with_bias(store, out_size, out_size, false)?;
    let mul_co = CMul::new(store, out_size)?;

    let params = LstmParams {
        w_xi: lin_xi.weight_id(),
        b_i: lin_xi.bias_id().unwrap(),
        w_hi: lin_hi.weight_id(),
        w_ci: mul_ci.weight_id(),
        w_xf: lin_xf.weight_id(),
        b_f: lin_xf.bias_id().unwrap(),
        w_hf: lin_hf.weight_id(),
        w_cf: mul_cf.weight_id(),
        w_xz: lin_xz.weight_id(),
        b_z: lin_xz.bias_id().unwrap(),
        w_hz: lin_hz.weight_id(),
        w_xo: lin_xo.weight_id(),
        b_o: lin_xo.bias_id().unwrap(),
        w_ho: lin_ho.weight_id(),
        w_co: mul_co.weight_id(),
    };

    let gate = |x_branch: Box<dyn Module>, h_branch: Box<dyn Module>, peep: Option<Box<dyn Module>>| {
        let mut ct = ConcatTable::new()
            .add(seq(vec![sel(1), x_branch]))
            .add(seq(vec![sel(2), h_branch]));
        if let Some(p) = peep {
            ct = ct.add(seq(vec![sel(3), p]));
        }
        ct
    };

    // i_t = sigmoid(W_xi x + W_hi h + w_ci * c + b_i), f_t likewise,
    // z_t = tanh(W_xz x + W_hz h + b_z)
    let i_gate = seq(vec![
        Box::new(gate(Box::new(lin_xi), Box::new(lin_hi), Some(Box::new(mul_ci)))),
        Box::new(CAddTable::new()),
        Box::new(Sigmoid::new()),
    ]);
    let f_gate = seq(vec![
        Box::new(gate(Box::new(lin_xf), Box::new(lin_hf), Some(Box::new(mul_cf)))),
        Box::new(CAddTable::new()),
        Box::new(Sigmoid::new()),
    ]);
    let z_gate = seq(vec![
        Box::new(gate(Box::new(lin_xz), Box::new(lin_hz), None)),
        Box::new(CAddTable::new()),
        Box::new(Tanh::new()),
    ]);

    let stage1: Box<dyn Module> = Box::new(
        ConcatTable::new()
            .add(i_gate)
            .add(f_gate)
            .add(z_gate)
            .add(sel(1))
            .add(sel(2))
            .add(sel(3)),
    );

    // c_t = f * c_prev + i * z, keeping x and h for the output gate.
    let new_cell = seq(vec![
        Box::new(
            ConcatTable::new()
                .add(seq(vec![
                    Box::new(ConcatTable::new().add(sel(2)).add(sel(6))),
                    Box::new(CMulTable::new()),
                ]))
                .add(seq(vec![
                    Box::new(ConcatTable::new().add(sel(1)).add(sel(3))),
                    Box::new(CMulTable::new()),
                ])),
        ),
        Box::new(CAddTable::new()),
    ]);
    let stage2: Box<dyn Module> =
        Box::new(ConcatTable::new().add(new_cell).add(sel(4)).add(sel(5)));

    // o_t = sigmoid(W_xo x + W_ho h + w_co * c_t); peephole reads the new cell.
    let o_gate = seq(vec![
        Box::new(
            ConcatTable::new()
                .add(seq(vec![sel(2), Box::new(lin_xo)]))
                .add(seq(vec![sel(3), Box::new(lin_ho)]))
                .add(seq(vec![sel(1), Box::new(mul_co)])),
        ),
        Box::new(CAddTable::new()),
        Box::new(Sigmoid::new()),
    ]);
    let stage3: Box<dyn Module> = Box::new(ConcatTable::new().add(o_gate).add(sel(1)));

    // h_t = o * tanh(c_t)
    let stage4: Box<dyn Module> = Box::new(
        ConcatTable::new()
            .add(seq(vec![
                Box::new(ConcatTable::new().add(sel(1)).add(seq(vec![sel(2), Box::new(Tanh::new())]))),
                Box::new(CMulTable::new()),
            ]))
            .add(sel(2)),
    );

    Ok((seq(vec![stage1, stage2, stage3, stage4]), params))
}

/// A layer of Long Short-Term Memory units with diagonal cell-to-gate
/// (peephole) connections, assembled internally as a composite of existing
/// modules. A parameter-sharing clone of the step graph is applied at each
/// time-step; `h_0 = c_0 = 0`.
pub struct Lstm {
    in_size: usize,
    out_size: usize,
    rho: usize,
    cell: CellId,
    params: LstmParams,
    proto: Box<dyn Module>,
    bank: BTreeMap<usize, Box<dyn Module>>,
    grad_inputs: BTreeMap<usize, Value>,
    io: IoCache,
    training: bool,
}

impl Lstm {
    pub fn new(store: &mut Store, in_size: usize, out_size: usize) -> Result<Lstm> {
        Lstm::with_rho(store, in_size, out_size, DEFAULT_RHO)
    }

    pub fn with_rho(store: &mut Store, in_size: usize, out_size: usize, rho: usize) -> Result<Lstm> {
        if in_size == 0 || out_size == 0 || rho == 0 {
            return Err(Error::Config(format!(
                "LSTM: sizes and rho must be positive, got {in_size}x{out_size}, rho {rho}"
            )));
        }
        let (proto, params) = build_step_graph(store, in_size, out_size)?;
        Ok(Lstm {
            in_size,
            out_size,
            rho,
            cell: store.add_cell(),
            params,
            proto,
            bank: BTreeMap::new(),
            grad_inputs: BTreeMap::new(),
            io: IoCache::default(),
            training: true,
        })
    }

    pub fn params(&self) -> LstmParams {
        self.params
    }

    /// `{h, c}` at step `t`, if still cached.
    pub fn hidden_state(&self, store: &Store, t: usize) -> Option<Value> {
        store.cell(self.cell).hist.get(&t).cloned()
    }

    fn zero_state(&self, batch: usize) -> Value {
        Value::table(vec![
            Value::Tensor(Tensor::zeros(vec![batch, self.out_size])),
            Value::Tensor(Tensor::zeros(vec![batch, self.out_size])),
        ])
    }
}

impl Module for Lstm {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let x = input.as_tensor()?;
        if x.ndim() != 2 || x.shape()[1] != self.in_size {
            return Err(Error::Shape(format!(
                "LSTM: expected [batch, {}] input, got {:?}",
                self.in_size,
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let t = advance_step(store, self.cell);
        let prev = if t == 1 {
            self.zero_state(batch)
        } else {
            store
                .cell(self.cell)
                .hist
                .get(&(t - 1))
                .cloned()
                .ok_or_else(|| Error::Protocol(format!("LSTM: state for step {} missing", t - 1)))?
        };
        let prev = prev.into_table()?;
        let step_input = Value::table(vec![input.clone(), prev[0].clone(), prev[1].clone()]);
        let state = if self.training {
            let clone = self
                .bank
                .entry(t)
                .or_insert_with(|| self.proto.step_clone());
            clone.forward(store, &step_input)?
        } else {
            self.proto.forward(store, &step_input)?
        };
        let h = state.as_table()?[0].clone();
        commit_step(store, self.cell, t, state, self.rho, self.training);
        if self.training {
            evict_bank(&mut self.bank, t, self.rho);
        }
        self.io.input = Some(input.clone());
        self.io.output = Some(h.clone());
        Ok(h)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        record_grad_output(store, self.cell, input, grad_output)
    }

    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let gh_ext = grad_output.as_tensor()?;
        let rec = {
            let cell = store.cell_mut(self.cell);
            if t == cell.step {
                cell.rec_grad = None;
            }
            cell.rec_grad.take()
        };
        let (gh_rec, gc_rec) = match rec {
            Some(v) => {
                let mut parts = v.into_table()?;
                let gc = parts.pop().unwrap().into_tensor()?;
                let gh = parts.pop().unwrap().into_tensor()?;
                (gh, gc)
            }
            None => (
                Tensor::zeros(gh_ext.shape().to_vec()),
                Tensor::zeros(gh_ext.shape().to_vec()),
            ),
        };
        let gh = gh_ext.add(&gh_rec)?;
        let state_grad = Value::table(vec![Value::Tensor(gh), Value::Tensor(gc_rec)]);
        let clone = self.bank.get_mut(&t).ok_or_else(|| {
            Error::Protocol(format!(
                "LSTM: no step clone for step {t}; outside the BPTT window or not in training mode"
            ))
        })?;
        let grad_in = clone.bptt_step(store, t, &state_grad)?;
        let mut parts = grad_in.into_table()?;
        let gc_prev = parts.pop().unwrap();
        let gh_prev = parts.pop().unwrap();
        let gx = parts.pop().unwrap();
        store.cell_mut(self.cell).rec_grad = if t > 1 {
            Some(Value::table(vec![gh_prev, gc_prev]))
        } else {
            None
        };
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
        // Shares the state cell, so the copy continues the same recurrence.
        Box::new(Lstm {
            in_size: self.in_size,
            out_size: self.out_size,
            rho: self.rho,
            cell: self.cell,
            params: self.params,
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
        SerNode::leaf(
            "lstm",
            vec![self.in_size as i64, self.out_size as i64, self.rho as i64],
        )
    }
}

impl RecurrentModule for Lstm {
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
        let state = store.cell(self.cell).hist.get(&t)?;
        Some(state.as_table().ok()?[0].clone())
    }

    fn output_size(&self) -> Option<usize> {
        Some(self.out_size)
    }

    fn live_step_states(&self, store: &Store) -> usize {
        live_states(&self.bank, store, self.cell)
    }
}
