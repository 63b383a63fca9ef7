//! Whole-sequence decorators. They consume and produce tables, and fully
//! manage the decorated recurrent module's step lifecycle (forget and BPTT):
//! callers never invoke `backward_through_time` themselves.

use crate::error::{Error, Result};
use crate::module::{IoCache, Module, SerNode};
use crate::recurrent::Recursor;
use crate::store::{ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Whether hidden state carries across successive sequence presentations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RememberMode {
    /// Reset state before every new sequence (training-safe default).
    #[default]
    Neither,
    /// Carry hidden state from one sequence into the next.
    Both,
}

/// Wraps `module` so the recurrent interface is available: recurrent
/// instances are used as-is, anything else is decorated with a `Recursor`.
pub(crate) fn ensure_recurrent(store: &mut Store, mut module: Box<dyn Module>) -> Box<dyn Module> {
    if module.as_recurrent().is_some() {
        module
    } else {
        Box::new(Recursor::new(store, module))
    }
}

/// Applies a recurrent module to an entire input sequence (a table),
/// yielding the output sequence as a table of the same length.
///
/// `backward` takes the full gradOutput table in one call and internally
/// performs the truncated BPTT, returning the gradInput table.
pub struct Sequencer {
    inner: Box<dyn Module>,
    remember: RememberMode,
    base_step: usize,
    seq_len: usize,
    io: IoCache,
}

impl Sequencer {
    pub fn new(store: &mut Store, module: Box<dyn Module>) -> Sequencer {
        Sequencer {
            inner: ensure_recurrent(store, module),
            remember: RememberMode::Neither,
            base_step: 0,
            seq_len: 0,
            io: IoCache::default(),
        }
    }

    pub fn remember(mut self, mode: RememberMode) -> Sequencer {
        self.remember = mode;
        self
    }

    pub fn set_remember(&mut self, mode: RememberMode) {
        self.remember = mode;
    }

    pub fn remember_mode(&self) -> RememberMode {
        self.remember
    }

    pub fn inner_mut(&mut self) -> &mut dyn Module {
        self.inner.as_mut()
    }

    fn require_table<'a>(&self, v: &'a Value, who: &str) -> Result<&'a [Value]> {
        match v {
            Value::Table(entries) if !entries.is_empty() => Ok(entries),
            Value::Table(_) => Err(Error::Type(format!("{who}: empty input sequence"))),
            Value::Tensor(_) => Err(Error::Type(format!(
                "{who}: expected a table (sequence), found a tensor"
            ))),
        }
    }
}

impl Module for Sequencer {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let steps = self.require_table(input, "Sequencer")?;
        if self.remember == RememberMode::Neither {
            self.inner.forget(store);
        }
        let rec = self.inner.as_recurrent().expect("inner is recurrent");
        self.base_step = rec.current_step(store);
        let mut outputs = Vec::with_capacity(steps.len());
        for x in steps {
            outputs.push(self.inner.forward(store, x)?);
        }
        self.seq_len = steps.len();
        self.io.input = Some(input.clone());
        let out = Value::table(outputs);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        if self.io.output.is_none() {
            return Err(Error::Protocol("Sequencer: backward before forward".into()));
        }
        let steps = self.require_table(input, "Sequencer")?;
        let grads = self.require_table(grad_output, "Sequencer")?;
        if steps.len() != self.seq_len || grads.len() != self.seq_len {
            return Err(Error::Protocol(format!(
                "Sequencer: backward over {} steps, but forward saw {}",
                grads.len(),
                self.seq_len
            )));
        }
        // Record gradOutputs in reverse step order, then run BPTT bounded to
        // this sequence (state carried in from an earlier sequence is frozen).
        for (x, g) in steps.iter().zip(grads).rev() {
            self.inner.backward(store, x, g)?;
        }
        let rec = self.inner.as_recurrent().expect("inner is recurrent");
        rec.backward_through_time_from(store, self.base_step + 1)?;
        let mut grad_inputs = Vec::with_capacity(self.seq_len);
        for (i, x) in steps.iter().enumerate() {
            let t = self.base_step + i + 1;
            // Steps before the truncation window get zero gradients.
            grad_inputs.push(
                rec.grad_inputs()
                    .get(&t)
                    .cloned()
                    .unwrap_or_else(|| x.zeros_like()),
            );
        }
        Ok(Value::table(grad_inputs))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.inner.collect_params(out);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Sequencer {
            inner: self.inner.step_clone(),
            remember: self.remember,
            base_step: 0,
            seq_len: 0,
            io: IoCache::default(),
        })
    }

    fn contains_recurrent(&self) -> bool {
        true
    }

    fn set_training(&mut self, training: bool) {
        self.inner.set_training(training);
    }

    fn forget(&mut self, store: &mut Store) {
        self.inner.forget(store);
        self.base_step = 0;
        self.seq_len = 0;
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.inner.reinforce(reward);
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "sequencer".into(),
            config: vec![matches!(self.remember, RememberMode::Both) as i64],
            children: vec![self.inner.ser_node()],
        }
    }
}

impl Sequencer {
    /// Rebuilds a sequencer around an inner module that is already recurrent
    /// (used by deserialization; `new` would not re-wrap it anyway).
    pub(crate) fn from_inner(store: &mut Store, inner: Box<dyn Module>, remember: RememberMode) -> Sequencer {
        let mut s = Sequencer::new(store, inner);
        s.remember = remember;
        s
    }
}

/// Repeatedly applies a module to a single unchanging input, producing an
/// output sequence of `n_step` entries. The backward sums the per-step input
/// gradients into one gradInput.
pub struct Repeater {
    inner: Box<dyn Module>,
    n_step: usize,
    io: IoCache,
}

impl Repeater {
    pub fn new(store: &mut Store, module: Box<dyn Module>, n_step: usize) -> Result<Repeater> {
        if n_step < 1 {
            return Err(Error::Config(format!(
                "Repeater: nStep must be at least 1, got {n_step}"
            )));
        }
        Ok(Repeater {
            inner: ensure_recurrent(store, module),
            n_step,
            io: IoCache::default(),
        })
    }
}

impl Module for Repeater {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        self.inner.forget(store);
        let mut outputs = Vec::with_capacity(self.n_step);
        for _ in 0..self.n_step {
            outputs.push(self.inner.forward(store, input)?);
        }
        self.io.input = Some(input.clone());
        let out = Value::table(outputs);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        if self.io.output.is_none() {
            return Err(Error::Protocol("Repeater: backward before forward".into()));
        }
        let grads = grad_output.as_table()?;
        if grads.len() != self.n_step {
            return Err(Error::Protocol(format!(
                "Repeater: {} gradOutputs for {} steps",
                grads.len(),
                self.n_step
            )));
        }
        for g in grads.iter().rev() {
            self.inner.backward(store, input, g)?;
        }
        let rec = self.inner.as_recurrent().expect("inner is recurrent");
        rec.backward_through_time(store)?;
        let mut total = input.zeros_like();
        for t in 1..=self.n_step {
            if let Some(g) = rec.grad_inputs().get(&t) {
                total = total.add(g)?;
            }
        }
        Ok(total)
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.inner.collect_params(out);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Repeater {
            inner: self.inner.step_clone(),
            n_step: self.n_step,
            io: IoCache::default(),
        })
    }

    fn contains_recurrent(&self) -> bool {
        true
    }

    fn set_training(&mut self, training: bool) {
        self.inner.set_training(training);
    }

    fn forget(&mut self, store: &mut Store) {
        self.inner.forget(store);
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.inner.reinforce(reward);
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "repeater".into(),
            config: vec![self.n_step as i64],
            children: vec![self.inner.ser_node()],
        }
    }
}
