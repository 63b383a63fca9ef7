//! Composite modules that combine children into larger graphs: sequential
//! chaining, table fan-out/fan-in and table arithmetic.

// The `add` builder methods intentionally mirror the container vocabulary.
#![allow(clippy::should_implement_trait)]

use crate::error::{Error, Result};
use crate::module::{IoCache, Module, RecurrentModule, SerNode};
use crate::store::{ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Applies children one after another, feeding each output to the next.
pub struct Sequential {
    children: Vec<Box<dyn Module>>,
    io: IoCache,
}

impl Default for Sequential {
    fn default() -> Self {
        Self::new()
    }
}

impl Sequential {
    pub fn new() -> Sequential {
        Sequential {
            children: Vec::new(),
            io: IoCache::default(),
        }
    }

    pub fn add(mut self, child: Box<dyn Module>) -> Sequential {
        self.children.push(child);
        self
    }

    pub fn push(&mut self, child: Box<dyn Module>) {
        self.children.push(child);
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn child_mut(&mut self, i: usize) -> &mut dyn Module {
        self.children[i].as_mut()
    }

    /// Chains gradients through children in reverse, using `step` to route
    /// recurrent children when walking through time.
    fn backward_chain(
        &mut self,
        store: &mut Store,
        input: &Value,
        grad_output: &Value,
        step: Option<usize>,
    ) -> Result<Value> {
        if self.io.output.is_none() {
            return Err(Error::Protocol("Sequential: backward before forward".into()));
        }
        let mut grad = grad_output.clone();
        for i in (0..self.children.len()).rev() {
            grad = match step {
                // During a BPTT walk children read their own step caches.
                Some(t) => self.children[i].bptt_step(store, t, &grad)?,
                None => {
                    let child_input = if i == 0 {
                        input.clone()
                    } else {
                        self.children[i - 1].output().cloned().ok_or_else(|| {
                            Error::Protocol("Sequential: missing child output".into())
                        })?
                    };
                    self.children[i].backward(store, &child_input, &grad)?
                }
            };
        }
        Ok(grad)
    }
}

impl Module for Sequential {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        if self.children.is_empty() {
            return Err(Error::Config("Sequential: no children".into()));
        }
        let mut value = input.clone();
        for child in &mut self.children {
            value = child.forward(store, &value)?;
        }
        self.io.input = Some(input.clone());
        self.io.output = Some(value.clone());
        Ok(value)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        self.backward_chain(store, input, grad_output, None)
    }

    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let input = self
            .io
            .input
            .clone()
            .ok_or_else(|| Error::Protocol("Sequential: bptt step before forward".into()))?;
        self.backward_chain(store, &input, grad_output, Some(t))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.children.iter().for_each(|c| c.collect_params(out));
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Sequential {
            children: self.children.iter().map(|c| c.step_clone()).collect(),
            io: IoCache::default(),
        })
    }

    fn contains_recurrent(&self) -> bool {
        self.children.iter().any(|c| c.contains_recurrent())
    }

    fn set_training(&mut self, training: bool) {
        self.children
            .iter_mut()
            .for_each(|c| c.set_training(training));
    }

    fn forget(&mut self, store: &mut Store) {
        self.children.iter_mut().for_each(|c| c.forget(store));
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.children.iter_mut().for_each(|c| c.reinforce(reward));
    }

    fn as_recurrent(&mut self) -> Option<&mut dyn RecurrentModule> {
        None
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "sequential".into(),
            config: vec![],
            children: self.children.iter().map(|c| c.ser_node()).collect(),
        }
    }
}

/// Applies child `i` to table entry `i`.
pub struct ParallelTable {
    children: Vec<Box<dyn Module>>,
    io: IoCache,
}

impl Default for ParallelTable {
    fn default() -> Self {
        Self::new()
    }
}

impl ParallelTable {
    pub fn new() -> ParallelTable {
        ParallelTable {
            children: Vec::new(),
            io: IoCache::default(),
        }
    }

    pub fn add(mut self, child: Box<dyn Module>) -> ParallelTable {
        self.children.push(child);
        self
    }

    fn check_arity(&self, input: &Value) -> Result<usize> {
        let entries = input.as_table()?;
        if entries.len() != self.children.len() {
            return Err(Error::Shape(format!(
                "ParallelTable: {} children but input table has {} entries",
                self.children.len(),
                entries.len()
            )));
        }
        Ok(entries.len())
    }
}

impl Module for ParallelTable {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let n = self.check_arity(input)?;
        let entries = input.as_table()?;
        let mut outs = Vec::with_capacity(n);
        for (child, entry) in self.children.iter_mut().zip(entries) {
            outs.push(child.forward(store, entry)?);
        }
        self.io.input = Some(input.clone());
        let out = Value::table(outs);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        self.check_arity(input)?;
        let entries = input.as_table()?;
        let grads = grad_output.as_table()?;
        if grads.len() != self.children.len() {
            return Err(Error::Shape(
                "ParallelTable: gradOutput arity does not match children".into(),
            ));
        }
        let mut gins = Vec::with_capacity(entries.len());
        for ((child, entry), g) in self.children.iter_mut().zip(entries).zip(grads) {
            gins.push(child.backward(store, entry, g)?);
        }
        Ok(Value::table(gins))
    }

    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let grads = grad_output.as_table()?;
        if grads.len() != self.children.len() {
            return Err(Error::Shape(
                "ParallelTable: gradOutput arity does not match children".into(),
            ));
        }
        let mut gins = Vec::with_capacity(grads.len());
        for (child, g) in self.children.iter_mut().zip(grads) {
            gins.push(child.bptt_step(store, t, g)?);
        }
        Ok(Value::table(gins))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.children.iter().for_each(|c| c.collect_params(out));
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(ParallelTable {
            children: self.children.iter().map(|c| c.step_clone()).collect(),
            io: IoCache::default(),
        })
    }

    fn contains_recurrent(&self) -> bool {
        self.children.iter().any(|c| c.contains_recurrent())
    }

    fn set_training(&mut self, training: bool) {
        self.children
            .iter_mut()
            .for_each(|c| c.set_training(training));
    }

    fn forget(&mut self, store: &mut Store) {
        self.children.iter_mut().for_each(|c| c.forget(store));
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.children.iter_mut().for_each(|c| c.reinforce(reward));
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "parallel_table".into(),
            config: vec![],
            children: self.children.iter().map(|c| c.ser_node()).collect(),
        }
    }
}

/// Applies every child to the same input, producing a table of outputs.
pub struct ConcatTable {
    children: Vec<Box<dyn Module>>,
    io: IoCache,
}

impl Default for ConcatTable {
    fn default() -> Self {
        Self::new()
    }
}

impl ConcatTable {
    pub fn new() -> ConcatTable {
        ConcatTable {
            children: Vec::new(),
            io: IoCache::default(),
        }
    }

    pub fn add(mut self, child: Box<dyn Module>) -> ConcatTable {
        self.children.push(child);
        self
    }
}

impl Module for ConcatTable {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        if self.children.is_empty() {
            return Err(Error::Config("ConcatTable: no children".into()));
        }
        let mut outs = Vec::with_capacity(self.children.len());
        for child in &mut self.children {
            outs.push(child.forward(store, input)?);
        }
        self.io.input = Some(input.clone());
        let out = Value::table(outs);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        let grads = grad_output.as_table()?;
        if grads.len() != self.children.len() {
            return Err(Error::Shape(
                "ConcatTable: gradOutput arity does not match children".into(),
            ));
        }
        let mut total: Option<Value> = None;
        for (child, g) in self.children.iter_mut().zip(grads) {
            let gin = child.backward(store, input, g)?;
            total = Some(match total {
                Some(acc) => acc.add(&gin)?,
                None => gin,
            });
        }
        Ok(total.unwrap())
    }

    fn bptt_step(&mut self, store: &mut Store, t: usize, grad_output: &Value) -> Result<Value> {
        let grads = grad_output.as_table()?;
        if grads.len() != self.children.len() {
            return Err(Error::Shape(
                "ConcatTable: gradOutput arity does not match children".into(),
            ));
        }
        let mut total: Option<Value> = None;
        for (child, g) in self.children.iter_mut().zip(grads) {
            let gin = child.bptt_step(store, t, g)?;
            total = Some(match total {
                Some(acc) => acc.add(&gin)?,
                None => gin,
            });
        }
        Ok(total.unwrap())
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.children.iter().for_each(|c| c.collect_params(out));
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(ConcatTable {
            children: self.children.iter().map(|c| c.step_clone()).collect(),
            io: IoCache::default(),
        })
    }

    fn contains_recurrent(&self) -> bool {
        self.children.iter().any(|c| c.contains_recurrent())
    }

    fn set_training(&mut self, training: bool) {
        self.children
            .iter_mut()
            .for_each(|c| c.set_training(training));
    }

    fn forget(&mut self, store: &mut Store) {
        self.children.iter_mut().for_each(|c| c.forget(store));
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.children.iter_mut().for_each(|c| c.reinforce(reward));
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "concat_table".into(),
            config: vec![],
            children: self.children.iter().map(|c| c.ser_node()).collect(),
        }
    }
}

fn table_of_tensors<'a>(input: &'a Value, who: &str) -> Result<Vec<&'a Tensor>> {
    let entries = input.as_table()?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(
            e.as_tensor()
                .map_err(|_| Error::Type(format!("{who}: expected a table of tensors")))?,
        );
    }
    Ok(out)
}

/// Sums the tensors of a table elementwise.
#[derive(Default)]
pub struct CAddTable {
    io: IoCache,
}

impl CAddTable {
    pub fn new() -> CAddTable {
        CAddTable::default()
    }
}

impl Module for CAddTable {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        let ts = table_of_tensors(input, "CAddTable")?;
        let mut sum = ts[0].clone();
        for t in &ts[1..] {
            sum = sum.add(t)?;
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(sum);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        let n = input.as_table()?.len();
        let g = grad_output.clone();
        Ok(Value::table(vec![g; n]))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(CAddTable::new())
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("cadd_table", vec![])
    }
}

/// Multiplies the tensors of a table elementwise.
#[derive(Default)]
pub struct CMulTable {
    io: IoCache,
}

impl CMulTable {
    pub fn new() -> CMulTable {
        CMulTable::default()
    }
}

impl Module for CMulTable {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        let ts = table_of_tensors(input, "CMulTable")?;
        let mut prod = ts[0].clone();
        for t in &ts[1..] {
            prod = prod.hadamard(t)?;
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(prod);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        let ts = table_of_tensors(input, "CMulTable")?;
        let g = grad_output.as_tensor()?;
        let mut gins = Vec::with_capacity(ts.len());
        for i in 0..ts.len() {
            let mut gi = g.clone();
            for (j, t) in ts.iter().enumerate() {
                if j != i {
                    gi = gi.hadamard(t)?;
                }
            }
            gins.push(Value::Tensor(gi));
        }
        Ok(Value::table(gins))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(CMulTable::new())
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("cmul_table", vec![])
    }
}

/// Picks one entry of a table; 1-based, negative indices count from the end.
pub struct SelectTable {
    index: i64,
    io: IoCache,
}

impl SelectTable {
    pub fn new(index: i64) -> SelectTable {
        SelectTable {
            index,
            io: IoCache::default(),
        }
    }

    fn resolve(&self, len: usize) -> Result<usize> {
        let idx = if self.index < 0 {
            len as i64 + self.index
        } else {
            self.index - 1
        };
        if idx < 0 || idx >= len as i64 {
            return Err(Error::Index(format!(
                "SelectTable: index {} out of range for table of {len}",
                self.index
            )));
        }
        Ok(idx as usize)
    }
}

impl Module for SelectTable {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        let entries = input.as_table()?;
        let idx = self.resolve(entries.len())?;
        let out = entries[idx].clone();
        self.io.input = Some(input.clone());
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        let entries = input.as_table()?;
        let idx = self.resolve(entries.len())?;
        // Zero gradient everywhere except the selected slot.
        let mut gins: Vec<Value> = entries.iter().map(Value::zeros_like).collect();
        gins[idx] = grad_output.clone();
        Ok(Value::table(gins))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(SelectTable::new(self.index))
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("select_table", vec![self.index])
    }
}
