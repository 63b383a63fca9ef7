//! Feed-forward building blocks: linear maps, lookup embeddings, pointwise
//! nonlinearities and the small parameterized helpers the recurrent cells
//! are assembled from.

use crate::error::{Error, Result};
use crate::module::{IoCache, Module, SerNode};
use crate::store::{ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

fn require_matrix<'a>(v: &'a Value, who: &str) -> Result<&'a Tensor> {
    let t = v
        .as_tensor()
        .map_err(|_| Error::Type(format!("{who}: expected a tensor input")))?;
    if t.ndim() != 2 {
        return Err(Error::Shape(format!(
            "{who}: expected a batch x features tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t)
}

fn check_forwarded(io: &IoCache, who: &str) -> Result<()> {
    if io.output.is_none() {
        return Err(Error::Protocol(format!("{who}: backward before forward")));
    }
    Ok(())
}

/// Affine map `y = x W + b` with `W: [in, out]`.
///
/// Weights and bias are initialized uniform in `[-1/sqrt(in), 1/sqrt(in)]`.
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    in_size: usize,
    out_size: usize,
    io: IoCache,
}

impl Linear {
    pub fn new(store: &mut Store, in_size: usize, out_size: usize) -> Result<Linear> {
        Self::with_bias(store, in_size, out_size, true)
    }

    pub fn with_bias(
        store: &mut Store,
        in_size: usize,
        out_size: usize,
        bias: bool,
    ) -> Result<Linear> {
        if in_size == 0 || out_size == 0 {
            return Err(Error::Config(format!(
                "Linear: sizes must be positive, got {in_size}x{out_size}"
            )));
        }
        let bound = 1.0 / (in_size as f64).sqrt();
        let w = Tensor::rand_uniform(vec![in_size, out_size], -bound, bound, &mut store.rng);
        let b = bias.then(|| Tensor::rand_uniform(vec![out_size], -bound, bound, &mut store.rng));
        Ok(Linear {
            weight: store.add_param(w),
            bias: b.map(|t| store.add_param(t)),
            in_size,
            out_size,
            io: IoCache::default(),
        })
    }

    fn from_parts(weight: ParamId, bias: Option<ParamId>, in_size: usize, out_size: usize) -> Linear {
        Linear {
            weight,
            bias,
            in_size,
            out_size,
            io: IoCache::default(),
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.bias
    }
}

impl Module for Linear {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let x = require_matrix(input, "Linear")?;
        if x.shape()[1] != self.in_size {
            return Err(Error::Shape(format!(
                "Linear: input has {} features, expected {}",
                x.shape()[1],
                self.in_size
            )));
        }
        let mut y = x.matmul(store.param(self.weight))?;
        if let Some(b) = self.bias {
            let bias = store.param(b);
            for r in 0..y.rows() {
                for c in 0..self.out_size {
                    let v = y.at2(r, c) + bias.data()[c];
                    y.set2(r, c, v);
                }
            }
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(y);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "Linear")?;
        let x = require_matrix(input, "Linear")?;
        let g = require_matrix(grad_output, "Linear")?;
        // dW += x^T g ; db += column sums of g ; dx = g W^T
        let gw = x.transpose()?.matmul(g)?;
        store.grad_mut(self.weight).add_scaled(&gw, 1.0)?;
        if let Some(b) = self.bias {
            let gb = store.grad_mut(b);
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    gb.data_mut()[c] += g.at2(r, c);
                }
            }
        }
        let gx = g.matmul(&store.param(self.weight).transpose()?)?;
        Ok(Value::Tensor(gx))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        out.push(self.weight);
        if let Some(b) = self.bias {
            out.push(b);
        }
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Linear::from_parts(
            self.weight,
            self.bias,
            self.in_size,
            self.out_size,
        ))
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf(
            "linear",
            vec![
                self.in_size as i64,
                self.out_size as i64,
                self.bias.is_some() as i64,
            ],
        )
    }
}

macro_rules! pointwise_module {
    ($name:ident, $tag:literal, $fwd:expr, $bwd:expr) => {
        /// Pointwise nonlinearity applied to a tensor.
        #[derive(Default)]
        pub struct $name {
            io: IoCache,
        }

        impl $name {
            pub fn new() -> $name {
                $name::default()
            }
        }

        impl Module for $name {
            fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
                let x = input.as_tensor()?;
                let fwd: fn(&Tensor) -> Tensor = $fwd;
                let out = Value::Tensor(fwd(x));
                self.io.input = Some(input.clone());
                self.io.output = Some(out.clone());
                Ok(out)
            }

            fn backward(
                &mut self,
                _store: &mut Store,
                _input: &Value,
                grad_output: &Value,
            ) -> Result<Value> {
                check_forwarded(&self.io, stringify!($name))?;
                let out = self.io.output.as_ref().unwrap().as_tensor()?;
                let g = grad_output.as_tensor()?;
                if g.shape() != out.shape() {
                    return Err(Error::Shape(format!(
                        "{}: gradOutput shape {:?} does not match output {:?}",
                        stringify!($name),
                        g.shape(),
                        out.shape()
                    )));
                }
                let bwd: fn(&Tensor, &Tensor) -> Tensor = $bwd;
                Ok(Value::Tensor(bwd(out, g)))
            }

            fn io(&self) -> &IoCache {
                &self.io
            }

            fn io_mut(&mut self) -> &mut IoCache {
                &mut self.io
            }

            fn collect_params(&self, _out: &mut Vec<ParamId>) {}

            fn step_clone(&self) -> Box<dyn Module> {
                Box::new($name::new())
            }

            fn ser_node(&self) -> SerNode {
                SerNode::leaf($tag, vec![])
            }
        }
    };
}

pointwise_module!(Sigmoid, "sigmoid", |x| x.map_sigmoid(), |out, g| {
    let mut gx = g.clone();
    for (gv, &o) in gx.data_mut().iter_mut().zip(out.data()) {
        *gv *= o * (1.0 - o);
    }
    gx
});

pointwise_module!(Tanh, "tanh", |x| x.map_tanh(), |out, g| {
    let mut gx = g.clone();
    for (gv, &o) in gx.data_mut().iter_mut().zip(out.data()) {
        *gv *= 1.0 - o * o;
    }
    gx
});

/// Row-wise log-softmax with max subtraction for stability.
#[derive(Default)]
pub struct LogSoftMax {
    io: IoCache,
}

impl LogSoftMax {
    pub fn new() -> LogSoftMax {
        LogSoftMax::default()
    }
}

impl Module for LogSoftMax {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        let x = require_matrix(input, "LogSoftMax")?;
        let mut out = x.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(out);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, _input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "LogSoftMax")?;
        let out = self.io.output.as_ref().unwrap().as_tensor()?;
        let g = grad_output.as_tensor()?;
        let mut gx = g.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let gsum: f64 = g.row(r).iter().sum();
            let grow = &mut gx.data_mut()[r * cols..(r + 1) * cols];
            for (gv, &o) in grow.iter_mut().zip(out.row(r)) {
                *gv -= o.exp() * gsum;
            }
        }
        Ok(Value::Tensor(gx))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(LogSoftMax::new())
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("log_softmax", vec![])
    }
}

/// Embedding table: maps a batch of 1-based indices to weight rows.
pub struct LookupTable {
    weight: ParamId,
    n_index: usize,
    size: usize,
    io: IoCache,
}

impl LookupTable {
    pub fn new(store: &mut Store, n_index: usize, size: usize) -> Result<LookupTable> {
        if n_index == 0 || size == 0 {
            return Err(Error::Config(format!(
                "LookupTable: sizes must be positive, got {n_index}x{size}"
            )));
        }
        let bound = 1.0 / (size as f64).sqrt();
        let w = Tensor::rand_uniform(vec![n_index, size], -bound, bound, &mut store.rng);
        Ok(LookupTable {
            weight: store.add_param(w),
            n_index,
            size,
            io: IoCache::default(),
        })
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    fn row_of(&self, raw: f64) -> Result<usize> {
        let idx = raw as i64;
        if idx < 1 || idx > self.n_index as i64 {
            return Err(Error::Index(format!(
                "LookupTable: index {idx} out of range 1..={}",
                self.n_index
            )));
        }
        Ok((idx - 1) as usize)
    }
}

impl Module for LookupTable {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let idx = input.as_tensor()?;
        if idx.ndim() != 1 {
            return Err(Error::Shape(format!(
                "LookupTable: expected a [batch] index tensor, got {:?}",
                idx.shape()
            )));
        }
        let batch = idx.len();
        let mut out = Tensor::zeros(vec![batch, self.size]);
        for (r, &raw) in idx.data().iter().enumerate() {
            let row = self.row_of(raw)?;
            let src = store.param(self.weight).row(row).to_vec();
            out.data_mut()[r * self.size..(r + 1) * self.size].copy_from_slice(&src);
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(out);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "LookupTable")?;
        let idx = input.as_tensor()?;
        let g = require_matrix(grad_output, "LookupTable")?;
        // Scatter-add each gradOutput row into the weight gradient.
        for (r, &raw) in idx.data().iter().enumerate() {
            let row = self.row_of(raw)?;
            let grad = store.grad_mut(self.weight);
            for c in 0..self.size {
                let v = grad.at2(row, c) + g.at2(r, c);
                grad.set2(row, c, v);
            }
        }
        // Indices carry no gradient.
        Ok(Value::Tensor(Tensor::zeros(idx.shape().to_vec())))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        out.push(self.weight);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(LookupTable {
            weight: self.weight,
            n_index: self.n_index,
            size: self.size,
            io: IoCache::default(),
        })
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("lookup_table", vec![self.n_index as i64, self.size as i64])
    }
}

/// Learned componentwise scale `y = x * w`, broadcast over rows. Serves as the
/// diagonal (peephole) connection of the LSTM cell.
pub struct CMul {
    weight: ParamId,
    size: usize,
    io: IoCache,
}

impl CMul {
    pub fn new(store: &mut Store, size: usize) -> Result<CMul> {
        if size == 0 {
            return Err(Error::Config("CMul: size must be positive".into()));
        }
        let bound = 1.0 / (size as f64).sqrt();
        let w = Tensor::rand_uniform(vec![size], -bound, bound, &mut store.rng);
        Ok(CMul {
            weight: store.add_param(w),
            size,
            io: IoCache::default(),
        })
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }
}

impl Module for CMul {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let x = require_matrix(input, "CMul")?;
        if x.cols() != self.size {
            return Err(Error::Shape(format!(
                "CMul: input has {} features, expected {}",
                x.cols(),
                self.size
            )));
        }
        let w = store.param(self.weight);
        let mut y = x.clone();
        for r in 0..y.rows() {
            for c in 0..self.size {
                let v = y.at2(r, c) * w.data()[c];
                y.set2(r, c, v);
            }
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(y);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "CMul")?;
        let x = require_matrix(input, "CMul")?;
        let g = require_matrix(grad_output, "CMul")?;
        {
            let gw = store.grad_mut(self.weight);
            for r in 0..x.rows() {
                for c in 0..self.size {
                    gw.data_mut()[c] += g.at2(r, c) * x.at2(r, c);
                }
            }
        }
        let w = store.param(self.weight);
        let mut gx = g.clone();
        for r in 0..gx.rows() {
            for c in 0..self.size {
                let v = gx.at2(r, c) * w.data()[c];
                gx.set2(r, c, v);
            }
        }
        Ok(Value::Tensor(gx))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        out.push(self.weight);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(CMul {
            weight: self.weight,
            size: self.size,
            io: IoCache::default(),
        })
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("cmul", vec![self.size as i64])
    }
}

/// Learned bias add `y = x + b`, broadcast over rows, initialized to zero.
/// Used as the learned initial feedback of the `Recurrent` module.
pub struct Add {
    bias: ParamId,
    size: usize,
    io: IoCache,
}

impl Add {
    pub fn new(store: &mut Store, size: usize) -> Result<Add> {
        if size == 0 {
            return Err(Error::Config("Add: size must be positive".into()));
        }
        let b = Tensor::zeros(vec![size]);
        Ok(Add {
            bias: store.add_param(b),
            size,
            io: IoCache::default(),
        })
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }
}

impl Module for Add {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let x = require_matrix(input, "Add")?;
        if x.cols() != self.size {
            return Err(Error::Shape(format!(
                "Add: input has {} features, expected {}",
                x.cols(),
                self.size
            )));
        }
        let b = store.param(self.bias);
        let mut y = x.clone();
        for r in 0..y.rows() {
            for c in 0..self.size {
                let v = y.at2(r, c) + b.data()[c];
                y.set2(r, c, v);
            }
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(y);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, _input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "Add")?;
        let g = require_matrix(grad_output, "Add")?;
        let gb = store.grad_mut(self.bias);
        for r in 0..g.rows() {
            for c in 0..self.size {
                gb.data_mut()[c] += g.at2(r, c);
            }
        }
        Ok(Value::Tensor(g.clone()))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        out.push(self.bias);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Add {
            bias: self.bias,
            size: self.size,
            io: IoCache::default(),
        })
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("add", vec![self.size as i64])
    }
}

/// Flattens `[batch, d1, d2, ...]` to `[batch, d1*d2*...]`.
#[derive(Default)]
pub struct Convert {
    io: IoCache,
}

impl Convert {
    pub fn new() -> Convert {
        Convert::default()
    }
}

impl Module for Convert {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        let x = input.as_tensor()?;
        if x.ndim() < 2 {
            return Err(Error::Shape(format!(
                "Convert: expected at least 2 dimensions, got {:?}",
                x.shape()
            )));
        }
        let out = x.reshape(vec![x.rows(), x.cols()])?;
        self.io.input = Some(input.clone());
        let out = Value::Tensor(out);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "Convert")?;
        let x = input.as_tensor()?;
        let g = grad_output.as_tensor()?;
        Ok(Value::Tensor(g.reshape(x.shape().to_vec())?))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Convert::new())
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("convert", vec![])
    }
}

/// Passes its input through unchanged (tensor or table).
#[derive(Default)]
pub struct Identity {
    io: IoCache,
}

impl Identity {
    pub fn new() -> Identity {
        Identity::default()
    }
}

impl Module for Identity {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        self.io.input = Some(input.clone());
        self.io.output = Some(input.clone());
        Ok(input.clone())
    }

    fn backward(&mut self, _store: &mut Store, _input: &Value, grad_output: &Value) -> Result<Value> {
        check_forwarded(&self.io, "Identity")?;
        Ok(grad_output.clone())
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(Identity::new())
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("identity", vec![])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::containers::Sequential;
    use crate::module::{unique_params, update_parameters, zero_grad_parameters};
    use proptest::{prop_assert, proptest};

    fn store() -> Store {
        Store::new(7)
    }

    /// Overwrites a Linear's weight (given row-major rows) and bias.
    fn set_linear(store: &mut Store, lin: &Linear, rows: &[Vec<f64>], bias: &[f64]) {
        store
            .set_param(lin.weight_id(), Tensor::from_rows(rows))
            .unwrap();
        if let Some(b) = lin.bias_id() {
            store.set_param(b, Tensor::vec1(bias)).unwrap();
        }
    }

    #[test]
    fn identity_linear_then_tanh_is_tanh() {
        let mut s = store();
        let lin = Linear::new(&mut s, 2, 2).unwrap();
        set_linear(&mut s, &lin, &[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]);
        let mut net = Sequential::new()
            .add(Box::new(lin))
            .add(Box::new(Tanh::new()));
        let x = Value::Tensor(Tensor::row_vec(&[0.3, -1.2]));
        let y = net.forward(&mut s, &x).unwrap();
        let want = Tensor::row_vec(&[0.3f64.tanh(), (-1.2f64).tanh()]);
        assert!(y.as_tensor().unwrap().max_abs_diff(&want) < 1e-15);
        // Pure modules: same input, same output.
        let y2 = net.forward(&mut s, &x).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn log_softmax_uniform_row() {
        let mut s = store();
        let mut lsm = LogSoftMax::new();
        let y = lsm
            .forward(&mut s, &Value::Tensor(Tensor::row_vec(&[0.0, 0.0, 0.0])))
            .unwrap();
        let want = -(3.0f64).ln();
        for &v in y.as_tensor().unwrap().data() {
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_grad_at_zero_passes_grad_through() {
        let mut s = store();
        let mut t = Tanh::new();
        let x = Value::Tensor(Tensor::row_vec(&[0.0, 0.0]));
        t.forward(&mut s, &x).unwrap();
        let g = Value::Tensor(Tensor::row_vec(&[0.7, -0.2]));
        let gx = t.backward(&mut s, &x, &g).unwrap();
        assert_eq!(gx, g);
    }

    #[test]
    fn linear_grad_input_matches_transposed_weight() {
        // For y = x W + b, the input gradient of a single row is g W^T.
        let mut s = store();
        let mut lin = Linear::new(&mut s, 3, 2).unwrap();
        let w = s.param(lin.weight_id()).clone();
        let x = Value::Tensor(Tensor::randn(vec![1, 3], &mut s.rng.clone()));
        lin.forward(&mut s, &x).unwrap();
        let g = Tensor::row_vec(&[0.4, -1.1]);
        let gx = lin
            .backward(&mut s, &x, &Value::Tensor(g.clone()))
            .unwrap();
        let want = g.matmul(&w.transpose().unwrap()).unwrap();
        assert!(gx.as_tensor().unwrap().max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn backward_accumulates_param_grads() {
        let mut s = store();
        let mut lin = Linear::new(&mut s, 3, 2).unwrap();
        let x = Value::Tensor(Tensor::randn(vec![2, 3], &mut s.rng.clone()));
        let g = Value::Tensor(Tensor::randn(vec![2, 2], &mut s.rng.clone()));
        lin.forward(&mut s, &x).unwrap();
        lin.backward(&mut s, &x, &g).unwrap();
        let once = s.grad(lin.weight_id()).clone();
        lin.backward(&mut s, &x, &g).unwrap();
        let twice = s.grad(lin.weight_id()).clone();
        assert!(twice.max_abs_diff(&once.scale(2.0)) < 1e-14);
    }

    #[test]
    fn backward_before_forward_is_protocol_error() {
        let mut s = store();
        let mut lin = Linear::new(&mut s, 2, 2).unwrap();
        let x = Value::Tensor(Tensor::zeros(vec![1, 2]));
        let err = lin.backward(&mut s, &x, &x.clone()).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn lookup_table_selects_rows_and_scatters_grads() {
        let mut s = store();
        let mut lt = LookupTable::new(&mut s, 4, 3).unwrap();
        let w = s.param(lt.weight_id()).clone();
        let idx = Value::Tensor(Tensor::vec1(&[2.0, 4.0]));
        let y = lt.forward(&mut s, &idx).unwrap();
        let y = y.as_tensor().unwrap();
        assert_eq!(y.row(0), w.row(1));
        assert_eq!(y.row(1), w.row(3));

        let g = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let gin = lt.backward(&mut s, &idx, &Value::Tensor(g)).unwrap();
        assert_eq!(gin.as_tensor().unwrap().data(), &[0.0, 0.0]);
        let gw = s.grad(lt.weight_id());
        assert_eq!(gw.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(gw.row(3), &[4.0, 5.0, 6.0]);
        assert_eq!(gw.row(0), &[0.0, 0.0, 0.0]);

        let bad = Value::Tensor(Tensor::vec1(&[5.0]));
        assert!(matches!(lt.forward(&mut s, &bad), Err(Error::Index(_))));
    }

    #[test]
    fn update_applies_sgd_rule() {
        // p = 1, g = 2, lr = 0.1 -> p = 0.8; lr = 0 leaves parameters alone.
        let mut s = store();
        let lin = Linear::new(&mut s, 1, 1).unwrap();
        s.set_param(lin.weight_id(), Tensor::from_rows(&[vec![1.0]]))
            .unwrap();
        s.grad_mut(lin.weight_id()).data_mut()[0] = 2.0;
        update_parameters(&lin, &mut s, 0.0);
        assert_eq!(s.param(lin.weight_id()).data()[0], 1.0);
        update_parameters(&lin, &mut s, 0.1);
        assert!((s.param(lin.weight_id()).data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn shared_parameters_update_once_and_accumulate_together() {
        let mut s = store();
        let lin = Linear::new(&mut s, 2, 2).unwrap();
        let mut a: Box<dyn Module> = Box::new(lin);
        let mut b = a.step_clone();

        let mut ids = Vec::new();
        a.collect_params(&mut ids);
        b.collect_params(&mut ids);
        let unique = {
            let mut seen = std::collections::HashSet::new();
            ids.iter().filter(|id| seen.insert(**id)).count()
        };
        assert_eq!(unique, 2); // weight + bias, shared between both handles

        // Gradients from both handles accumulate into one buffer.
        let x = Value::Tensor(Tensor::randn(vec![1, 2], &mut s.rng.clone()));
        let g = Value::Tensor(Tensor::randn(vec![1, 2], &mut s.rng.clone()));
        a.forward(&mut s, &x).unwrap();
        a.backward(&mut s, &x, &g).unwrap();
        let after_a = s.grad(ids[0]).clone();
        b.forward(&mut s, &x).unwrap();
        b.backward(&mut s, &x, &g).unwrap();
        let after_b = s.grad(ids[0]).clone();
        assert!(after_b.max_abs_diff(&after_a.scale(2.0)) < 1e-14);

        // Updating through one handle changes what the other computes.
        let y_before = b.forward(&mut s, &x).unwrap();
        update_parameters(a.as_ref(), &mut s, 0.5);
        let y_after = b.forward(&mut s, &x).unwrap();
        assert!(y_before.max_abs_diff(&y_after) > 1e-9);
        zero_grad_parameters(a.as_ref(), &mut s);
        assert!(s.grad(ids[0]).data().iter().all(|&v| v == 0.0));
        assert_eq!(unique_params(a.as_ref()).len(), 2);
    }

    #[test]
    fn convert_flattens_to_batch_by_features() {
        let mut s = store();
        let mut c = Convert::new();
        let x = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let y = c.forward(&mut s, &Value::Tensor(x.clone())).unwrap();
        assert_eq!(y.as_tensor().unwrap().shape(), &[2, 4]);
        let g = Tensor::zeros(vec![2, 4]);
        let gx = c
            .backward(&mut s, &Value::Tensor(x), &Value::Tensor(g))
            .unwrap();
        assert_eq!(gx.as_tensor().unwrap().shape(), &[2, 2, 2]);
    }

    proptest! {
        #[test]
        fn log_softmax_rows_normalize(seed in 0u64..64) {
            let mut s = Store::new(seed);
            let x = Value::Tensor(Tensor::randn(vec![3, 5], &mut s.rng.clone()));
            let mut lsm = LogSoftMax::new();
            let y = lsm.forward(&mut s, &x).unwrap();
            let y = y.as_tensor().unwrap();
            for r in 0..3 {
                let total: f64 = y.row(r).iter().map(|v| v.exp()).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }
}
