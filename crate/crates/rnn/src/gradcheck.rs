//! Central finite-difference verification of analytic gradients.
//!
//! The loss is a fixed random linear scalarization of the module output, so
//! every output element contributes. Both parameter and input gradients are
//! compared elementwise against `(f(x+eps) - f(x-eps)) / (2 eps)`.

use crate::error::{Error, Result};
use crate::module::{unique_params, zero_grad_parameters, Module};
use crate::rng::Rng;
use crate::store::Store;
use crate::tensor::Tensor;
use crate::value::Value;

/// Which parts of the input to difference: everything, nothing, or selected
/// top-level table slots (e.g. to skip non-differentiable index inputs).
#[derive(Clone, Debug)]
pub enum InputCheck {
    All,
    None,
    Slots(Vec<bool>),
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64, what: impl Fn() -> String) {
        let err = rel_err(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = format!("{} analytic {analytic:.3e} numeric {numeric:.3e}", what());
        }
    }
}

/// Relative error with an absolute floor, so true-zero gradients are not
/// penalized for finite-difference noise.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn randn_like(v: &Value, rng: &mut Rng) -> Value {
    match v {
        Value::Tensor(t) => Value::Tensor(Tensor::randn(t.shape().to_vec(), rng)),
        Value::Table(entries) => Value::Table(entries.iter().map(|e| randn_like(e, rng)).collect()),
    }
}

fn dot_value(a: &Value, b: &Value) -> f64 {
    let mut total = 0.0;
    match (a, b) {
        (Value::Tensor(x), Value::Tensor(y)) => {
            total += x.dot(y).expect("scalarization shapes match");
        }
        (Value::Table(xs), Value::Table(ys)) => {
            for (x, y) in xs.iter().zip(ys) {
                total += dot_value(x, y);
            }
        }
        _ => panic!("scalarization structure mismatch"),
    }
    total
}

fn leaf_tensors(v: &Value) -> Vec<&Tensor> {
    match v {
        Value::Tensor(t) => vec![t],
        Value::Table(entries) => entries.iter().flat_map(leaf_tensors).collect(),
    }
}

fn leaf_mut(v: &mut Value, leaf: usize) -> &mut Tensor {
    fn walk<'a>(v: &'a mut Value, target: usize, seen: &mut usize) -> Option<&'a mut Tensor> {
        match v {
            Value::Tensor(t) => {
                if *seen == target {
                    return Some(t);
                }
                *seen += 1;
                None
            }
            Value::Table(entries) => {
                for e in entries {
                    if let Some(t) = walk(e, target, seen) {
                        return Some(t);
                    }
                }
                None
            }
        }
    }
    walk(v, leaf, &mut 0).expect("leaf index in range")
}

/// Top-level slot index of each leaf (0 for a bare tensor input).
fn leaf_slots(v: &Value) -> Vec<usize> {
    match v {
        Value::Tensor(_) => vec![0],
        Value::Table(entries) => {
            let mut out = Vec::new();
            for (i, e) in entries.iter().enumerate() {
                out.extend(std::iter::repeat_n(i, leaf_tensors(e).len()));
            }
            out
        }
    }
}

fn slot_enabled(check: &InputCheck, slot: usize) -> bool {
    match check {
        InputCheck::All => true,
        InputCheck::None => false,
        InputCheck::Slots(mask) => mask.get(slot).copied().unwrap_or(false),
    }
}

/// Checks a module driven by a single forward/backward pair (non-recurrent
/// modules, and whole-sequence decorators like `Sequencer` and `Repeater`).
pub fn check_module(
    store: &mut Store,
    module: &mut dyn Module,
    input: &Value,
    eps: f64,
    input_check: InputCheck,
    rng: &mut Rng,
) -> Result<GradReport> {
    module.forget(store);
    let probe = module.forward(store, input)?;
    let w = randn_like(&probe, rng);

    // Analytic pass.
    module.forget(store);
    zero_grad_parameters(module, store);
    module.forward(store, input)?;
    let grad_input = module.backward(store, input, &w)?;
    let ids = unique_params(module);
    let analytic_params: Vec<Tensor> = ids.iter().map(|&id| store.grad(id).clone()).collect();

    let mut report = GradReport::default();
    let loss = |store: &mut Store, module: &mut dyn Module, input: &Value| -> Result<f64> {
        module.forget(store);
        let out = module.forward(store, input)?;
        Ok(dot_value(&out, &w))
    };

    // Parameters.
    for (pi, &id) in ids.iter().enumerate() {
        for j in 0..store.param(id).len() {
            let orig = store.param(id).data()[j];
            store.param_mut(id).data_mut()[j] = orig + eps;
            let lp = loss(store, module, input)?;
            store.param_mut(id).data_mut()[j] = orig - eps;
            let lm = loss(store, module, input)?;
            store.param_mut(id).data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            report.record(analytic_params[pi].data()[j], numeric, || {
                format!("param {pi} elem {j}")
            });
        }
    }

    // Input.
    let slots = leaf_slots(input);
    let analytic_leaves: Vec<Tensor> = leaf_tensors(&grad_input).into_iter().cloned().collect();
    let n_leaves = leaf_tensors(input).len();
    if analytic_leaves.len() != n_leaves && !matches!(input_check, InputCheck::None) {
        return Err(Error::Shape(
            "gradcheck: gradInput structure does not match input".into(),
        ));
    }
    for leaf in 0..n_leaves {
        if !slot_enabled(&input_check, slots[leaf]) {
            continue;
        }
        let mut perturbed = input.clone();
        for j in 0..leaf_tensors(input)[leaf].len() {
            let orig = leaf_tensors(input)[leaf].data()[j];
            leaf_mut(&mut perturbed, leaf).data_mut()[j] = orig + eps;
            let lp = loss(store, module, &perturbed)?;
            leaf_mut(&mut perturbed, leaf).data_mut()[j] = orig - eps;
            let lm = loss(store, module, &perturbed)?;
            leaf_mut(&mut perturbed, leaf).data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            report.record(analytic_leaves[leaf].data()[j], numeric, || {
                format!("input leaf {leaf} elem {j}")
            });
        }
    }
    Ok(report)
}

/// Checks a recurrent module driven stepwise over `inputs`, with the
/// legacy record-then-`backwardThroughTime` protocol.
pub fn check_recurrent(
    store: &mut Store,
    module: &mut dyn Module,
    inputs: &[Value],
    eps: f64,
    input_check: InputCheck,
    rng: &mut Rng,
) -> Result<GradReport> {
    if module.as_recurrent().is_none() {
        return Err(Error::Type("check_recurrent: module is not recurrent".into()));
    }
    module.forget(store);
    let mut ws = Vec::with_capacity(inputs.len());
    for x in inputs {
        let y = module.forward(store, x)?;
        ws.push(randn_like(&y, rng));
    }

    // Analytic pass: forward everything, record gradOutputs in reverse, BPTT.
    module.forget(store);
    zero_grad_parameters(module, store);
    for x in inputs {
        module.forward(store, x)?;
    }
    for (x, w) in inputs.iter().zip(&ws).rev() {
        module.backward(store, x, w)?;
    }
    module
        .as_recurrent()
        .unwrap()
        .backward_through_time(store)?;
    let grad_inputs: Vec<Value> = {
        let rec = module.as_recurrent().unwrap();
        (1..=inputs.len())
            .map(|t| {
                rec.grad_inputs()
                    .get(&t)
                    .cloned()
                    .unwrap_or_else(|| inputs[t - 1].zeros_like())
            })
            .collect()
    };
    let ids = unique_params(module);
    let analytic_params: Vec<Tensor> = ids.iter().map(|&id| store.grad(id).clone()).collect();

    let mut report = GradReport::default();
    let loss = |store: &mut Store, module: &mut dyn Module, inputs: &[Value]| -> Result<f64> {
        module.forget(store);
        let mut total = 0.0;
        for (x, w) in inputs.iter().zip(&ws) {
            let y = module.forward(store, x)?;
            total += dot_value(&y, w);
        }
        Ok(total)
    };

    for (pi, &id) in ids.iter().enumerate() {
        for j in 0..store.param(id).len() {
            let orig = store.param(id).data()[j];
            store.param_mut(id).data_mut()[j] = orig + eps;
            let lp = loss(store, module, inputs)?;
            store.param_mut(id).data_mut()[j] = orig - eps;
            let lm = loss(store, module, inputs)?;
            store.param_mut(id).data_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            report.record(analytic_params[pi].data()[j], numeric, || {
                format!("param {pi} elem {j}")
            });
        }
    }

    let mut perturbed: Vec<Value> = inputs.to_vec();
    for (step, x) in inputs.iter().enumerate() {
        let slots = leaf_slots(x);
        let analytic_leaves: Vec<Tensor> =
            leaf_tensors(&grad_inputs[step]).into_iter().cloned().collect();
        for leaf in 0..leaf_tensors(x).len() {
            if !slot_enabled(&input_check, slots[leaf]) {
                continue;
            }
            for j in 0..leaf_tensors(x)[leaf].len() {
                let orig = leaf_tensors(x)[leaf].data()[j];
                leaf_mut(&mut perturbed[step], leaf).data_mut()[j] = orig + eps;
                let lp = loss(store, module, &perturbed)?;
                leaf_mut(&mut perturbed[step], leaf).data_mut()[j] = orig - eps;
                let lm = loss(store, module, &perturbed)?;
                leaf_mut(&mut perturbed[step], leaf).data_mut()[j] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                report.record(analytic_leaves[leaf].data()[j], numeric, || {
                    format!("step {} input leaf {leaf} elem {j}", step + 1)
                });
            }
        }
    }
    Ok(report)
}

/// Central finite differences of a scalar function, for criterion tests.
pub fn numeric_grad_value(
    input: &Value,
    eps: f64,
    mut f: impl FnMut(&Value) -> Result<f64>,
) -> Result<Value> {
    let mut grad = input.zeros_like();
    let mut probe = input.clone();
    let n_leaves = leaf_tensors(input).len();
    for leaf in 0..n_leaves {
        for j in 0..leaf_tensors(input)[leaf].len() {
            let orig = leaf_tensors(input)[leaf].data()[j];
            leaf_mut(&mut probe, leaf).data_mut()[j] = orig + eps;
            let lp = f(&probe)?;
            leaf_mut(&mut probe, leaf).data_mut()[j] = orig - eps;
            let lm = f(&probe)?;
            leaf_mut(&mut probe, leaf).data_mut()[j] = orig;
            leaf_mut(&mut grad, leaf).data_mut()[j] = (lp - lm) / (2.0 * eps);
        }
    }
    Ok(grad)
}
