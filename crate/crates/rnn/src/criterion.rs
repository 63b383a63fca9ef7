//! Cost functions and the reference single-example SGD epoch.

use crate::error::{Error, Result};
use crate::module::{update_parameters, zero_grad_parameters, Module};
use crate::store::Store;
use crate::tensor::Tensor;
use crate::value::Value;

/// Cost function to minimize: `forward` returns a scalar loss, `backward`
/// returns a gradient structurally equal to the input.
pub trait Criterion: Send {
    fn forward(&mut self, input: &Value, target: &Tensor) -> Result<f64>;
    fn backward(&mut self, input: &Value, target: &Tensor) -> Result<Value>;
}

/// Negative log-likelihood over row-wise log-probabilities.
///
/// `input` is `[batch, classes]` of log-probabilities, `target` a `[batch]`
/// tensor of 1-based class indices. The loss averages over the batch.
#[derive(Default)]
pub struct ClassNllCriterion;

impl ClassNllCriterion {
    pub fn new() -> ClassNllCriterion {
        ClassNllCriterion
    }

    fn check<'a>(input: &'a Value, target: &Tensor) -> Result<(&'a Tensor, Vec<usize>)> {
        let lp = input.as_tensor()?;
        if lp.ndim() != 2 {
            return Err(Error::Shape(format!(
                "ClassNLLCriterion: expected [batch, classes], got {:?}",
                lp.shape()
            )));
        }
        if target.len() != lp.rows() {
            return Err(Error::Shape(format!(
                "ClassNLLCriterion: {} targets for batch of {}",
                target.len(),
                lp.rows()
            )));
        }
        let classes = lp.cols();
        let mut idx = Vec::with_capacity(target.len());
        for &raw in target.data() {
            let t = raw as i64;
            if t < 1 || t > classes as i64 {
                return Err(Error::Index(format!(
                    "ClassNLLCriterion: target {t} out of range 1..={classes}"
                )));
            }
            idx.push((t - 1) as usize);
        }
        Ok((lp, idx))
    }
}

impl Criterion for ClassNllCriterion {
    fn forward(&mut self, input: &Value, target: &Tensor) -> Result<f64> {
        let (lp, idx) = Self::check(input, target)?;
        let batch = lp.rows();
        let loss = -idx
            .iter()
            .enumerate()
            .map(|(r, &c)| lp.at2(r, c))
            .sum::<f64>()
            / batch as f64;
        Ok(loss)
    }

    fn backward(&mut self, input: &Value, target: &Tensor) -> Result<Value> {
        let (lp, idx) = Self::check(input, target)?;
        let batch = lp.rows();
        let mut g = Tensor::zeros(vec![batch, lp.cols()]);
        for (r, &c) in idx.iter().enumerate() {
            g.set2(r, c, -1.0 / batch as f64);
        }
        Ok(Value::Tensor(g))
    }
}

/// One epoch of sampled single-example SGD: pick a random example, forward,
/// criterion forward/backward, zero gradients, backward, update. Returns the
/// mean loss over the sampled iterations.
pub fn train_epoch(
    module: &mut dyn Module,
    criterion: &mut dyn Criterion,
    store: &mut Store,
    inputs: &[Value],
    targets: &[Tensor],
    lr: f64,
) -> Result<f64> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Config(format!(
            "train_epoch: {} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let n = inputs.len();
    let mut total = 0.0;
    for _ in 0..n {
        let idx = store.rng.int_range(1, n as i64) as usize - 1;
        let (input, target) = (&inputs[idx], &targets[idx]);
        let output = module.forward(store, input)?;
        total += criterion.forward(&output, target)?;
        let grad_output = criterion.backward(&output, target)?;
        zero_grad_parameters(module, store);
        module.backward(store, input, &grad_output)?;
        update_parameters(module, store, lr);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::containers::Sequential;
    use crate::gradcheck::{numeric_grad_value, rel_err};
    use crate::layers::{Linear, LogSoftMax};
    use crate::module::unique_params;

    #[test]
    fn uniform_log_probs_cost_ln_c() {
        let mut crit = ClassNllCriterion::new();
        let c = 5usize;
        let lp = Tensor::new(vec![1, c], vec![-(c as f64).ln(); c]).unwrap();
        let loss = crit
            .forward(&Value::Tensor(lp), &Tensor::vec1(&[3.0]))
            .unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn certain_prediction_costs_zero() {
        let mut crit = ClassNllCriterion::new();
        let lp = Tensor::row_vec(&[0.0, -50.0, -50.0]); // log prob 1 on class 1
        let loss = crit
            .forward(&Value::Tensor(lp), &Tensor::vec1(&[1.0]))
            .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn target_out_of_range_is_index_error() {
        let mut crit = ClassNllCriterion::new();
        let lp = Value::Tensor(Tensor::zeros(vec![1, 3]));
        assert!(matches!(
            crit.forward(&lp, &Tensor::vec1(&[4.0])),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn nll_backward_matches_finite_differences() {
        let mut s = Store::new(11);
        let mut crit = ClassNllCriterion::new();
        let lp = Value::Tensor(Tensor::randn(vec![3, 4], &mut s.rng));
        let target = Tensor::vec1(&[2.0, 4.0, 1.0]);
        let analytic = crit.backward(&lp, &target).unwrap();
        let numeric = numeric_grad_value(&lp, 1e-6, |v| crit.forward(v, &target)).unwrap();
        let (a, n) = (analytic.as_tensor().unwrap(), numeric.as_tensor().unwrap());
        for (x, y) in a.data().iter().zip(n.data()) {
            assert!(rel_err(*x, *y) <= 1e-6, "{x} vs {y}");
        }
    }

    fn toy_classifier(s: &mut Store) -> Sequential {
        Sequential::new()
            .add(Box::new(Linear::new(s, 2, 2).unwrap()))
            .add(Box::new(LogSoftMax::new()))
    }

    /// Two linearly separable blobs.
    fn blobs(s: &mut Store, n: usize) -> (Vec<Value>, Vec<Tensor>) {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -1.0 } else { 1.0 };
            let x = Tensor::row_vec(&[
                center + 0.6 * s.rng.normal(),
                center + 0.6 * s.rng.normal(),
            ]);
            inputs.push(Value::Tensor(x));
            targets.push(Tensor::vec1(&[(class + 1) as f64]));
        }
        (inputs, targets)
    }

    #[test]
    fn train_epoch_zero_lr_keeps_parameters() {
        let mut s = Store::new(5);
        let mut net = toy_classifier(&mut s);
        let (inputs, targets) = blobs(&mut s, 8);
        let ids = unique_params(&net);
        let before: Vec<Tensor> = ids.iter().map(|&i| s.param(i).clone()).collect();
        train_epoch(&mut net, &mut ClassNllCriterion::new(), &mut s, &inputs, &targets, 0.0)
            .unwrap();
        for (id, b) in ids.iter().zip(&before) {
            assert_eq!(s.param(*id), b);
        }
    }

    #[test]
    fn train_epoch_learns_separable_toy_set() {
        let mut s = Store::new(12);
        let mut net = toy_classifier(&mut s);
        let (inputs, targets) = blobs(&mut s, 64);
        let mut crit = ClassNllCriterion::new();
        let mut losses = Vec::new();
        for _ in 0..10 {
            losses
                .push(train_epoch(&mut net, &mut crit, &mut s, &inputs, &targets, 0.02).unwrap());
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "losses should strictly decrease: {losses:?}");
        }
    }

    #[test]
    fn train_epoch_deterministic_given_seed() {
        let run = || {
            let mut s = Store::new(9);
            let mut net = toy_classifier(&mut s);
            let (inputs, targets) = blobs(&mut s, 8);
            let mut crit = ClassNllCriterion::new();
            for _ in 0..3 {
                train_epoch(&mut net, &mut crit, &mut s, &inputs, &targets, 0.1).unwrap();
            }
            unique_params(&net)
                .iter()
                .map(|&i| s.param(i).clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_is_config_error() {
        let mut s = Store::new(1);
        let mut net = toy_classifier(&mut s);
        let err =
            train_epoch(&mut net, &mut ClassNllCriterion::new(), &mut s, &[], &[], 0.1)
                .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
