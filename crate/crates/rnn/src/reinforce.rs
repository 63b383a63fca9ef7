//! Stochastic policy node trained with the likelihood-ratio (score-function)
//! rule, and the reward criterion that drives it.

use crate::criterion::{ClassNllCriterion, Criterion};
use crate::error::{Error, Result};
use crate::module::{IoCache, Module, SerNode};
use crate::store::{ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Samples `z ~ N(mean, stdev^2)` elementwise around the upstream mean in
/// training mode, and returns the mean exactly in evaluation mode.
///
/// The backward produces a gradient that descends `-E[reward]`:
/// `gradMean = -reward * (z - mean) / stdev^2`, added to any upstream
/// gradOutput. A reward must be assigned (via `reinforce`) before a training
/// backward. Rewards are per batch row.
pub struct ReinforceNormal {
    stdev: f64,
    reward: Option<Tensor>,
    sample: Option<Tensor>,
    deterministic: bool,
    training: bool,
    io: IoCache,
}

impl ReinforceNormal {
    pub fn new(stdev: f64) -> Result<ReinforceNormal> {
        if stdev <= 0.0 || !stdev.is_finite() {
            return Err(Error::Config(format!(
                "ReinforceNormal: stdev must be positive, got {stdev}"
            )));
        }
        Ok(ReinforceNormal {
            stdev,
            reward: None,
            sample: None,
            deterministic: false,
            training: true,
            io: IoCache::default(),
        })
    }

    /// Test hook: samples collapse onto the mean (a stdev -> 0 limit) while
    /// keeping training-mode bookkeeping intact.
    pub fn deterministic(mut self) -> ReinforceNormal {
        self.deterministic = true;
        self
    }

    pub fn last_sample(&self) -> Option<&Tensor> {
        self.sample.as_ref()
    }
}

impl Module for ReinforceNormal {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let mean = input.as_tensor()?;
        let out = if self.training && !self.deterministic {
            let mut z = mean.clone();
            for v in z.data_mut().iter_mut() {
                *v += self.stdev * store.rng.normal();
            }
            z
        } else {
            mean.clone()
        };
        if self.training {
            self.sample = Some(out.clone());
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(out);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        if self.io.output.is_none() {
            return Err(Error::Protocol("ReinforceNormal: backward before forward".into()));
        }
        let mean = input.as_tensor()?;
        let g = grad_output.as_tensor()?;
        if !self.training || (self.deterministic && self.reward.is_none()) {
            // Evaluation passes the mean through unchanged; under the
            // deterministic hook the score term is identically zero anyway.
            return Ok(Value::Tensor(g.clone()));
        }
        let reward = self.reward.as_ref().ok_or_else(|| {
            Error::Protocol("ReinforceNormal: backward without an assigned reward".into())
        })?;
        let sample = self.sample.as_ref().ok_or_else(|| {
            Error::Protocol("ReinforceNormal: no sample cached from forward".into())
        })?;
        if reward.len() != mean.rows() {
            return Err(Error::Shape(format!(
                "ReinforceNormal: {} rewards for batch of {}",
                reward.len(),
                mean.rows()
            )));
        }
        let var = self.stdev * self.stdev;
        let mut grad = g.clone();
        for r in 0..mean.rows() {
            let rew = reward.data()[r];
            for c in 0..mean.cols() {
                let noise = sample.at2(r, c) - mean.at2(r, c);
                let v = grad.at2(r, c) - rew * noise / var;
                grad.set2(r, c, v);
            }
        }
        Ok(Value::Tensor(grad))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(ReinforceNormal {
            stdev: self.stdev,
            reward: None,
            sample: None,
            deterministic: self.deterministic,
            training: self.training,
            io: IoCache::default(),
        })
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.reward = Some(reward.clone());
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf("reinforce_normal", vec![self.stdev.to_bits() as i64])
    }
}

/// Classification reward for attention models: reward 1 for a correct argmax
/// and 0 otherwise, per batch row, with a running-mean baseline subtracted
/// for variance reduction. The criterion surface (forward/backward) carries
/// the standard NLL loss and gradient for the backpropagation path;
/// `broadcast_reward` hands the baselined reward to every stochastic node.
pub struct RewardCriterion {
    nll: ClassNllCriterion,
    baseline: f64,
    momentum: f64,
    effective: Option<Tensor>,
}

impl Default for RewardCriterion {
    fn default() -> Self {
        Self::new()
    }
}

impl RewardCriterion {
    pub fn new() -> RewardCriterion {
        RewardCriterion {
            nll: ClassNllCriterion::new(),
            baseline: 0.0,
            momentum: 0.9,
            effective: None,
        }
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn set_baseline(&mut self, b: f64) {
        self.baseline = b;
    }

    /// Baselined reward (`r - b`) from the last forward.
    pub fn effective_reward(&self) -> Option<&Tensor> {
        self.effective.as_ref()
    }

    /// Assigns the baselined reward to every stochastic node in `module`.
    pub fn broadcast_reward(&self, module: &mut dyn Module) -> Result<()> {
        let reward = self.effective.as_ref().ok_or_else(|| {
            Error::Protocol("RewardCriterion: broadcast before forward".into())
        })?;
        module.reinforce(reward);
        Ok(())
    }
}

impl Criterion for RewardCriterion {
    fn forward(&mut self, input: &Value, target: &Tensor) -> Result<f64> {
        let lp = input.as_tensor()?;
        let preds = lp.argmax_rows();
        let mut reward = Tensor::zeros(vec![lp.rows()]);
        for (r, &p) in preds.iter().enumerate() {
            let correct = (target.data()[r] as i64) == (p as i64 + 1);
            reward.data_mut()[r] = f64::from(correct);
        }
        let mean_reward = reward.sum() / reward.len() as f64;
        self.effective = Some(reward.map(|v| v - self.baseline));
        self.baseline = self.momentum * self.baseline + (1.0 - self.momentum) * mean_reward;
        self.nll.forward(input, target)
    }

    fn backward(&mut self, input: &Value, target: &Tensor) -> Result<Value> {
        self.nll.backward(input, target)
    }
}
