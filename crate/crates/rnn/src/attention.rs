//! Recurrent visual attention: an attention decorator that rolls out a
//! recurrent core guided by a stochastic action module, plus the fixed
//! glimpse-crop sensor used by the toy task.

use crate::error::{Error, Result};
use crate::module::{IoCache, Module, SerNode};
use crate::recurrent::leading_dim;
use crate::store::{ParamId, Store};
use crate::tensor::Tensor;
use crate::value::Value;

/// Rolls a recurrent core over a fixed input for `n_step` steps.
///
/// The core expects `{x, z}` where `x` is the attention input and `z` is an
/// action sampled by the action module from the previous step's core output
/// (a zero vector at step 1). Action outputs stay internal; the module's
/// output is the table of core outputs `{h_1 .. h_nStep}`.
pub struct RecurrentAttention {
    rnn: Box<dyn Module>,
    action: Box<dyn Module>,
    n_step: usize,
    hidden_size: usize,
    io: IoCache,
}

impl RecurrentAttention {
    pub fn new(
        store: &mut Store,
        mut rnn: Box<dyn Module>,
        action: Box<dyn Module>,
        n_step: usize,
        hidden_size: usize,
    ) -> Result<RecurrentAttention> {
        if n_step < 1 || hidden_size == 0 {
            return Err(Error::Config(
                "RecurrentAttention: nStep and hiddenSize must be positive".into(),
            ));
        }
        let declared = match rnn.as_recurrent() {
            Some(rec) => rec.output_size(),
            None => {
                return Err(Error::Config(
                    "RecurrentAttention: the core must be a recurrent instance".into(),
                ))
            }
        };
        if let Some(size) = declared {
            if size != hidden_size {
                return Err(Error::Config(format!(
                    "RecurrentAttention: hiddenSize {hidden_size} does not match the core's output size {size}"
                )));
            }
        }
        // The action module may be recurrent or not; wrap it like any
        // sequencer would so it gets per-step clones.
        let action = crate::sequencer::ensure_recurrent(store, action);
        Ok(RecurrentAttention {
            rnn,
            action,
            n_step,
            hidden_size,
            io: IoCache::default(),
        })
    }

    /// Number of live per-step action clones.
    pub fn action_clone_count(&mut self, store: &Store) -> usize {
        self.action
            .as_recurrent()
            .map(|r| r.live_step_states(store))
            .unwrap_or(0)
    }
}

impl Module for RecurrentAttention {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        self.rnn.forget(store);
        self.action.forget(store);
        let batch = leading_dim(input);
        let mut prev_h = Value::Tensor(Tensor::zeros(vec![batch, self.hidden_size]));
        let mut outputs = Vec::with_capacity(self.n_step);
        for _ in 0..self.n_step {
            let z = self.action.forward(store, &prev_h)?;
            let h = self.rnn.forward(store, &Value::table(vec![input.clone(), z]))?;
            prev_h = h.clone();
            outputs.push(h);
        }
        self.io.input = Some(input.clone());
        let out = Value::table(outputs);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        if self.io.output.is_none() {
            return Err(Error::Protocol(
                "RecurrentAttention: backward before forward".into(),
            ));
        }
        let grads = grad_output.as_table()?;
        if grads.len() != self.n_step {
            return Err(Error::Protocol(format!(
                "RecurrentAttention: {} gradOutputs for {} steps",
                grads.len(),
                self.n_step
            )));
        }
        let mut grad_x = input.zeros_like();
        // Gradient into h_t produced by the action at step t+1.
        let mut pending: Option<Value> = None;
        for t in (1..=self.n_step).rev() {
            let g_h = match pending.take() {
                Some(extra) => grads[t - 1].add(&extra)?,
                None => grads[t - 1].clone(),
            };
            let grad_in = self.rnn.bptt_step(store, t, &g_h)?;
            let mut parts = grad_in.into_table()?;
            let g_z = parts.pop().unwrap();
            let g_x = parts.pop().unwrap();
            grad_x = grad_x.add(&g_x)?;
            let g_prev_h = self.action.bptt_step(store, t, &g_z)?;
            if t > 1 {
                pending = Some(g_prev_h);
            }
        }
        Ok(grad_x)
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.rnn.collect_params(out);
        self.action.collect_params(out);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(RecurrentAttention {
            rnn: self.rnn.step_clone(),
            action: self.action.step_clone(),
            n_step: self.n_step,
            hidden_size: self.hidden_size,
            io: IoCache::default(),
        })
    }

    fn contains_recurrent(&self) -> bool {
        true
    }

    fn set_training(&mut self, training: bool) {
        self.rnn.set_training(training);
        self.action.set_training(training);
    }

    fn forget(&mut self, store: &mut Store) {
        self.rnn.forget(store);
        self.action.forget(store);
        self.io = IoCache::default();
    }

    fn reinforce(&mut self, reward: &Tensor) {
        self.rnn.reinforce(reward);
        self.action.reinforce(reward);
    }

    fn ser_node(&self) -> SerNode {
        SerNode {
            tag: "recurrent_attention".into(),
            config: vec![self.n_step as i64, self.hidden_size as i64],
            children: vec![self.rnn.ser_node(), self.action.ser_node()],
        }
    }
}

/// Fixed crop-at-coordinates glimpse sensor for square images.
///
/// Input is `{x, z}`: `x` a `[batch, size*size]` flattened image and `z` a
/// `[batch, 2]` location in `[-1, 1]^2` (row, column). Output is the
/// `[batch, patch*patch]` window centered at the location, clamped inside
/// the image. Pixels carry gradient back to `x`; the location is not
/// differentiable (its learning signal comes from REINFORCE) so `z` receives
/// zeros.
pub struct GlimpseCrop {
    image_size: usize,
    patch: usize,
    io: IoCache,
}

impl GlimpseCrop {
    pub fn new(image_size: usize, patch: usize) -> Result<GlimpseCrop> {
        if patch == 0 || image_size == 0 || patch > image_size {
            return Err(Error::Config(format!(
                "GlimpseCrop: need 0 < patch <= image size, got {patch} and {image_size}"
            )));
        }
        Ok(GlimpseCrop {
            image_size,
            patch,
            io: IoCache::default(),
        })
    }

    /// Top-left corner for one location coordinate in [-1, 1].
    fn corner(&self, coord: f64) -> usize {
        let s = self.image_size as f64;
        let p = self.patch as f64;
        let center = (coord.clamp(-1.0, 1.0) + 1.0) / 2.0 * (s - 1.0);
        let top = (center - (p - 1.0) / 2.0).round();
        top.clamp(0.0, s - p) as usize
    }

    fn split_input<'a>(&self, input: &'a Value) -> Result<(&'a Tensor, &'a Tensor)> {
        let parts = input.as_table()?;
        if parts.len() != 2 {
            return Err(Error::Shape("GlimpseCrop: expected {image, location}".into()));
        }
        let x = parts[0].as_tensor()?;
        let z = parts[1].as_tensor()?;
        let pixels = self.image_size * self.image_size;
        if x.ndim() != 2 || x.cols() != pixels {
            return Err(Error::Shape(format!(
                "GlimpseCrop: image must be [batch, {pixels}], got {:?}",
                x.shape()
            )));
        }
        if z.ndim() != 2 || z.cols() != 2 || z.rows() != x.rows() {
            return Err(Error::Shape(format!(
                "GlimpseCrop: location must be [batch, 2], got {:?}",
                z.shape()
            )));
        }
        Ok((x, z))
    }
}

impl Module for GlimpseCrop {
    fn forward(&mut self, _store: &mut Store, input: &Value) -> Result<Value> {
        let (x, z) = self.split_input(input)?;
        let s = self.image_size;
        let p = self.patch;
        let mut out = Tensor::zeros(vec![x.rows(), p * p]);
        for b in 0..x.rows() {
            let r0 = self.corner(z.at2(b, 0));
            let c0 = self.corner(z.at2(b, 1));
            for i in 0..p {
                for j in 0..p {
                    out.set2(b, i * p + j, x.at2(b, (r0 + i) * s + (c0 + j)));
                }
            }
        }
        self.io.input = Some(input.clone());
        let out = Value::Tensor(out);
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, _store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        if self.io.output.is_none() {
            return Err(Error::Protocol("GlimpseCrop: backward before forward".into()));
        }
        let (x, z) = self.split_input(input)?;
        let g = grad_output.as_tensor()?;
        let s = self.image_size;
        let p = self.patch;
        let mut gx = Tensor::zeros(x.shape().to_vec());
        for b in 0..x.rows() {
            let r0 = self.corner(z.at2(b, 0));
            let c0 = self.corner(z.at2(b, 1));
            for i in 0..p {
                for j in 0..p {
                    let v = gx.at2(b, (r0 + i) * s + (c0 + j)) + g.at2(b, i * p + j);
                    gx.set2(b, (r0 + i) * s + (c0 + j), v);
                }
            }
        }
        let gz = Tensor::zeros(z.shape().to_vec());
        Ok(Value::table(vec![Value::Tensor(gx), Value::Tensor(gz)]))
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, _out: &mut Vec<ParamId>) {}

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(GlimpseCrop {
            image_size: self.image_size,
            patch: self.patch,
            io: IoCache::default(),
        })
    }

    fn ser_node(&self) -> SerNode {
        SerNode::leaf(
            "glimpse_crop",
            vec![self.image_size as i64, self.patch as i64],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_picks_the_window_and_scatters_gradients_back() {
        let mut s = Store::new(1);
        let mut crop = GlimpseCrop::new(4, 2).unwrap();
        // image with pixel value = row*4 + col
        let img = Tensor::new(vec![1, 16], (0..16).map(f64::from).collect()).unwrap();
        // location (-1, -1): top-left corner
        let z = Tensor::row_vec(&[-1.0, -1.0]);
        let input = Value::table(vec![Value::Tensor(img.clone()), Value::Tensor(z)]);
        let out = crop.forward(&mut s, &input).unwrap();
        assert_eq!(out.as_tensor().unwrap().data(), &[0.0, 1.0, 4.0, 5.0]);

        let g = Value::Tensor(Tensor::row_vec(&[1.0, 2.0, 3.0, 4.0]));
        let gin = crop.backward(&mut s, &input, &g).unwrap();
        let gx = gin.as_table().unwrap()[0].as_tensor().unwrap().clone();
        assert_eq!(gx.data()[0], 1.0);
        assert_eq!(gx.data()[1], 2.0);
        assert_eq!(gx.data()[4], 3.0);
        assert_eq!(gx.data()[5], 4.0);
        assert_eq!(gx.sum(), 10.0, "only the window receives gradient");
        // location input is non-differentiable
        let gz = gin.as_table().unwrap()[1].as_tensor().unwrap().clone();
        assert!(gz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn crop_clamps_to_the_image_border() {
        let mut s = Store::new(1);
        let mut crop = GlimpseCrop::new(4, 2).unwrap();
        let img = Tensor::new(vec![1, 16], (0..16).map(f64::from).collect()).unwrap();
        // far bottom-right, clamped so the patch stays inside
        let z = Tensor::row_vec(&[5.0, 5.0]);
        let input = Value::table(vec![Value::Tensor(img), Value::Tensor(z)]);
        let out = crop.forward(&mut s, &input).unwrap();
        assert_eq!(out.as_tensor().unwrap().data(), &[10.0, 11.0, 14.0, 15.0]);
    }
}
