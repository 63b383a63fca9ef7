//! Shared helpers for the integration suites: hand-unrolled reference
//! networks with manually shared parameters, built from the feed-forward
//! primitives and chained by explicit test code rather than the recurrent
//! machinery under test.

#![allow(dead_code)]

use rnn::{
    CMul, Linear, LstmParams, Module, ParamId, Rng, Sigmoid, Store, Tanh, Tensor, Value,
};

pub fn randn(store: &mut Store, shape: &[usize]) -> Tensor {
    Tensor::randn(shape.to_vec(), &mut store.rng)
}

pub fn copy_param(store: &mut Store, from: ParamId, to: ParamId) {
    let v = store.param(from).clone();
    store.set_param(to, v).unwrap();
}

pub fn assert_tensor_close(a: &Tensor, b: &Tensor, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shapes differ");
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "{what}: max abs diff {d:.3e} > {tol:.1e}");
}

pub fn assert_value_close(a: &Value, b: &Value, tol: f64, what: &str) {
    assert!(a.same_structure(b), "{what}: structures differ");
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "{what}: max abs diff {d:.3e} > {tol:.1e}");
}

fn vt(t: &Tensor) -> Value {
    Value::Tensor(t.clone())
}

/// One hand-built LSTM step: the Algorithm-1 gate equations assembled from
/// the public feed-forward primitives, with the chain rule across values
/// applied explicitly in `backward`. Used as the unrolled baseline the
/// recurrent LSTM must match.
pub struct HandLstmStep {
    lin_xi: Box<dyn Module>,
    lin_hi: Box<dyn Module>,
    mul_ci: Box<dyn Module>,
    sig_i: Box<dyn Module>,
    lin_xf: Box<dyn Module>,
    lin_hf: Box<dyn Module>,
    mul_cf: Box<dyn Module>,
    sig_f: Box<dyn Module>,
    lin_xz: Box<dyn Module>,
    lin_hz: Box<dyn Module>,
    tanh_z: Box<dyn Module>,
    lin_xo: Box<dyn Module>,
    lin_ho: Box<dyn Module>,
    mul_co: Box<dyn Module>,
    sig_o: Box<dyn Module>,
    tanh_c: Box<dyn Module>,
    // forward cache
    x: Tensor,
    h: Tensor,
    c: Tensor,
    i: Tensor,
    f: Tensor,
    z: Tensor,
    o: Tensor,
    c_new: Tensor,
    tc: Tensor,
}

impl HandLstmStep {
    pub fn new(store: &mut Store, in_size: usize, out_size: usize) -> (HandLstmStep, LstmParams) {
        let lin_xi = Linear::new(store, in_size, out_size).unwrap();
        let lin_hi = Linear::with_bias(store, out_size, out_size, false).unwrap();
        let mul_ci = CMul::new(store, out_size).unwrap();
        let lin_xf = Linear::new(store, in_size, out_size).unwrap();
        let lin_hf = Linear::with_bias(store, out_size, out_size, false).unwrap();
        let mul_cf = CMul::new(store, out_size).unwrap();
        let lin_xz = Linear::new(store, in_size, out_size).unwrap();
        let lin_hz = Linear::with_bias(store, out_size, out_size, false).unwrap();
        let lin_xo = Linear::new(store, in_size, out_size).unwrap();
        let lin_ho = Linear::with_bias(store, out_size, out_size, false).unwrap();
        let mul_co = CMul::new(store, out_size).unwrap();
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
        let dummy = Tensor::scalar(0.0);
        let step = HandLstmStep {
            lin_xi: Box::new(lin_xi),
            lin_hi: Box::new(lin_hi),
            mul_ci: Box::new(mul_ci),
            sig_i: Box::new(Sigmoid::new()),
            lin_xf: Box::new(lin_xf),
            lin_hf: Box::new(lin_hf),
            mul_cf: Box::new(mul_cf),
            sig_f: Box::new(Sigmoid::new()),
            lin_xz: Box::new(lin_xz),
            lin_hz: Box::new(lin_hz),
            tanh_z: Box::new(Tanh::new()),
            lin_xo: Box::new(lin_xo),
            lin_ho: Box::new(lin_ho),
            mul_co: Box::new(mul_co),
            sig_o: Box::new(Sigmoid::new()),
            tanh_c: Box::new(Tanh::new()),
            x: dummy.clone(),
            h: dummy.clone(),
            c: dummy.clone(),
            i: dummy.clone(),
            f: dummy.clone(),
            z: dummy.clone(),
            o: dummy.clone(),
            c_new: dummy.clone(),
            tc: dummy,
        };
        (step, params)
    }

    /// A clone for the next time-step: same parameter storages, fresh caches.
    pub fn share(&self) -> HandLstmStep {
        HandLstmStep {
            lin_xi: self.lin_xi.step_clone(),
            lin_hi: self.lin_hi.step_clone(),
            mul_ci: self.mul_ci.step_clone(),
            sig_i: self.sig_i.step_clone(),
            lin_xf: self.lin_xf.step_clone(),
            lin_hf: self.lin_hf.step_clone(),
            mul_cf: self.mul_cf.step_clone(),
            sig_f: self.sig_f.step_clone(),
            lin_xz: self.lin_xz.step_clone(),
            lin_hz: self.lin_hz.step_clone(),
            tanh_z: self.tanh_z.step_clone(),
            lin_xo: self.lin_xo.step_clone(),
            lin_ho: self.lin_ho.step_clone(),
            mul_co: self.mul_co.step_clone(),
            sig_o: self.sig_o.step_clone(),
            tanh_c: self.tanh_c.step_clone(),
            x: self.x.clone(),
            h: self.h.clone(),
            c: self.c.clone(),
            i: self.i.clone(),
            f: self.f.clone(),
            z: self.z.clone(),
            o: self.o.clone(),
            c_new: self.c_new.clone(),
            tc: self.tc.clone(),
        }
    }

    pub fn forward(
        &mut self,
        store: &mut Store,
        x: &Tensor,
        h: &Tensor,
        c: &Tensor,
    ) -> (Tensor, Tensor) {
        let sum3 = |store: &mut Store,
                    a: &mut Box<dyn Module>,
                    b: &mut Box<dyn Module>,
                    p: Option<&mut Box<dyn Module>>,
                    x: &Tensor,
                    h: &Tensor,
                    c: &Tensor| {
            let mut acc = a
                .forward(store, &vt(x))
                .unwrap()
                .into_tensor()
                .unwrap()
                .add(&b.forward(store, &vt(h)).unwrap().into_tensor().unwrap())
                .unwrap();
            if let Some(p) = p {
                acc = acc
                    .add(&p.forward(store, &vt(c)).unwrap().into_tensor().unwrap())
                    .unwrap();
            }
            acc
        };
        let ai = sum3(store, &mut self.lin_xi, &mut self.lin_hi, Some(&mut self.mul_ci), x, h, c);
        let i = self
            .sig_i
            .forward(store, &vt(&ai))
            .unwrap()
            .into_tensor()
            .unwrap();
        let af = sum3(store, &mut self.lin_xf, &mut self.lin_hf, Some(&mut self.mul_cf), x, h, c);
        let f = self
            .sig_f
            .forward(store, &vt(&af))
            .unwrap()
            .into_tensor()
            .unwrap();
        let az = sum3(store, &mut self.lin_xz, &mut self.lin_hz, None, x, h, c);
        let z = self
            .tanh_z
            .forward(store, &vt(&az))
            .unwrap()
            .into_tensor()
            .unwrap();
        let c_new = f.hadamard(c).unwrap().add(&i.hadamard(&z).unwrap()).unwrap();
        let ao = sum3(store, &mut self.lin_xo, &mut self.lin_ho, Some(&mut self.mul_co), x, h, &c_new);
        let o = self
            .sig_o
            .forward(store, &vt(&ao))
            .unwrap()
            .into_tensor()
            .unwrap();
        let tc = self
            .tanh_c
            .forward(store, &vt(&c_new))
            .unwrap()
            .into_tensor()
            .unwrap();
        let h_new = o.hadamard(&tc).unwrap();

        self.x = x.clone();
        self.h = h.clone();
        self.c = c.clone();
        self.i = i;
        self.f = f;
        self.z = z;
        self.o = o;
        self.c_new = c_new;
        self.tc = tc;
        (h_new, self.c_new.clone())
    }

    /// Chain rule for one step, given gradients w.r.t. `h_new` and `c_new`.
    /// Returns gradients w.r.t. `x`, `h_prev`, `c_prev`; parameter gradients
    /// accumulate in the store.
    pub fn backward(
        &mut self,
        store: &mut Store,
        gh: &Tensor,
        gc_in: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let bw =
            |store: &mut Store, m: &mut Box<dyn Module>, input: &Tensor, g: &Tensor| -> Tensor {
                m.backward(store, &vt(input), &vt(g))
                    .unwrap()
                    .into_tensor()
                    .unwrap()
            };
        // h_new = o * tanh(c_new)
        let go = gh.hadamard(&self.tc).unwrap();
        let gtc = gh.hadamard(&self.o).unwrap();
        let g_cnew_h = bw(store, &mut self.tanh_c, &self.c_new.clone(), &gtc);
        // o = sigmoid(ao), ao = lin_xo(x) + lin_ho(h) + mul_co(c_new)
        let g_ao = {
            let m = &mut self.sig_o;
            m.backward(store, &vt(&self.x /*unused*/), &vt(&go))
                .unwrap()
                .into_tensor()
                .unwrap()
        };
        let gx_o = bw(store, &mut self.lin_xo, &self.x.clone(), &g_ao);
        let gh_o = bw(store, &mut self.lin_ho, &self.h.clone(), &g_ao);
        let gcnew_o = bw(store, &mut self.mul_co, &self.c_new.clone(), &g_ao);
        // total gradient on c_new
        let gc_new = gc_in.add(&g_cnew_h).unwrap().add(&gcnew_o).unwrap();
        // c_new = f*c_prev + i*z
        let gf = gc_new.hadamard(&self.c).unwrap();
        let gc_prev_direct = gc_new.hadamard(&self.f).unwrap();
        let gi = gc_new.hadamard(&self.z).unwrap();
        let gz = gc_new.hadamard(&self.i).unwrap();
        // gates
        let g_af = {
            let m = &mut self.sig_f;
            m.backward(store, &vt(&self.x), &vt(&gf))
                .unwrap()
                .into_tensor()
                .unwrap()
        };
        let gx_f = bw(store, &mut self.lin_xf, &self.x.clone(), &g_af);
        let gh_f = bw(store, &mut self.lin_hf, &self.h.clone(), &g_af);
        let gc_f = bw(store, &mut self.mul_cf, &self.c.clone(), &g_af);
        let g_ai = {
            let m = &mut self.sig_i;
            m.backward(store, &vt(&self.x), &vt(&gi))
                .unwrap()
                .into_tensor()
                .unwrap()
        };
        let gx_i = bw(store, &mut self.lin_xi, &self.x.clone(), &g_ai);
        let gh_i = bw(store, &mut self.lin_hi, &self.h.clone(), &g_ai);
        let gc_i = bw(store, &mut self.mul_ci, &self.c.clone(), &g_ai);
        let g_az = {
            let m = &mut self.tanh_z;
            m.backward(store, &vt(&self.x), &vt(&gz))
                .unwrap()
                .into_tensor()
                .unwrap()
        };
        let gx_z = bw(store, &mut self.lin_xz, &self.x.clone(), &g_az);
        let gh_z = bw(store, &mut self.lin_hz, &self.h.clone(), &g_az);

        let gx = gx_o.add(&gx_f).unwrap().add(&gx_i).unwrap().add(&gx_z).unwrap();
        let gh_prev = gh_o.add(&gh_f).unwrap().add(&gh_i).unwrap().add(&gh_z).unwrap();
        let gc_prev = gc_prev_direct.add(&gc_f).unwrap().add(&gc_i).unwrap();
        (gx, gh_prev, gc_prev)
    }
}

/// Copies every LSTM weight from one parameter set onto another.
pub fn copy_lstm_params(store: &mut Store, from: &LstmParams, to: &LstmParams) {
    let pairs = [
        (from.w_xi, to.w_xi),
        (from.b_i, to.b_i),
        (from.w_hi, to.w_hi),
        (from.w_ci, to.w_ci),
        (from.w_xf, to.w_xf),
        (from.b_f, to.b_f),
        (from.w_hf, to.w_hf),
        (from.w_cf, to.w_cf),
        (from.w_xz, to.w_xz),
        (from.b_z, to.b_z),
        (from.w_hz, to.w_hz),
        (from.w_xo, to.w_xo),
        (from.b_o, to.b_o),
        (from.w_ho, to.w_ho),
        (from.w_co, to.w_co),
    ];
    for (f, t) in pairs {
        copy_param(store, f, t);
    }
}

/// Gradients of an LSTM parameter set, in a fixed order for comparisons.
pub fn lstm_grads(store: &Store, p: &LstmParams) -> Vec<Tensor> {
    [
        p.w_xi, p.b_i, p.w_hi, p.w_ci, p.w_xf, p.b_f, p.w_hf, p.w_cf, p.w_xz, p.b_z, p.w_hz,
        p.w_xo, p.b_o, p.w_ho, p.w_co,
    ]
    .iter()
    .map(|&id| store.grad(id).clone())
    .collect()
}

/// A deterministic generator decoupled from the store's stream.
pub fn test_rng(seed: u64) -> Rng {
    Rng::new(seed)
}
