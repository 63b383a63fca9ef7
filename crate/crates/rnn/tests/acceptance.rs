//! Acceptance suite, one test per criterion. Each test prints a PASS line
//! with the measured quantity once its assertions hold. Training-based
//! criteria (tiny-corpus language model, attention toy task, CLI
//! determinism) live in the CLI crate's acceptance suite.

mod common;

use common::*;
use rnn::gradcheck::{check_module, check_recurrent, InputCheck};
use rnn::registry::all_modules;
use rnn::{
    serialize, unique_params, zero_grad_parameters, CAddTable, Linear, LookupTable, Lstm, Module,
    ParallelTable, Recurrence, Recurrent, RecurrentModule, ReinforceNormal, Repeater, Sequencer,
    Sequential, Sigmoid, Store, Tensor, Value,
};

const FD_EPS: f64 = 1e-6;
const FD_TOL: f64 = 1e-4; // target 1e-5; hard gate 1e-4
const EQ_TOL: f64 = 1e-10;

fn seq_of(store: &mut Store, t: usize, shape: &[usize]) -> Value {
    Value::table(
        (0..t)
            .map(|_| Value::Tensor(randn(store, shape)))
            .collect(),
    )
}

fn simple_recurrent(store: &mut Store, in_size: usize, out_size: usize, rho: usize) -> Recurrent {
    let input_layer = Box::new(Linear::new(store, in_size, out_size).unwrap());
    let feedback = Box::new(Linear::new(store, out_size, out_size).unwrap());
    Recurrent::new(store, out_size, input_layer, feedback, Box::new(Sigmoid::new()), rho).unwrap()
}

fn srn_recurrence(store: &mut Store, vocab: usize, hidden: usize) -> Recurrence {
    let rm = Sequential::new()
        .add(Box::new(
            ParallelTable::new()
                .add(Box::new(LookupTable::new(store, vocab, hidden).unwrap()))
                .add(Box::new(Linear::new(store, hidden, hidden).unwrap())),
        ))
        .add(Box::new(CAddTable::new()))
        .add(Box::new(Sigmoid::new()));
    Recurrence::new(store, Box::new(rm), hidden, 1).unwrap()
}

#[test]
fn criterion_1_gradient_soundness() {
    let mut worst_overall: (f64, &str) = (0.0, "none");
    let mut check = |name: &'static str, err: f64, worst: &str| {
        assert!(
            err <= FD_TOL,
            "criterion 1 [{name}]: max rel err {err:.3e} > {FD_TOL:.0e} ({worst})"
        );
        if err > worst_overall.0 {
            worst_overall = (err, name);
        }
    };

    {
        let mut s = Store::new(101);
        let mut m = simple_recurrent(&mut s, 3, 4, 16);
        let inputs: Vec<Value> = (0..4).map(|_| Value::Tensor(randn(&mut s, &[2, 3]))).collect();
        let mut rng = test_rng(1);
        let r = check_recurrent(&mut s, &mut m, &inputs, FD_EPS, InputCheck::All, &mut rng).unwrap();
        check("recurrent", r.max_rel_err, &r.worst);
    }
    {
        let mut s = Store::new(102);
        let mut m = Lstm::new(&mut s, 3, 4).unwrap();
        let inputs: Vec<Value> = (0..4).map(|_| Value::Tensor(randn(&mut s, &[2, 3]))).collect();
        let mut rng = test_rng(2);
        let r = check_recurrent(&mut s, &mut m, &inputs, FD_EPS, InputCheck::All, &mut rng).unwrap();
        check("lstm", r.max_rel_err, &r.worst);
    }
    {
        // The language-model recurrence; index inputs carry no gradient.
        let mut s = Store::new(103);
        let mut m = srn_recurrence(&mut s, 4, 4);
        let inputs: Vec<Value> = (0..4)
            .map(|_| Value::Tensor(Tensor::random_int(vec![2], 1, 4, &mut s.rng).unwrap()))
            .collect();
        let mut rng = test_rng(3);
        let r =
            check_recurrent(&mut s, &mut m, &inputs, FD_EPS, InputCheck::None, &mut rng).unwrap();
        check("recurrence-srn", r.max_rel_err, &r.worst);
    }
    {
        // Two stacked sequencer-wrapped LSTM layers.
        let mut s = Store::new(104);
        let a = Lstm::new(&mut s, 3, 3).unwrap();
        let b = Lstm::new(&mut s, 3, 3).unwrap();
        let seq_a = Sequencer::new(&mut s, Box::new(a));
        let seq_b = Sequencer::new(&mut s, Box::new(b));
        let mut m = Sequential::new().add(Box::new(seq_a)).add(Box::new(seq_b));
        let input = seq_of(&mut s, 3, &[2, 3]);
        let mut rng = test_rng(4);
        let r = check_module(&mut s, &mut m, &input, FD_EPS, InputCheck::All, &mut rng).unwrap();
        check("sequencer-lstm-x2", r.max_rel_err, &r.worst);
    }
    {
        let mut s = Store::new(105);
        let rec = simple_recurrent(&mut s, 3, 3, 16);
        let mut m = Repeater::new(&mut s, Box::new(rec), 3).unwrap();
        let input = Value::Tensor(randn(&mut s, &[2, 3]));
        let mut rng = test_rng(5);
        let r = check_module(&mut s, &mut m, &input, FD_EPS, InputCheck::All, &mut rng).unwrap();
        check("repeater", r.max_rel_err, &r.worst);
    }
    {
        // Mixed stack: a non-recurrent layer between two LSTMs, all inside
        // one sequencer.
        let mut s = Store::new(106);
        let body = Sequential::new()
            .add(Box::new(Lstm::new(&mut s, 3, 3).unwrap()))
            .add(Box::new(Linear::new(&mut s, 3, 3).unwrap()))
            .add(Box::new(Lstm::new(&mut s, 3, 3).unwrap()));
        let mut m = Sequencer::new(&mut s, Box::new(body));
        let input = seq_of(&mut s, 3, &[2, 3]);
        let mut rng = test_rng(6);
        let r = check_module(&mut s, &mut m, &input, FD_EPS, InputCheck::All, &mut rng).unwrap();
        check("mixed-lstm-linear-lstm", r.max_rel_err, &r.worst);
    }

    println!(
        "PASS criterion 1: gradient soundness, worst rel err {:.3e} ({})",
        worst_overall.0, worst_overall.1
    );
}

/// Runs an LSTM stepwise with the legacy protocol and returns outputs,
/// per-step input gradients and parameter gradients.
fn lstm_library_run(
    s: &mut Store,
    lstm: &mut Lstm,
    xs: &[Tensor],
    ws: &[Tensor],
) -> (Vec<Tensor>, Vec<Tensor>, Vec<Tensor>) {
    zero_grad_parameters(lstm, s);
    lstm.forget(s);
    let mut outs = Vec::new();
    for x in xs {
        outs.push(
            lstm.forward(s, &Value::Tensor(x.clone()))
                .unwrap()
                .into_tensor()
                .unwrap(),
        );
    }
    for (x, w) in xs.iter().zip(ws).rev() {
        lstm.backward(s, &Value::Tensor(x.clone()), &Value::Tensor(w.clone()))
            .unwrap();
    }
    lstm.backward_through_time(s).unwrap();
    let gxs = (1..=xs.len())
        .map(|t| lstm.grad_inputs()[&t].clone().into_tensor().unwrap())
        .collect();
    (outs, gxs, lstm_grads(s, &lstm.params()))
}

/// Hand-unrolled LSTM with manually shared parameters: forward chain and
/// reverse chain written out explicitly in test code.
fn lstm_hand_run(
    s: &mut Store,
    src: &rnn::LstmParams,
    in_size: usize,
    out_size: usize,
    xs: &[Tensor],
    ws: &[Tensor],
    init: Option<(Tensor, Tensor)>,
) -> (Vec<Tensor>, Vec<Tensor>, Vec<Tensor>) {
    let batch = xs[0].shape()[0];
    let (proto, hand_params) = HandLstmStep::new(s, in_size, out_size);
    copy_lstm_params(s, src, &hand_params);
    let mut steps: Vec<HandLstmStep> = (0..xs.len()).map(|_| proto.share()).collect();

    let (mut h, mut c) = init.unwrap_or((
        Tensor::zeros(vec![batch, out_size]),
        Tensor::zeros(vec![batch, out_size]),
    ));
    let mut outs = Vec::new();
    for (step, x) in steps.iter_mut().zip(xs) {
        let (hn, cn) = step.forward(s, x, &h, &c);
        outs.push(hn.clone());
        h = hn;
        c = cn;
    }

    let mut gxs = vec![Tensor::zeros(vec![batch, in_size]); xs.len()];
    let mut gh = Tensor::zeros(vec![batch, out_size]);
    let mut gc = Tensor::zeros(vec![batch, out_size]);
    for t in (0..xs.len()).rev() {
        let gh_total = ws[t].add(&gh).unwrap();
        let (gx, gh_prev, gc_prev) = steps[t].backward(s, &gh_total, &gc);
        gxs[t] = gx;
        gh = gh_prev;
        gc = gc_prev;
    }
    (outs, gxs, lstm_grads(s, &hand_params))
}

#[test]
fn criterion_2_baseline_equivalence() {
    // LSTM, 4 steps.
    let mut s = Store::new(201);
    let (in_size, out_size, t_len) = (3, 4, 4);
    let mut lstm = Lstm::new(&mut s, in_size, out_size).unwrap();
    let xs: Vec<Tensor> = (0..t_len).map(|_| randn(&mut s, &[2, in_size])).collect();
    let ws: Vec<Tensor> = (0..t_len).map(|_| randn(&mut s, &[2, out_size])).collect();
    let (lib_outs, lib_gxs, lib_grads) = lstm_library_run(&mut s, &mut lstm, &xs, &ws);
    let (hand_outs, hand_gxs, hand_grads) =
        lstm_hand_run(&mut s, &lstm.params(), in_size, out_size, &xs, &ws, None);
    let mut worst = 0.0f64;
    for (a, b) in lib_outs.iter().zip(&hand_outs) {
        worst = worst.max(a.max_abs_diff(b));
    }
    for (a, b) in lib_gxs.iter().zip(&hand_gxs) {
        worst = worst.max(a.max_abs_diff(b));
    }
    for (a, b) in lib_grads.iter().zip(&hand_grads) {
        worst = worst.max(a.max_abs_diff(b));
    }
    assert!(worst <= EQ_TOL, "criterion 2 [lstm]: diff {worst:.3e}");

    // Simple recurrent, 4 steps, via its own hand unroll.
    let mut s = Store::new(202);
    let (in_size, out_size) = (2, 3);
    let mut rec = simple_recurrent(&mut s, in_size, out_size, 16);
    let rec_ids = unique_params(&rec);
    let xs: Vec<Tensor> = (0..t_len).map(|_| randn(&mut s, &[2, in_size])).collect();
    let ws: Vec<Tensor> = (0..t_len).map(|_| randn(&mut s, &[2, out_size])).collect();

    zero_grad_parameters(&rec, &mut s);
    let mut lib_outs = Vec::new();
    for (x, w) in xs.iter().zip(&ws) {
        lib_outs.push(
            rec.forward(&mut s, &Value::Tensor(x.clone()))
                .unwrap()
                .into_tensor()
                .unwrap(),
        );
        rec.backward(&mut s, &Value::Tensor(x.clone()), &Value::Tensor(w.clone()))
            .unwrap();
    }
    rec.backward_through_time(&mut s).unwrap();
    let lib_gxs: Vec<Tensor> = (1..=t_len)
        .map(|t| rec.grad_inputs()[&t].clone().into_tensor().unwrap())
        .collect();

    // Hand unroll: shared input/feedback clones, explicit chain.
    let il = Linear::new(&mut s, in_size, out_size).unwrap();
    let fb = Linear::new(&mut s, out_size, out_size).unwrap();
    let add = rnn::Add::new(&mut s, out_size).unwrap();
    copy_param(&mut s, rec_ids[0], il.weight_id());
    copy_param(&mut s, rec_ids[1], il.bias_id().unwrap());
    copy_param(&mut s, rec_ids[2], add.bias_id());
    copy_param(&mut s, rec_ids[3], fb.weight_id());
    copy_param(&mut s, rec_ids[4], fb.bias_id().unwrap());
    let hand_ids = vec![
        il.weight_id(),
        il.bias_id().unwrap(),
        add.bias_id(),
        fb.weight_id(),
        fb.bias_id().unwrap(),
    ];

    let mut ils: Vec<Box<dyn Module>> = (0..t_len).map(|_| il.step_clone()).collect();
    let mut fbs: Vec<Box<dyn Module>> = (0..t_len).map(|_| fb.step_clone()).collect();
    let mut adds: Vec<Box<dyn Module>> = vec![add.step_clone()];
    let mut trs: Vec<Sigmoid> = (0..t_len).map(|_| Sigmoid::new()).collect();

    let mut hand_outs: Vec<Tensor> = Vec::new();
    for t in 0..t_len {
        let xin = Value::Tensor(xs[t].clone());
        let lead = ils[t].forward(&mut s, &xin).unwrap().into_tensor().unwrap();
        let pre = if t == 0 {
            adds[0]
                .forward(&mut s, &Value::Tensor(lead))
                .unwrap()
                .into_tensor()
                .unwrap()
        } else {
            let fbv = fbs[t]
                .forward(&mut s, &Value::Tensor(hand_outs[t - 1].clone()))
                .unwrap()
                .into_tensor()
                .unwrap();
            lead.add(&fbv).unwrap()
        };
        let out = trs[t]
            .forward(&mut s, &Value::Tensor(pre))
            .unwrap()
            .into_tensor()
            .unwrap();
        hand_outs.push(out);
    }

    s.zero_grads(&hand_ids);
    let mut hand_gxs = vec![Tensor::zeros(vec![2, in_size]); t_len];
    let mut g_next = Tensor::zeros(vec![2, out_size]);
    for t in (0..t_len).rev() {
        let total = ws[t].add(&g_next).unwrap();
        let gpre = trs[t]
            .backward(&mut s, &Value::Tensor(hand_outs[t].clone()), &Value::Tensor(total))
            .unwrap()
            .into_tensor()
            .unwrap();
        let gpre = if t == 0 {
            adds[0]
                .backward(&mut s, &Value::Tensor(hand_outs[0].clone()), &Value::Tensor(gpre))
                .unwrap()
                .into_tensor()
                .unwrap()
        } else {
            g_next = fbs[t]
                .backward(
                    &mut s,
                    &Value::Tensor(hand_outs[t - 1].clone()),
                    &Value::Tensor(gpre.clone()),
                )
                .unwrap()
                .into_tensor()
                .unwrap();
            gpre
        };
        hand_gxs[t] = ils[t]
            .backward(&mut s, &Value::Tensor(xs[t].clone()), &Value::Tensor(gpre))
            .unwrap()
            .into_tensor()
            .unwrap();
        if t == 0 {
            break;
        }
    }

    let mut worst_rec = 0.0f64;
    for (a, b) in lib_outs.iter().zip(&hand_outs) {
        worst_rec = worst_rec.max(a.max_abs_diff(b));
    }
    for (a, b) in lib_gxs.iter().zip(&hand_gxs) {
        worst_rec = worst_rec.max(a.max_abs_diff(b));
    }
    for (id, hid) in rec_ids.iter().zip(&hand_ids) {
        worst_rec = worst_rec.max(s.grad(*id).max_abs_diff(s.grad(*hid)));
    }
    assert!(
        worst_rec <= EQ_TOL,
        "criterion 2 [recurrent]: diff {worst_rec:.3e}"
    );

    println!(
        "PASS criterion 2: baseline equivalence, lstm diff {worst:.3e}, recurrent diff {worst_rec:.3e}"
    );
}

#[test]
fn criterion_3_structural_equivalences() {
    // (a) Sequencer == stepwise forwards.
    let mut s = Store::new(301);
    let lstm = Lstm::new(&mut s, 3, 4).unwrap();
    let params = lstm.params();
    let mut seq = Sequencer::new(&mut s, Box::new(lstm));
    let mut stepwise = Lstm::new(&mut s, 3, 4).unwrap();
    copy_lstm_params(&mut s, &params, &stepwise.params());
    let input = seq_of(&mut s, 4, &[2, 3]);
    let out = seq.forward(&mut s, &input).unwrap();
    let mut diff_a = 0.0f64;
    for (x, y) in input.as_table().unwrap().iter().zip(out.as_table().unwrap()) {
        let want = stepwise.forward(&mut s, x).unwrap();
        diff_a = diff_a.max(y.max_abs_diff(&want));
    }
    assert!(diff_a <= EQ_TOL, "criterion 3a: diff {diff_a:.3e}");

    // (b) Sequential of two Sequencer(LSTM) == one Sequencer(Sequential).
    let mut s = Store::new(302);
    let a1 = Lstm::new(&mut s, 3, 3).unwrap();
    let b1 = Lstm::new(&mut s, 3, 3).unwrap();
    let (pa, pb) = (a1.params(), b1.params());
    let mut stacked = Sequential::new()
        .add(Box::new(Sequencer::new(&mut s, Box::new(a1))))
        .add(Box::new(Sequencer::new(&mut s, Box::new(b1))));

    let a2 = Lstm::new(&mut s, 3, 3).unwrap();
    let b2 = Lstm::new(&mut s, 3, 3).unwrap();
    copy_lstm_params(&mut s, &pa, &a2.params());
    copy_lstm_params(&mut s, &pb, &b2.params());
    let (pa2, pb2) = (a2.params(), b2.params());
    let body = Sequential::new().add(Box::new(a2)).add(Box::new(b2));
    let mut single = Sequencer::new(&mut s, Box::new(body));

    let input = seq_of(&mut s, 3, &[2, 3]);
    let w = seq_of(&mut s, 3, &[2, 3]);

    zero_grad_parameters(&stacked, &mut s);
    let out1 = stacked.forward(&mut s, &input).unwrap();
    let gin1 = stacked.backward(&mut s, &input, &w).unwrap();
    let grads1: Vec<Tensor> = lstm_grads(&s, &pa)
        .into_iter()
        .chain(lstm_grads(&s, &pb))
        .collect();

    zero_grad_parameters(&single, &mut s);
    let out2 = single.forward(&mut s, &input).unwrap();
    let gin2 = single.backward(&mut s, &input, &w).unwrap();
    let grads2: Vec<Tensor> = lstm_grads(&s, &pa2)
        .into_iter()
        .chain(lstm_grads(&s, &pb2))
        .collect();

    let mut diff_b = out1.max_abs_diff(&out2).max(gin1.max_abs_diff(&gin2));
    for (x, y) in grads1.iter().zip(&grads2) {
        diff_b = diff_b.max(x.max_abs_diff(y));
    }
    assert!(diff_b <= EQ_TOL, "criterion 3b: diff {diff_b:.3e}");

    // (c) Repeater(r, n) == Sequencer over n-fold duplicated input.
    let mut s = Store::new(303);
    let build = |s: &mut Store| {
        let input_layer = Box::new(Linear::new(s, 2, 3).unwrap());
        let feedback = Box::new(Linear::new(s, 3, 3).unwrap());
        Recurrent::new(s, 3, input_layer, feedback, Box::new(Sigmoid::new()), 16).unwrap()
    };
    let r1 = build(&mut s);
    let r2 = build(&mut s);
    let ids1 = unique_params(&r1);
    let ids2 = unique_params(&r2);
    for (x, y) in ids1.iter().zip(&ids2) {
        copy_param(&mut s, *x, *y);
    }
    let n = 3usize;
    let mut rep = Repeater::new(&mut s, Box::new(r1), n).unwrap();
    let mut seq = Sequencer::new(&mut s, Box::new(r2));
    let x = Value::Tensor(randn(&mut s, &[2, 2]));
    let dup = Value::table(vec![x.clone(); n]);
    let w = seq_of(&mut s, n, &[2, 3]);

    zero_grad_parameters(&rep, &mut s);
    let o1 = rep.forward(&mut s, &x).unwrap();
    let g1 = rep.backward(&mut s, &x, &w).unwrap();
    let pg1: Vec<Tensor> = ids1.iter().map(|&i| s.grad(i).clone()).collect();
    zero_grad_parameters(&seq, &mut s);
    let o2 = seq.forward(&mut s, &dup).unwrap();
    let g2 = seq.backward(&mut s, &dup, &w).unwrap();
    let pg2: Vec<Tensor> = ids2.iter().map(|&i| s.grad(i).clone()).collect();

    let g2_sum = g2.as_table().unwrap()[1..]
        .iter()
        .try_fold(g2.as_table().unwrap()[0].clone(), |acc, v| acc.add(v))
        .unwrap();
    let mut diff_c = o1.max_abs_diff(&o2).max(g1.max_abs_diff(&g2_sum));
    for (a, b) in pg1.iter().zip(&pg2) {
        diff_c = diff_c.max(a.max_abs_diff(b));
    }
    assert!(diff_c <= EQ_TOL, "criterion 3c: diff {diff_c:.3e}");

    println!(
        "PASS criterion 3: structural equivalences, diffs {diff_a:.3e} / {diff_b:.3e} / {diff_c:.3e}"
    );
}

#[test]
fn criterion_4_truncation_semantics() {
    // rho=2, N=5: equal to full BPTT of the 2-step suffix with the state
    // after step 3 frozen.
    let mut s = Store::new(401);
    let (in_size, out_size) = (2, 3);
    let mut lstm = Lstm::with_rho(&mut s, in_size, out_size, 2).unwrap();
    let xs: Vec<Tensor> = (0..5).map(|_| randn(&mut s, &[1, in_size])).collect();
    let ws: Vec<Tensor> = (0..5).map(|_| randn(&mut s, &[1, out_size])).collect();

    zero_grad_parameters(&lstm, &mut s);
    for (x, w) in xs.iter().zip(&ws) {
        lstm.forward(&mut s, &Value::Tensor(x.clone())).unwrap();
        lstm.backward(&mut s, &Value::Tensor(x.clone()), &Value::Tensor(w.clone()))
            .unwrap();
    }
    let frozen = lstm.hidden_state(&s, 3).unwrap();
    lstm.backward_through_time(&mut s).unwrap();
    let lib_grads = lstm_grads(&s, &lstm.params());
    let lib_gx4 = lstm.grad_inputs()[&4].clone().into_tensor().unwrap();
    let lib_gx5 = lstm.grad_inputs()[&5].clone().into_tensor().unwrap();

    let st = frozen.as_table().unwrap();
    let init = (
        st[0].as_tensor().unwrap().clone(),
        st[1].as_tensor().unwrap().clone(),
    );
    let (_, hand_gxs, hand_grads) = lstm_hand_run(
        &mut s,
        &lstm.params(),
        in_size,
        out_size,
        &xs[3..],
        &ws[3..],
        Some(init),
    );

    let mut diff = lib_gx4.max_abs_diff(&hand_gxs[0]);
    diff = diff.max(lib_gx5.max_abs_diff(&hand_gxs[1]));
    for (a, b) in lib_grads.iter().zip(&hand_grads) {
        diff = diff.max(a.max_abs_diff(b));
    }
    assert!(diff <= EQ_TOL, "criterion 4: truncation diff {diff:.3e}");

    // Memory bound: live step states stay within rho+1 for N=1000.
    let mut s = Store::new(402);
    let rho = 2usize;
    let mut lstm = Lstm::with_rho(&mut s, 2, 2, rho).unwrap();
    let x = Value::Tensor(randn(&mut s, &[1, 2]));
    let mut max_live = 0usize;
    for _ in 0..1000 {
        lstm.forward(&mut s, &x).unwrap();
        max_live = max_live.max(lstm.live_step_states(&s));
    }
    assert!(
        max_live <= rho + 1,
        "criterion 4: live step states {max_live} exceed rho+1"
    );

    println!(
        "PASS criterion 4: truncation diff {diff:.3e}, live step states {max_live} <= {}",
        rho + 1
    );
}

#[test]
fn criterion_6a_reinforce_estimator_unbiased() {
    // Monte-Carlo mean of the score-function gradient for r(z) = z must be
    // within 1% of the analytic d/dmu E[z] = 1 at 1e6 samples.
    let mut s = Store::new(601);
    let n = 1_000_000usize;
    let mu = 0.3;
    let mut node = ReinforceNormal::new(1.0).unwrap();
    let mean = Value::Tensor(Tensor::new(vec![n, 1], vec![mu; n]).unwrap());
    let z = node.forward(&mut s, &mean).unwrap();
    let reward = Tensor::vec1(z.as_tensor().unwrap().data());
    node.reinforce(&reward);
    let zero = Value::Tensor(Tensor::zeros(vec![n, 1]));
    let grad = node.backward(&mut s, &mean, &zero).unwrap();
    let est = -grad.as_tensor().unwrap().sum() / n as f64;
    assert!(
        (est - 1.0).abs() <= 0.01,
        "criterion 6a: estimator mean {est} not within 1% of 1"
    );
    println!("PASS criterion 6a: REINFORCE estimator mean {est:.4} vs analytic 1.0");
}

#[test]
fn criterion_7_serialization_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut count = 0usize;
    for entry in all_modules() {
        let mut store = Store::new(7000 + count as u64);
        let mut module = (entry.build)(&mut store);
        let mut rng = test_rng(700 + count as u64);
        let input = (entry.sample_input)(&mut rng);
        if entry.roundtrip_eval {
            module.set_training(false);
        }

        module.forget(&mut store);
        let before = module.forward(&mut store, &input).unwrap();

        let path = dir.path().join(format!("{}.rnn", entry.name));
        serialize::save(&path, module.as_ref(), &store).unwrap();
        let (mut store2, mut loaded) = serialize::load(&path, 1).unwrap();
        if entry.roundtrip_eval {
            loaded.set_training(false);
        }
        let after = loaded.forward(&mut store2, &input).unwrap();

        assert!(
            before == after,
            "criterion 7 [{}]: forward not bit-identical after round-trip",
            entry.name
        );
        count += 1;
    }
    println!("PASS criterion 7: serialization round-trip bit-exact for {count} module types");
}
