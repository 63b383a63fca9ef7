//! Task trainers and evaluators. Every run is fully determined by its seed:
//! model initialization, data generation and batch shuffling all draw from
//! generators derived from it.

use std::time::Instant;

use rnn::{
    update_parameters, zero_grad_parameters, ClassNllCriterion, Criterion, Error, Module, Result,
    RewardCriterion, Rng, Store, Tensor, Value,
};

use crate::config::{Task, TrainConfig};
use crate::data::{
    batch_steps, gen_bright_quadrant, gen_copy_task, gen_majority_task, stack_rows, CharCorpus,
};
use crate::metrics::{MetricRow, Metrics};
use crate::models::{attention_model, next_symbol_model, sentiment_model};

fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.int_range(0, i as i64) as usize;
        items.swap(i, j);
    }
}

/// Mean loss and accuracy over one pass.
#[derive(Clone, Copy, Debug, Default)]
struct PassStats {
    loss_sum: f64,
    correct: usize,
    count: usize,
}

impl PassStats {
    fn add_step(&mut self, loss: f64, log_probs: &Tensor, targets: &Tensor) {
        self.loss_sum += loss * targets.len() as f64;
        for (row, &t) in log_probs.argmax_rows().iter().zip(targets.data()) {
            if *row as i64 + 1 == t as i64 {
                self.correct += 1;
            }
        }
        self.count += targets.len();
    }

    fn loss(&self) -> f64 {
        self.loss_sum / self.count.max(1) as f64
    }

    fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }
}

/// Windows of `(input, target)` index sequences cut from a stream, where the
/// target is the next symbol.
fn stream_windows(stream: &[usize], rho: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut windows = Vec::new();
    let mut start = 0;
    while start + rho < stream.len() {
        windows.push((
            stream[start..start + rho].to_vec(),
            stream[start + 1..start + rho + 1].to_vec(),
        ));
        start += rho;
    }
    windows
}

/// Groups windows into batches of per-step `[batch]` tensors.
fn window_batches(
    windows: &[(Vec<usize>, Vec<usize>)],
    batch_size: usize,
) -> Vec<(Vec<Tensor>, Vec<Tensor>)> {
    windows
        .chunks(batch_size)
        .map(|chunk| {
            let ins: Vec<&[usize]> = chunk.iter().map(|(i, _)| i.as_slice()).collect();
            let tgts: Vec<&[usize]> = chunk.iter().map(|(_, t)| t.as_slice()).collect();
            (batch_steps(&ins), batch_steps(&tgts))
        })
        .collect()
}

/// Interleaves the windows of `batch_size` parallel streams so that batch k
/// holds window k of every stream; carried state then lines up row-wise.
fn parallel_stream_batches(
    stream: &[usize],
    rho: usize,
    batch_size: usize,
) -> Vec<(Vec<Tensor>, Vec<Tensor>)> {
    let stream_len = stream.len() / batch_size;
    if stream_len < rho + 1 {
        return Vec::new();
    }
    let streams: Vec<&[usize]> = (0..batch_size)
        .map(|b| &stream[b * stream_len..(b + 1) * stream_len])
        .collect();
    let per_stream: Vec<Vec<(Vec<usize>, Vec<usize>)>> = streams
        .iter()
        .map(|s| stream_windows(s, rho))
        .collect();
    let k = per_stream.iter().map(Vec::len).min().unwrap_or(0);
    (0..k)
        .map(|w| {
            let ins: Vec<&[usize]> = per_stream.iter().map(|s| s[w].0.as_slice()).collect();
            let tgts: Vec<&[usize]> = per_stream.iter().map(|s| s[w].1.as_slice()).collect();
            (batch_steps(&ins), batch_steps(&tgts))
        })
        .collect()
}

/// One forward/backward/update pass of a next-symbol model over one batch.
fn next_symbol_batch(
    store: &mut Store,
    model: &mut dyn Module,
    crit: &mut ClassNllCriterion,
    inputs: &[Tensor],
    targets: &[Tensor],
    lr: Option<f64>,
    stats: &mut PassStats,
) -> Result<()> {
    let t_len = inputs.len() as f64;
    let input = Value::table(inputs.iter().cloned().map(Value::Tensor).collect());
    let output = model.forward(store, &input)?;
    let outs = output.as_table()?;
    let mut grads = Vec::with_capacity(outs.len());
    for (out, target) in outs.iter().zip(targets) {
        let loss = crit.forward(out, target)?;
        stats.add_step(loss, out.as_tensor()?, target);
        if lr.is_some() {
            let g = crit.backward(out, target)?.into_tensor()?;
            grads.push(Value::Tensor(g.scale(1.0 / t_len)));
        }
    }
    if let Some(lr) = lr {
        zero_grad_parameters(model, store);
        model.backward(store, &input, &Value::table(grads))?;
        update_parameters(model, store, lr);
    }
    Ok(())
}

fn next_symbol_pass(
    store: &mut Store,
    model: &mut dyn Module,
    batches: &[(Vec<Tensor>, Vec<Tensor>)],
    lr: Option<f64>,
) -> Result<PassStats> {
    let mut crit = ClassNllCriterion::new();
    let mut stats = PassStats::default();
    for (inputs, targets) in batches {
        next_symbol_batch(store, model, &mut crit, inputs, targets, lr, &mut stats)?;
    }
    Ok(stats)
}

fn push_epoch_rows(
    metrics: &mut Metrics,
    epoch: usize,
    train: PassStats,
    valid: PassStats,
    started: Instant,
) {
    metrics.push(MetricRow {
        epoch,
        split: "train",
        loss: train.loss(),
        accuracy: train.accuracy(),
    });
    metrics.push(MetricRow {
        epoch,
        split: "valid",
        loss: valid.loss(),
        accuracy: valid.accuracy(),
    });
    eprintln!(
        "epoch {epoch}: train loss {:.4}, valid loss {:.4} ({} ms)",
        train.loss(),
        valid.loss(),
        started.elapsed().as_millis()
    );
}

/// Character language model over rho-length windows of a text corpus.
pub fn train_charlm(cfg: &TrainConfig) -> Result<(Metrics, Store, Box<dyn Module>)> {
    let path = cfg
        .data_path
        .as_ref()
        .ok_or_else(|| Error::Config("charlm needs --data pointing at a text file".into()))?;
    let corpus = CharCorpus::from_file(path)?;
    let vocab = corpus.vocab_size();
    let (train_stream, valid_stream) = corpus.split();
    let (train_stream, valid_stream) = (train_stream.to_vec(), valid_stream.to_vec());

    let mut store = Store::new(cfg.seed);
    let mut model: Box<dyn Module> = Box::new(next_symbol_model(
        &mut store,
        cfg.model,
        vocab,
        cfg.hidden_size,
        cfg.rho,
        cfg.remember,
    )?);
    let mut shuffle_rng = store.rng.split();

    // A remembering model carries state between windows, so validation has
    // to present them in stream order with a fixed batch layout.
    let valid_batches = if cfg.remember {
        let streams = cfg.batch_size.min(valid_stream.len() / (cfg.rho + 1)).max(1);
        parallel_stream_batches(&valid_stream, cfg.rho, streams)
    } else {
        window_batches(&stream_windows(&valid_stream, cfg.rho), cfg.batch_size)
    };
    if valid_batches.is_empty() {
        return Err(Error::Config(
            "validation split too small for the requested rho".into(),
        ));
    }
    let mut metrics = Metrics::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let train_batches = if cfg.remember {
            parallel_stream_batches(&train_stream, cfg.rho, cfg.batch_size)
        } else {
            let mut windows = stream_windows(&train_stream, cfg.rho);
            shuffle(&mut windows, &mut shuffle_rng);
            window_batches(&windows, cfg.batch_size)
        };
        if train_batches.is_empty() {
            return Err(Error::Config(
                "corpus too small for the requested rho and batch size".into(),
            ));
        }
        model.forget(&mut store);
        let train_stats = next_symbol_pass(&mut store, model.as_mut(), &train_batches, Some(cfg.lr))?;
        model.set_training(false);
        model.forget(&mut store);
        let valid_stats = next_symbol_pass(&mut store, model.as_mut(), &valid_batches, None)?;
        model.set_training(true);
        model.forget(&mut store);
        push_epoch_rows(&mut metrics, epoch, train_stats, valid_stats, started);
    }
    Ok((metrics, store, model))
}

/// Next-step identity prediction: emit each input symbol back out.
pub fn train_copy(cfg: &TrainConfig) -> Result<(Metrics, Store, Box<dyn Module>)> {
    let vocab = 4usize;
    let mut store = Store::new(cfg.seed);
    let mut data_rng = store.rng.split();
    let (train_in, train_tgt) = gen_copy_task(cfg.rho, vocab, 512, &mut data_rng)?;
    let (valid_in, valid_tgt) = gen_copy_task(cfg.rho, vocab, 128, &mut data_rng)?;

    let mut model: Box<dyn Module> = Box::new(next_symbol_model(
        &mut store,
        cfg.model,
        vocab,
        cfg.hidden_size,
        cfg.rho,
        false,
    )?);
    let mut shuffle_rng = store.rng.split();

    let to_batches = |ins: &[Vec<usize>], tgts: &[Vec<usize>], batch: usize| {
        let windows: Vec<(Vec<usize>, Vec<usize>)> =
            ins.iter().cloned().zip(tgts.iter().cloned()).collect();
        window_batches(&windows, batch)
    };
    let valid_batches = to_batches(&valid_in, &valid_tgt, cfg.batch_size);

    let mut metrics = Metrics::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_in.len()).collect();
        shuffle(&mut order, &mut shuffle_rng);
        let shuffled_in: Vec<Vec<usize>> = order.iter().map(|&i| train_in[i].clone()).collect();
        let shuffled_tgt: Vec<Vec<usize>> = order.iter().map(|&i| train_tgt[i].clone()).collect();
        let train_batches = to_batches(&shuffled_in, &shuffled_tgt, cfg.batch_size);
        model.forget(&mut store);
        let train_stats = next_symbol_pass(&mut store, model.as_mut(), &train_batches, Some(cfg.lr))?;
        model.set_training(false);
        model.forget(&mut store);
        let valid_stats = next_symbol_pass(&mut store, model.as_mut(), &valid_batches, None)?;
        model.set_training(true);
        model.forget(&mut store);
        push_epoch_rows(&mut metrics, epoch, train_stats, valid_stats, started);
    }
    Ok((metrics, store, model))
}

fn sentiment_batches(
    seqs: &[Vec<usize>],
    labels: &[usize],
    batch_size: usize,
) -> Vec<(Vec<Tensor>, Tensor)> {
    (0..seqs.len())
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|idx| {
            let ins: Vec<&[usize]> = idx.iter().map(|&i| seqs[i].as_slice()).collect();
            let tgt = Tensor::vec1(&idx.iter().map(|&i| labels[i] as f64).collect::<Vec<_>>());
            (batch_steps(&ins), tgt)
        })
        .collect()
}

fn sentiment_pass(
    store: &mut Store,
    model: &mut dyn Module,
    batches: &[(Vec<Tensor>, Tensor)],
    lr: Option<f64>,
) -> Result<PassStats> {
    let mut crit = ClassNllCriterion::new();
    let mut stats = PassStats::default();
    for (inputs, targets) in batches {
        let input = Value::table(inputs.iter().cloned().map(Value::Tensor).collect());
        let output = model.forward(store, &input)?;
        let loss = crit.forward(&output, targets)?;
        stats.add_step(loss, output.as_tensor()?, targets);
        if let Some(lr) = lr {
            let g = crit.backward(&output, targets)?;
            zero_grad_parameters(model, store);
            model.backward(store, &input, &g)?;
            update_parameters(model, store, lr);
        }
    }
    Ok(stats)
}

/// Sequence classification: the label is the majority symbol.
pub fn train_sentiment(cfg: &TrainConfig) -> Result<(Metrics, Store, Box<dyn Module>)> {
    let mut store = Store::new(cfg.seed);
    let mut data_rng = store.rng.split();
    let (train_in, train_lbl) = gen_majority_task(cfg.rho, 512, &mut data_rng);
    let (valid_in, valid_lbl) = gen_majority_task(cfg.rho, 128, &mut data_rng);

    let mut model: Box<dyn Module> = Box::new(sentiment_model(
        &mut store,
        cfg.model,
        2,
        cfg.hidden_size,
        cfg.rho + 1, // sequences are odd-length
        2,
    )?);
    let mut shuffle_rng = store.rng.split();

    let valid_batches = sentiment_batches(&valid_in, &valid_lbl, cfg.batch_size);
    let mut metrics = Metrics::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_in.len()).collect();
        shuffle(&mut order, &mut shuffle_rng);
        let ins: Vec<Vec<usize>> = order.iter().map(|&i| train_in[i].clone()).collect();
        let lbls: Vec<usize> = order.iter().map(|&i| train_lbl[i]).collect();
        let train_batches = sentiment_batches(&ins, &lbls, cfg.batch_size);
        model.forget(&mut store);
        let train_stats = sentiment_pass(&mut store, model.as_mut(), &train_batches, Some(cfg.lr))?;
        model.set_training(false);
        model.forget(&mut store);
        let valid_stats = sentiment_pass(&mut store, model.as_mut(), &valid_batches, None)?;
        model.set_training(true);
        model.forget(&mut store);
        push_epoch_rows(&mut metrics, epoch, train_stats, valid_stats, started);
    }
    Ok((metrics, store, model))
}

fn attention_batches(
    images: &[Tensor],
    labels: &[usize],
    batch_size: usize,
) -> Vec<(Tensor, Tensor)> {
    (0..images.len())
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|idx| {
            let rows: Vec<&Tensor> = idx.iter().map(|&i| &images[i]).collect();
            let tgt = Tensor::vec1(&idx.iter().map(|&i| labels[i] as f64).collect::<Vec<_>>());
            (stack_rows(&rows), tgt)
        })
        .collect()
}

fn attention_pass(
    store: &mut Store,
    model: &mut dyn Module,
    crit: &mut RewardCriterion,
    batches: &[(Tensor, Tensor)],
    lr: Option<f64>,
) -> Result<PassStats> {
    let mut stats = PassStats::default();
    for (images, targets) in batches {
        let input = Value::Tensor(images.clone());
        let output = model.forward(store, &input)?;
        let loss = crit.forward(&output, targets)?;
        stats.add_step(loss, output.as_tensor()?, targets);
        if let Some(lr) = lr {
            // Hand the baselined reward to the stochastic location policy,
            // then backpropagate the classification loss.
            crit.broadcast_reward(model)?;
            let g = crit.backward(&output, targets)?;
            zero_grad_parameters(model, store);
            model.backward(store, &input, &g)?;
            update_parameters(model, store, lr);
        }
    }
    Ok(stats)
}

/// Bright-quadrant attention toy task on flattened 8x8 images.
pub fn train_attention(cfg: &TrainConfig) -> Result<(Metrics, Store, Box<dyn Module>)> {
    let (image_size, patch, glimpses, classes) = (8usize, 4usize, 3usize, 4usize);
    let mut store = Store::new(cfg.seed);
    let mut data_rng = store.rng.split();
    let (train_imgs, train_lbl) = gen_bright_quadrant(image_size, 256, &mut data_rng);
    let (valid_imgs, valid_lbl) = gen_bright_quadrant(image_size, 128, &mut data_rng);

    let mut model: Box<dyn Module> = Box::new(attention_model(
        &mut store,
        image_size,
        patch,
        cfg.hidden_size,
        glimpses,
        classes,
        0.15,
    )?);
    let mut shuffle_rng = store.rng.split();
    let mut crit = RewardCriterion::new();

    let valid_batches = attention_batches(&valid_imgs, &valid_lbl, cfg.batch_size);
    let mut metrics = Metrics::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_imgs.len()).collect();
        shuffle(&mut order, &mut shuffle_rng);
        let imgs: Vec<Tensor> = order.iter().map(|&i| train_imgs[i].clone()).collect();
        let lbls: Vec<usize> = order.iter().map(|&i| train_lbl[i]).collect();
        let train_batches = attention_batches(&imgs, &lbls, cfg.batch_size);
        let train_stats =
            attention_pass(&mut store, model.as_mut(), &mut crit, &train_batches, Some(cfg.lr))?;
        model.set_training(false);
        // A throwaway criterion so validation never moves the training baseline.
        let valid_stats = attention_pass(
            &mut store,
            model.as_mut(),
            &mut RewardCriterion::new(),
            &valid_batches,
            None,
        )?;
        model.set_training(true);
        push_epoch_rows(&mut metrics, epoch, train_stats, valid_stats, started);
    }
    Ok((metrics, store, model))
}

pub fn run_train(cfg: &TrainConfig) -> Result<(Metrics, Store, Box<dyn Module>)> {
    cfg.validate()?;
    match cfg.task {
        Task::Charlm => train_charlm(cfg),
        Task::Copy => train_copy(cfg),
        Task::Sentiment => train_sentiment(cfg),
        Task::AttentionToy => train_attention(cfg),
    }
}

/// Evaluates a serialized model on the task's validation data and returns a
/// single metric row.
pub fn run_eval(
    cfg: &TrainConfig,
    store: &mut Store,
    model: &mut dyn Module,
) -> Result<MetricRow> {
    model.set_training(false);
    model.forget(store);
    let stats = match cfg.task {
        Task::Charlm => {
            let path = cfg
                .data_path
                .as_ref()
                .ok_or_else(|| Error::Config("eval needs --data for charlm".into()))?;
            let corpus = CharCorpus::from_file(path)?;
            let (_, valid) = corpus.split();
            let batches = if cfg.remember {
                let streams = cfg.batch_size.min(valid.len() / (cfg.rho + 1)).max(1);
                parallel_stream_batches(valid, cfg.rho, streams)
            } else {
                window_batches(&stream_windows(valid, cfg.rho), cfg.batch_size)
            };
            next_symbol_pass(store, model, &batches, None)?
        }
        Task::Copy => {
            let mut data_rng = Rng::new(cfg.seed).split();
            let (_, _) = gen_copy_task(cfg.rho, 4, 512, &mut data_rng)?; // skip the train set
            let (valid_in, valid_tgt) = gen_copy_task(cfg.rho, 4, 128, &mut data_rng)?;
            let windows: Vec<(Vec<usize>, Vec<usize>)> =
                valid_in.into_iter().zip(valid_tgt).collect();
            let batches = window_batches(&windows, cfg.batch_size);
            next_symbol_pass(store, model, &batches, None)?
        }
        Task::Sentiment => {
            let mut data_rng = Rng::new(cfg.seed).split();
            let _ = gen_majority_task(cfg.rho, 512, &mut data_rng);
            let (valid_in, valid_lbl) = gen_majority_task(cfg.rho, 128, &mut data_rng);
            let batches = sentiment_batches(&valid_in, &valid_lbl, cfg.batch_size);
            sentiment_pass(store, model, &batches, None)?
        }
        Task::AttentionToy => {
            let mut data_rng = Rng::new(cfg.seed).split();
            let _ = gen_bright_quadrant(8, 256, &mut data_rng);
            let (valid_imgs, valid_lbl) = gen_bright_quadrant(8, 128, &mut data_rng);
            let batches = attention_batches(&valid_imgs, &valid_lbl, cfg.batch_size);
            let mut crit = RewardCriterion::new();
            attention_pass(store, model, &mut crit, &batches, None)?
        }
    };
    Ok(MetricRow {
        epoch: 0,
        split: "eval",
        loss: stats.loss(),
        accuracy: stats.accuracy(),
    })
}
