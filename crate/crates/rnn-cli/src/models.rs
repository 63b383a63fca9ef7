//! Architecture builders for the harness tasks.

use rnn::{
    CAddTable, GlimpseCrop, Linear, LogSoftMax, LookupTable, Lstm, Module, ParallelTable,
    Recurrence, Recurrent, RecurrentAttention, ReinforceNormal, RememberMode, Result, SelectTable,
    Sequencer, Sequential, Sigmoid, Store, Tanh,
};

use crate::config::ModelKind;

/// The language-model recurrence step: lookup of the current symbol joined
/// additively with a linear map of the previous state, squashed.
fn srn_step(store: &mut Store, vocab: usize, hidden: usize) -> Result<Sequential> {
    Ok(Sequential::new()
        .add(Box::new(
            ParallelTable::new()
                .add(Box::new(LookupTable::new(store, vocab, hidden)?))
                .add(Box::new(Linear::new(store, hidden, hidden)?)),
        ))
        .add(Box::new(CAddTable::new()))
        .add(Box::new(Sigmoid::new())))
}

/// Per-step body of a next-symbol predictor (recurrent core without the
/// output head), mapping a `[batch]` index tensor to `[batch, hidden]`.
fn predictor_body(
    store: &mut Store,
    kind: ModelKind,
    vocab: usize,
    hidden: usize,
    rho: usize,
) -> Result<Box<dyn Module>> {
    Ok(match kind {
        ModelKind::Srn => {
            let input_layer = Box::new(LookupTable::new(store, vocab, hidden)?);
            let feedback = Box::new(Linear::new(store, hidden, hidden)?);
            Box::new(Recurrent::new(
                store,
                hidden,
                input_layer,
                feedback,
                Box::new(Sigmoid::new()),
                rho,
            )?)
        }
        ModelKind::Lstm => Box::new(
            Sequential::new()
                .add(Box::new(LookupTable::new(store, vocab, hidden)?))
                .add(Box::new(Lstm::with_rho(store, hidden, hidden, rho)?)),
        ),
        ModelKind::Recurrence => {
            let rm = srn_step(store, vocab, hidden)?;
            Box::new(Recurrence::with_rho(store, Box::new(rm), hidden, 1, rho)?)
        }
    })
}

/// Sequence-to-sequence next-symbol predictor: the recurrent body followed
/// by a linear head and log-softmax, all applied per step by one sequencer.
pub fn next_symbol_model(
    store: &mut Store,
    kind: ModelKind,
    vocab: usize,
    hidden: usize,
    rho: usize,
    remember: bool,
) -> Result<Sequencer> {
    let body = predictor_body(store, kind, vocab, hidden, rho)?;
    let stack = Sequential::new()
        .add(body)
        .add(Box::new(Linear::new(store, hidden, vocab)?))
        .add(Box::new(LogSoftMax::new()));
    let mode = if remember {
        RememberMode::Both
    } else {
        RememberMode::Neither
    };
    Ok(Sequencer::new(store, Box::new(stack)).remember(mode))
}

/// Sequence classifier: run the recurrence over the sequence, keep the last
/// state, classify it.
pub fn sentiment_model(
    store: &mut Store,
    kind: ModelKind,
    vocab: usize,
    hidden: usize,
    rho: usize,
    classes: usize,
) -> Result<Sequential> {
    let body = predictor_body(store, kind, vocab, hidden, rho)?;
    Ok(Sequential::new()
        .add(Box::new(Sequencer::new(store, body)))
        .add(Box::new(SelectTable::new(-1)))
        .add(Box::new(Linear::new(store, hidden, classes)?))
        .add(Box::new(LogSoftMax::new())))
}

/// Recurrent attention classifier over flattened square images: a glimpse
/// network feeding a recurrence, a stochastic location policy trained with
/// the score-function rule, and a classification head on the last state.
pub fn attention_model(
    store: &mut Store,
    image_size: usize,
    patch: usize,
    hidden: usize,
    n_glimpses: usize,
    classes: usize,
    stdev: f64,
) -> Result<Sequential> {
    let glimpse = Sequential::new()
        .add(Box::new(GlimpseCrop::new(image_size, patch)?))
        .add(Box::new(Linear::new(store, patch * patch, hidden)?));
    let rm = Sequential::new()
        .add(Box::new(
            ParallelTable::new()
                .add(Box::new(glimpse))
                .add(Box::new(Linear::new(store, hidden, hidden)?)),
        ))
        .add(Box::new(CAddTable::new()))
        .add(Box::new(Tanh::new()));
    let core = Recurrence::with_rho(store, Box::new(rm), hidden, 1, n_glimpses.max(1))?;
    let action = Sequential::new()
        .add(Box::new(Linear::new(store, hidden, 2)?))
        .add(Box::new(Tanh::new()))
        .add(Box::new(ReinforceNormal::new(stdev)?));
    let ram = RecurrentAttention::new(store, Box::new(core), Box::new(action), n_glimpses, hidden)?;
    Ok(Sequential::new()
        .add(Box::new(ram))
        .add(Box::new(SelectTable::new(-1)))
        .add(Box::new(Linear::new(store, hidden, classes)?))
        .add(Box::new(LogSoftMax::new())))
}
