//! One entry per concrete module type shipped by the library, each with a
//! toy-sized builder and a sample input. Drives the gradient-check runner
//! and the serialization round-trip check, so coverage of both is exactly
//! "every registered type" and forgetting to register a new module shows up
//! as a failing coverage assertion.

use crate::attention::{GlimpseCrop, RecurrentAttention};
use crate::containers::{
    CAddTable, CMulTable, ConcatTable, ParallelTable, SelectTable, Sequential,
};
use crate::gradcheck::InputCheck;
use crate::layers::{Add, CMul, Convert, Identity, Linear, LogSoftMax, LookupTable, Sigmoid, Tanh};
use crate::module::Module;
use crate::recurrent::{Lstm, Recurrence, Recurrent, Recursor};
use crate::reinforce::ReinforceNormal;
use crate::rng::Rng;
use crate::sequencer::{Repeater, Sequencer};
use crate::store::Store;
use crate::tensor::Tensor;
use crate::value::Value;

/// How the gradient checker should drive the module.
#[derive(Clone, Debug)]
pub enum GradMode {
    /// Single forward/backward; `input` selects which input slots to difference.
    Plain { input: InputCheck },
    /// Same, but in evaluation mode (for stochastic nodes, whose training
    /// forward is not a deterministic function).
    EvalPlain { input: InputCheck },
    /// Stepwise drive over a sequence of inputs plus backwardThroughTime.
    Stepwise { steps: usize },
}

pub struct RegistryEntry {
    pub name: &'static str,
    pub build: fn(&mut Store) -> Box<dyn Module>,
    pub sample_input: fn(&mut Rng) -> Value,
    pub grad: GradMode,
    /// Forward the round-trip comparison in evaluation mode (stochastic nodes).
    pub roundtrip_eval: bool,
}

fn t(shape: &[usize], rng: &mut Rng) -> Value {
    Value::Tensor(Tensor::randn(shape.to_vec(), rng))
}

fn plain(input: InputCheck) -> GradMode {
    GradMode::Plain { input }
}

/// Every concrete module type shipped by the library, at toy sizes.
pub fn all_modules() -> Vec<RegistryEntry> {
    vec![
        RegistryEntry {
            name: "linear",
            build: |s| Box::new(Linear::new(s, 3, 2).unwrap()),
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "sigmoid",
            build: |_| Box::new(Sigmoid::new()),
            sample_input: |r| t(&[2, 4], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "tanh",
            build: |_| Box::new(Tanh::new()),
            sample_input: |r| t(&[2, 4], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "log_softmax",
            build: |_| Box::new(LogSoftMax::new()),
            sample_input: |r| t(&[3, 4], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "lookup_table",
            build: |s| Box::new(LookupTable::new(s, 5, 3).unwrap()),
            sample_input: |r| {
                Value::Tensor(Tensor::random_int(vec![3], 1, 5, r).unwrap())
            },
            // Index inputs carry no gradient.
            grad: plain(InputCheck::None),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "identity",
            build: |_| Box::new(Identity::new()),
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "cmul",
            build: |s| Box::new(CMul::new(s, 3).unwrap()),
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "add",
            build: |s| Box::new(Add::new(s, 3).unwrap()),
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "convert",
            build: |_| Box::new(Convert::new()),
            sample_input: |r| t(&[2, 2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "sequential",
            build: |s| {
                Box::new(
                    Sequential::new()
                        .add(Box::new(Linear::new(s, 3, 3).unwrap()))
                        .add(Box::new(Tanh::new()))
                        .add(Box::new(Linear::new(s, 3, 2).unwrap())),
                )
            },
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "parallel_table",
            build: |s| {
                Box::new(
                    ParallelTable::new()
                        .add(Box::new(Linear::new(s, 3, 2).unwrap()))
                        .add(Box::new(Tanh::new())),
                )
            },
            sample_input: |r| Value::table(vec![t(&[2, 3], r), t(&[2, 2], r)]),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "concat_table",
            build: |s| {
                Box::new(
                    ConcatTable::new()
                        .add(Box::new(Linear::new(s, 3, 2).unwrap()))
                        .add(Box::new(Identity::new())),
                )
            },
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "cadd_table",
            build: |_| Box::new(CAddTable::new()),
            sample_input: |r| Value::table(vec![t(&[2, 3], r), t(&[2, 3], r)]),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "cmul_table",
            build: |_| Box::new(CMulTable::new()),
            sample_input: |r| Value::table(vec![t(&[2, 3], r), t(&[2, 3], r)]),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "select_table",
            build: |_| Box::new(SelectTable::new(-1)),
            sample_input: |r| Value::table(vec![t(&[2, 3], r), t(&[2, 3], r)]),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "recurrent",
            build: |s| {
                let input_layer = Box::new(Linear::new(s, 3, 4).unwrap());
                let feedback = Box::new(Linear::new(s, 4, 4).unwrap());
                let transfer = Box::new(Sigmoid::new());
                Box::new(Recurrent::new(s, 4, input_layer, feedback, transfer, 8).unwrap())
            },
            sample_input: |r| t(&[2, 3], r),
            grad: GradMode::Stepwise { steps: 3 },
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "lstm",
            build: |s| Box::new(Lstm::new(s, 3, 4).unwrap()),
            sample_input: |r| t(&[2, 3], r),
            grad: GradMode::Stepwise { steps: 3 },
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "recurrence",
            build: |s| {
                // The language-model step module without the lookup: a linear
                // on the input joined additively with a linear on the state.
                let rm = Sequential::new()
                    .add(Box::new(
                        ParallelTable::new()
                            .add(Box::new(Linear::new(s, 3, 4).unwrap()))
                            .add(Box::new(Linear::new(s, 4, 4).unwrap())),
                    ))
                    .add(Box::new(CAddTable::new()))
                    .add(Box::new(Sigmoid::new()));
                Box::new(Recurrence::with_rho(s, Box::new(rm), 4, 1, 8).unwrap())
            },
            sample_input: |r| t(&[2, 3], r),
            grad: GradMode::Stepwise { steps: 3 },
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "recursor",
            build: |s| {
                let inner = Box::new(Linear::new(s, 3, 2).unwrap());
                Box::new(Recursor::with_rho(s, inner, 8))
            },
            sample_input: |r| t(&[2, 3], r),
            grad: GradMode::Stepwise { steps: 3 },
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "sequencer",
            build: |s| {
                let lstm = Box::new(Lstm::new(s, 3, 3).unwrap());
                Box::new(Sequencer::new(s, lstm))
            },
            sample_input: |r| {
                Value::table(vec![t(&[2, 3], r), t(&[2, 3], r), t(&[2, 3], r)])
            },
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "repeater",
            build: |s| {
                let input_layer = Box::new(Linear::new(s, 3, 3).unwrap());
                let feedback = Box::new(Linear::new(s, 3, 3).unwrap());
                let rec =
                    Recurrent::new(s, 3, input_layer, feedback, Box::new(Sigmoid::new()), 8)
                        .unwrap();
                Box::new(Repeater::new(s, Box::new(rec), 3).unwrap())
            },
            sample_input: |r| t(&[2, 3], r),
            grad: plain(InputCheck::All),
            roundtrip_eval: false,
        },
        RegistryEntry {
            name: "recurrent_attention",
            build: |s| Box::new(build_toy_attention(s, true)),
            sample_input: |r| t(&[2, 16], r),
            // The location input of the crop is non-differentiable; its
            // parameters correctly receive zero gradient on both sides.
            grad: plain(InputCheck::All),
            roundtrip_eval: true,
        },
        RegistryEntry {
            name: "reinforce_normal",
            build: |_| Box::new(ReinforceNormal::new(0.5).unwrap()),
            sample_input: |r| t(&[3, 2], r),
            grad: GradMode::EvalPlain {
                input: InputCheck::All,
            },
            roundtrip_eval: true,
        },
        RegistryEntry {
            name: "glimpse_crop",
            build: |_| Box::new(GlimpseCrop::new(4, 2).unwrap()),
            sample_input: |r| {
                Value::table(vec![
                    t(&[2, 16], r),
                    Value::Tensor(Tensor::rand_uniform(vec![2, 2], -0.8, 0.8, r)),
                ])
            },
            grad: plain(InputCheck::Slots(vec![true, false])),
            roundtrip_eval: false,
        },
    ]
}

/// A small recurrent-attention network over 4x4 images with 2x2 glimpses.
/// With `deterministic` the action's sampler collapses onto its mean, making
/// the whole rollout a deterministic function (the gradcheck test hook).
pub fn build_toy_attention(store: &mut Store, deterministic: bool) -> RecurrentAttention {
    let hidden = 3;
    let glimpse = Sequential::new()
        .add(Box::new(GlimpseCrop::new(4, 2).unwrap()))
        .add(Box::new(Linear::new(store, 4, hidden).unwrap()));
    let rm = Sequential::new()
        .add(Box::new(
            ParallelTable::new()
                .add(Box::new(glimpse))
                .add(Box::new(Linear::new(store, hidden, hidden).unwrap())),
        ))
        .add(Box::new(CAddTable::new()))
        .add(Box::new(Tanh::new()));
    let core = Recurrence::with_rho(store, Box::new(rm), hidden, 1, 8).unwrap();
    let sampler = ReinforceNormal::new(0.3).unwrap();
    let sampler = if deterministic {
        sampler.deterministic()
    } else {
        sampler
    };
    let action = Sequential::new()
        .add(Box::new(Linear::new(store, hidden, 2).unwrap()))
        .add(Box::new(Tanh::new()))
        .add(Box::new(sampler));
    RecurrentAttention::new(store, Box::new(core), Box::new(action), 2, hidden).unwrap()
}
