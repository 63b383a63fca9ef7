//! A small recurrent neural network library.
//!
//! Networks are graphs of [`Module`]s exchanging [`Value`]s (tensors or
//! nested tables of tensors). Parameters and parameter gradients live in a
//! [`Store`]; modules hold handles into it, so time-step clones share their
//! weights by construction. Recurrent modules ([`Recurrent`], [`Lstm`],
//! [`Recurrence`], [`Recursor`]) apply a parameter-sharing clone of their
//! step graph at each time-step and run truncated backpropagation through
//! time over a window of `rho` steps. Sequence decorators ([`Sequencer`],
//! [`Repeater`], [`RecurrentAttention`]) consume whole sequences and manage
//! the step lifecycle internally.
//!
//! ```
//! use rnn::{Lstm, Module, Sequencer, Store, Tensor, Value};
//!
//! let mut store = Store::new(42);
//! let lstm = Box::new(Lstm::new(&mut store, 4, 8).unwrap());
//! let mut net = Sequencer::new(&mut store, lstm);
//! let mut rng = store.rng.split();
//! let seq = Value::table(
//!     (0..5)
//!         .map(|_| Value::Tensor(Tensor::randn(vec![2, 4], &mut rng)))
//!         .collect(),
//! );
//! let out = net.forward(&mut store, &seq).unwrap();
//! assert_eq!(out.as_table().unwrap().len(), 5);
//! ```

mod attention;
mod containers;
mod criterion;
mod error;
pub mod gradcheck;
mod layers;
mod module;
mod recurrent;
mod reinforce;
pub mod registry;
mod rng;
mod sequencer;
pub mod serialize;
mod store;
mod tensor;
mod value;

pub use attention::{GlimpseCrop, RecurrentAttention};
pub use containers::{CAddTable, CMulTable, ConcatTable, ParallelTable, SelectTable, Sequential};
pub use criterion::{train_epoch, ClassNllCriterion, Criterion};
pub use error::{Error, Result};
pub use layers::{Add, CMul, Convert, Identity, Linear, LogSoftMax, LookupTable, Sigmoid, Tanh};
pub use module::{
    unique_params, update_parameters, zero_grad_parameters, IoCache, Module, RecurrentModule,
    SerNode,
};
pub use recurrent::{Lstm, LstmParams, Recurrence, Recurrent, Recursor, DEFAULT_RHO};
pub use reinforce::{ReinforceNormal, RewardCriterion};
pub use rng::Rng;
pub use sequencer::{RememberMode, Repeater, Sequencer};
pub use store::{CellId, ParamId, RecurrentCell, Store};
pub use tensor::Tensor;
pub use value::Value;
