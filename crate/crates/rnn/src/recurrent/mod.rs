//! Modules that manage their own time-step recursion: per-step clones
//! sharing parameter storage, a bounded state history, and truncated
//! backpropagation through time.
//!
//! Each recurrent module allocates one [`RecurrentCell`](crate::store::RecurrentCell)
//! in the store. The cell holds everything that must be shared between
//! structural copies of the module (the step counter, state history, recorded
//! gradOutputs and the gradient carried between steps during a BPTT walk), so
//! a step clone of a recurrent module behaves as the same module.

mod lstm;
mod recurrence;
mod recursor;
mod simple;

pub use lstm::{Lstm, LstmParams};
pub use recurrence::Recurrence;
pub use recursor::Recursor;
pub use simple::Recurrent;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::module::Module;
use crate::store::{CellId, Store};
use crate::value::Value;

/// Effectively unbounded BPTT window, used when `rho` is omitted.
pub const DEFAULT_RHO: usize = 9999;

/// Leading extent of the first leaf tensor: the batch size under the
/// batch-first convention.
pub(crate) fn leading_dim(v: &Value) -> usize {
    match v {
        Value::Tensor(t) => t.shape()[0],
        Value::Table(entries) => leading_dim(&entries[0]),
    }
}

/// Begins step `t = step + 1`; stepwise-backward bookkeeping restarts.
pub(crate) fn advance_step(store: &mut Store, cell: CellId) -> usize {
    let cell = store.cell_mut(cell);
    cell.backwards_since_forward = 0;
    cell.step + 1
}

/// Records step `t`'s recurrent state and drops entries outside the window.
pub(crate) fn commit_step(
    store: &mut Store,
    cell: CellId,
    t: usize,
    state: Value,
    rho: usize,
    training: bool,
) {
    let cell = store.cell_mut(cell);
    cell.step = t;
    cell.hist.insert(t, state);
    let keep = if training {
        t.saturating_sub(rho).max(1)
    } else {
        t
    };
    cell.evict_before(keep);
}

/// Stepwise backward of the legacy protocol: keep a copy of the provided
/// gradOutput for the step it belongs to. The first backward after a forward
/// targets the last forwarded step; each further backward without an
/// intervening forward targets the step before, so reverse-order walks land
/// on the right steps as well. Returns a zero placeholder — valid input
/// gradients only exist after `backward_through_time`.
pub(crate) fn record_grad_output(
    store: &mut Store,
    cell: CellId,
    input: &Value,
    grad_output: &Value,
) -> Result<Value> {
    let cell = store.cell_mut(cell);
    if cell.step == 0 {
        return Err(Error::Protocol("backward before any forward".into()));
    }
    if cell.backwards_since_forward >= cell.step {
        return Err(Error::Protocol(
            "more stepwise backward calls than forwarded steps".into(),
        ));
    }
    let target = cell.step - cell.backwards_since_forward;
    cell.grad_outputs.insert(target, grad_output.clone());
    cell.backwards_since_forward += 1;
    Ok(input.zeros_like())
}

/// Keeps only the step clones inside the current BPTT window.
pub(crate) fn evict_bank(bank: &mut BTreeMap<usize, Box<dyn Module>>, t: usize, rho: usize) {
    let keep = t.saturating_sub(rho).max(1);
    bank.retain(|&k, _| k >= keep);
}

/// Live per-step state count: clones plus cached history and gradOutputs.
pub(crate) fn live_states(
    bank: &BTreeMap<usize, Box<dyn Module>>,
    store: &Store,
    cell: CellId,
) -> usize {
    let c = store.cell(cell);
    bank.len().max(c.hist.len()).max(c.grad_outputs.len())
}
