use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Universal module I/O type: a tensor leaf or an ordered table of values.
///
/// Tables may nest to any finite depth and are never empty. Sequences are
/// represented as tables with one entry per time-step.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Tensor(Tensor),
    Table(Vec<Value>),
}

impl Value {
    pub fn table(entries: Vec<Value>) -> Value {
        assert!(!entries.is_empty(), "tables must be non-empty");
        Value::Table(entries)
    }

    pub fn as_tensor(&self) -> Result<&Tensor> {
        match self {
            Value::Tensor(t) => Ok(t),
            Value::Table(_) => Err(Error::Type("expected a tensor, found a table".into())),
        }
    }

    pub fn as_table(&self) -> Result<&[Value]> {
        match self {
            Value::Table(vs) => Ok(vs),
            Value::Tensor(_) => Err(Error::Type("expected a table, found a tensor".into())),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor> {
        match self {
            Value::Tensor(t) => Ok(t),
            Value::Table(_) => Err(Error::Type("expected a tensor, found a table".into())),
        }
    }

    pub fn into_table(self) -> Result<Vec<Value>> {
        match self {
            Value::Table(vs) => Ok(vs),
            Value::Tensor(_) => Err(Error::Type("expected a table, found a tensor".into())),
        }
    }

    /// Same nesting structure and the same leaf shapes.
    pub fn same_structure(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Tensor(a), Value::Tensor(b)) => a.shape() == b.shape(),
            (Value::Table(a), Value::Table(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_structure(y))
            }
            _ => false,
        }
    }

    /// Zero-filled value with the same structure as `self`.
    pub fn zeros_like(&self) -> Value {
        match self {
            Value::Tensor(t) => Value::Tensor(Tensor::zeros(t.shape().to_vec())),
            Value::Table(vs) => Value::Table(vs.iter().map(Value::zeros_like).collect()),
        }
    }

    /// Structural elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Value) -> Result<Value> {
        match (self, other) {
            (Value::Tensor(a), Value::Tensor(b)) => Ok(Value::Tensor(a.add(b)?)),
            (Value::Table(a), Value::Table(b)) if a.len() == b.len() => {
                let entries = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| x.add(y))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Value::Table(entries))
            }
            _ => Err(Error::Shape("value add: structures differ".into())),
        }
    }

    /// Visits every leaf tensor in order.
    pub fn for_each_leaf(&self, f: &mut impl FnMut(&Tensor)) {
        match self {
            Value::Tensor(t) => f(t),
            Value::Table(vs) => vs.iter().for_each(|v| v.for_each_leaf(f)),
        }
    }

    pub fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        match self {
            Value::Tensor(t) => f(t),
            Value::Table(vs) => vs.iter_mut().for_each(|v| v.for_each_leaf_mut(f)),
        }
    }

    /// Largest absolute elementwise difference; `other` must have the same structure.
    pub fn max_abs_diff(&self, other: &Value) -> f64 {
        match (self, other) {
            (Value::Tensor(a), Value::Tensor(b)) => a.max_abs_diff(b),
            (Value::Table(a), Value::Table(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| x.max_abs_diff(y))
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }
}

impl From<Tensor> for Value {
    fn from(t: Tensor) -> Value {
        Value::Tensor(t)
    }
}
