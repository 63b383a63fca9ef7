//! Versioned flat model files: a header with the module tree as nested
//! type-tagged records with config integers, followed by the parameter
//! tensors in declaration order as little-endian float64 with shape
//! prefixes. Round-trips are bit-exact. Step caches are never serialized.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::attention::{GlimpseCrop, RecurrentAttention};
use crate::containers::{
    CAddTable, CMulTable, ConcatTable, ParallelTable, SelectTable, Sequential,
};
use crate::error::{Error, Result};
use crate::layers::{Add, CMul, Convert, Identity, Linear, LogSoftMax, LookupTable, Sigmoid, Tanh};
use crate::module::{unique_params, Module, SerNode};
use crate::recurrent::{Lstm, Recurrence, Recurrent, Recursor};
use crate::reinforce::ReinforceNormal;
use crate::sequencer::{RememberMode, Repeater, Sequencer};
use crate::store::Store;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RNNM";
const VERSION: u32 = 1;

/// Every type tag the deserializer understands — the authoritative list of
/// shipped module types, used by coverage assertions.
pub fn known_tags() -> &'static [&'static str] {
    &[
        "linear",
        "sigmoid",
        "tanh",
        "log_softmax",
        "identity",
        "convert",
        "lookup_table",
        "cmul",
        "add",
        "select_table",
        "cadd_table",
        "cmul_table",
        "sequential",
        "parallel_table",
        "concat_table",
        "lstm",
        "recurrent",
        "recurrence",
        "recursor",
        "sequencer",
        "repeater",
        "recurrent_attention",
        "reinforce_normal",
        "glimpse_crop",
    ]
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_i64(w: &mut impl Write, v: i64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_i64(r: &mut impl Read) -> Result<i64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(i64::from_le_bytes(buf))
}

fn write_node(w: &mut impl Write, node: &SerNode) -> Result<()> {
    write_u32(w, node.tag.len() as u32)?;
    w.write_all(node.tag.as_bytes())?;
    write_u32(w, node.config.len() as u32)?;
    for &c in &node.config {
        write_i64(w, c)?;
    }
    write_u32(w, node.children.len() as u32)?;
    for child in &node.children {
        write_node(w, child)?;
    }
    Ok(())
}

fn read_node(r: &mut impl Read) -> Result<SerNode> {
    let tag_len = read_u32(r)? as usize;
    if tag_len > 64 {
        return Err(Error::Format(format!("implausible tag length {tag_len}")));
    }
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag)?;
    let tag = String::from_utf8(tag).map_err(|_| Error::Format("tag is not utf-8".into()))?;
    let n_config = read_u32(r)? as usize;
    let mut config = Vec::with_capacity(n_config);
    for _ in 0..n_config {
        config.push(read_i64(r)?);
    }
    let n_children = read_u32(r)? as usize;
    let mut children = Vec::with_capacity(n_children);
    for _ in 0..n_children {
        children.push(read_node(r)?);
    }
    Ok(SerNode { tag, config, children })
}

pub fn save_to(w: &mut impl Write, module: &dyn Module, store: &Store) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_node(w, &module.ser_node())?;
    let ids = unique_params(module);
    write_u32(w, ids.len() as u32)?;
    for id in ids {
        let t = store.param(id);
        write_u32(w, t.ndim() as u32)?;
        for &d in t.shape() {
            write_i64(w, d as i64)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads a module into a fresh store seeded with `seed`.
pub fn load_from(r: &mut impl Read, seed: u64) -> Result<(Store, Box<dyn Module>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let node = read_node(r)?;
    let mut store = Store::new(seed);
    let module = build_module(&node, &mut store)?;
    let ids = unique_params(module.as_ref());
    let n_params = read_u32(r)? as usize;
    if n_params != ids.len() {
        return Err(Error::Format(format!(
            "file has {n_params} parameter tensors, module declares {}",
            ids.len()
        )));
    }
    for id in ids {
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = read_i64(r)?;
            if d <= 0 {
                return Err(Error::Format(format!("bad tensor extent {d}")));
            }
            shape.push(d as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
        store
            .set_param(id, t)
            .map_err(|e| Error::Format(format!("parameter shape mismatch: {e}")))?;
    }
    Ok((store, module))
}

pub fn save(path: impl AsRef<Path>, module: &dyn Module, store: &Store) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save_to(&mut w, module, store)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<(Store, Box<dyn Module>)> {
    let mut r = BufReader::new(File::open(path)?);
    load_from(&mut r, seed)
}

fn expect_config(node: &SerNode, n: usize) -> Result<()> {
    if node.config.len() != n {
        return Err(Error::Format(format!(
            "node '{}' carries {} config values, expected {n}",
            node.tag,
            node.config.len()
        )));
    }
    Ok(())
}

fn expect_children(node: &SerNode, n: usize) -> Result<()> {
    if node.children.len() != n {
        return Err(Error::Format(format!(
            "node '{}' has {} children, expected {n}",
            node.tag,
            node.children.len()
        )));
    }
    Ok(())
}

fn usize_cfg(node: &SerNode, i: usize) -> Result<usize> {
    let v = node.config[i];
    if v < 0 {
        return Err(Error::Format(format!(
            "node '{}': config[{i}] = {v} must be non-negative",
            node.tag
        )));
    }
    Ok(v as usize)
}

/// Reconstructs a module from its serialized description, allocating fresh
/// parameter storages in the same declaration order the saver used.
pub fn build_module(node: &SerNode, store: &mut Store) -> Result<Box<dyn Module>> {
    let m: Box<dyn Module> = match node.tag.as_str() {
        "linear" => {
            expect_config(node, 3)?;
            Box::new(Linear::with_bias(
                store,
                usize_cfg(node, 0)?,
                usize_cfg(node, 1)?,
                node.config[2] != 0,
            )?)
        }
        "sigmoid" => Box::new(Sigmoid::new()),
        "tanh" => Box::new(Tanh::new()),
        "log_softmax" => Box::new(LogSoftMax::new()),
        "identity" => Box::new(Identity::new()),
        "convert" => Box::new(Convert::new()),
        "lookup_table" => {
            expect_config(node, 2)?;
            Box::new(LookupTable::new(store, usize_cfg(node, 0)?, usize_cfg(node, 1)?)?)
        }
        "cmul" => {
            expect_config(node, 1)?;
            Box::new(CMul::new(store, usize_cfg(node, 0)?)?)
        }
        "add" => {
            expect_config(node, 1)?;
            Box::new(Add::new(store, usize_cfg(node, 0)?)?)
        }
        "select_table" => {
            expect_config(node, 1)?;
            Box::new(SelectTable::new(node.config[0]))
        }
        "cadd_table" => Box::new(CAddTable::new()),
        "cmul_table" => Box::new(CMulTable::new()),
        "sequential" => {
            let mut s = Sequential::new();
            for child in &node.children {
                s.push(build_module(child, store)?);
            }
            Box::new(s)
        }
        "parallel_table" => {
            let mut p = ParallelTable::new();
            for child in &node.children {
                p = p.add(build_module(child, store)?);
            }
            Box::new(p)
        }
        "concat_table" => {
            let mut c = ConcatTable::new();
            for child in &node.children {
                c = c.add(build_module(child, store)?);
            }
            Box::new(c)
        }
        "lstm" => {
            expect_config(node, 3)?;
            Box::new(Lstm::with_rho(
                store,
                usize_cfg(node, 0)?,
                usize_cfg(node, 1)?,
                usize_cfg(node, 2)?,
            )?)
        }
        "recurrent" => {
            expect_config(node, 2)?;
            expect_children(node, 3)?;
            let input_layer = build_module(&node.children[0], store)?;
            let feedback = build_module(&node.children[1], store)?;
            let transfer = build_module(&node.children[2], store)?;
            Box::new(Recurrent::new(
                store,
                usize_cfg(node, 0)?,
                input_layer,
                feedback,
                transfer,
                usize_cfg(node, 1)?,
            )?)
        }
        "recurrence" => {
            expect_config(node, 3)?;
            expect_children(node, 1)?;
            let rm = build_module(&node.children[0], store)?;
            Box::new(Recurrence::with_rho(
                store,
                rm,
                usize_cfg(node, 0)?,
                usize_cfg(node, 1)?,
                usize_cfg(node, 2)?,
            )?)
        }
        "recursor" => {
            expect_config(node, 1)?;
            expect_children(node, 1)?;
            let inner = build_module(&node.children[0], store)?;
            Box::new(Recursor::with_rho(store, inner, usize_cfg(node, 0)?))
        }
        "sequencer" => {
            expect_config(node, 1)?;
            expect_children(node, 1)?;
            let inner = build_module(&node.children[0], store)?;
            let mode = if node.config[0] != 0 {
                RememberMode::Both
            } else {
                RememberMode::Neither
            };
            Box::new(Sequencer::from_inner(store, inner, mode))
        }
        "repeater" => {
            expect_config(node, 1)?;
            expect_children(node, 1)?;
            let inner = build_module(&node.children[0], store)?;
            Box::new(Repeater::new(store, inner, usize_cfg(node, 0)?)?)
        }
        "recurrent_attention" => {
            expect_config(node, 2)?;
            expect_children(node, 2)?;
            let rnn = build_module(&node.children[0], store)?;
            let action = build_module(&node.children[1], store)?;
            Box::new(RecurrentAttention::new(
                store,
                rnn,
                action,
                usize_cfg(node, 0)?,
                usize_cfg(node, 1)?,
            )?)
        }
        "reinforce_normal" => {
            expect_config(node, 1)?;
            let stdev = f64::from_bits(node.config[0] as u64);
            Box::new(ReinforceNormal::new(stdev)?)
        }
        "glimpse_crop" => {
            expect_config(node, 2)?;
            Box::new(GlimpseCrop::new(usize_cfg(node, 0)?, usize_cfg(node, 1)?)?)
        }
        other => return Err(Error::Format(format!("unknown module tag '{other}'"))),
    };
    Ok(m)
}
