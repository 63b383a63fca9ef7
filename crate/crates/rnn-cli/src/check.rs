//! The gradient-check and serialization-roundtrip runners behind the
//! `gradcheck` and `serialize-roundtrip` subcommands.

use std::collections::BTreeSet;
use std::path::Path;

use rnn::gradcheck::{check_module, check_recurrent, GradReport, InputCheck};
use rnn::registry::{all_modules, GradMode};
use rnn::{serialize, Error, IoCache, Module, ParamId, Result, SerNode, Store, Value};

const GRAD_TOL: f64 = 1e-4;

fn collect_tags(node: &SerNode, out: &mut BTreeSet<String>) {
    out.insert(node.tag.clone());
    for child in &node.children {
        collect_tags(child, out);
    }
}

/// Every concrete module type must appear in the checked registry somewhere.
fn assert_coverage() -> Result<()> {
    let mut seen = BTreeSet::new();
    for entry in all_modules() {
        let mut store = Store::new(0);
        let module = (entry.build)(&mut store);
        collect_tags(&module.ser_node(), &mut seen);
    }
    let missing: Vec<&str> = serialize::known_tags()
        .iter()
        .copied()
        .filter(|t| !seen.contains(*t))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "gradcheck registry does not cover module types: {missing:?}"
        )));
    }
    Ok(())
}

/// A module whose backward deliberately mis-scales the input gradient;
/// drives the detector-sanity path behind `--corrupt-gradients`.
struct SkewedGrad {
    inner: Box<dyn Module>,
    io: IoCache,
}

impl Module for SkewedGrad {
    fn forward(&mut self, store: &mut Store, input: &Value) -> Result<Value> {
        let out = self.inner.forward(store, input)?;
        self.io.input = Some(input.clone());
        self.io.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, store: &mut Store, input: &Value, grad_output: &Value) -> Result<Value> {
        let g = self.inner.backward(store, input, grad_output)?;
        match g {
            Value::Tensor(t) => Ok(Value::Tensor(t.scale(1.05))),
            table => Ok(table),
        }
    }

    fn io(&self) -> &IoCache {
        &self.io
    }

    fn io_mut(&mut self) -> &mut IoCache {
        &mut self.io
    }

    fn collect_params(&self, out: &mut Vec<ParamId>) {
        self.inner.collect_params(out);
    }

    fn step_clone(&self) -> Box<dyn Module> {
        Box::new(SkewedGrad {
            inner: self.inner.step_clone(),
            io: IoCache::default(),
        })
    }

    fn ser_node(&self) -> SerNode {
        self.inner.ser_node()
    }
}

/// Checks every registered architecture against central finite differences
/// and prints one line per architecture. Returns false if any exceeds the
/// tolerance.
pub fn run_gradcheck(seed: u64, corrupt: bool) -> Result<bool> {
    assert_coverage()?;
    let mut all_ok = true;
    let mut run = |name: &str, report: GradReport| {
        let ok = report.max_rel_err <= GRAD_TOL;
        println!(
            "{} {name}: max rel err {:.3e} over {} gradients{}",
            if ok { "ok  " } else { "FAIL" },
            report.max_rel_err,
            report.checked,
            if ok { String::new() } else { format!(" ({})", report.worst) },
        );
        all_ok &= ok;
    };

    for (i, entry) in all_modules().into_iter().enumerate() {
        let mut store = Store::new(seed.wrapping_add(i as u64));
        let mut module = (entry.build)(&mut store);
        let mut rng = rnn::Rng::new(seed ^ 0x5eed).split();
        let report = match entry.grad {
            GradMode::Plain { input } => {
                let x = (entry.sample_input)(&mut rng);
                check_module(&mut store, module.as_mut(), &x, 1e-6, input, &mut rng)?
            }
            GradMode::EvalPlain { input } => {
                module.set_training(false);
                let x = (entry.sample_input)(&mut rng);
                check_module(&mut store, module.as_mut(), &x, 1e-6, input, &mut rng)?
            }
            GradMode::Stepwise { steps } => {
                let xs: Vec<Value> = (0..steps).map(|_| (entry.sample_input)(&mut rng)).collect();
                check_recurrent(&mut store, module.as_mut(), &xs, 1e-6, InputCheck::All, &mut rng)?
            }
        };
        run(entry.name, report);
    }

    if corrupt {
        // Detector sanity: a gradient that is wrong on purpose must trip.
        let mut store = Store::new(seed);
        let inner = Box::new(rnn::Linear::new(&mut store, 3, 2)?);
        let mut module = SkewedGrad {
            inner,
            io: IoCache::default(),
        };
        let mut rng = rnn::Rng::new(seed ^ 0xbad);
        let x = Value::Tensor(rnn::Tensor::randn(vec![2, 3], &mut rng));
        let report = check_module(&mut store, &mut module, &x, 1e-6, InputCheck::All, &mut rng)?;
        run("corrupted-gradient(test-hook)", report);
    }
    Ok(all_ok)
}

/// Serializes every registered module type, loads it back, and compares the
/// forward outputs bit-for-bit. Returns false on any mismatch.
pub fn run_roundtrip(dir: &Path) -> Result<bool> {
    std::fs::create_dir_all(dir)?;
    let mut all_ok = true;
    for (i, entry) in all_modules().into_iter().enumerate() {
        let mut store = Store::new(9000 + i as u64);
        let mut module = (entry.build)(&mut store);
        let mut rng = rnn::Rng::new(90 + i as u64);
        let input = (entry.sample_input)(&mut rng);
        if entry.roundtrip_eval {
            module.set_training(false);
        }
        module.forget(&mut store);
        let before = module.forward(&mut store, &input)?;

        let path = dir.join(format!("{}.rnn", entry.name));
        serialize::save(&path, module.as_ref(), &store)?;
        let (mut store2, mut loaded) = serialize::load(&path, 1)?;
        if entry.roundtrip_eval {
            loaded.set_training(false);
        }
        let after = loaded.forward(&mut store2, &input)?;
        let ok = before == after;
        println!(
            "{} {}: round-trip {}",
            if ok { "ok  " } else { "FAIL" },
            entry.name,
            if ok { "bit-exact" } else { "MISMATCH" }
        );
        all_ok &= ok;
    }
    Ok(all_ok)
}
