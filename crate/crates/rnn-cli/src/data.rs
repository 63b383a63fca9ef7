//! Dataset generators and the character corpus.

use std::collections::BTreeMap;
use std::path::Path;

use rnn::{Error, Result, Rng, Tensor};

/// Character corpus with a 1-based char/index vocabulary and a train/valid
/// split by position.
pub struct CharCorpus {
    pub char_to_index: BTreeMap<char, usize>,
    pub index_to_char: Vec<char>,
    pub data: Vec<usize>,
    pub train_frac: f64,
}

impl CharCorpus {
    pub fn from_text(text: &str) -> Result<CharCorpus> {
        if text.is_empty() {
            return Err(Error::Config("corpus text is empty".into()));
        }
        let mut chars: Vec<char> = {
            let set: std::collections::BTreeSet<char> = text.chars().collect();
            set.into_iter().collect()
        };
        chars.sort_unstable();
        if chars.len() < 2 {
            return Err(Error::Config(
                "corpus has a vocabulary of one symbol; nothing to predict".into(),
            ));
        }
        let char_to_index: BTreeMap<char, usize> = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + 1))
            .collect();
        let data = text.chars().map(|c| char_to_index[&c]).collect();
        Ok(CharCorpus {
            char_to_index,
            index_to_char: chars,
            data,
            train_frac: 0.9,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<CharCorpus> {
        let text = std::fs::read_to_string(path)?;
        CharCorpus::from_text(&text)
    }

    pub fn vocab_size(&self) -> usize {
        debug_assert_eq!(self.char_to_index.len(), self.index_to_char.len());
        self.char_to_index.len()
    }

    /// Train and validation index streams.
    pub fn split(&self) -> (&[usize], &[usize]) {
        let cut = ((self.data.len() as f64) * self.train_frac) as usize;
        let cut = cut.clamp(1, self.data.len() - 1);
        (&self.data[..cut], &self.data[cut..])
    }
}

/// Sequences whose target equals the input elementwise: next-step identity
/// prediction through the recurrence.
#[allow(clippy::type_complexity)]
pub fn gen_copy_task(
    t_len: usize,
    vocab: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if t_len == 0 || vocab < 2 {
        return Err(Error::Config(
            "copy task needs t >= 1 and a vocabulary of at least 2".into(),
        ));
    }
    let mut inputs = Vec::with_capacity(n);
    for _ in 0..n {
        let seq: Vec<usize> = (0..t_len)
            .map(|_| rng.int_range(1, vocab as i64) as usize)
            .collect();
        inputs.push(seq);
    }
    let targets = inputs.clone();
    Ok((inputs, targets))
}

/// Sequences over {1, 2} with the majority symbol as the label. `t_len` is
/// forced odd so ties cannot happen.
pub fn gen_majority_task(
    t_len: usize,
    n: usize,
    rng: &mut Rng,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let t_len = if t_len.is_multiple_of(2) { t_len + 1 } else { t_len };
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let seq: Vec<usize> = (0..t_len)
            .map(|_| rng.int_range(1, 2) as usize)
            .collect();
        let ones = seq.iter().filter(|&&v| v == 1).count();
        labels.push(if ones * 2 > t_len { 1 } else { 2 });
        inputs.push(seq);
    }
    (inputs, labels)
}

/// Flattened `size x size` images with one quadrant brighter than the rest;
/// the label (1..=4) names the bright quadrant row-major.
pub fn gen_bright_quadrant(
    size: usize,
    n: usize,
    rng: &mut Rng,
) -> (Vec<Tensor>, Vec<usize>) {
    let half = size / 2;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let quadrant = (k % 4) + 1;
        let (r0, c0) = match quadrant {
            1 => (0, 0),
            2 => (0, half),
            3 => (half, 0),
            _ => (half, half),
        };
        let mut img = Tensor::zeros(vec![1, size * size]);
        for v in img.data_mut().iter_mut() {
            *v = rng.uniform(0.0, 0.25);
        }
        for r in 0..half {
            for c in 0..half {
                let idx = (r0 + r) * size + (c0 + c);
                img.data_mut()[idx] += 0.75;
            }
        }
        images.push(img);
        labels.push(quadrant);
    }
    (images, labels)
}

/// Stacks per-example index sequences into per-step `[batch]` tensors.
pub fn batch_steps(seqs: &[&[usize]]) -> Vec<Tensor> {
    let t_len = seqs[0].len();
    (0..t_len)
        .map(|t| Tensor::vec1(&seqs.iter().map(|s| s[t] as f64).collect::<Vec<_>>()))
        .collect()
}

/// Stacks `[1, d]` rows into one `[batch, d]` tensor.
pub fn stack_rows(rows: &[&Tensor]) -> Tensor {
    let d = rows[0].cols();
    let mut out = Tensor::zeros(vec![rows.len(), d]);
    for (i, r) in rows.iter().enumerate() {
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(r.data());
    }
    out
}
