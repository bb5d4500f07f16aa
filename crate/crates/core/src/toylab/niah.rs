//! Token-space passkey retrieval over a length x depth grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{check_vocab, fact_document, random_key, DEFAULT_KEY_TOKENS};
use super::model::ToyModel;
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyNiahCase {
    pub length: usize,
    pub needle_position: usize,
    /// Ends with the query pattern; `prompt.len() + answer.len() == length`.
    pub prompt: Vec<u32>,
    pub answer: Vec<u32>,
}

/// Needle placed at `round(depth * last)` where `last` is the final start
/// position that keeps it ahead of the query.
pub fn toy_niah_case(
    seed: u64,
    label: &str,
    vocab_size: usize,
    key_tokens: usize,
    length: usize,
    depth: f64,
    key_len: usize,
) -> Result<ToyNiahCase> {
    check_vocab(vocab_size, key_len, key_tokens)?;
    if length < 2 * key_len + 4 {
        return Err(Error::config(format!("length {length} too short for a {key_len}-token key")));
    }
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::config(format!("depth {depth} outside [0, 1]")));
    }
    let mut rng = rng_for(seed, label);
    let key = random_key(&mut rng, key_tokens, key_len);
    let last = length - 2 * key_len - 3;
    let pos = (depth * last as f64).round() as usize;
    let mut doc = fact_document(&mut rng, vocab_size, key_tokens, &key, length, pos);
    let answer = doc.split_off(length - key_len);
    Ok(ToyNiahCase {
        length,
        needle_position: pos,
        prompt: doc,
        answer,
    })
}

/// Plain greedy decoding of `k` tokens, one forward pass per token.
pub fn greedy_decode(model: &ToyModel, prompt: &[u32], k: usize) -> Result<Vec<u32>> {
    let mut seq = prompt.to_vec();
    for _ in 0..k {
        let logits = model.last_logits(&seq)?;
        seq.push(argmax(&logits));
    }
    Ok(seq.split_off(prompt.len()))
}

fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Whether greedy decoding reproduces `answer`. Uses a single forward pass
/// over `prompt ++ answer[..k-1]`: greedy output matches exactly when every
/// teacher-forced argmax is right.
pub fn greedy_matches(model: &ToyModel, prompt: &[u32], answer: &[u32]) -> Result<bool> {
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(&answer[..answer.len() - 1]);
    let logits = model.forward(&[seq])?.pop().expect("one sequence in, one out");
    let p = prompt.len();
    Ok(answer.iter().enumerate().all(|(i, &a)| argmax(logits.row(p - 1 + i)) == a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahCell {
    pub length: usize,
    pub depth: f64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahGrid {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    /// Length-major: cell `(li, di)` is at `li * depths.len() + di`.
    pub cells: Vec<NiahCell>,
}

impl NiahGrid {
    pub fn cell(&self, li: usize, di: usize) -> &NiahCell {
        &self.cells[li * self.depths.len() + di]
    }

    /// Case-weighted accuracy over cells whose length satisfies `keep`.
    pub fn mean_where(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let (c, t) = self
            .cells
            .iter()
            .filter(|c| keep(c.length))
            .fold((0, 0), |(c, t), x| (c + x.correct, t + x.total));
        (t > 0).then(|| c as f64 / t as f64)
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean_where(|_| true)
    }

    /// Rows are depths, columns lengths.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("depth");
        for l in &self.lengths {
            out.push_str(&format!("\t{l}"));
        }
        out.push('\n');
        for (di, d) in self.depths.iter().enumerate() {
            out.push_str(&format!("{d:.4}"));
            for li in 0..self.lengths.len() {
                out.push_str(&format!("\t{:.4}", self.cell(li, di).accuracy));
            }
            out.push('\n');
        }
        out
    }
}

/// `n` evenly spaced depths in `[0, 1]`; a single depth is the midpoint.
pub fn even_depths(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyNiahSpec {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    pub cases_per_cell: usize,
    pub key_len: usize,
    pub key_tokens: usize,
    pub seed: u64,
}

impl Default for ToyNiahSpec {
    fn default() -> Self {
        Self {
            lengths: vec![64, 128, 192, 256],
            depths: even_depths(5),
            cases_per_cell: 8,
            key_len: 2,
            key_tokens: DEFAULT_KEY_TOKENS,
            seed: 0,
        }
    }
}

/// Cases are seeded per `(length, depth index, case)`, so two models
/// evaluated with the same spec see identical prompts.
pub fn toy_niah_eval(model: &ToyModel, spec: &ToyNiahSpec) -> Result<NiahGrid> {
    let (lengths, depths, cases_per_cell) = (&spec.lengths, &spec.depths, spec.cases_per_cell);
    if let Some(&l) = lengths.iter().find(|&&l| l > model.context_length()) {
        return Err(Error::shape(format!(
            "evaluation length {l} exceeds model context {}",
            model.context_length()
        )));
    }
    if cases_per_cell == 0 {
        return Err(Error::config("cases_per_cell must be >= 1"));
    }
    let vocab = model.config().vocab_size;
    let jobs: Vec<(usize, usize, usize)> = (0..lengths.len())
        .flat_map(|li| (0..depths.len()).flat_map(move |di| (0..cases_per_cell).map(move |c| (li, di, c))))
        .collect();
    let hits: Vec<bool> = jobs
        .par_iter()
        .map(|&(li, di, c)| {
            let label = format!("toylab/niah/{}/{di}/{c}", lengths[li]);
            let case = toy_niah_case(spec.seed, &label, vocab, spec.key_tokens, lengths[li], depths[di], spec.key_len)?;
            greedy_matches(model, &case.prompt, &case.answer)
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(lengths.len() * depths.len());
    for (li, &length) in lengths.iter().enumerate() {
        for (di, &depth) in depths.iter().enumerate() {
            let base = (li * depths.len() + di) * cases_per_cell;
            let correct = hits[base..base + cases_per_cell].iter().filter(|&&h| h).count();
            cells.push(NiahCell {
                length,
                depth,
                correct,
                total: cases_per_cell,
                accuracy: correct as f64 / cases_per_cell as f64,
            });
        }
    }
    Ok(NiahGrid {
        lengths: lengths.clone(),
        depths: depths.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylab::corpus::{NEEDLE, QUERY};
    use crate::toylab::model::ToyModelConfig;

    #[test]
    fn case_layout() {
        for &depth in &[0.0, 0.3, 1.0] {
            let c = toy_niah_case(1, "x", 128, 10, 64, depth, 2).unwrap();
            assert_eq!(c.prompt.len() + c.answer.len(), 64);
            assert_eq!(c.prompt[c.prompt.len() - 2..], [QUERY, NEEDLE]);
            assert_eq!(c.prompt[c.needle_position], NEEDLE);
            assert_eq!(&c.prompt[c.needle_position + 1..c.needle_position + 3], c.answer.as_slice());
        }
        assert_eq!(toy_niah_case(1, "x", 128, 10, 64, 0.0, 2).unwrap().needle_position, 0);
        assert_eq!(toy_niah_case(1, "x", 128, 10, 64, 1.0, 2).unwrap().needle_position, 57);
    }

    #[test]
    fn single_pass_agrees_with_greedy_decoding() {
        let m = ToyModel::new(ToyModelConfig::default()).unwrap();
        for i in 0..20 {
            let c = toy_niah_case(2, &format!("c{i}"), 128, 10, 40, 0.5, 2).unwrap();
            let decoded = greedy_decode(&m, &c.prompt, 2).unwrap();
            assert_eq!(greedy_matches(&m, &c.prompt, &c.answer).unwrap(), decoded == c.answer);
            // Also check against the model's own output as the "answer".
            assert!(greedy_matches(&m, &c.prompt, &decoded).unwrap());
        }
    }

    #[test]
    fn untrained_model_near_chance_and_grid_covered() {
        let m = ToyModel::new(ToyModelConfig::default()).unwrap();
        let spec = ToyNiahSpec {
            lengths: vec![32, 64],
            depths: even_depths(2),
            cases_per_cell: 10,
            ..Default::default()
        };
        let g = toy_niah_eval(&m, &spec).unwrap();
        assert_eq!(g.cells.len(), 4);
        assert_eq!(g.cell(0, 0).depth, 0.0);
        assert_eq!(g.cell(1, 1).depth, 1.0);
        assert!(g.mean().unwrap() <= 0.05);
        let long = ToyNiahSpec {
            lengths: vec![300],
            ..spec.clone()
        };
        assert!(toy_niah_eval(&m, &long).is_err());
        assert_eq!(g.to_tsv().lines().count(), 3);
    }
}
