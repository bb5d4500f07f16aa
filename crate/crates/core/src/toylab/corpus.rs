//! Synthetic toy-vocabulary corpus: random filler with one planted fact per
//! document, packed into fixed-length training sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packer::{Document, PackConfig, PackStats, PackedSequence, Packer, TailPolicy};
use crate::seed::{rng_for, SeededRng};

pub const PAD: u32 = 0;
pub const SEP: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
/// Marks the planted fact: `NEEDLE v1 .. vk`.
pub const NEEDLE: u32 = 4;
/// Asks for the fact: `QUERY NEEDLE` is followed by `v1 .. vk`.
pub const QUERY: u32 = 5;
pub const FIRST_CONTENT: u32 = 6;
pub const DEFAULT_KEY_TOKENS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparatorMode {
    /// One reserved separator id between documents.
    Special,
    /// End-of-text then begin-of-text ids between documents.
    BeginEnd,
    None,
}

impl SeparatorMode {
    pub fn boundary(self) -> Vec<u32> {
        match self {
            SeparatorMode::Special => vec![SEP],
            SeparatorMode::BeginEnd => vec![EOS, BOS],
            SeparatorMode::None => vec![],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SeparatorMode::Special => "special",
            SeparatorMode::BeginEnd => "begin-end",
            SeparatorMode::None => "none",
        }
    }
}

/// Key tokens are the `key_tokens` ids starting at [`FIRST_CONTENT`];
/// filler uses every id above them. Keys and filler never share an id,
/// as digits and words do not in a text passkey task.
pub fn check_vocab(vocab_size: usize, key_len: usize, key_tokens: usize) -> Result<()> {
    if key_len == 0 || key_tokens == 0 {
        return Err(Error::config("key_len and key_tokens must be >= 1"));
    }
    let needed = FIRST_CONTENT as usize + key_tokens + 2;
    if vocab_size < needed {
        return Err(Error::config(format!(
            "vocabulary of {vocab_size} cannot hold {FIRST_CONTENT} reserved ids, {key_tokens} key ids and filler (need >= {needed})"
        )));
    }
    Ok(())
}

pub fn random_key(rng: &mut SeededRng, key_tokens: usize, k: usize) -> Vec<u32> {
    (0..k).map(|_| FIRST_CONTENT + rng.gen_range(0..key_tokens as u32)).collect()
}

pub fn filler(rng: &mut SeededRng, vocab_size: usize, key_tokens: usize, n: usize) -> Vec<u32> {
    let lo = FIRST_CONTENT + key_tokens as u32;
    (0..n).map(|_| rng.gen_range(lo..vocab_size as u32)).collect()
}

/// Filler with `NEEDLE key` at `needle_pos`, ending in `QUERY NEEDLE key`.
pub fn fact_document(
    rng: &mut SeededRng,
    vocab_size: usize,
    key_tokens: usize,
    key: &[u32],
    len: usize,
    needle_pos: usize,
) -> Vec<u32> {
    let k = key.len();
    let body = len - (k + 2);
    debug_assert!(needle_pos + k < body);
    let mut doc = filler(rng, vocab_size, key_tokens, body);
    doc[needle_pos] = NEEDLE;
    doc[needle_pos + 1..needle_pos + 1 + k].copy_from_slice(key);
    doc.push(QUERY);
    doc.push(NEEDLE);
    doc.extend_from_slice(key);
    doc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusSpec {
    pub vocab_size: usize,
    pub context_length: usize,
    /// Packed sequences to produce.
    pub sequences: usize,
    pub separator: SeparatorMode,
    pub min_doc_len: usize,
    pub max_doc_len: usize,
    pub key_len: usize,
    pub key_tokens: usize,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 128,
            context_length: 256,
            sequences: 64,
            separator: SeparatorMode::Special,
            min_doc_len: 16,
            max_doc_len: 256,
            key_len: 2,
            key_tokens: DEFAULT_KEY_TOKENS,
            seed: 0,
        }
    }
}

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        check_vocab(self.vocab_size, self.key_len, self.key_tokens)?;
        let min = 2 * self.key_len + 4;
        if self.min_doc_len < min || self.max_doc_len < self.min_doc_len {
            return Err(Error::config(format!(
                "document lengths must satisfy {min} <= min_doc_len <= max_doc_len, got {}..={}",
                self.min_doc_len, self.max_doc_len
            )));
        }
        if self.context_length < 2 || self.sequences == 0 {
            return Err(Error::config("context_length must be >= 2 and sequences >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub packed: Vec<PackedSequence>,
    pub stats: PackStats,
    pub documents: usize,
}

impl ToyCorpus {
    pub fn token_sequences(&self) -> Vec<Vec<u32>> {
        self.packed.iter().map(|s| s.tokens.clone()).collect()
    }
}

pub fn make_toy_document(rng: &mut SeededRng, spec: &ToyCorpusSpec) -> Vec<u32> {
    let len = rng.gen_range(spec.min_doc_len..=spec.max_doc_len);
    let key = random_key(rng, spec.key_tokens, spec.key_len);
    let last_needle = len - 2 * spec.key_len - 3;
    let pos = rng.gen_range(0..=last_needle);
    fact_document(rng, spec.vocab_size, spec.key_tokens, &key, len, pos)
}

/// Generates documents until at least `spec.sequences` full sequences of
/// `spec.context_length` tokens are packed; the partial tail is dropped.
pub fn make_toy_corpus(spec: &ToyCorpusSpec) -> Result<ToyCorpus> {
    spec.validate()?;
    let config = PackConfig {
        target_len: spec.context_length,
        boundary: spec.separator.boundary(),
        tail: TailPolicy::Drop,
    };
    let mut packer = Packer::new(config)?;
    let mut rng = rng_for(spec.seed, "toylab/corpus");
    let mut documents = 0usize;
    while packer.completed() < spec.sequences {
        let tokens = make_toy_document(&mut rng, spec);
        packer.push(&Document::new(format!("toy-{documents}"), "toy", tokens));
        documents += 1;
    }
    let out = packer.finish();
    Ok(ToyCorpus {
        packed: out.sequences,
        stats: out.stats,
        documents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separator_modes_insert_reserved_ids() {
        for (mode, per_boundary) in [(SeparatorMode::Special, 1), (SeparatorMode::BeginEnd, 2), (SeparatorMode::None, 0)] {
            let spec = ToyCorpusSpec {
                separator: mode,
                sequences: 20,
                ..Default::default()
            };
            let c = make_toy_corpus(&spec).unwrap();
            assert!(c.packed.len() >= 20);
            assert!(c.stats.accounting_holds());
            assert!(c.packed.iter().all(|s| s.tokens.len() == 256));
            assert_eq!(c.stats.separators_inserted, per_boundary * (c.documents as u64 - 1));
            for s in &c.packed {
                for &p in &s.separator_positions {
                    assert!(mode.boundary().contains(&s.tokens[p as usize]));
                }
                let reserved = s.tokens.iter().filter(|&&t| t == SEP || t == BOS || t == EOS).count();
                assert_eq!(reserved, s.separator_positions.len());
            }
        }
    }

    #[test]
    fn each_fact_value_appears_once_before_query() {
        let spec = ToyCorpusSpec::default();
        let mut rng = rng_for(3, "t");
        for _ in 0..200 {
            let doc = make_toy_document(&mut rng, &spec);
            let q = doc.len() - spec.key_len - 2;
            assert_eq!(doc[q..q + 2], [QUERY, NEEDLE]);
            let key = &doc[q + 2..];
            let needles: Vec<usize> = (0..q).filter(|&i| doc[i] == NEEDLE).collect();
            assert_eq!(needles.len(), 1);
            assert_eq!(&doc[needles[0] + 1..needles[0] + 1 + spec.key_len], key);
            let is_key = |t: &u32| (FIRST_CONTENT..FIRST_CONTENT + spec.key_tokens as u32).contains(t);
            assert_eq!(doc[..q].iter().filter(|t| is_key(t)).count(), spec.key_len);
        }
    }

    #[test]
    fn tiny_vocab_rejected() {
        let spec = ToyCorpusSpec {
            vocab_size: 9,
            ..Default::default()
        };
        assert!(matches!(make_toy_corpus(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic() {
        let spec = ToyCorpusSpec::default();
        assert_eq!(make_toy_corpus(&spec).unwrap().stats.digest, make_toy_corpus(&spec).unwrap().stats.digest);
    }
}
