//! Length-bucketed resampling and separator-delimited sequence packing.
//!
//! The packed stream is `doc_1 ++ B ++ doc_2 ++ B ++ ... ++ doc_n`, where `B`
//! is the configured boundary token list (a single separator by default),
//! cut into consecutive chunks of exactly `target_len` tokens. Documents may
//! straddle chunks. No attention mask is produced: packed sequences are
//! meant to be trained with full attention.

pub mod format;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for, SeededRng};

pub const DEFAULT_BUCKET_BOUNDS: [u64; 2] = [4096, 8192];
pub const DEFAULT_BUCKET_WEIGHTS: [f64; 3] = [0.5, 1.0, 3.0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub source: String,
    pub tokens: Vec<u32>,
}

impl Document {
    pub fn new(id: impl Into<String>, source: impl Into<String>, tokens: Vec<u32>) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Reject empty documents and token ids at or above `vocab_bound`.
pub fn validate_corpus(docs: &[Document], vocab_bound: Option<u32>) -> Result<()> {
    for (i, doc) in docs.iter().enumerate() {
        if doc.tokens.is_empty() {
            return Err(Error::format("corpus", i, format!("document {:?} is empty", doc.id)));
        }
        if let Some(bound) = vocab_bound {
            if let Some(t) = doc.tokens.iter().find(|&&t| t >= bound) {
                return Err(Error::format(
                    "corpus",
                    i,
                    format!("token {t} in document {:?} exceeds vocabulary bound {bound}", doc.id),
                ));
            }
        }
    }
    Ok(())
}

/// Bucket index for a length: lower bounds inclusive, upper bounds exclusive.
pub fn bucket_of(bounds: &[u64], len: u64) -> usize {
    bounds.partition_point(|&b| b <= len)
}

fn check_bounds(bounds: &[u64]) -> Result<()> {
    if bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "bucket bounds must be strictly ascending, got {bounds:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bucket_bounds: Vec<u64>,
    pub doc_counts: Vec<u64>,
    pub token_counts: Vec<u64>,
}

impl Histogram {
    pub fn total_docs(&self) -> u64 {
        self.doc_counts.iter().sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.token_counts.iter().sum()
    }
}

pub fn histogram(docs: &[Document], bounds: &[u64]) -> Result<Histogram> {
    check_bounds(bounds)?;
    let n = bounds.len() + 1;
    let mut doc_counts = vec![0u64; n];
    let mut token_counts = vec![0u64; n];
    for doc in docs {
        let b = bucket_of(bounds, doc.len() as u64);
        doc_counts[b] += 1;
        token_counts[b] += doc.len() as u64;
    }
    Ok(Histogram {
        bucket_bounds: bounds.to_vec(),
        doc_counts,
        token_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub bucket_bounds: Vec<u64>,
    pub bucket_weights: Vec<f64>,
    pub target_total_tokens: u64,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn with_defaults(target_total_tokens: u64, seed: u64) -> Self {
        Self {
            bucket_bounds: DEFAULT_BUCKET_BOUNDS.to_vec(),
            bucket_weights: DEFAULT_BUCKET_WEIGHTS.to_vec(),
            target_total_tokens,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bounds(&self.bucket_bounds)?;
        if self.bucket_weights.len() != self.bucket_bounds.len() + 1 {
            return Err(Error::config(format!(
                "{} bucket bounds need {} weights, got {}",
                self.bucket_bounds.len(),
                self.bucket_bounds.len() + 1,
                self.bucket_weights.len()
            )));
        }
        if self.bucket_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("bucket weights must be positive and finite"));
        }
        Ok(())
    }
}

/// Expected per-bucket token mass before any Bernoulli draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExpectation {
    /// Global multiplier applied to every bucket weight.
    pub normalizer: f64,
    /// Expected multiplicity of a document in each bucket.
    pub bucket_multiplicity: Vec<f64>,
    pub expected_bucket_tokens: Vec<f64>,
}

/// Compute the normalizer so that expected token mass equals the target.
///
/// Weights are the largest multiplicities the plan may use, so the target
/// must lie in `(0, sum_b weight_b * tokens_b]`.
pub fn expectation(hist: &Histogram, plan: &SamplingPlan) -> Result<PlanExpectation> {
    plan.validate()?;
    if hist.bucket_bounds != plan.bucket_bounds {
        return Err(Error::config("histogram and plan use different bucket bounds"));
    }
    let weighted: f64 = plan
        .bucket_weights
        .iter()
        .zip(&hist.token_counts)
        .map(|(w, &t)| w * t as f64)
        .sum();
    let target = plan.target_total_tokens as f64;
    if weighted <= 0.0 || plan.target_total_tokens == 0 || target > weighted * (1.0 + 1e-12) {
        return Err(Error::Planning(format!(
            "target of {} tokens is infeasible; achievable range is 1..={} tokens",
            plan.target_total_tokens,
            weighted.floor() as u64
        )));
    }
    let normalizer = target / weighted;
    let bucket_multiplicity: Vec<f64> = plan.bucket_weights.iter().map(|w| w * normalizer).collect();
    let expected_bucket_tokens = bucket_multiplicity
        .iter()
        .zip(&hist.token_counts)
        .map(|(m, &t)| m * t as f64)
        .collect();
    Ok(PlanExpectation {
        normalizer,
        bucket_multiplicity,
        expected_bucket_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRealization {
    pub documents: u64,
    pub input_tokens: u64,
    pub expected_multiplicity: f64,
    pub expected_tokens: f64,
    /// Variance of the realized token mass under independent Bernoulli draws.
    pub token_variance: f64,
    pub copies: u64,
    pub realized_tokens: u64,
}

/// A plan with every document's multiplicity drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRealization {
    pub plan: SamplingPlan,
    pub normalizer: f64,
    pub doc_ids: Vec<String>,
    pub multiplicities: Vec<u32>,
    pub buckets: Vec<BucketRealization>,
}

impl PlanRealization {
    pub fn realized_total_tokens(&self) -> u64 {
        self.buckets.iter().map(|b| b.realized_tokens).sum()
    }

    pub fn expected_total_tokens(&self) -> f64 {
        self.buckets.iter().map(|b| b.expected_tokens).sum()
    }
}

fn draw_multiplicity(seed: u64, index: usize, expected: f64) -> u32 {
    let whole = expected.floor();
    let frac = expected - whole;
    let mut m = whole as u32;
    if frac > 0.0 {
        let mut rng = rng_for(seed, &format!("packer/bernoulli/{index}"));
        if rng.gen::<f64>() < frac {
            m += 1;
        }
    }
    m
}

/// Draw every document's multiplicity: `floor(mu)` copies plus one more with
/// probability `frac(mu)`. Each draw uses a seed derived from the plan seed
/// and the document index, so the result is independent of `shards`.
pub fn realize_plan(docs: &[Document], plan: &SamplingPlan, shards: usize) -> Result<PlanRealization> {
    let hist = histogram(docs, &plan.bucket_bounds)?;
    let exp = expectation(&hist, plan)?;
    let shard_len = docs.len().div_ceil(shards.max(1)).max(1);
    let multiplicities: Vec<u32> = docs
        .par_chunks(shard_len)
        .enumerate()
        .flat_map_iter(|(shard, chunk)| {
            let base = shard * shard_len;
            let exp = &exp;
            let bounds = &plan.bucket_bounds;
            chunk.iter().enumerate().map(move |(i, doc)| {
                let mu = exp.bucket_multiplicity[bucket_of(bounds, doc.len() as u64)];
                draw_multiplicity(plan.seed, base + i, mu)
            })
        })
        .collect();

    let mut buckets: Vec<BucketRealization> = (0..hist.doc_counts.len())
        .map(|b| BucketRealization {
            documents: hist.doc_counts[b],
            input_tokens: hist.token_counts[b],
            expected_multiplicity: exp.bucket_multiplicity[b],
            expected_tokens: exp.expected_bucket_tokens[b],
            token_variance: 0.0,
            copies: 0,
            realized_tokens: 0,
        })
        .collect();
    for (doc, &m) in docs.iter().zip(&multiplicities) {
        let b = &mut buckets[bucket_of(&plan.bucket_bounds, doc.len() as u64)];
        let mu = b.expected_multiplicity;
        let p = mu - mu.floor();
        let len = doc.len() as f64;
        b.token_variance += len * len * p * (1.0 - p);
        b.copies += m as u64;
        b.realized_tokens += m as u64 * doc.len() as u64;
    }
    Ok(PlanRealization {
        plan: plan.clone(),
        normalizer: exp.normalizer,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        multiplicities,
        buckets,
    })
}

/// Document indices in emission order: each document repeated by its
/// multiplicity, then (optionally) shuffled with a seeded Fisher-Yates.
pub fn resample(docs: &[Document], realization: &PlanRealization, shuffle: bool) -> Result<Vec<usize>> {
    if realization.doc_ids.len() != realization.multiplicities.len() {
        return Err(Error::Integrity("plan has mismatched id and multiplicity lists".into()));
    }
    for (i, id) in realization.doc_ids.iter().enumerate() {
        match docs.get(i) {
            Some(doc) if doc.id == *id => {}
            _ => {
                return Err(Error::Integrity(format!(
                    "document {id:?} referenced by plan (index {i}) is missing from the corpus"
                )))
            }
        }
    }
    let mut order: Vec<usize> = realization
        .multiplicities
        .iter()
        .enumerate()
        .flat_map(|(i, &m)| std::iter::repeat(i).take(m as usize))
        .collect();
    if shuffle {
        let mut rng: SeededRng = rng_for(realization.plan.seed, "packer/shuffle");
        order.shuffle(&mut rng);
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailPolicy {
    #[default]
    Drop,
    Pad(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackConfig {
    pub target_len: usize,
    /// Tokens inserted between consecutive documents. One separator id by
    /// default; `[end, begin]` reproduces begin/end-of-text delimiting and an
    /// empty list concatenates documents directly.
    pub boundary: Vec<u32>,
    #[serde(default)]
    pub tail: TailPolicy,
}

impl PackConfig {
    pub fn with_separator(target_len: usize, separator_id: u32) -> Self {
        Self {
            target_len,
            boundary: vec![separator_id],
            tail: TailPolicy::Drop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_len < 2 {
            return Err(Error::config(format!("target_len must be >= 2, got {}", self.target_len)));
        }
        Ok(())
    }

    /// Id stored in the packed-file header; `u32::MAX` when there is none.
    pub fn header_separator_id(&self) -> u32 {
        self.boundary.first().copied().unwrap_or(u32::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentStart {
    pub offset: u32,
    pub doc_id: String,
    /// The document began in an earlier sequence.
    pub continuation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub boundaries: Vec<SegmentStart>,
    pub separator_positions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PackStats {
    pub target_len: u64,
    pub input_tokens: u64,
    pub documents: u64,
    pub resampled_tokens: u64,
    pub sequences: u64,
    pub tokens_dropped: u64,
    pub pad_tokens: u64,
    pub separators_inserted: u64,
    /// Documents that already contain a boundary token id.
    pub separator_collisions: u64,
    pub buckets: Vec<BucketRealization>,
    pub digest: String,
}

impl PackStats {
    /// `resampled + separators + pad == sequences * target_len + dropped`.
    pub fn accounting_holds(&self) -> bool {
        self.resampled_tokens + self.separators_inserted + self.pad_tokens
            == self.sequences * self.target_len + self.tokens_dropped
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackOutput {
    pub sequences: Vec<PackedSequence>,
    pub dropped_tail: Vec<u32>,
    pub stats: PackStats,
}

/// Incremental packer: push documents in stream order, then finish.
pub struct Packer {
    config: PackConfig,
    boundary_set: HashSet<u32>,
    current: PackedSequence,
    sequences: Vec<PackedSequence>,
    stats: PackStats,
}

impl Packer {
    pub fn new(config: PackConfig) -> Result<Self> {
        config.validate()?;
        let stats = PackStats {
            target_len: config.target_len as u64,
            ..Default::default()
        };
        Ok(Self {
            boundary_set: config.boundary.iter().copied().collect(),
            current: Self::empty_sequence(config.target_len),
            sequences: Vec::new(),
            stats,
            config,
        })
    }

    fn empty_sequence(target_len: usize) -> PackedSequence {
        PackedSequence {
            tokens: Vec::with_capacity(target_len),
            boundaries: Vec::new(),
            separator_positions: Vec::new(),
        }
    }

    fn flush_if_full(&mut self) {
        if self.current.tokens.len() == self.config.target_len {
            let full = std::mem::replace(&mut self.current, Self::empty_sequence(self.config.target_len));
            self.sequences.push(full);
            self.stats.sequences += 1;
        }
    }

    /// Number of full sequences emitted so far.
    pub fn completed(&self) -> usize {
        self.sequences.len()
    }

    pub fn push(&mut self, doc: &Document) {
        if self.stats.documents > 0 {
            for i in 0..self.config.boundary.len() {
                let t = self.config.boundary[i];
                self.current.separator_positions.push(self.current.tokens.len() as u32);
                self.current.tokens.push(t);
                self.stats.separators_inserted += 1;
                self.flush_if_full();
            }
        }
        if !self.boundary_set.is_empty() && doc.tokens.iter().any(|t| self.boundary_set.contains(t)) {
            log::warn!("document {:?} already contains a boundary token id", doc.id);
            self.stats.separator_collisions += 1;
        }
        self.stats.documents += 1;
        self.stats.resampled_tokens += doc.len() as u64;

        let mut rest = doc.tokens.as_slice();
        let mut continuation = false;
        while !rest.is_empty() {
            let room = self.config.target_len - self.current.tokens.len();
            let take = room.min(rest.len());
            self.current.boundaries.push(SegmentStart {
                offset: self.current.tokens.len() as u32,
                doc_id: doc.id.clone(),
                continuation,
            });
            self.current.tokens.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            continuation = true;
            self.flush_if_full();
        }
    }

    pub fn finish(mut self) -> PackOutput {
        let mut dropped_tail = Vec::new();
        if !self.current.tokens.is_empty() {
            match self.config.tail {
                TailPolicy::Drop => {
                    self.stats.tokens_dropped = self.current.tokens.len() as u64;
                    dropped_tail = std::mem::take(&mut self.current.tokens);
                }
                TailPolicy::Pad(pad) => {
                    let missing = self.config.target_len - self.current.tokens.len();
                    self.current.tokens.resize(self.config.target_len, pad);
                    self.stats.pad_tokens = missing as u64;
                    self.flush_if_full();
                }
            }
        }
        self.stats.digest = format::upkd_digest(&self.config, &self.sequences);
        PackOutput {
            sequences: self.sequences,
            dropped_tail,
            stats: self.stats,
        }
    }
}

pub fn pack<'a>(stream: impl IntoIterator<Item = &'a Document>, config: &PackConfig) -> Result<PackOutput> {
    let mut packer = Packer::new(config.clone())?;
    for doc in stream {
        packer.push(doc);
    }
    Ok(packer.finish())
}

/// Resample and pack in one go, filling in input and bucket statistics.
pub fn resample_and_pack(
    docs: &[Document],
    plan: &SamplingPlan,
    config: &PackConfig,
    shards: usize,
) -> Result<(PlanRealization, Vec<usize>, PackOutput)> {
    let realization = realize_plan(docs, plan, shards)?;
    let order = resample(docs, &realization, true)?;
    let mut out = pack(order.iter().map(|&i| &docs[i]), config)?;
    out.stats.input_tokens = docs.iter().map(|d| d.len() as u64).sum();
    out.stats.buckets = realization.buckets.clone();
    Ok((realization, order, out))
}

/// Check packed output against the document stream it came from.
///
/// Rebuilds the expected token stream, segment starts and separator
/// positions independently of [`Packer`] and compares them. The error names
/// the first offending global offset (`sequence * target_len + position`).
pub fn verify<'a>(
    sequences: &[PackedSequence],
    stream: impl IntoIterator<Item = &'a Document>,
    config: &PackConfig,
) -> Result<PackStats> {
    config.validate()?;
    let len = config.target_len;
    let fail = |offset: u64, message: String| Error::Verification { offset, message };

    for (s, seq) in sequences.iter().enumerate() {
        if seq.tokens.len() != len {
            return Err(fail(
                (s * len) as u64,
                format!("sequence {s} has {} tokens, expected {len}", seq.tokens.len()),
            ));
        }
    }

    let total = (sequences.len() * len) as u64;
    let token_at = |g: u64| sequences[(g / len as u64) as usize].tokens[(g % len as u64) as usize];
    let mut expected_starts: Vec<Vec<SegmentStart>> = vec![Vec::new(); sequences.len()];
    let mut expected_seps: Vec<Vec<u32>> = vec![Vec::new(); sequences.len()];
    let mut stats = PackStats {
        target_len: len as u64,
        sequences: sequences.len() as u64,
        ..Default::default()
    };
    let mut g: u64 = 0;

    // Tokens past the packed output form the dropped tail and are not compared.
    let check = |g: u64, want: u32| -> Result<()> {
        if g < total {
            let got = token_at(g);
            if got != want {
                return Err(fail(g, format!("token {got} where the stream has {want}")));
            }
        }
        Ok(())
    };

    for (k, doc) in stream.into_iter().enumerate() {
        if k > 0 {
            for &t in &config.boundary {
                check(g, t)?;
                if g < total {
                    expected_seps[(g / len as u64) as usize].push((g % len as u64) as u32);
                }
                stats.separators_inserted += 1;
                g += 1;
            }
        }
        let start = g;
        let end = g + doc.len() as u64;
        for (i, &t) in doc.tokens.iter().enumerate() {
            check(start + i as u64, t)?;
        }
        let mut pos = start;
        while pos < end && pos < total {
            let s = (pos / len as u64) as usize;
            expected_starts[s].push(SegmentStart {
                offset: (pos % len as u64) as u32,
                doc_id: doc.id.clone(),
                continuation: pos != start,
            });
            pos = (s as u64 + 1) * len as u64;
        }
        stats.documents += 1;
        stats.resampled_tokens += doc.len() as u64;
        g = end;
    }

    // Whatever the stream did not cover must be padding under the pad policy.
    if g < total {
        match config.tail {
            TailPolicy::Pad(pad) if total - g < len as u64 => {
                for p in g..total {
                    if token_at(p) != pad {
                        return Err(fail(p, format!("expected pad token {pad}, found {}", token_at(p))));
                    }
                }
                stats.pad_tokens = total - g;
            }
            _ => return Err(fail(g, format!("packed output has {} tokens beyond the stream", total - g))),
        }
    } else {
        let leftover = g - total;
        if leftover >= len as u64 {
            return Err(fail(total, format!("{leftover} stream tokens missing from packed output")));
        }
        if leftover > 0 && matches!(config.tail, TailPolicy::Pad(_)) {
            return Err(fail(total, "partial tail was dropped under the pad policy".into()));
        }
        stats.tokens_dropped = leftover;
    }

    for (s, seq) in sequences.iter().enumerate() {
        if seq.separator_positions != expected_seps[s] {
            let off = first_mismatch(&seq.separator_positions, &expected_seps[s]);
            return Err(fail((s * len) as u64 + off, format!("separator positions disagree in sequence {s}")));
        }
        if seq.boundaries != expected_starts[s] {
            let off = seq
                .boundaries
                .iter()
                .zip(&expected_starts[s])
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.offset as u64)
                .unwrap_or(0);
            return Err(fail((s * len) as u64 + off, format!("document boundaries disagree in sequence {s}")));
        }
        for b in &seq.boundaries {
            if b.offset > 0 && !b.continuation && !config.boundary.is_empty() {
                let prev = b.offset - 1;
                if !seq.separator_positions.contains(&prev) {
                    return Err(fail(
                        (s * len) as u64 + b.offset as u64,
                        "document start not preceded by a separator".into(),
                    ));
                }
            }
        }
    }
    stats.digest = format::upkd_digest(config, sequences);
    Ok(stats)
}

fn first_mismatch(a: &[u32], b: &[u32]) -> u64 {
    a.iter()
        .zip(b)
        .find(|(x, y)| x != y)
        .map(|(x, _)| *x as u64)
        .or_else(|| a.get(b.len()).or_else(|| b.get(a.len())).map(|&x| x as u64))
        .unwrap_or(0)
}

/// Seed for shard `index`; exposed for callers that shard their own work.
pub fn shard_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &format!("packer/shard/{index}"))
}
