//! Shared inputs for the benchmarks.

use rand::Rng;
use ultralong_core::packer::Document;
use ultralong_core::seed::rng_for;

/// `n` documents with log-uniform lengths in `[16, max_len]` and token ids
/// below 32000.
pub fn synthetic_corpus(n: usize, max_len: usize, seed: u64) -> Vec<Document> {
    let mut rng = rng_for(seed, "bench/corpus");
    let hi = (max_len.max(16) as f64).ln();
    (0..n)
        .map(|i| {
            let len = rng.gen_range(16f64.ln()..=hi).exp() as usize;
            let tokens = (0..len).map(|_| rng.gen_range(1..32_000)).collect();
            Document::new(format!("d{i}"), "bench", tokens)
        })
        .collect()
}
