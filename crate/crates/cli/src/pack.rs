use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use ultralong_core::packer::format::{read_corpus, write_upkd};
use ultralong_core::packer::{
    histogram, resample_and_pack, verify, PackConfig, PackStats, SamplingPlan, TailPolicy, DEFAULT_BUCKET_BOUNDS,
    DEFAULT_BUCKET_WEIGHTS,
};
use ultralong_core::{Error, Result};

use crate::config::{resolve, write_echo, write_json, ConfigArgs, Overrides};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackCliConfig {
    pub target_len: usize,
    /// Tokens inserted between documents.
    pub boundary: Vec<u32>,
    pub tail: TailPolicy,
    pub bucket_bounds: Vec<u64>,
    pub bucket_weights: Vec<f64>,
    /// Expected tokens after resampling; `null` takes the largest reachable
    /// mass, where every bucket's multiplicity equals its weight.
    pub target_total_tokens: Option<u64>,
    pub seed: u64,
}

impl Default for PackCliConfig {
    fn default() -> Self {
        Self {
            target_len: 8192,
            boundary: vec![0],
            tail: TailPolicy::Drop,
            bucket_bounds: DEFAULT_BUCKET_BOUNDS.to_vec(),
            bucket_weights: DEFAULT_BUCKET_WEIGHTS.to_vec(),
            target_total_tokens: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Corpus: `UDOC` binary or JSON Lines `{id, source, tokens}`.
    #[arg(long)]
    pub input: PathBuf,
    /// Packed `UPKD` file; boundary metadata goes to `<output>.meta.jsonl`.
    #[arg(long)]
    pub output: PathBuf,
    /// Statistics JSON.
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub target_len: Option<usize>,
    /// Single separator id; shorthand for `--set boundary=[ID]`.
    #[arg(long)]
    pub separator_id: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    pub bucket_bounds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub bucket_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub target_total_tokens: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct StatsOut<'a> {
    stats: &'a PackStats,
    normalizer: f64,
    expected_total_tokens: f64,
    realized_total_tokens: u64,
    accounting_holds: bool,
}

pub fn run(args: PackArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("target_len", args.target_len)
        .put("boundary", args.separator_id.map(|id| vec![id]))
        .put("bucket_bounds", args.bucket_bounds)
        .put("bucket_weights", args.bucket_weights)
        .put("target_total_tokens", args.target_total_tokens)
        .put("seed", args.seed);
    let mut cfg: PackCliConfig = resolve(&args.cfg, o)?;
    let docs = read_corpus(&args.input)?;
    let hist = histogram(&docs, &cfg.bucket_bounds)?;
    let reachable: f64 = cfg.bucket_weights.iter().zip(&hist.token_counts).map(|(w, &t)| w * t as f64).sum();
    let target = *cfg.target_total_tokens.get_or_insert(reachable.floor() as u64);
    let plan = SamplingPlan {
        bucket_bounds: cfg.bucket_bounds.clone(),
        bucket_weights: cfg.bucket_weights.clone(),
        target_total_tokens: target,
        seed: cfg.seed,
    };
    let pack_cfg = PackConfig {
        target_len: cfg.target_len,
        boundary: cfg.boundary.clone(),
        tail: cfg.tail,
    };
    let (realization, order, out) = resample_and_pack(&docs, &plan, &pack_cfg, rayon::current_num_threads())?;
    let check = verify(&out.sequences, order.iter().map(|&i| &docs[i]), &pack_cfg)?;
    let counters = |s: &PackStats| {
        (s.sequences, s.documents, s.resampled_tokens, s.separators_inserted, s.pad_tokens, s.tokens_dropped)
    };
    if counters(&check) != counters(&out.stats) || !out.stats.accounting_holds() {
        return Err(Error::Verification {
            offset: 0,
            message: "packer statistics disagree with the independent recount".into(),
        });
    }
    write_upkd(&args.output, &pack_cfg, &out.sequences)?;
    let report = StatsOut {
        stats: &out.stats,
        normalizer: realization.normalizer,
        expected_total_tokens: realization.expected_total_tokens(),
        realized_total_tokens: realization.realized_total_tokens(),
        accounting_holds: out.stats.accounting_holds(),
    };
    write_json(&args.stats, &report)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("stats serialize"));
    Ok(())
}
