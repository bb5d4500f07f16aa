use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use ultralong_core::harness::{
    aggregate, heatmap_export, read_report, score_files, write_report, EndpointConfig, ScoreReport, ScoringMode,
    DEFAULT_THRESHOLDS,
};
use ultralong_core::{Error, Result};

use crate::config::{resolve, write_echo, ConfigArgs, Overrides};

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub cases: PathBuf,
    /// Response file (JSON Lines), sorted by case id when the run ends.
    #[arg(long)]
    pub output: PathBuf,
    /// Keep `ok` records already in the output and send only the rest.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model_id: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub auth_env_var: Option<String>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub request_timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub backoff_base_ms: Option<u64>,
}

pub fn run(args: RunArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("base_url", args.base_url)
        .put("model_id", args.model_id)
        .put("auth_env_var", args.auth_env_var)
        .put("max_output_tokens", args.max_output_tokens)
        .put("temperature", args.temperature)
        .put("request_timeout_secs", args.request_timeout_secs)
        .put("max_concurrency", args.max_concurrency)
        .put("retries", args.retries)
        .put("backoff_base_ms", args.backoff_base_ms);
    let cfg: EndpointConfig = resolve(&args.cfg, o)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    let summary = ultralong_core::harness::run(&args.cases, &cfg, &args.output, args.resume)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    summary.check()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Substring,
    Strict,
}

impl From<ModeArg> for ScoringMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Substring => ScoringMode::Substring,
            ModeArg::Strict => ScoringMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub mode: ScoringMode,
    /// Bucket upper bounds in tokens, ascending.
    pub thresholds: Vec<u64>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            mode: ScoringMode::Substring,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional depth x length heatmap TSV.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<u64>>,
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("mode", args.mode.map(ScoringMode::from)).put("thresholds", args.thresholds);
    let cfg: ScoreConfig = resolve(&args.cfg, o)?;
    let scores = score_files(&args.cases, &args.responses, cfg.mode)?;
    let report = aggregate(scores, &cfg.thresholds)?;
    write_report(&args.output, &report)?;
    if let Some(h) = &args.heatmap {
        heatmap_export(&report, h)?;
    }
    write_echo(&args.cfg, &args.output, &cfg)?;
    print!("{}", summary_tsv(&report));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Re-bucket with these thresholds; `null` keeps the report's own.
    pub thresholds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Report JSON written by `score`.
    #[arg(long)]
    pub report: PathBuf,
    /// Heatmap TSV.
    #[arg(long)]
    pub heatmap: PathBuf,
    /// Bucket and per-length summary TSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<u64>>,
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("thresholds", args.thresholds);
    let mut cfg: ReportConfig = resolve(&args.cfg, o)?;
    let mut report = read_report(&args.report)?;
    let thresholds = cfg.thresholds.get_or_insert_with(|| report.thresholds.clone()).clone();
    if thresholds != report.thresholds {
        report = aggregate(report.per_case, &thresholds)?;
    }
    heatmap_export(&report, &args.heatmap)?;
    let summary = summary_tsv(&report);
    if let Some(p) = &args.summary {
        std::fs::write(p, &summary).map_err(|e| Error::io(p, e))?;
    }
    write_echo(&args.cfg, &args.heatmap, &cfg)?;
    print!("{summary}");
    Ok(())
}

/// One row per bucket and per length, then the overall mean.
fn summary_tsv(report: &ScoreReport) -> String {
    let mut out = String::from("group\tkey\tcases\tmean\texact\n");
    for (t, m) in &report.buckets {
        let _ = writeln!(out, "bucket\t<={t}\t{}\t{:.4}\t{}", m.cases, m.mean, m.exact);
    }
    for (l, m) in &report.per_length {
        let _ = writeln!(out, "length\t{l}\t{}\t{:.4}\t{}", m.cases, m.mean, m.exact);
    }
    let m = &report.overall;
    let _ = writeln!(out, "overall\tall\t{}\t{:.4}\t{}", m.cases, m.mean, m.exact);
    out
}
