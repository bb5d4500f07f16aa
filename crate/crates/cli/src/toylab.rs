use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use ultralong_core::seed::derive_seed;
use ultralong_core::toylab::checkpoint::{read_checkpoint, write_checkpoint};
use ultralong_core::toylab::corpus::{make_toy_corpus, ToyCorpusSpec, QUERY};
use ultralong_core::toylab::experiment::{ablation_run, extend, ExperimentSpec, ExtensionMethod};
use ultralong_core::toylab::niah::{even_depths, toy_niah_eval, ToyNiahSpec};
use ultralong_core::toylab::train::{train, TargetMask, TrainConfig, TrainReport};
use ultralong_core::toylab::{ToyModel, ToyModelConfig};
use ultralong_core::{Error, Result};

use crate::config::{resolve, write_echo, write_json, ConfigArgs, Overrides};

#[derive(Debug, Subcommand)]
pub enum ToylabCommand {
    /// Train a toy model from scratch or continue from a checkpoint.
    Train(TrainArgs),
    /// Swap the rotary table of a checkpoint for a longer context.
    Extend(ExtendArgs),
    /// Needle retrieval accuracy over a length x depth grid.
    Eval(EvalArgs),
    /// Equal-budget comparison of extension schedules across seeds.
    Ablate(AblateArgs),
}

pub fn run(cmd: ToylabCommand) -> Result<()> {
    match cmd {
        ToylabCommand::Train(a) => train_cmd(a),
        ToylabCommand::Extend(a) => extend_cmd(a),
        ToylabCommand::Eval(a) => eval_cmd(a),
        ToylabCommand::Ablate(a) => ablate_cmd(a),
    }
}

/// Corpus context and vocabulary always follow the model; the nested seeds
/// are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub model: ToyModelConfig,
    pub corpus: ToyCorpusSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        let corpus = ToyCorpusSpec {
            sequences: 512,
            ..Default::default()
        };
        Self {
            model: ToyModelConfig::default(),
            train: TrainConfig {
                lr: 1e-3,
                steps: 1500,
                batch_size: 8,
                warmup_steps: 50,
                targets: TargetMask::AfterMarker {
                    marker: QUERY,
                    len: corpus.key_len,
                },
                ..Default::default()
            },
            corpus,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Training report JSON (loss curve and parameter digests).
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct TrainOut<'a> {
    initial_digest: String,
    final_digest: String,
    num_params: usize,
    context_length: usize,
    report: &'a TrainReport,
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("train.lr", args.lr)
        .put("train.steps", args.steps)
        .put("train.batch_size", args.batch_size)
        .put("train.warmup_steps", args.warmup_steps)
        .put("corpus.sequences", args.sequences)
        .put("seed", args.seed);
    let mut cfg: ToyTrainConfig = resolve(&args.cfg, o)?;
    let mut model = match &args.init {
        Some(p) => read_checkpoint(p)?.0,
        None => {
            cfg.model.seed = derive_seed(cfg.seed, "toylab/model");
            ToyModel::new(cfg.model.clone())?
        }
    };
    cfg.model = model.config().clone();
    cfg.corpus.context_length = model.context_length();
    cfg.corpus.vocab_size = model.config().vocab_size;
    cfg.corpus.seed = derive_seed(cfg.seed, "toylab/corpus");
    cfg.train.seed = derive_seed(cfg.seed, "toylab/train");

    let corpus = make_toy_corpus(&cfg.corpus)?;
    let initial_digest = model.param_digest();
    let report = train(&mut model, &corpus.token_sequences(), &cfg.train, |r| {
        if r.step % 100 == 0 {
            log::info!("step {} loss {:.4} lr {:.2e}", r.step, r.loss, r.lr);
        }
    })?;
    let meta = json!({"stage": "train", "steps": cfg.train.steps, "tokens": report.tokens, "final_loss": report.final_loss()});
    write_checkpoint(&args.output, &model, meta)?;
    let out = TrainOut {
        initial_digest,
        final_digest: model.param_digest(),
        num_params: model.num_params(),
        context_length: model.context_length(),
        report: &report,
    };
    write_json(&args.report, &out)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    println!(
        "trained {} steps, loss {:.4} -> {:.4}, digest {}",
        report.steps.len(),
        report.initial_loss().unwrap_or(f64::NAN),
        report.final_loss().unwrap_or(f64::NAN),
        out.final_digest
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtendConfig {
    pub method: ExtensionMethod,
    pub s: Option<f64>,
    /// Defaults to `s` times the base context.
    pub new_context: Option<usize>,
}

impl Default for ExtendConfig {
    fn default() -> Self {
        Self {
            method: ExtensionMethod::Yarn,
            s: None,
            new_context: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<ExtensionMethod>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub new_context: Option<usize>,
}

fn parse_method(s: &str) -> std::result::Result<ExtensionMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown method {s:?}; use yarn, ntk-aware or position-interpolation"))
}

fn extend_cmd(args: ExtendArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("method", args.method).put("s", args.s).put("new_context", args.new_context);
    let mut cfg: ExtendConfig = resolve(&args.cfg, o)?;
    let (mut model, header) = read_checkpoint(&args.input)?;
    let s = cfg.s.ok_or_else(|| Error::config("extend needs --s"))?;
    let base = model.config().rope.original_context as f64;
    let ctx = *cfg.new_context.get_or_insert((s * base).round() as usize);
    extend(&mut model, cfg.method, s, ctx)?;
    let meta = json!({"stage": "extend", "from": header.param_digest, "method": cfg.method, "s": s, "context_length": ctx});
    write_checkpoint(&args.output, &model, meta)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    println!("extended to context {ctx} with {:?} s={s}", cfg.method);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grid JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional depth x length TSV.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<f64>>,
    /// Evenly spaced depths in [0, 1]; one depth is the midpoint.
    #[arg(long, conflicts_with = "depths")]
    pub num_depths: Option<usize>,
    #[arg(long)]
    pub cases_per_cell: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("lengths", args.lengths)
        .put("depths", args.depths.or(args.num_depths.map(even_depths)))
        .put("cases_per_cell", args.cases_per_cell)
        .put("seed", args.seed);
    let cfg: ToyNiahSpec = resolve(&args.cfg, o)?;
    let (model, _) = read_checkpoint(&args.checkpoint)?;
    let grid = toy_niah_eval(&model, &cfg)?;
    write_json(&args.output, &grid)?;
    if let Some(p) = &args.tsv {
        std::fs::write(p, grid.to_tsv()).map_err(|e| Error::io(p, e))?;
    }
    write_echo(&args.cfg, &args.output, &cfg)?;
    print!("{}", grid.to_tsv());
    println!("mean accuracy {:.4}", grid.mean().unwrap_or(f64::NAN));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub experiment: ExperimentSpec,
    pub seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSpec::default(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Ablation report JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for one accuracy grid TSV per run.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    /// Keep only these arms, in this order.
    #[arg(long, value_delimiter = ',')]
    pub arms: Option<Vec<String>>,
    /// A seed count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
}

#[derive(Debug, Clone)]
pub struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    if s.contains(',') {
        let seeds = s.split(',').map(|x| x.trim().parse().map_err(|e| format!("bad seed {x:?}: {e}")));
        return seeds.collect::<std::result::Result<_, _>>().map(SeedList);
    }
    let n: u64 = s.parse().map_err(|e| format!("bad seed count {s:?}: {e}"))?;
    Ok(SeedList((0..n).collect()))
}

fn ablate_cmd(args: AblateArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("seeds", args.seeds.map(|s| s.0));
    let mut cfg: AblateConfig = resolve(&args.cfg, o)?;
    if let Some(names) = &args.arms {
        let mut arms = Vec::new();
        for n in names {
            let arm = cfg.experiment.arms.iter().find(|a| &a.name == n);
            arms.push(arm.cloned().ok_or_else(|| Error::config(format!("no arm named {n:?}")))?);
        }
        cfg.experiment.arms = arms;
    }
    cfg.experiment.validate()?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    let report = ablation_run(&cfg.experiment, &cfg.seeds)?;
    write_json(&args.output, &report)?;
    if let Some(dir) = &args.grids {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for row in &report.rows {
            let p = dir.join(format!("{}-seed{}.tsv", row.arm, row.seed));
            write_text(&p, &row.grid.to_tsv())?;
        }
    }
    println!("budget {} tokens per arm, {} runs", report.budget_tokens, report.rows.len() - report.seeds.len());
    for m in &report.means {
        println!(
            "{:<16} within {:.3} beyond {:.3} longest {:.3}",
            m.arm,
            m.within_base.unwrap_or(f64::NAN),
            m.beyond_base.unwrap_or(f64::NAN),
            m.buckets.last().map_or(f64::NAN, |b| b.accuracy)
        );
    }
    for c in &report.claims {
        println!(
            "{}: {}/{} seeds hold -> {}",
            c.claim,
            c.seeds_holding,
            c.per_seed.len(),
            if c.reproduced { "reproduced" } else { "not reproduced" }
        );
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
