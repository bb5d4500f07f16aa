use std::path::PathBuf;

use clap::Args;
use ultralong_core::evalgen::{generate_niah, generate_ruler, write_cases, NiahConfig, RulerConfig, Spacing, Task};
use ultralong_core::Result;

use crate::config::{resolve, write_echo, ConfigArgs, Overrides};

#[derive(Debug, Args)]
pub struct GenNiahArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Case file (JSON Lines).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub min_length: Option<u64>,
    #[arg(long)]
    pub max_length: Option<u64>,
    #[arg(long)]
    pub num_lengths: Option<usize>,
    #[arg(long)]
    pub num_depths: Option<usize>,
    #[arg(long)]
    pub passkey_digits: Option<u32>,
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<Spacing>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenRulerArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// niah-multi-key, niah-multi-value or niah-multi-query.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub min_length: Option<u64>,
    #[arg(long)]
    pub max_length: Option<u64>,
    #[arg(long)]
    pub num_lengths: Option<usize>,
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<Spacing>,
    #[arg(long)]
    pub samples_per_length: Option<usize>,
    #[arg(long)]
    pub num_needles: Option<usize>,
    #[arg(long)]
    pub value_digits: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_spacing(s: &str) -> std::result::Result<Spacing, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown spacing {s:?}"))
}

pub fn niah(args: GenNiahArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("min_length", args.min_length)
        .put("max_length", args.max_length)
        .put("num_lengths", args.num_lengths)
        .put("num_depths", args.num_depths)
        .put("passkey_digits", args.passkey_digits)
        .put("spacing", args.spacing)
        .put("seed", args.seed);
    let cfg: NiahConfig = resolve(&args.cfg, o)?;
    let cases = generate_niah(&cfg)?;
    write_cases(&args.output, &cases)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    println!("wrote {} cases to {}", cases.len(), args.output.display());
    Ok(())
}

pub fn ruler(args: GenRulerArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("task", args.task)
        .put("min_length", args.min_length)
        .put("max_length", args.max_length)
        .put("num_lengths", args.num_lengths)
        .put("spacing", args.spacing)
        .put("samples_per_length", args.samples_per_length)
        .put("num_needles", args.num_needles)
        .put("value_digits", args.value_digits)
        .put("seed", args.seed);
    let cfg: RulerConfig = resolve(&args.cfg, o)?;
    let cases = generate_ruler(&cfg)?;
    write_cases(&args.output, &cases)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    println!("wrote {} cases to {}", cases.len(), args.output.display());
    Ok(())
}
