use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use ultralong_core::rope::{
    frequencies, scale_factor_for_target, FrequencyExport, NtkMode, RopeSpec, ScalingMethod, DEFAULT_BASE_THETA,
    DEFAULT_HEAD_DIM, DEFAULT_ORIGINAL_CONTEXT, YARN_ALPHA, YARN_BETA,
};
use ultralong_core::{Error, Result};

use crate::config::{resolve, write_echo, write_json, ConfigArgs, Overrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TableMethod {
    None,
    Yarn,
    #[value(alias = "pi")]
    #[serde(alias = "pi")]
    PositionInterpolation,
    #[value(alias = "ntk")]
    #[serde(alias = "ntk")]
    NtkAware,
    DynamicNtk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RopeTableConfig {
    pub head_dim: usize,
    pub base_theta: f64,
    /// Pre-training context that scale factors multiply.
    pub base_context: u64,
    pub method: TableMethod,
    pub s: Option<f64>,
    /// Target context; implies `s = target / base_context`.
    pub target: Option<u64>,
    pub round_pow2: bool,
    pub alpha: f64,
    pub beta: f64,
    pub mscale: bool,
    /// Explicit NTK base; replaces the factor form.
    pub theta: Option<f64>,
    pub current_length: Option<u64>,
    pub precision: Precision,
}

impl Default for RopeTableConfig {
    fn default() -> Self {
        Self {
            head_dim: DEFAULT_HEAD_DIM,
            base_theta: DEFAULT_BASE_THETA,
            base_context: DEFAULT_ORIGINAL_CONTEXT,
            method: TableMethod::None,
            s: None,
            target: None,
            round_pow2: false,
            alpha: YARN_ALPHA,
            beta: YARN_BETA,
            mscale: true,
            theta: None,
            current_length: None,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Args)]
pub struct RopeTableArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Frequency table JSON.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub method: Option<TableMethod>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub target: Option<u64>,
    #[arg(long)]
    pub base_context: Option<u64>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub base_theta: Option<f64>,
    #[arg(long)]
    pub round_pow2: Option<bool>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mscale: Option<bool>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub current_length: Option<u64>,
    #[arg(long)]
    pub precision: Option<Precision>,
}

impl RopeTableConfig {
    /// Fills in `s` from `target` and checks the two agree.
    fn resolve_scale(&mut self) -> Result<()> {
        if let Some(t) = self.target {
            let implied = scale_factor_for_target(t, self.base_context, self.round_pow2)?;
            match self.s {
                Some(s) if s != implied => {
                    return Err(Error::config(format!(
                        "s = {s} conflicts with target {t} over base context {} (s = {implied})",
                        self.base_context
                    )))
                }
                _ => self.s = Some(implied),
            }
        }
        Ok(())
    }

    fn scaling(&self) -> Result<ScalingMethod> {
        let need_s = || {
            self.s
                .ok_or_else(|| Error::config(format!("method {:?} needs --s or --target", self.method)))
        };
        Ok(match self.method {
            TableMethod::None => {
                if self.s.is_some() || self.theta.is_some() {
                    return Err(Error::config("method none takes no scale factor"));
                }
                ScalingMethod::None
            }
            TableMethod::Yarn => ScalingMethod::Yarn {
                s: need_s()?,
                alpha: self.alpha,
                beta: self.beta,
                mscale_enabled: self.mscale,
            },
            TableMethod::PositionInterpolation => ScalingMethod::PositionInterpolation { s: need_s()? },
            TableMethod::NtkAware => match (self.theta, self.s) {
                (Some(_), Some(_)) => return Err(Error::config("give either --theta or --s for ntk-aware, not both")),
                (Some(theta), None) => ScalingMethod::NtkAware {
                    mode: NtkMode::Explicit(theta),
                },
                (None, _) => ScalingMethod::NtkAware {
                    mode: NtkMode::Factor(need_s()?),
                },
            },
            TableMethod::DynamicNtk => ScalingMethod::DynamicNtk {
                current_length: self
                    .current_length
                    .ok_or_else(|| Error::config("dynamic-ntk needs --current-length"))?,
            },
        })
    }
}

pub fn run(args: RopeTableArgs) -> Result<()> {
    let mut o = Overrides::new();
    o.put("method", args.method)
        .put("s", args.s)
        .put("target", args.target)
        .put("base_context", args.base_context)
        .put("head_dim", args.head_dim)
        .put("base_theta", args.base_theta)
        .put("round_pow2", args.round_pow2)
        .put("alpha", args.alpha)
        .put("beta", args.beta)
        .put("mscale", args.mscale)
        .put("theta", args.theta)
        .put("current_length", args.current_length)
        .put("precision", args.precision);
    let mut cfg: RopeTableConfig = resolve(&args.cfg, o)?;
    cfg.resolve_scale()?;
    let spec = RopeSpec::new(cfg.head_dim, cfg.base_theta, cfg.base_context)?;
    let method = cfg.scaling()?;
    let table = frequencies(&spec, &method)?;
    let mut export = FrequencyExport::new(&spec, &method, &table);
    if cfg.precision == Precision::F32 {
        export.freqs = export.freqs_f32().into_iter().map(f64::from).collect();
    }
    write_json(&args.output, &export)?;
    write_echo(&args.cfg, &args.output, &cfg)?;
    println!(
        "method {} s {} | {} frequencies, first {:e}, last {:e}, attention_scale {}",
        export.method,
        cfg.s.map_or("-".to_string(), |s| s.to_string()),
        export.freqs.len(),
        export.freqs[0],
        export.freqs[export.freqs.len() - 1],
        export.attention_scale
    );
    Ok(())
}
