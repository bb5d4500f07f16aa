//! Rotary position embeddings and context-extension frequency scaling.
//!
//! Frequencies follow the adjacent-pair convention: dimension pair `d`
//! covers `(x[2d], x[2d + 1])` and rotates by `position * freqs[d]` radians.
//! All tables are computed in `f64`.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BASE_THETA: f64 = 5.0e5;
pub const DEFAULT_ORIGINAL_CONTEXT: u64 = 8192;
pub const DEFAULT_HEAD_DIM: usize = 128;
pub const YARN_ALPHA: f64 = 1.0;
pub const YARN_BETA: f64 = 4.0;
/// Base frequency used for the NTK-aware ablation arm.
pub const NTK_ABLATION_THETA: f64 = 3_580_165_449.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeSpec {
    pub head_dim: usize,
    pub base_theta: f64,
    pub original_context: u64,
}

impl Default for RopeSpec {
    fn default() -> Self {
        Self {
            head_dim: DEFAULT_HEAD_DIM,
            base_theta: DEFAULT_BASE_THETA,
            original_context: DEFAULT_ORIGINAL_CONTEXT,
        }
    }
}

impl RopeSpec {
    pub fn new(head_dim: usize, base_theta: f64, original_context: u64) -> Result<Self> {
        let spec = Self {
            head_dim,
            base_theta,
            original_context,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim < 2 || self.head_dim % 2 != 0 {
            return Err(Error::config(format!(
                "head_dim must be even and >= 2, got {}",
                self.head_dim
            )));
        }
        if !(self.base_theta.is_finite() && self.base_theta > 1.0) {
            return Err(Error::config(format!(
                "base_theta must be finite and > 1, got {}",
                self.base_theta
            )));
        }
        if self.original_context == 0 {
            return Err(Error::config("original_context must be >= 1"));
        }
        Ok(())
    }

    pub fn half_dim(&self) -> usize {
        self.head_dim / 2
    }
}

/// How an NTK-aware table picks its enlarged base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NtkMode {
    /// `theta' = theta * s^(D / (D - 2))`.
    Factor(f64),
    /// Use the given base directly.
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalingMethod {
    None,
    PositionInterpolation {
        s: f64,
    },
    NtkAware {
        mode: NtkMode,
    },
    DynamicNtk {
        current_length: u64,
    },
    Yarn {
        s: f64,
        alpha: f64,
        beta: f64,
        mscale_enabled: bool,
    },
}

impl Default for ScalingMethod {
    fn default() -> Self {
        ScalingMethod::None
    }
}

impl ScalingMethod {
    /// YaRN with the fixed ramp thresholds and attention scaling on.
    pub fn yarn(s: f64) -> Self {
        ScalingMethod::Yarn {
            s,
            alpha: YARN_ALPHA,
            beta: YARN_BETA,
            mscale_enabled: true,
        }
    }

    pub fn ntk_factor(s: f64) -> Self {
        ScalingMethod::NtkAware {
            mode: NtkMode::Factor(s),
        }
    }

    pub fn ntk_theta(theta: f64) -> Self {
        ScalingMethod::NtkAware {
            mode: NtkMode::Explicit(theta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalingMethod::None => "none",
            ScalingMethod::PositionInterpolation { .. } => "position_interpolation",
            ScalingMethod::NtkAware { .. } => "ntk_aware",
            ScalingMethod::DynamicNtk { .. } => "dynamic_ntk",
            ScalingMethod::Yarn { .. } => "yarn",
        }
    }

    /// Method parameters without the tag, for export.
    pub fn params_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("scaling method serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("method");
        }
        value
    }

    /// Same method with a different scale factor. Explicit-theta NTK and
    /// `None` are returned unchanged.
    pub fn with_scale(&self, s: f64) -> Self {
        match *self {
            ScalingMethod::PositionInterpolation { .. } => ScalingMethod::PositionInterpolation { s },
            ScalingMethod::NtkAware {
                mode: NtkMode::Factor(_),
            } => ScalingMethod::ntk_factor(s),
            ScalingMethod::Yarn {
                alpha,
                beta,
                mscale_enabled,
                ..
            } => ScalingMethod::Yarn {
                s,
                alpha,
                beta,
                mscale_enabled,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub freqs: Vec<f64>,
    pub attention_scale: f64,
}

impl FrequencyTable {
    pub fn half_dim(&self) -> usize {
        self.freqs.len()
    }

    pub fn head_dim(&self) -> usize {
        self.freqs.len() * 2
    }
}

fn check_scale(s: f64) -> Result<()> {
    if !(s.is_finite() && s >= 1.0) {
        return Err(Error::config(format!("scale factor must be >= 1, got {s}")));
    }
    Ok(())
}

fn table_from_theta(head_dim: usize, theta: f64) -> Vec<f64> {
    let d_model = head_dim as f64;
    (0..head_dim / 2)
        .map(|d| theta.powf(-((2 * d) as f64) / d_model))
        .collect()
}

/// Unscaled RoPE: `freqs[d] = theta^(-2d/D)`.
pub fn base_frequencies(spec: &RopeSpec) -> Result<FrequencyTable> {
    spec.validate()?;
    Ok(FrequencyTable {
        freqs: table_from_theta(spec.head_dim, spec.base_theta),
        attention_scale: 1.0,
    })
}

/// Full rotations each dimension pair completes inside the original context.
pub fn rotations_in_context(spec: &RopeSpec, table: &FrequencyTable) -> Result<Vec<f64>> {
    spec.validate()?;
    let ctx = spec.original_context as f64;
    Ok(table.freqs.iter().map(|f| ctx * f / (2.0 * PI)).collect())
}

/// Linear ramp clamped to `[0, 1]`: 0 at or below `alpha`, 1 at or above `beta`.
pub fn ramp(r: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha < beta) {
        return Err(Error::config(format!(
            "ramp requires alpha < beta, got alpha={alpha} beta={beta}"
        )));
    }
    Ok(ramp_unchecked(r, alpha, beta))
}

fn ramp_unchecked(r: f64, alpha: f64, beta: f64) -> f64 {
    if r <= alpha {
        0.0
    } else if r >= beta {
        1.0
    } else {
        ((r - alpha) / (beta - alpha)).clamp(0.0, 1.0)
    }
}

/// YaRN attention temperature `0.1 ln s + 1`.
pub fn yarn_mscale(s: f64) -> f64 {
    if s > 1.0 {
        0.1 * s.ln() + 1.0
    } else {
        1.0
    }
}

pub fn yarn_frequencies(
    spec: &RopeSpec,
    s: f64,
    alpha: f64,
    beta: f64,
    mscale_enabled: bool,
) -> Result<FrequencyTable> {
    check_scale(s)?;
    if !(alpha >= 0.0 && alpha < beta) {
        return Err(Error::config(format!(
            "yarn requires 0 <= alpha < beta, got alpha={alpha} beta={beta}"
        )));
    }
    let base = base_frequencies(spec)?;
    let rotations = rotations_in_context(spec, &base)?;
    // f' = f/s + gamma (f - f/s), written so that s = 1 is exact and the
    // result never leaves [f/s, f] through rounding.
    let freqs = base
        .freqs
        .iter()
        .zip(&rotations)
        .map(|(&f, &r)| {
            let gamma = ramp_unchecked(r, alpha, beta);
            let interpolated = f / s;
            if gamma == 0.0 {
                interpolated
            } else if gamma == 1.0 {
                f
            } else {
                (interpolated + gamma * (f - interpolated)).clamp(interpolated, f)
            }
        })
        .collect();
    let attention_scale = if mscale_enabled { yarn_mscale(s) } else { 1.0 };
    Ok(FrequencyTable {
        freqs,
        attention_scale,
    })
}

/// Position interpolation: every frequency divided by `s`.
pub fn pi_frequencies(spec: &RopeSpec, s: f64) -> Result<FrequencyTable> {
    check_scale(s)?;
    let mut table = base_frequencies(spec)?;
    for f in &mut table.freqs {
        *f /= s;
    }
    Ok(table)
}

/// Base used by NTK-aware scaling for the given mode.
pub fn ntk_theta(spec: &RopeSpec, mode: NtkMode) -> Result<f64> {
    spec.validate()?;
    match mode {
        NtkMode::Factor(s) => {
            check_scale(s)?;
            if spec.head_dim <= 2 {
                return Err(Error::config(
                    "NTK factor mode needs head_dim > 2 (exponent D/(D-2) undefined)",
                ));
            }
            let d = spec.head_dim as f64;
            Ok(spec.base_theta * s.powf(d / (d - 2.0)))
        }
        NtkMode::Explicit(theta) => {
            if !(theta.is_finite() && theta > 1.0) {
                return Err(Error::config(format!(
                    "explicit NTK theta must be > 1, got {theta}"
                )));
            }
            Ok(theta)
        }
    }
}

pub fn ntk_frequencies(spec: &RopeSpec, mode: NtkMode) -> Result<FrequencyTable> {
    let theta = ntk_theta(spec, mode)?;
    Ok(FrequencyTable {
        freqs: table_from_theta(spec.head_dim, theta),
        attention_scale: 1.0,
    })
}

/// Effective factor for dynamic NTK at the current sequence length.
pub fn dynamic_scale(spec: &RopeSpec, current_length: u64) -> f64 {
    (current_length as f64 / spec.original_context as f64).max(1.0)
}

/// `target / base`, optionally rounded up to the next power of two.
pub fn scale_factor_for_target(target_context: u64, base_pretrain_context: u64, round_pow2: bool) -> Result<f64> {
    if base_pretrain_context == 0 {
        return Err(Error::config("base context must be >= 1"));
    }
    if target_context < base_pretrain_context {
        return Err(Error::config(format!(
            "target context {target_context} is shorter than base context {base_pretrain_context}"
        )));
    }
    let s = target_context as f64 / base_pretrain_context as f64;
    if round_pow2 {
        Ok(2f64.powi(s.log2().ceil() as i32))
    } else {
        Ok(s)
    }
}

/// Table for any scaling method.
pub fn frequencies(spec: &RopeSpec, method: &ScalingMethod) -> Result<FrequencyTable> {
    match *method {
        ScalingMethod::None => base_frequencies(spec),
        ScalingMethod::PositionInterpolation { s } => pi_frequencies(spec, s),
        ScalingMethod::NtkAware { mode } => ntk_frequencies(spec, mode),
        ScalingMethod::DynamicNtk { current_length } => {
            if current_length == 0 {
                return Err(Error::config("dynamic NTK needs current_length >= 1"));
            }
            let s = dynamic_scale(spec, current_length);
            if s == 1.0 {
                // Factor mode is undefined for D = 2 but s = 1 is always the base table.
                base_frequencies(spec)
            } else {
                ntk_frequencies(spec, NtkMode::Factor(s))
            }
        }
        ScalingMethod::Yarn {
            s,
            alpha,
            beta,
            mscale_enabled,
        } => yarn_frequencies(spec, s, alpha, beta, mscale_enabled),
    }
}

#[inline]
fn rotate_pairs(x: &mut [f64], cos: &[f64], sin: &[f64]) {
    for ((pair, &c), &s) in x.chunks_exact_mut(2).zip(cos).zip(sin) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * c - b * s;
        pair[1] = a * s + b * c;
    }
}

/// Rotate each adjacent pair by `position * freqs[d]` and scale by the
/// table's attention scale.
pub fn apply_rotary(vector: &[f64], position: u64, table: &FrequencyTable) -> Result<Vec<f64>> {
    if vector.len() != table.head_dim() {
        return Err(Error::shape(format!(
            "vector has {} entries, table expects {}",
            vector.len(),
            table.head_dim()
        )));
    }
    let p = position as f64;
    let m = table.attention_scale;
    let (cos, sin): (Vec<f64>, Vec<f64>) = table
        .freqs
        .iter()
        .map(|f| {
            let angle = p * f;
            (m * angle.cos(), m * angle.sin())
        })
        .unzip();
    let mut out = vector.to_vec();
    rotate_pairs(&mut out, &cos, &sin);
    Ok(out)
}

/// Precomputed `(m cos, m sin)` rows for a contiguous range of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CosSinTable {
    start: u64,
    rows: usize,
    half_dim: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl CosSinTable {
    pub fn new(positions: Range<u64>, table: &FrequencyTable) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::config("cos/sin table needs a non-empty position range"));
        }
        let half_dim = table.half_dim();
        let rows = (positions.end - positions.start) as usize;
        let m = table.attention_scale;
        let mut cos = Vec::with_capacity(rows * half_dim);
        let mut sin = Vec::with_capacity(rows * half_dim);
        for pos in positions.clone() {
            let p = pos as f64;
            for f in &table.freqs {
                let angle = p * f;
                cos.push(m * angle.cos());
                sin.push(m * angle.sin());
            }
        }
        Ok(Self {
            start: positions.start,
            rows,
            half_dim,
            cos,
            sin,
        })
    }

    pub fn positions(&self) -> Range<u64> {
        self.start..self.start + self.rows as u64
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    /// `(cos, sin)` slices for one position, or `None` outside the range.
    pub fn row(&self, position: u64) -> Option<(&[f64], &[f64])> {
        if position < self.start || position >= self.start + self.rows as u64 {
            return None;
        }
        let i = (position - self.start) as usize * self.half_dim;
        Some((&self.cos[i..i + self.half_dim], &self.sin[i..i + self.half_dim]))
    }

    pub fn apply_in_place(&self, x: &mut [f64], position: u64) -> Result<()> {
        if x.len() != self.half_dim * 2 {
            return Err(Error::shape(format!(
                "vector has {} entries, table expects {}",
                x.len(),
                self.half_dim * 2
            )));
        }
        let (cos, sin) = self
            .row(position)
            .ok_or_else(|| Error::shape(format!("position {position} outside table range")))?;
        rotate_pairs(x, cos, sin);
        Ok(())
    }

    /// Transpose rotation, used for gradients: rotates by the negative angle
    /// (and still multiplies by `m`).
    pub fn apply_transpose_in_place(&self, x: &mut [f64], position: u64) -> Result<()> {
        let (cos, sin) = self
            .row(position)
            .ok_or_else(|| Error::shape(format!("position {position} outside table range")))?;
        for ((pair, &c), &s) in x.chunks_exact_mut(2).zip(cos).zip(sin) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c + b * s;
            pair[1] = -a * s + b * c;
        }
        Ok(())
    }
}

/// JSON export of a frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyExport {
    pub head_dim: usize,
    pub theta: f64,
    pub original_context: u64,
    pub method: String,
    pub params: serde_json::Value,
    pub freqs: Vec<f64>,
    pub attention_scale: f64,
}

impl FrequencyExport {
    pub fn new(spec: &RopeSpec, method: &ScalingMethod, table: &FrequencyTable) -> Self {
        Self {
            head_dim: spec.head_dim,
            theta: spec.base_theta,
            original_context: spec.original_context,
            method: method.name().to_string(),
            params: method.params_json(),
            freqs: table.freqs.clone(),
            attention_scale: table.attention_scale,
        }
    }

    /// Single-precision copy of the frequencies.
    pub fn freqs_f32(&self) -> Vec<f32> {
        self.freqs.iter().map(|&f| f as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(d: usize, theta: f64, ctx: u64) -> RopeSpec {
        RopeSpec::new(d, theta, ctx).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn base_table_small() {
        let t = base_frequencies(&spec(4, 10000.0, 64)).unwrap();
        assert_eq!(t.freqs.len(), 2);
        assert_eq!(t.freqs[0], 1.0);
        assert!(close(t.freqs[1], 0.01, 1e-15));
        assert_eq!(t.attention_scale, 1.0);

        let t = base_frequencies(&spec(2, 123.0, 64)).unwrap();
        assert_eq!(t.freqs, vec![1.0]);
    }

    #[test]
    fn odd_head_dim_rejected() {
        assert!(matches!(RopeSpec::new(3, 10000.0, 64), Err(Error::Config(_))));
        assert!(RopeSpec::new(4, 1.0, 64).is_err());
        assert!(RopeSpec::new(4, 10.0, 0).is_err());
    }

    #[test]
    fn rotations_examples() {
        let s = spec(2, 10.0, 64);
        let t = FrequencyTable {
            freqs: vec![1.0],
            attention_scale: 1.0,
        };
        let r = rotations_in_context(&s, &t).unwrap();
        assert!((r[0] - 10.185916357881302).abs() < 1e-12);

        let s = spec(2, 10.0, 1);
        let t = FrequencyTable {
            freqs: vec![2.0 * PI],
            attention_scale: 1.0,
        };
        assert_eq!(rotations_in_context(&s, &t).unwrap(), vec![1.0]);
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp(0.5, 1.0, 4.0).unwrap(), 0.0);
        assert_eq!(ramp(2.5, 1.0, 4.0).unwrap(), 0.5);
        assert_eq!(ramp(10.0, 1.0, 4.0).unwrap(), 1.0);
        assert!(ramp(1.0, 4.0, 4.0).is_err());
        assert!(ramp(1.0, 5.0, 4.0).is_err());
    }

    #[test]
    fn yarn_small_table() {
        // r0 = 64/(2 pi) ~ 10.19 >= beta keeps f0; r1 ~ 0.102 <= alpha gives 0.01/8.
        let t = yarn_frequencies(&spec(4, 10000.0, 64), 8.0, 1.0, 4.0, false).unwrap();
        assert_eq!(t.freqs[0], 1.0);
        assert!(close(t.freqs[1], 0.00125, 1e-14));
        assert_eq!(t.attention_scale, 1.0);
    }

    #[test]
    fn yarn_identity_and_mscale() {
        let s = spec(128, 5e5, 8192);
        let base = base_frequencies(&s).unwrap();
        let t = yarn_frequencies(&s, 1.0, 1.0, 4.0, true).unwrap();
        assert_eq!(t, base);
        let t = yarn_frequencies(&s, 128.0, 1.0, 4.0, true).unwrap();
        assert!((t.attention_scale - 1.4852030263919617).abs() < 1e-12);
        assert!(yarn_frequencies(&s, 0.9, 1.0, 4.0, true).is_err());
        assert!(yarn_frequencies(&s, 2.0, 4.0, 1.0, true).is_err());
    }

    #[test]
    fn pi_examples() {
        let s = spec(4, 10000.0, 64);
        let t = pi_frequencies(&s, 4.0).unwrap();
        assert_eq!(t.freqs[0], 0.25);
        assert!(close(t.freqs[1], 0.0025, 1e-14));
        assert_eq!(pi_frequencies(&s, 1.0).unwrap(), base_frequencies(&s).unwrap());
        assert!(pi_frequencies(&s, 0.5).is_err());
    }

    #[test]
    fn ntk_examples() {
        let s = spec(4, 10000.0, 64);
        assert_eq!(ntk_theta(&s, NtkMode::Factor(16.0)).unwrap(), 2_560_000.0);
        assert_eq!(
            ntk_frequencies(&s, NtkMode::Factor(1.0)).unwrap(),
            base_frequencies(&s).unwrap()
        );
        let big = spec(128, 5e5, 8192);
        let t = ntk_frequencies(&big, NtkMode::Explicit(NTK_ABLATION_THETA)).unwrap();
        assert_eq!(t.freqs.len(), 64);
        assert_eq!(t.freqs[0], 1.0);
        assert!(close(t.freqs[63], NTK_ABLATION_THETA.powf(-126.0 / 128.0), 1e-15));
        assert!(matches!(
            ntk_frequencies(&spec(2, 10.0, 8), NtkMode::Factor(2.0)),
            Err(Error::Config(_))
        ));
        assert!(ntk_frequencies(&s, NtkMode::Explicit(1.0)).is_err());
    }

    #[test]
    fn dynamic_scale_examples() {
        let s = spec(128, 5e5, 8192);
        assert_eq!(dynamic_scale(&s, 4096), 1.0);
        assert_eq!(dynamic_scale(&s, 16384), 2.0);
        assert_eq!(dynamic_scale(&s, 12288), 1.5);
        let t = frequencies(&s, &ScalingMethod::DynamicNtk { current_length: 16384 }).unwrap();
        assert_eq!(t, ntk_frequencies(&s, NtkMode::Factor(2.0)).unwrap());
    }

    #[test]
    fn scale_factor_examples() {
        assert_eq!(scale_factor_for_target(1_048_576, 8192, false).unwrap(), 128.0);
        assert_eq!(scale_factor_for_target(2_097_152, 8192, false).unwrap(), 256.0);
        assert_eq!(scale_factor_for_target(4_194_304, 8192, false).unwrap(), 512.0);
        assert_eq!(scale_factor_for_target(8192, 8192, false).unwrap(), 1.0);
        assert_eq!(scale_factor_for_target(12288, 8192, false).unwrap(), 1.5);
        assert_eq!(scale_factor_for_target(12288, 8192, true).unwrap(), 2.0);
        assert!(scale_factor_for_target(4096, 8192, false).is_err());
    }

    #[test]
    fn rotary_examples() {
        let t = FrequencyTable {
            freqs: vec![PI / 2.0],
            attention_scale: 1.0,
        };
        let out = apply_rotary(&[1.0, 0.0], 1, &t).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
        let t2 = FrequencyTable {
            attention_scale: 2.0,
            ..t.clone()
        };
        let out = apply_rotary(&[1.0, 0.0], 1, &t2).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
        let x = [0.3, -1.2, 4.0, 0.5];
        let t4 = base_frequencies(&spec(4, 10000.0, 64)).unwrap();
        assert_eq!(apply_rotary(&x, 0, &t4).unwrap(), x.to_vec());
        assert!(matches!(apply_rotary(&x[..3], 0, &t4), Err(Error::Shape(_))));
    }

    #[test]
    fn cos_sin_rows() {
        let t = FrequencyTable {
            freqs: vec![PI, 0.5],
            attention_scale: 1.5,
        };
        let table = CosSinTable::new(0..4, &t).unwrap();
        let (c, s) = table.row(0).unwrap();
        assert_eq!(c, &[1.5, 1.5]);
        assert_eq!(s, &[0.0, 0.0]);
        let (c, s) = table.row(1).unwrap();
        assert!((c[0] + 1.5).abs() < 1e-15 && s[0].abs() < 1e-15);
        assert!(table.row(4).is_none());
        assert!(CosSinTable::new(3..3, &t).is_err());
    }

    #[test]
    fn export_shape() {
        let s = spec(4, 10000.0, 64);
        let m = ScalingMethod::yarn(8.0);
        let t = frequencies(&s, &m).unwrap();
        let e = FrequencyExport::new(&s, &m, &t);
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["method"], "yarn");
        assert_eq!(json["params"]["s"], 8.0);
        assert_eq!(json["params"]["alpha"], 1.0);
        assert!(json["params"].get("method").is_none());
        let back: FrequencyExport = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    fn any_method(s: f64, d: usize) -> impl Strategy<Value = ScalingMethod> {
        let mut options = vec![
            Just(ScalingMethod::None).boxed(),
            Just(ScalingMethod::PositionInterpolation { s }).boxed(),
            Just(ScalingMethod::yarn(s)).boxed(),
            Just(ScalingMethod::ntk_theta(NTK_ABLATION_THETA)).boxed(),
        ];
        if d > 2 {
            options.push(Just(ScalingMethod::ntk_factor(s)).boxed());
        }
        proptest::strategy::Union::new(options)
    }

    proptest! {
        #[test]
        fn ramp_monotone(a in -5.0f64..5.0, width in 0.01f64..10.0, r1 in -20.0f64..20.0, r2 in -20.0f64..20.0) {
            let b = a + width;
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let g_lo = ramp(lo, a, b).unwrap();
            let g_hi = ramp(hi, a, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&g_lo));
            prop_assert!(g_lo <= g_hi);
        }

        #[test]
        fn yarn_bounds(half in 1usize..65, theta in 2.0f64..1e7, ctx in 1u64..100_000, s in 1.0f64..1024.0) {
            let sp = spec(half * 2, theta, ctx);
            let base = base_frequencies(&sp).unwrap();
            let y = yarn_frequencies(&sp, s, 1.0, 4.0, true).unwrap();
            let r = rotations_in_context(&sp, &base).unwrap();
            for d in 0..half {
                let f = base.freqs[d];
                prop_assert!(f / s <= y.freqs[d] && y.freqs[d] <= f);
                if r[d] <= 1.0 { prop_assert_eq!(y.freqs[d], f / s); }
                if r[d] >= 4.0 { prop_assert_eq!(y.freqs[d], f); }
            }
        }

        #[test]
        fn relative_position_and_norm(
            half in 1usize..9,
            s in 1.0f64..64.0,
            p in 0u64..5000,
            delta in 0u64..5000,
            pick in 0usize..5,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let d = half * 2;
            let sp = spec(d, 10000.0, 512);
            let methods = [
                ScalingMethod::None,
                ScalingMethod::PositionInterpolation { s },
                ScalingMethod::yarn(s),
                ScalingMethod::ntk_theta(NTK_ABLATION_THETA),
                if d > 2 { ScalingMethod::ntk_factor(s) } else { ScalingMethod::None },
            ];
            let t = frequencies(&sp, &methods[pick]).unwrap();
            let mut rng = crate::seed::rng_for(seed, "prop");
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let at_zero = dot(&apply_rotary(&q, 0, &t).unwrap(), &apply_rotary(&k, delta, &t).unwrap());
            let at_p = dot(&apply_rotary(&q, p, &t).unwrap(), &apply_rotary(&k, p + delta, &t).unwrap());
            prop_assert!((at_zero - at_p).abs() <= 1e-9);
            let unit = FrequencyTable { attention_scale: 1.0, ..t.clone() };
            let n0 = dot(&q, &q).sqrt();
            let rotated = apply_rotary(&q, p, &unit).unwrap();
            prop_assert!((dot(&rotated, &rotated).sqrt() - n0).abs() <= 1e-12);
        }

        #[test]
        fn identity_at_unit_scale(half in 2usize..65, theta in 2.0f64..1e7, ctx in 1u64..100_000, m in any_method(1.0, 4)) {
            let sp = spec(half * 2, theta, ctx);
            let base = base_frequencies(&sp).unwrap();
            let t = match m {
                ScalingMethod::NtkAware { mode: NtkMode::Explicit(_) } => ntk_frequencies(&sp, NtkMode::Explicit(theta)).unwrap(),
                other => frequencies(&sp, &other).unwrap(),
            };
            prop_assert_eq!(t.freqs, base.freqs);
        }

        #[test]
        fn table_matches_direct(half in 1usize..9, start in 0u64..2000, p_off in 0u64..16, s in 1.0f64..32.0, seed in any::<u64>()) {
            use rand::Rng;
            let sp = spec(half * 2, 10000.0, 256);
            let t = yarn_frequencies(&sp, s, 1.0, 4.0, true).unwrap();
            let table = CosSinTable::new(start..start + 16, &t).unwrap();
            let mut rng = crate::seed::rng_for(seed, "prop");
            let x: Vec<f64> = (0..half * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut via_table = x.clone();
            table.apply_in_place(&mut via_table, start + p_off).unwrap();
            let direct = apply_rotary(&x, start + p_off, &t).unwrap();
            prop_assert_eq!(via_table, direct);
        }
    }
}
