//! Pre-norm causal transformer with rotary attention, gated MLP and RMS
//! normalization. Forward and backward passes are written out by hand; all
//! parameters live in one flat `f64` buffer described by a [`Layout`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, View, ViewMut};
use crate::error::{Error, Result};
use crate::rope::{self, CosSinTable, FrequencyTable, RopeSpec, ScalingMethod};
use crate::seed::{rng_for, Digest256};

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub mlp_hidden: usize,
    /// Longest sequence the model currently accepts.
    pub context_length: usize,
    /// `head_dim` must equal `d_model / heads`; `original_context` is the
    /// base training context that scale factors multiply.
    pub rope: RopeSpec,
    pub scaling: ScalingMethod,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 64,
            heads: 4,
            vocab_size: 128,
            mlp_hidden: 128,
            context_length: 256,
            rope: RopeSpec {
                head_dim: 16,
                base_theta: 10_000.0,
                original_context: 256,
            },
            scaling: ScalingMethod::None,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.mlp_hidden == 0 {
            return Err(Error::config("layers, heads, d_model and mlp_hidden must be positive"));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::config(format!("head_dim {} must be even", self.head_dim())));
        }
        if self.rope.head_dim != self.head_dim() {
            return Err(Error::config(format!(
                "rope.head_dim {} does not match d_model / heads = {}",
                self.rope.head_dim,
                self.head_dim()
            )));
        }
        self.rope.validate()?;
        if self.context_length < 8 {
            return Err(Error::config("context_length must be >= 8"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    attn_norm: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    mlp_norm: usize,
    w_gate: usize,
    w_up: usize,
    w_down: usize,
}

/// Where each tensor sits in the flat parameter buffer. Linear weights are
/// stored `in x out`, row-major.
#[derive(Debug, Clone)]
pub struct Layout {
    embed: usize,
    layers: Vec<LayerOffsets>,
    final_norm: usize,
    out: usize,
    total: usize,
    manifest: Vec<TensorInfo>,
}

impl Layout {
    pub fn new(cfg: &ToyModelConfig) -> Self {
        let mut manifest = Vec::new();
        let mut total = 0usize;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            manifest.push(TensorInfo { name, shape, offset });
            offset
        };
        let (d, h, v) = (cfg.d_model, cfg.mlp_hidden, cfg.vocab_size);
        let embed = add("embed".into(), vec![v, d]);
        let layers = (0..cfg.layers)
            .map(|l| LayerOffsets {
                attn_norm: add(format!("layers.{l}.attn_norm"), vec![d]),
                wq: add(format!("layers.{l}.wq"), vec![d, d]),
                wk: add(format!("layers.{l}.wk"), vec![d, d]),
                wv: add(format!("layers.{l}.wv"), vec![d, d]),
                wo: add(format!("layers.{l}.wo"), vec![d, d]),
                mlp_norm: add(format!("layers.{l}.mlp_norm"), vec![d]),
                w_gate: add(format!("layers.{l}.w_gate"), vec![d, h]),
                w_up: add(format!("layers.{l}.w_up"), vec![d, h]),
                w_down: add(format!("layers.{l}.w_down"), vec![h, d]),
            })
            .collect();
        let final_norm = add("final_norm".into(), vec![d]);
        let out = add("out".into(), vec![d, v]);
        Self {
            embed,
            layers,
            final_norm,
            out,
            total,
            manifest,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn manifest(&self) -> &[TensorInfo] {
        &self.manifest
    }

    /// Name of the tensor containing flat index `i`.
    pub fn name_of(&self, i: usize) -> &str {
        self.manifest
            .iter()
            .find(|t| i >= t.offset && i < t.offset + t.len())
            .map(|t| t.name.as_str())
            .unwrap_or("?")
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.manifest.iter().find(|t| t.name == name)
    }
}

/// Row-major `(seq_len, vocab)` logits for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub seq_len: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.vocab..(t + 1) * self.vocab]
    }
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ToyModelConfig,
    layout: Layout,
    pub params: Vec<f64>,
    freqs: FrequencyTable,
    rotary: CosSinTable,
}

struct LayerCache {
    x_in: Vec<f64>,
    r1: Vec<f64>,
    n1: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    x_mid: Vec<f64>,
    r2: Vec<f64>,
    n2: Vec<f64>,
    h2: Vec<f64>,
    gate: Vec<f64>,
    up: Vec<f64>,
    act: Vec<f64>,
}

struct SeqCache {
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    rf: Vec<f64>,
    nf: Vec<f64>,
    hf: Vec<f64>,
}

fn rmsnorm(x: &[f64], d: usize, gain: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut r = vec![0.0; rows];
    let mut n = vec![0.0; x.len()];
    let mut h = vec![0.0; x.len()];
    for t in 0..rows {
        let row = &x[t * d..(t + 1) * d];
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        r[t] = inv;
        for j in 0..d {
            n[t * d + j] = row[j] * inv;
            h[t * d + j] = n[t * d + j] * gain[j];
        }
    }
    (r, n, h)
}

/// Given `dh` (gradient w.r.t. the gained output), accumulate the gain
/// gradient and add the input gradient into `dx`.
fn rmsnorm_backward(dh: &[f64], x: &[f64], r: &[f64], n: &[f64], gain: &[f64], dgain: &mut [f64], dx: &mut [f64]) {
    let d = gain.len();
    for t in 0..r.len() {
        let base = t * d;
        let mut dot = 0.0;
        for j in 0..d {
            let dn = dh[base + j] * gain[j];
            dgain[j] += dh[base + j] * n[base + j];
            dot += dn * x[base + j];
        }
        let inv = r[t];
        let coef = inv * inv * inv / d as f64 * dot;
        for j in 0..d {
            let dn = dh[base + j] * gain[j];
            dx[base + j] += inv * dn - coef * x[base + j];
        }
    }
}

const ATTN_BLOCK: usize = 64;

/// Query row blocks; block `[i0, i0 + n)` only needs keys `0..i0 + n`.
fn row_blocks(t_len: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..t_len).step_by(ATTN_BLOCK).map(move |i0| (i0, ATTN_BLOCK.min(t_len - i0)))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn linear(x: &[f64], rows: usize, w: &[f64], d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * d_out];
    gemm(1.0, View::new(x, rows, d_in), View::new(w, d_in, d_out), 0.0, ViewMut::new(&mut y, rows, d_out));
    y
}

/// `dw += x^T dy`, `dx (+)= dy w^T`.
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    w: &[f64],
    d_in: usize,
    d_out: usize,
    dw: &mut [f64],
    dx: &mut [f64],
    accumulate_dx: bool,
) {
    gemm(1.0, View::new(x, rows, d_in).t(), View::new(dy, rows, d_out), 1.0, ViewMut::new(dw, d_in, d_out));
    let beta = if accumulate_dx { 1.0 } else { 0.0 };
    gemm(1.0, View::new(dy, rows, d_out), View::new(w, d_in, d_out).t(), beta, ViewMut::new(dx, rows, d_in));
}

impl ToyModel {
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng_for(config.seed, "toylab/init");
        let mut normal = |std: f64| -> f64 {
            // Box-Muller; one draw per call keeps the stream simple.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let d = config.d_model as f64;
        let hdn = config.mlp_hidden as f64;
        let resid = 1.0 / (2.0 * config.layers as f64).sqrt();
        for t in layout.manifest.clone() {
            let std = match t.name.rsplit('.').next().unwrap() {
                "attn_norm" | "mlp_norm" | "final_norm" => {
                    params[t.offset..t.offset + t.len()].fill(1.0);
                    continue;
                }
                "embed" => 1.0,
                "wo" => resid / d.sqrt(),
                "w_down" => resid / hdn.sqrt(),
                _ => 1.0 / d.sqrt(),
            };
            for p in &mut params[t.offset..t.offset + t.len()] {
                *p = normal(std);
            }
        }
        Self::from_parts(config, params)
    }

    /// Model with given parameters (e.g. from a checkpoint).
    pub fn from_parts(config: ToyModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        let freqs = rope::frequencies(&config.rope, &config.scaling)?;
        let rotary = CosSinTable::new(0..config.context_length as u64, &freqs)?;
        Ok(Self {
            config,
            layout,
            params,
            freqs,
            rotary,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn frequency_table(&self) -> &FrequencyTable {
        &self.freqs
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn context_length(&self) -> usize {
        self.config.context_length
    }

    /// SHA-256 over all parameters as little-endian `f64`.
    pub fn param_digest(&self) -> String {
        let mut d = Digest256::new();
        d.update_f64s(&self.params);
        d.finish_hex()
    }

    /// Swap in a new rotary scaling and context length. Parameters are not touched.
    pub fn set_rope_scaling(&mut self, scaling: ScalingMethod, context_length: usize) -> Result<()> {
        let mut config = self.config.clone();
        config.scaling = scaling;
        config.context_length = context_length;
        config.validate()?;
        let freqs = rope::frequencies(&config.rope, &config.scaling)?;
        let rotary = CosSinTable::new(0..context_length as u64, &freqs)?;
        self.config = config;
        self.freqs = freqs;
        self.rotary = rotary;
        Ok(())
    }

    fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.params[offset..offset + len]
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::shape("empty sequence"));
        }
        if tokens.len() > self.config.context_length {
            return Err(Error::shape(format!(
                "sequence of {} tokens exceeds context length {}",
                tokens.len(),
                self.config.context_length
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::shape(format!(
                "token {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn rotate_rows(&self, m: &mut [f64], rows: usize) {
        let (d, hd) = (self.config.d_model, self.config.head_dim());
        for t in 0..rows {
            for hh in 0..self.config.heads {
                let s = t * d + hh * hd;
                self.rotary
                    .apply_in_place(&mut m[s..s + hd], t as u64)
                    .expect("position inside rotary table");
            }
        }
    }

    fn unrotate_rows(&self, m: &mut [f64], rows: usize) {
        let (d, hd) = (self.config.d_model, self.config.head_dim());
        for t in 0..rows {
            for hh in 0..self.config.heads {
                let s = t * d + hh * hd;
                self.rotary
                    .apply_transpose_in_place(&mut m[s..s + hd], t as u64)
                    .expect("position inside rotary table");
            }
        }
    }

    /// Hidden state after the final norm plus caches for backward.
    fn forward_seq(&self, tokens: &[u32]) -> SeqCache {
        let cfg = &self.config;
        let (t_len, d, hdn, hd) = (tokens.len(), cfg.d_model, cfg.mlp_hidden, cfg.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let embed = self.slice(self.layout.embed, cfg.vocab_size * d);
        let mut x = Vec::with_capacity(t_len * d);
        for &tok in tokens {
            x.extend_from_slice(&embed[tok as usize * d..(tok as usize + 1) * d]);
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for lo in &self.layout.layers {
            let (r1, n1, h1) = rmsnorm(&x, d, self.slice(lo.attn_norm, d));
            let mut q = linear(&h1, t_len, self.slice(lo.wq, d * d), d, d);
            let mut k = linear(&h1, t_len, self.slice(lo.wk, d * d), d, d);
            let v = linear(&h1, t_len, self.slice(lo.wv, d * d), d, d);
            self.rotate_rows(&mut q, t_len);
            self.rotate_rows(&mut k, t_len);

            let mut o = vec![0.0; t_len * d];
            let mut probs = Vec::with_capacity(cfg.heads);
            for hh in 0..cfg.heads {
                let mut p = vec![0.0; t_len * t_len];
                let qh = View::new(&q, t_len, d).cols(hh * hd, hd);
                let kh = View::new(&k, t_len, d).cols(hh * hd, hd);
                let vh = View::new(&v, t_len, d).cols(hh * hd, hd);
                for (i0, nb) in row_blocks(t_len) {
                    let i1 = i0 + nb;
                    let pb = ViewMut::new(&mut p, t_len, t_len).rows(i0, nb).cols(0, i1);
                    gemm(scale, qh.rows(i0, nb), kh.rows(0, i1).t(), 0.0, pb);
                    for i in i0..i1 {
                        let row = &mut p[i * t_len..i * t_len + i1];
                        let max = row[..=i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for v in &mut row[..=i] {
                            *v = (*v - max).exp();
                            sum += *v;
                        }
                        let inv = 1.0 / sum;
                        for v in &mut row[..=i] {
                            *v *= inv;
                        }
                        row[i + 1..].fill(0.0);
                    }
                    let pb = View::new(&p, t_len, t_len).rows(i0, nb).cols(0, i1);
                    let ob = ViewMut::new(&mut o, t_len, d).cols(hh * hd, hd).rows(i0, nb);
                    gemm(1.0, pb, vh.rows(0, i1), 0.0, ob);
                }
                probs.push(p);
            }
            let attn = linear(&o, t_len, self.slice(lo.wo, d * d), d, d);
            let x_mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();

            let (r2, n2, h2) = rmsnorm(&x_mid, d, self.slice(lo.mlp_norm, d));
            let gate = linear(&h2, t_len, self.slice(lo.w_gate, d * hdn), d, hdn);
            let up = linear(&h2, t_len, self.slice(lo.w_up, d * hdn), d, hdn);
            let act: Vec<f64> = gate.iter().zip(&up).map(|(&g, &u)| g * sigmoid(g) * u).collect();
            let down = linear(&act, t_len, self.slice(lo.w_down, hdn * d), hdn, d);
            let x_out: Vec<f64> = x_mid.iter().zip(&down).map(|(a, b)| a + b).collect();

            layers.push(LayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                r1,
                n1,
                h1,
                q,
                k,
                v,
                probs,
                o,
                x_mid,
                r2,
                n2,
                h2,
                gate,
                up,
                act,
            });
        }
        let (rf, nf, hf) = rmsnorm(&x, d, self.slice(self.layout.final_norm, d));
        SeqCache {
            tokens: tokens.to_vec(),
            layers,
            x_final: x,
            rf,
            nf,
            hf,
        }
    }

    fn project(&self, hf: &[f64], rows: usize) -> Vec<f64> {
        let (d, v) = (self.config.d_model, self.config.vocab_size);
        linear(hf, rows, self.slice(self.layout.out, d * v), d, v)
    }

    pub fn forward(&self, batch: &[Vec<u32>]) -> Result<Vec<Logits>> {
        batch
            .iter()
            .map(|tokens| {
                self.check_tokens(tokens)?;
                let cache = self.forward_seq(tokens);
                Ok(Logits {
                    seq_len: tokens.len(),
                    vocab: self.config.vocab_size,
                    data: self.project(&cache.hf, tokens.len()),
                })
            })
            .collect()
    }

    /// Logits at the last position only.
    pub fn last_logits(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let cache = self.forward_seq(tokens);
        let d = self.config.d_model;
        let last = &cache.hf[(tokens.len() - 1) * d..];
        Ok(self.project(last, 1))
    }

    /// Mean next-token cross entropy over every `Some` target in the batch,
    /// with gradients for all parameters. Positions whose target is `None`
    /// contribute nothing.
    pub fn loss_and_gradients(&self, inputs: &[Vec<u32>], targets: &[Vec<Option<u32>>]) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() {
            return Err(Error::shape("inputs and targets differ in batch size"));
        }
        let vocab = self.config.vocab_size;
        let mut count = 0usize;
        for (inp, tgt) in inputs.iter().zip(targets) {
            self.check_tokens(inp)?;
            if inp.len() != tgt.len() {
                return Err(Error::shape("input and target lengths differ"));
            }
            if let Some(&t) = tgt.iter().flatten().find(|&&t| t as usize >= vocab) {
                return Err(Error::shape(format!("target {t} outside vocabulary of {vocab}")));
            }
            count += tgt.iter().flatten().count();
        }
        let mut grads = vec![0.0; self.layout.total];
        if count == 0 {
            return Ok((0.0, grads));
        }
        let norm = 1.0 / count as f64;
        let parts: Vec<(f64, Vec<f64>)> = inputs
            .par_iter()
            .zip(targets)
            .map(|(inp, tgt)| {
                let mut g = vec![0.0; self.layout.total];
                let l = self.sequence_loss_grads(inp, tgt, norm, &mut g);
                (l, g)
            })
            .collect();
        // Fixed-order reduction keeps results independent of the thread count.
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric {
                parameter: "loss".into(),
                message: format!("non-finite loss {loss}"),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                parameter: self.layout.name_of(i).to_string(),
                message: format!("non-finite gradient at flat index {i}"),
            });
        }
        Ok((loss, grads))
    }

    /// Summed (not averaged) cross entropy of one sequence times `norm`,
    /// accumulating its gradient into `grads`.
    fn sequence_loss_grads(&self, inp: &[u32], tgt: &[Option<u32>], norm: f64, grads: &mut [f64]) -> f64 {
        let vocab = self.config.vocab_size;
        let cache = self.forward_seq(inp);
        let t_len = inp.len();
        let mut loss = 0.0;
        let mut dlogits = self.project(&cache.hf, t_len);
        for t in 0..t_len {
            let row = &mut dlogits[t * vocab..(t + 1) * vocab];
            match tgt[t] {
                None => row.fill(0.0),
                Some(y) => {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    loss -= (row[y as usize] / sum).ln();
                    for v in row.iter_mut() {
                        *v *= norm / sum;
                    }
                    row[y as usize] -= norm;
                }
            }
        }
        self.backward_seq(&cache, &dlogits, grads);
        loss * norm
    }

    fn backward_seq(&self, cache: &SeqCache, dlogits: &[f64], grads: &mut [f64]) {
        let cfg = &self.config;
        let (t_len, d, hdn, hd, vocab) = (cache.tokens.len(), cfg.d_model, cfg.mlp_hidden, cfg.head_dim(), cfg.vocab_size);
        let scale = 1.0 / (hd as f64).sqrt();
        let lay = &self.layout;

        let mut dhf = vec![0.0; t_len * d];
        {
            let (w, dw) = (self.slice(lay.out, d * vocab), &mut grads[lay.out..lay.out + d * vocab]);
            linear_backward(&cache.hf, dlogits, t_len, w, d, vocab, dw, &mut dhf, false);
        }
        let mut dx = vec![0.0; t_len * d];
        {
            let gain = self.slice(lay.final_norm, d);
            let dgain = &mut grads[lay.final_norm..lay.final_norm + d];
            rmsnorm_backward(&dhf, &cache.x_final, &cache.rf, &cache.nf, gain, dgain, &mut dx);
        }

        for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // MLP block: x_out = x_mid + down(act)
            let mut dact = vec![0.0; t_len * hdn];
            linear_backward(
                &lc.act,
                &dx,
                t_len,
                self.slice(lo.w_down, hdn * d),
                hdn,
                d,
                &mut grads[lo.w_down..lo.w_down + hdn * d],
                &mut dact,
                false,
            );
            let mut dgate = vec![0.0; t_len * hdn];
            let mut dup = vec![0.0; t_len * hdn];
            for i in 0..t_len * hdn {
                let g = lc.gate[i];
                let sg = sigmoid(g);
                let silu = g * sg;
                dup[i] = dact[i] * silu;
                dgate[i] = dact[i] * lc.up[i] * sg * (1.0 + g * (1.0 - sg));
            }
            let mut dh2 = vec![0.0; t_len * d];
            linear_backward(
                &lc.h2,
                &dgate,
                t_len,
                self.slice(lo.w_gate, d * hdn),
                d,
                hdn,
                &mut grads[lo.w_gate..lo.w_gate + d * hdn],
                &mut dh2,
                false,
            );
            linear_backward(
                &lc.h2,
                &dup,
                t_len,
                self.slice(lo.w_up, d * hdn),
                d,
                hdn,
                &mut grads[lo.w_up..lo.w_up + d * hdn],
                &mut dh2,
                true,
            );
            // dx currently holds d(x_out); residual passes it to x_mid.
            {
                let gain = self.slice(lo.mlp_norm, d);
                let dgain = &mut grads[lo.mlp_norm..lo.mlp_norm + d];
                rmsnorm_backward(&dh2, &lc.x_mid, &lc.r2, &lc.n2, gain, dgain, &mut dx);
            }

            // Attention block: x_mid = x_in + o @ wo
            let mut d_o = vec![0.0; t_len * d];
            linear_backward(
                &lc.o,
                &dx,
                t_len,
                self.slice(lo.wo, d * d),
                d,
                d,
                &mut grads[lo.wo..lo.wo + d * d],
                &mut d_o,
                false,
            );
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut dp = vec![0.0; t_len * t_len];
            for hh in 0..cfg.heads {
                let p = &lc.probs[hh];
                let doh = View::new(&d_o, t_len, d).cols(hh * hd, hd);
                let qh = View::new(&lc.q, t_len, d).cols(hh * hd, hd);
                let kh = View::new(&lc.k, t_len, d).cols(hh * hd, hd);
                let vh = View::new(&lc.v, t_len, d).cols(hh * hd, hd);
                for (i0, nb) in row_blocks(t_len) {
                    let i1 = i0 + nb;
                    let pb = View::new(p, t_len, t_len).rows(i0, nb).cols(0, i1);
                    gemm(1.0, doh.rows(i0, nb), vh.rows(0, i1).t(), 0.0, ViewMut::new(&mut dp, t_len, t_len).rows(i0, nb).cols(0, i1));
                    gemm(1.0, pb.t(), doh.rows(i0, nb), 1.0, ViewMut::new(&mut dv, t_len, d).cols(hh * hd, hd).rows(0, i1));
                    // Softmax backward in place: ds = p * (dp - <p, dp>)
                    for i in i0..i1 {
                        let pr = &p[i * t_len..i * t_len + i + 1];
                        let dr = &mut dp[i * t_len..i * t_len + i1];
                        let dot: f64 = pr.iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                        for j in 0..=i {
                            dr[j] = pr[j] * (dr[j] - dot);
                        }
                        dr[i + 1..].fill(0.0);
                    }
                    let dsb = View::new(&dp, t_len, t_len).rows(i0, nb).cols(0, i1);
                    gemm(scale, dsb, kh.rows(0, i1), 0.0, ViewMut::new(&mut dq, t_len, d).cols(hh * hd, hd).rows(i0, nb));
                    gemm(scale, dsb.t(), qh.rows(i0, nb), 1.0, ViewMut::new(&mut dk, t_len, d).cols(hh * hd, hd).rows(0, i1));
                }
            }
            self.unrotate_rows(&mut dq, t_len);
            self.unrotate_rows(&mut dk, t_len);
            let mut dh1 = vec![0.0; t_len * d];
            linear_backward(&lc.h1, &dq, t_len, self.slice(lo.wq, d * d), d, d, &mut grads[lo.wq..lo.wq + d * d], &mut dh1, false);
            linear_backward(&lc.h1, &dk, t_len, self.slice(lo.wk, d * d), d, d, &mut grads[lo.wk..lo.wk + d * d], &mut dh1, true);
            linear_backward(&lc.h1, &dv, t_len, self.slice(lo.wv, d * d), d, d, &mut grads[lo.wv..lo.wv + d * d], &mut dh1, true);
            {
                let gain = self.slice(lo.attn_norm, d);
                let dgain = &mut grads[lo.attn_norm..lo.attn_norm + d];
                rmsnorm_backward(&dh1, &lc.x_in, &lc.r1, &lc.n1, gain, dgain, &mut dx);
            }
        }

        let dembed = &mut grads[lay.embed..lay.embed + vocab * d];
        for (t, &tok) in cache.tokens.iter().enumerate() {
            let row = &mut dembed[tok as usize * d..(tok as usize + 1) * d];
            for j in 0..d {
                row[j] += dx[t * d + j];
            }
        }
    }
}
