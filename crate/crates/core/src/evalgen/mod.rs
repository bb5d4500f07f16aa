//! Synthetic long-context evaluation cases: the passkey needle-in-a-haystack
//! grid and a multi-needle retrieval family (multi-key, multi-value,
//! multi-query).
//!
//! Prompts are built from filler sentences with needles inserted at
//! sentence boundaries. Lengths are measured with a [`TokenCounter`], by
//! default one token per whitespace word.

pub mod filler;
pub mod io;

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for, SeededRng};

pub use filler::{Filler, FillerSource, TokenCounter, BUILTIN_FILLER};
pub use io::{read_cases, write_cases, CaseReader, CaseWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PasskeySingle,
    NiahMultiKey,
    NiahMultiValue,
    NiahMultiQuery,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PasskeySingle => "passkey_single",
            Task::NiahMultiKey => "niah_multi_key",
            Task::NiahMultiValue => "niah_multi_value",
            Task::NiahMultiQuery => "niah_multi_query",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Task::PasskeySingle, Task::NiahMultiKey, Task::NiahMultiValue, Task::NiahMultiQuery]
            .into_iter()
            .find(|t| t.name() == s || t.name().replace('_', "-") == s)
            .ok_or_else(|| Error::config(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Needle {
    pub key: String,
    pub value: String,
}

/// One evaluation instance. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub case_id: String,
    pub task: Task,
    pub target_length: u64,
    pub depth_fractions: Vec<f64>,
    pub needles: Vec<Needle>,
    pub prompt: String,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    #[default]
    Linear,
    Geometric,
}

/// `n` lengths from `min` to `max` inclusive, rounded and deduplicated.
pub fn length_grid(min: u64, max: u64, n: usize, spacing: Spacing) -> Result<Vec<u64>> {
    if min > max {
        return Err(Error::config(format!("min_length {min} exceeds max_length {max}")));
    }
    if min == 0 || n == 0 {
        return Err(Error::config("min_length and num_lengths must be >= 1"));
    }
    if n == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min as f64, max as f64);
    let mut out: Vec<u64> = (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            match spacing {
                Spacing::Linear => min + ((max - min) as f64 * t).round() as u64,
                Spacing::Geometric => (lo * (hi / lo).powf(t)).round() as u64,
            }
        })
        .collect();
    *out.last_mut().unwrap() = max;
    out.dedup();
    Ok(out)
}

/// Evenly spaced depth fractions including both ends; one depth is the
/// midpoint.
pub fn depth_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

/// Uniform over `[10^(d-1), 10^d - 1]`.
pub fn draw_passkey(rng: &mut impl Rng, digits: u32) -> Result<u64> {
    if !(1..=18).contains(&digits) {
        return Err(Error::config(format!("passkey_digits must be in 1..=18, got {digits}")));
    }
    Ok(rng.gen_range(10u64.pow(digits - 1)..10u64.pow(digits)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PasskeyTemplate {
    /// `{K}` is replaced by the passkey.
    pub needle: String,
    pub question: String,
}

impl Default for PasskeyTemplate {
    fn default() -> Self {
        Self {
            needle: "The pass key is {K}. Remember it. {K} is the pass key.".into(),
            question: "What is the pass key?".into(),
        }
    }
}

impl PasskeyTemplate {
    pub fn render(&self, key: &str) -> String {
        self.needle.replace("{K}", key)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.needle.contains("{K}") {
            return Err(Error::config("needle template must contain {K}"));
        }
        if self.needle.replace("{K}", "").bytes().chain(self.question.bytes()).any(|b| b.is_ascii_digit()) {
            return Err(Error::config("templates must not contain digits outside {K}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NiahConfig {
    pub min_length: u64,
    pub max_length: u64,
    pub num_lengths: usize,
    pub num_depths: usize,
    pub passkey_digits: u32,
    pub spacing: Spacing,
    pub filler: FillerSource,
    pub counter: TokenCounter,
    pub template: PasskeyTemplate,
    pub seed: u64,
}

impl Default for NiahConfig {
    fn default() -> Self {
        Self {
            min_length: 1600,
            max_length: 64_000,
            num_lengths: 40,
            num_depths: 10,
            passkey_digits: 6,
            spacing: Spacing::Linear,
            filler: FillerSource::Builtin,
            counter: TokenCounter::WordApproximate,
            template: PasskeyTemplate::default(),
            seed: 0,
        }
    }
}

impl NiahConfig {
    pub fn validate(&self) -> Result<()> {
        length_grid(self.min_length, self.max_length, self.num_lengths, self.spacing)?;
        if self.num_depths == 0 {
            return Err(Error::config("num_depths must be >= 1"));
        }
        if !(1..=18).contains(&self.passkey_digits) {
            return Err(Error::config("passkey_digits must be in 1..=18"));
        }
        self.template.validate()
    }

    pub fn lengths(&self) -> Result<Vec<u64>> {
        length_grid(self.min_length, self.max_length, self.num_lengths, self.spacing)
    }
}

/// Allowed relative deviation of a prompt's token count from its target.
pub const LENGTH_TOLERANCE: f64 = 0.01;
const LENGTH_RETRIES: usize = 4;

struct Placed {
    text: String,
    tokens: usize,
    depth: f64,
}

/// Lays out filler with needles at the sentence boundaries closest to
/// `round(depth * (L - needle_len))`, then appends the question. Needles
/// are placed in depth order.
fn assemble(
    filler: &Filler,
    rng_seed: u64,
    length: u64,
    needles: &[Placed],
    question: &str,
) -> Result<String> {
    let fixed: usize = needles.iter().map(|n| n.tokens).sum::<usize>() + filler.count(question)?;
    let target = length as usize;
    if fixed >= target {
        return Err(Error::config(format!(
            "length {length} cannot hold the needles and question ({fixed} tokens)"
        )));
    }
    let mut order: Vec<usize> = (0..needles.len()).collect();
    order.sort_by(|&a, &b| needles[a].depth.total_cmp(&needles[b].depth));

    let mut budget = target - fixed;
    let mut last = String::new();
    for _ in 0..LENGTH_RETRIES {
        let mut rng = SeededRng::seed_from_u64(rng_seed);
        let pieces = filler.draw(&mut rng, budget)?;
        let mut bounds = Vec::with_capacity(pieces.len() + 1);
        let mut acc = 0usize;
        bounds.push(0);
        for p in &pieces {
            acc += p.1;
            bounds.push(acc);
        }
        // inserts[j] lists needles placed before piece j.
        let mut inserts: Vec<Vec<usize>> = vec![Vec::new(); pieces.len() + 1];
        let mut shift = 0usize;
        for &i in &order {
            let n = &needles[i];
            let want = (n.depth * (target - n.tokens) as f64).round() as i64 - shift as i64;
            let j = nearest(&bounds, want);
            inserts[j].push(i);
            shift += n.tokens;
        }
        let mut parts: Vec<&str> = Vec::with_capacity(pieces.len() + needles.len() + 1);
        for (j, ins) in inserts.iter().enumerate() {
            parts.extend(ins.iter().map(|&i| needles[i].text.as_str()));
            if let Some(p) = pieces.get(j) {
                parts.push(&p.0);
            }
        }
        parts.push(question);
        last = parts.join(" ");
        let got = filler.counter().count(&last)?;
        let dev = got as i64 - target as i64;
        if (dev.unsigned_abs() as f64) <= LENGTH_TOLERANCE * target as f64 {
            return Ok(last);
        }
        budget = (budget as i64 - dev).max(0) as usize;
    }
    Err(Error::config(format!(
        "could not fit prompt to {length} tokens within {}% ({} counted)",
        LENGTH_TOLERANCE * 100.0,
        filler.counter().count(&last)?
    )))
}

fn nearest(bounds: &[usize], want: i64) -> usize {
    let mut best = 0;
    for (j, &b) in bounds.iter().enumerate() {
        if (b as i64 - want).abs() < (bounds[best] as i64 - want).abs() {
            best = j;
        }
    }
    best
}

pub struct PasskeyGenerator {
    filler: Filler,
    template: PasskeyTemplate,
    digits: u32,
}

impl PasskeyGenerator {
    pub fn new(config: &NiahConfig) -> Result<Self> {
        config.template.validate()?;
        Ok(Self {
            filler: Filler::new(&config.filler, &config.counter)?,
            template: config.template.clone(),
            digits: config.passkey_digits,
        })
    }

    pub fn filler(&self) -> &Filler {
        &self.filler
    }

    pub fn template(&self) -> &PasskeyTemplate {
        &self.template
    }

    pub fn case(&self, case_id: String, length: u64, depth: f64, seed: u64) -> Result<EvalCase> {
        if !(0.0..=1.0).contains(&depth) {
            return Err(Error::config(format!("depth {depth} outside [0, 1]")));
        }
        let mut rng = rng_for(seed, "passkey");
        let key = draw_passkey(&mut rng, self.digits)?.to_string();
        let text = self.template.render(&key);
        let needle = Placed {
            tokens: self.filler.count(&text)?,
            text,
            depth,
        };
        let prompt = assemble(&self.filler, derive_seed(seed, "filler"), length, &[needle], &self.template.question)?;
        Ok(EvalCase {
            case_id,
            task: Task::PasskeySingle,
            target_length: length,
            depth_fractions: vec![depth],
            needles: vec![Needle {
                key: "pass key".into(),
                value: key.clone(),
            }],
            prompt,
            gold: vec![key],
        })
    }
}

pub fn niah_case_id(length: u64, depth_index: usize) -> String {
    format!("niah-{length:09}-{depth_index:03}")
}

/// One case per (length, depth) cell, ordered by length then depth.
pub fn generate_niah(config: &NiahConfig) -> Result<Vec<EvalCase>> {
    config.validate()?;
    let gen = PasskeyGenerator::new(config)?;
    let lengths = config.lengths()?;
    let depths = depth_grid(config.num_depths);
    let cells: Vec<(u64, usize)> = lengths
        .iter()
        .flat_map(|&l| (0..depths.len()).map(move |d| (l, d)))
        .collect();
    cells
        .par_iter()
        .map(|&(l, d)| {
            let seed = derive_seed(config.seed, &format!("evalgen/niah/{l}/{d}"));
            gen.case(niah_case_id(l, d), l, depths[d], seed)
        })
        .collect()
}

const KEY_ADJECTIVES: &[&str] = &[
    "amber", "brisk", "calm", "dusty", "eager", "faint", "gentle", "hollow", "icy", "jolly", "keen", "lively",
    "mellow", "nimble", "olive", "proud", "quiet", "rapid", "silver", "tidy", "upbeat", "vivid", "witty", "young",
];
const KEY_NOUNS: &[&str] = &[
    "anchor", "badger", "candle", "dolphin", "ember", "falcon", "garden", "harbor", "island", "jacket", "kettle",
    "lantern", "meadow", "needle", "orchard", "pebble", "quartz", "river", "saddle", "teapot", "umbrella", "violin",
    "walnut", "yarrow",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulerTemplate {
    /// `{key}` and `{value}` placeholders.
    pub needle: String,
    /// `{key}` for multi-key, `{keys}` for the others.
    pub single_question: String,
    pub multi_question: String,
}

impl Default for RulerTemplate {
    fn default() -> Self {
        Self {
            needle: "One of the special magic numbers for {key} is: {value}.".into(),
            single_question: "What is the special magic number for {key} mentioned in the provided text?".into(),
            multi_question: "What are all the special magic numbers for {keys} mentioned in the provided text?".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RulerConfig {
    pub task: Task,
    pub min_length: u64,
    pub max_length: u64,
    pub num_lengths: usize,
    pub spacing: Spacing,
    pub samples_per_length: usize,
    /// Keys for multi-key and multi-query, values for multi-value.
    pub num_needles: usize,
    pub value_digits: u32,
    pub filler: FillerSource,
    pub counter: TokenCounter,
    pub template: RulerTemplate,
    pub seed: u64,
}

impl Default for RulerConfig {
    fn default() -> Self {
        Self {
            task: Task::NiahMultiKey,
            min_length: 1600,
            max_length: 64_000,
            num_lengths: 8,
            spacing: Spacing::Linear,
            samples_per_length: 10,
            num_needles: 4,
            value_digits: 7,
            filler: FillerSource::Builtin,
            counter: TokenCounter::WordApproximate,
            template: RulerTemplate::default(),
            seed: 0,
        }
    }
}

pub struct RulerGenerator {
    filler: Filler,
    template: RulerTemplate,
    value_digits: u32,
}

fn join_keys(keys: &[&str]) -> String {
    match keys {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// `n` distinct draws from `0..space`.
fn distinct(rng: &mut SeededRng, space: usize, n: usize, what: &str) -> Result<Vec<usize>> {
    if n > space {
        return Err(Error::config(format!("cannot draw {n} distinct {what} from {space}")));
    }
    Ok(index::sample(rng, space, n).into_vec())
}

impl RulerGenerator {
    pub fn new(filler: &FillerSource, counter: &TokenCounter, template: RulerTemplate, value_digits: u32) -> Result<Self> {
        if !(1..=18).contains(&value_digits) {
            return Err(Error::config("value_digits must be in 1..=18"));
        }
        Ok(Self {
            filler: Filler::new(filler, counter)?,
            template,
            value_digits,
        })
    }

    pub fn from_config(config: &RulerConfig) -> Result<Self> {
        Self::new(&config.filler, &config.counter, config.template.clone(), config.value_digits)
    }

    /// `depths` holds one fraction per needle; for multi-key the first
    /// needle is the queried one.
    pub fn case(&self, case_id: String, task: Task, length: u64, depths: &[f64], seed: u64) -> Result<EvalCase> {
        let n = depths.len();
        if n == 0 {
            return Err(Error::config("at least one needle depth is required"));
        }
        if let Some(d) = depths.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::config(format!("depth {d} outside [0, 1]")));
        }
        let mut rng = rng_for(seed, "ruler");
        let lo = 10u64.pow(self.value_digits - 1);
        let span = (10u64.pow(self.value_digits) - lo) as usize;
        let values: Vec<String> = distinct(&mut rng, span, n, "values")?
            .into_iter()
            .map(|v| (lo + v as u64).to_string())
            .collect();
        let key_count = if task == Task::NiahMultiValue || task == Task::PasskeySingle { 1 } else { n };
        let keys: Vec<String> = distinct(&mut rng, KEY_ADJECTIVES.len() * KEY_NOUNS.len(), key_count, "keys")?
            .into_iter()
            .map(|i| format!("{}-{}", KEY_ADJECTIVES[i / KEY_NOUNS.len()], KEY_NOUNS[i % KEY_NOUNS.len()]))
            .collect();
        let needles: Vec<Needle> = (0..n)
            .map(|i| Needle {
                key: keys[i.min(key_count - 1)].clone(),
                value: values[i].clone(),
            })
            .collect();
        let (question, gold) = match task {
            Task::NiahMultiKey | Task::PasskeySingle => (
                self.template.single_question.replace("{key}", &needles[0].key),
                vec![needles[0].value.clone()],
            ),
            Task::NiahMultiValue => (
                self.template.multi_question.replace("{keys}", &needles[0].key),
                values.clone(),
            ),
            Task::NiahMultiQuery => {
                let ks: Vec<&str> = needles.iter().map(|x| x.key.as_str()).collect();
                (self.template.multi_question.replace("{keys}", &join_keys(&ks)), values.clone())
            }
        };
        let placed = needles
            .iter()
            .zip(depths)
            .map(|(nd, &depth)| {
                let text = self.template.needle.replace("{key}", &nd.key).replace("{value}", &nd.value);
                Ok(Placed {
                    tokens: self.filler.count(&text)?,
                    text,
                    depth,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let prompt = assemble(&self.filler, derive_seed(seed, "filler"), length, &placed, &question)?;
        Ok(EvalCase {
            case_id,
            task,
            target_length: length,
            depth_fractions: depths.to_vec(),
            needles,
            prompt,
            gold,
        })
    }
}

pub fn ruler_case_id(task: Task, length: u64, sample: usize) -> String {
    format!("{}-{length:09}-{sample:04}", task.name())
}

/// `samples_per_length` cases per length with seeded uniform needle depths.
pub fn generate_ruler(config: &RulerConfig) -> Result<Vec<EvalCase>> {
    if config.samples_per_length == 0 || config.num_needles == 0 {
        return Err(Error::config("samples_per_length and num_needles must be >= 1"));
    }
    let needles = if config.task == Task::PasskeySingle { 1 } else { config.num_needles };
    let gen = RulerGenerator::from_config(config)?;
    let lengths = length_grid(config.min_length, config.max_length, config.num_lengths, config.spacing)?;
    let jobs: Vec<(u64, usize)> = lengths
        .iter()
        .flat_map(|&l| (0..config.samples_per_length).map(move |s| (l, s)))
        .collect();
    jobs.par_iter()
        .map(|&(l, s)| {
            let seed = derive_seed(config.seed, &format!("evalgen/ruler/{}/{l}/{s}", config.task.name()));
            let mut rng = rng_for(seed, "depths");
            let depths: Vec<f64> = (0..needles).map(|_| rng.gen::<f64>()).collect();
            gen.case(ruler_case_id(config.task, l, s), config.task, l, &depths, seed)
        })
        .collect()
}

/// Token offsets (under `counter`) where each needle's rendered text starts
/// in the prompt, in `needles` order.
pub fn needle_starts(case: &EvalCase, needle_texts: &[String], counter: &TokenCounter) -> Result<Vec<usize>> {
    needle_texts
        .iter()
        .map(|t| {
            let at = case
                .prompt
                .find(t.as_str())
                .ok_or_else(|| Error::Integrity(format!("{}: needle text not found in prompt", case.case_id)))?;
            counter.count(&case.prompt[..at])
        })
        .collect()
}

/// Checks that every gold value occurs only inside the single occurrence of
/// its needle text and that the needle occurs exactly once.
pub fn check_needle_uniqueness(case: &EvalCase, needle_texts: &[String]) -> Result<()> {
    for t in needle_texts {
        if case.prompt.matches(t.as_str()).count() != 1 {
            return Err(Error::Integrity(format!("{}: needle does not occur exactly once", case.case_id)));
        }
    }
    let mut seen = BTreeSet::new();
    for g in &case.gold {
        if !seen.insert(g) {
            return Err(Error::Integrity(format!("{}: duplicate gold value {g}", case.case_id)));
        }
        let in_needles: usize = needle_texts.iter().map(|t| t.matches(g.as_str()).count()).sum();
        if case.prompt.matches(g.as_str()).count() != in_needles || in_needles == 0 {
            return Err(Error::Integrity(format!("{}: gold value {g} appears outside its needle", case.case_id)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_grid() {
        let g = length_grid(1000, 40_000, 40, Spacing::Linear).unwrap();
        assert_eq!(g, (1..=40).map(|k| k * 1000).collect::<Vec<u64>>());
        assert_eq!(length_grid(1000, 40_000, 1, Spacing::Linear).unwrap(), vec![1000]);
        assert_eq!(length_grid(500, 500, 5, Spacing::Linear).unwrap(), vec![500]);
        assert!(matches!(length_grid(10, 5, 3, Spacing::Linear), Err(Error::Config(_))));
        let geo = length_grid(1024, 1 << 20, 11, Spacing::Geometric).unwrap();
        assert_eq!(geo, (10..=20).map(|e| 1u64 << e).collect::<Vec<u64>>());
    }

    #[test]
    fn default_grid_lengths() {
        let g = NiahConfig::default().lengths().unwrap();
        assert_eq!(g.len(), 40);
        assert_eq!(g[0], 1600);
        assert!(g.windows(2).all(|w| w[1] - w[0] == 1600));
    }

    #[test]
    fn depths() {
        let d = depth_grid(10);
        assert_eq!(d.len(), 10);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[9], 1.0);
        assert!((d[1] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(depth_grid(2), vec![0.0, 1.0]);
        assert_eq!(depth_grid(1), vec![0.5]);
    }

    #[test]
    fn passkey_range() {
        let mut rng = rng_for(3, "k");
        for _ in 0..10_000 {
            let k = draw_passkey(&mut rng, 6).unwrap();
            assert!((100_000..=999_999).contains(&k));
        }
        assert!(draw_passkey(&mut rng, 0).is_err());
    }

    #[test]
    fn passkey_case_structure() {
        let cfg = NiahConfig::default();
        let gen = PasskeyGenerator::new(&cfg).unwrap();
        for (l, d) in [(200u64, 0.0), (1000, 0.37), (5000, 1.0)] {
            let c = gen.case("c".into(), l, d, 9).unwrap();
            let words = c.prompt.split_whitespace().count() as u64;
            assert_eq!(words, l);
            assert!(c.prompt.ends_with("What is the pass key?"));
            let text = gen.template().render(&c.gold[0]);
            check_needle_uniqueness(&c, &[text.clone()]).unwrap();
            let start = needle_starts(&c, &[text.clone()], &cfg.counter).unwrap()[0];
            let want = (d * (l as usize - 12) as f64).round() as usize;
            assert!(start.abs_diff(want) <= gen.filler().unit_len(), "{start} vs {want}");
            if d == 0.0 {
                assert_eq!(start, 0);
            }
        }
        assert!(matches!(gen.case("c".into(), 15, 0.5, 1), Err(Error::Config(_))));
    }

    #[test]
    fn multi_key_has_distinct_lines() {
        let gen = RulerGenerator::new(&FillerSource::Builtin, &TokenCounter::WordApproximate, RulerTemplate::default(), 7)
            .unwrap();
        let c = gen.case("m".into(), Task::NiahMultiKey, 2000, &[0.1, 0.4, 0.6, 0.9], 4).unwrap();
        assert_eq!(c.needles.len(), 4);
        assert_eq!(c.gold.len(), 1);
        let keys: BTreeSet<&str> = c.needles.iter().map(|n| n.key.as_str()).collect();
        assert_eq!(keys.len(), 4);
        assert_eq!(c.prompt.matches("special magic numbers for").count(), 4);
        assert_eq!(c.prompt.split_whitespace().count(), 2000);
        assert_eq!(c.gold[0], c.needles[0].value);
    }

    #[test]
    fn multi_value_and_query() {
        let gen = RulerGenerator::new(&FillerSource::Builtin, &TokenCounter::WordApproximate, RulerTemplate::default(), 7)
            .unwrap();
        let mv = gen.case("v".into(), Task::NiahMultiValue, 1500, &[0.2, 0.8, 0.5], 5).unwrap();
        assert!(mv.needles.iter().all(|n| n.key == mv.needles[0].key));
        assert_eq!(mv.gold.len(), 3);
        let one = gen.case("v1".into(), Task::NiahMultiValue, 1500, &[0.5], 5).unwrap();
        assert_eq!((one.needles.len(), one.gold.len()), (1, 1));
        let mq = gen.case("q".into(), Task::NiahMultiQuery, 1500, &[0.2, 0.8, 0.5], 6).unwrap();
        assert_eq!(mq.gold.len(), 3);
        for n in &mq.needles {
            assert!(mq.prompt.ends_with("mentioned in the provided text?"));
            assert!(mq.prompt.rsplit_once("What are").unwrap().1.contains(&n.key));
        }
        assert!(matches!(
            gen.case("x".into(), Task::NiahMultiKey, 30, &[0.1, 0.2, 0.3], 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_grid_is_deterministic_and_complete() {
        let cfg = NiahConfig {
            min_length: 100,
            max_length: 4000,
            ..Default::default()
        };
        let a = generate_niah(&cfg).unwrap();
        let b = generate_niah(&cfg).unwrap();
        assert_eq!(a.len(), 400);
        assert_eq!(a, b);
        let mut ids: Vec<&str> = a.iter().map(|c| c.case_id.as_str()).collect();
        let sorted = ids.clone();
        ids.sort();
        assert_eq!(ids, sorted);
    }
}
