//! Running case files against an OpenAI-compatible chat endpoint, scoring
//! the replies and aggregating them into length-bucketed reports.

pub mod client;
pub mod mock;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalgen::{CaseReader, EvalCase, Task};

pub use client::{run, EndpointConfig, RunSummary};

/// Length thresholds in tokens: 128K, 512K and 1M in binary units.
pub const DEFAULT_THRESHOLDS: [u64; 3] = [131_072, 524_288, 1_048_576];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub case_id: String,
    pub response_text: String,
    pub latency_ms: Option<u64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

impl ResponseRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>> {
    let src = path.display().to_string();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(&src, i, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(&src, i, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_responses(path: &Path, records: &[ResponseRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Gold string anywhere in the whitespace-normalized response.
    #[default]
    Substring,
    /// Gold must equal one of the response's maximal digit runs.
    Strict,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn digit_runs(s: &str) -> Vec<&str> {
    s.split(|c: char| !c.is_ascii_digit()).filter(|r| !r.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub task: Task,
    pub target_length: u64,
    pub depth: f64,
    /// Gold values found.
    pub found: u32,
    pub total: u32,
    pub score: f64,
}

impl CaseScore {
    pub fn exact(&self) -> Ratio<i128> {
        Ratio::new(self.found as i128, self.total as i128)
    }
}

/// Recall of gold values in the response; errors score zero.
pub fn score_case(case: &EvalCase, response: &ResponseRecord, mode: ScoringMode) -> Result<CaseScore> {
    if case.case_id != response.case_id {
        return Err(Error::Integrity(format!(
            "response {} paired with case {}",
            response.case_id, case.case_id
        )));
    }
    if case.gold.is_empty() {
        return Err(Error::Integrity(format!("case {} has no gold answers", case.case_id)));
    }
    let found = if response.is_ok() {
        let text = normalize(&response.response_text);
        let runs = digit_runs(&text);
        case.gold
            .iter()
            .filter(|g| match mode {
                ScoringMode::Substring => text.contains(g.as_str()),
                ScoringMode::Strict => runs.contains(&g.as_str()),
            })
            .count() as u32
    } else {
        0
    };
    let total = case.gold.len() as u32;
    Ok(CaseScore {
        case_id: case.case_id.clone(),
        task: case.task,
        target_length: case.target_length,
        depth: case.depth_fractions.first().copied().unwrap_or(0.5),
        found,
        total,
        score: found as f64 / total as f64,
    })
}

/// Scores every case in `case_file` against its record in `response_file`.
pub fn score_files(case_file: &Path, response_file: &Path, mode: ScoringMode) -> Result<Vec<CaseScore>> {
    let mut responses: HashMap<String, ResponseRecord> = HashMap::new();
    for r in read_responses(response_file)? {
        if responses.insert(r.case_id.clone(), r).is_some() {
            return Err(Error::Integrity(format!("duplicate response records in {}", response_file.display())));
        }
    }
    let mut out = Vec::new();
    for case in CaseReader::open(case_file)? {
        let case = case?;
        let r = responses
            .remove(&case.case_id)
            .ok_or_else(|| Error::Integrity(format!("no response for case {}", case.case_id)))?;
        out.push(score_case(&case, &r, mode)?);
    }
    if let Some(id) = responses.keys().min() {
        return Err(Error::Integrity(format!("response {id} has no matching case")));
    }
    Ok(out)
}

/// A mean kept both as an exact fraction and as a float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub cases: u64,
    pub mean: f64,
    /// `numerator/denominator` in lowest terms.
    pub exact: String,
}

impl Mean {
    fn from_sum(sum: Ratio<i128>, cases: u64) -> Self {
        let m = sum / Ratio::from_integer(cases as i128);
        Self {
            cases,
            mean: *m.numer() as f64 / *m.denom() as f64,
            exact: format!("{}/{}", m.numer(), m.denom()),
        }
    }

    pub fn ratio(&self) -> Ratio<i128> {
        let (n, d) = self.exact.split_once('/').expect("exact mean is n/d");
        Ratio::new(n.parse().unwrap(), d.parse().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub length: u64,
    pub depth: f64,
    #[serde(flatten)]
    pub mean: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    /// Ascending.
    pub lengths: Vec<u64>,
    /// Ascending.
    pub depths: Vec<f64>,
    /// Populated cells only, ordered by length then depth.
    pub cells: Vec<GridCell>,
}

impl ScoreGrid {
    pub fn get(&self, length: u64, depth: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.length == length && c.depth == depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_case: Vec<CaseScore>,
    pub grid: ScoreGrid,
    /// Keyed by threshold; thresholds with no cases are omitted.
    pub buckets: BTreeMap<u64, Mean>,
    pub thresholds: Vec<u64>,
    pub per_length: BTreeMap<u64, Mean>,
    pub overall: Mean,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct DepthKey(f64);

impl Eq for DepthKey {}

impl Ord for DepthKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Single pass over `scores`: every case contributes to its grid cell, its
/// length, the overall mean and every threshold at or above its length.
pub fn aggregate(scores: Vec<CaseScore>, thresholds: &[u64]) -> Result<ScoreReport> {
    if scores.is_empty() {
        return Err(Error::EmptyReport);
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("thresholds must be strictly ascending, got {thresholds:?}")));
    }
    let zero = Ratio::from_integer(0i128);
    let mut cells: BTreeMap<(u64, DepthKey), (Ratio<i128>, u64)> = BTreeMap::new();
    let mut lengths: BTreeMap<u64, (Ratio<i128>, u64)> = BTreeMap::new();
    let mut buckets = vec![(zero, 0u64); thresholds.len()];
    let mut total = (zero, 0u64);
    for s in &scores {
        if s.total == 0 || s.found > s.total {
            return Err(Error::Integrity(format!("case {} has an invalid score", s.case_id)));
        }
        let x = s.exact();
        let add = |e: &mut (Ratio<i128>, u64)| {
            e.0 += x;
            e.1 += 1;
        };
        add(cells.entry((s.target_length, DepthKey(s.depth))).or_insert((zero, 0)));
        add(lengths.entry(s.target_length).or_insert((zero, 0)));
        let first = thresholds.partition_point(|&t| t < s.target_length);
        buckets[first..].iter_mut().for_each(add);
        add(&mut total);
    }
    let depths: std::collections::BTreeSet<DepthKey> = cells.keys().map(|k| k.1).collect();
    let grid = ScoreGrid {
        lengths: lengths.keys().copied().collect(),
        depths: depths.into_iter().map(|d| d.0).collect(),
        cells: cells
            .into_iter()
            .map(|((length, depth), (sum, n))| GridCell {
                length,
                depth: depth.0,
                mean: Mean::from_sum(sum, n),
            })
            .collect(),
    };
    Ok(ScoreReport {
        per_case: scores,
        grid,
        buckets: thresholds
            .iter()
            .zip(buckets)
            .filter(|(_, (_, n))| *n > 0)
            .map(|(&t, (sum, n))| (t, Mean::from_sum(sum, n)))
            .collect(),
        thresholds: thresholds.to_vec(),
        per_length: lengths.into_iter().map(|(l, (sum, n))| (l, Mean::from_sum(sum, n))).collect(),
        overall: Mean::from_sum(total.0, total.1),
    })
}

pub fn write_report(path: &Path, report: &ScoreReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(|e| Error::io(path, e.into()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ScoreReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), 0, e.to_string()))
}

/// Rows are depths, columns lengths, both ascending, with a header row and
/// column. Cells without cases are `NA`.
pub fn heatmap_tsv(grid: &ScoreGrid) -> String {
    let mut out = String::from("depth");
    for l in &grid.lengths {
        out.push_str(&format!("\t{l}"));
    }
    out.push('\n');
    for &d in &grid.depths {
        out.push_str(&format!("{d:.4}"));
        for &l in &grid.lengths {
            match grid.get(l, d) {
                Some(c) => out.push_str(&format!("\t{:.4}", c.mean.mean)),
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn heatmap_export(report: &ScoreReport, path: &Path) -> Result<()> {
    std::fs::write(path, heatmap_tsv(&report.grid)).map_err(|e| Error::io(path, e))
}
