use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeededRng;

/// Neutral sentences of nine to eleven words, no digits.
pub const BUILTIN_FILLER: &[&str] = &[
    "The grass is green and the sky is blue today.",
    "The sun is yellow and it shines over the hills.",
    "Here we go again, there and back once more.",
    "A quiet river runs slowly past the old mill.",
    "The wind moves softly through the tall dry reeds.",
    "Clouds drift over the valley without any particular hurry.",
    "A small bird sings from the branch of a tree.",
    "The road bends gently toward a village by the sea.",
    "Nothing much happens in the garden on a calm afternoon.",
    "The stones along the path are smooth and grey.",
    "Evening light falls across the fields and the barn.",
    "The kettle hums quietly on the stove in the kitchen.",
    "Leaves gather in the corner of the empty courtyard.",
    "A long fence runs beside the meadow to the woods.",
    "The lake is still and the boats rest at the pier.",
    "Somewhere a door closes and the house is quiet again.",
    "The clock on the wall keeps ticking through the night.",
    "Snow covers the roofs and the chimneys send up smoke.",
    "The market opens early and the baker sets out bread.",
    "Rain taps on the window while the fire burns low.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FillerSource {
    #[default]
    Builtin,
    /// Plain text, one sentence per line; blank lines are skipped.
    File { path: PathBuf },
}

impl FillerSource {
    /// Loads the sentence list. Sentences must not contain ASCII digits so
    /// that numeric needle values stay unique within a prompt.
    pub fn load(&self) -> Result<Vec<String>> {
        let sentences: Vec<String> = match self {
            FillerSource::Builtin => BUILTIN_FILLER.iter().map(|s| s.to_string()).collect(),
            FillerSource::File { path } => std::fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        };
        if sentences.is_empty() {
            return Err(Error::config("filler source has no sentences"));
        }
        if let Some(s) = sentences.iter().find(|s| s.bytes().any(|b| b.is_ascii_digit())) {
            return Err(Error::config(format!("filler sentence contains digits: {s:?}")));
        }
        Ok(sentences)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TokenCounter {
    /// One token per whitespace-separated word.
    #[default]
    WordApproximate,
    /// Runs `program args...` with the text on stdin; stdout must hold a
    /// single integer.
    ExternalAdapter { program: String, args: Vec<String> },
}

impl TokenCounter {
    pub fn count(&self, text: &str) -> Result<usize> {
        match self {
            TokenCounter::WordApproximate => Ok(text.split_whitespace().count()),
            TokenCounter::ExternalAdapter { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::io(program, e))?;
                let mut stdin = child.stdin.take().expect("piped stdin");
                let text = text.to_owned();
                let writer = std::thread::spawn(move || stdin.write_all(text.as_bytes()));
                let out = child.wait_with_output().map_err(|e| Error::io(program, e))?;
                writer
                    .join()
                    .expect("stdin writer panicked")
                    .map_err(|e| Error::io(program, e))?;
                if !out.status.success() {
                    return Err(Error::config(format!("token counter {program} exited with {}", out.status)));
                }
                let s = String::from_utf8_lossy(&out.stdout);
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("token counter {program} printed {:?}, expected an integer", s.trim())))
            }
        }
    }
}

/// A sentence list with token counts cached per sentence. External counters
/// are only invoked once per distinct sentence.
pub struct Filler {
    pub sentences: Vec<String>,
    pub lengths: Vec<usize>,
    counter: TokenCounter,
    cache: Mutex<HashMap<String, usize>>,
}

impl Filler {
    pub fn new(source: &FillerSource, counter: &TokenCounter) -> Result<Self> {
        let sentences = source.load()?;
        let lengths = sentences.iter().map(|s| counter.count(s)).collect::<Result<Vec<_>>>()?;
        if lengths.iter().any(|&l| l == 0) {
            return Err(Error::config("filler sentence counts as zero tokens"));
        }
        Ok(Self {
            sentences,
            lengths,
            counter: counter.clone(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Length of the longest filler sentence, the granularity of needle
    /// placement.
    pub fn unit_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn counter(&self) -> &TokenCounter {
        &self.counter
    }

    pub fn count(&self, text: &str) -> Result<usize> {
        if matches!(self.counter, TokenCounter::WordApproximate) {
            return self.counter.count(text);
        }
        if let Some(&n) = self.cache.lock().unwrap().get(text) {
            return Ok(n);
        }
        let n = self.counter.count(text)?;
        self.cache.lock().unwrap().insert(text.to_owned(), n);
        Ok(n)
    }

    /// Random sentences totalling exactly `budget` tokens when counted
    /// piecewise; the last one is cut at a word boundary if needed.
    pub fn draw(&self, rng: &mut SeededRng, budget: usize) -> Result<Vec<(String, usize)>> {
        let mut out = Vec::new();
        let mut used = 0;
        while used < budget {
            let i = rng.gen_range(0..self.sentences.len());
            let (s, n) = (&self.sentences[i], self.lengths[i]);
            if used + n <= budget {
                out.push((s.clone(), n));
                used += n;
                continue;
            }
            let words: Vec<&str> = s.split_whitespace().collect();
            let mut take = ((budget - used) * words.len()).div_ceil(n).min(words.len());
            loop {
                let piece = words[..take].join(" ");
                let c = self.count(&piece)?;
                if c <= budget - used || take <= 1 {
                    out.push((piece, c));
                    used += c;
                    break;
                }
                take -= 1;
            }
        }
        Ok(out)
    }
}
