//! JSON Lines case files. Prompts can run to several megabytes, so both
//! directions stream one line at a time.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::EvalCase;
use crate::error::{Error, Result};

pub struct CaseWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CaseWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::with_capacity(1 << 20, file),
        })
    }

    pub fn write(&mut self, case: &EvalCase) -> Result<()> {
        serde_json::to_writer(&mut self.out, case).map_err(|e| Error::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_cases(path: &Path, cases: &[EvalCase]) -> Result<()> {
    let mut w = CaseWriter::create(path)?;
    for c in cases {
        w.write(c)?;
    }
    w.finish()
}

/// Yields cases in file order; malformed lines become format errors
/// carrying the zero-based line index.
pub struct CaseReader<R> {
    source: String,
    lines: std::io::Lines<R>,
    index: usize,
}

impl CaseReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::with_capacity(1 << 20, file), path.display().to_string()))
    }
}

impl<R: BufRead> CaseReader<R> {
    pub fn new(reader: R, source: String) -> Self {
        Self {
            source,
            lines: reader.lines(),
            index: 0,
        }
    }
}

impl<R: BufRead> Iterator for CaseReader<R> {
    type Item = Result<EvalCase>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            let i = self.index;
            self.index += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::format(&self.source, i, e.to_string()))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| Error::format(&self.source, i, e.to_string())));
        }
    }
}

pub fn read_cases(path: &Path) -> Result<Vec<EvalCase>> {
    CaseReader::open(path)?.collect()
}
