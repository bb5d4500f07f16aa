//! On-disk formats: JSON Lines corpora, the `UDOC` token-record file with its
//! JSON index, and the `UPKD` packed-sequence file with its JSON Lines
//! metadata sidecar. All integers are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Document, PackConfig, PackedSequence, SegmentStart};
use crate::error::{Error, Result};
use crate::seed::Digest256;

pub const UDOC_MAGIC: &[u8; 4] = b"UDOC";
pub const UPKD_MAGIC: &[u8; 4] = b"UPKD";
pub const FORMAT_VERSION: u32 = 1;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

/// `<path>.index.json`
pub fn udoc_index_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".index.json");
    PathBuf::from(p)
}

/// `<path>.meta.jsonl`
pub fn upkd_meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.jsonl");
    PathBuf::from(p)
}

pub fn read_jsonl_corpus(path: &Path) -> Result<Vec<Document>> {
    read_jsonl_corpus_from(BufReader::new(open(path)?), &name(path))
}

pub fn read_jsonl_corpus_from(reader: impl BufRead, source_name: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(source_name, i, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::format(source_name, i, e.to_string()))?;
        if doc.tokens.is_empty() {
            return Err(Error::format(source_name, i, format!("document {:?} is empty", doc.id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| Error::io(path, e);
    for doc in docs {
        serde_json::to_writer(&mut w, doc).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UdocIndexEntry {
    pub id: String,
    pub byte_offset: u64,
    pub length: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
}

/// Write a `UDOC` file and its index next to it.
pub fn write_udoc(path: &Path, docs: &[Document]) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = create(path)?;
    w.write_all(UDOC_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    let mut offset = 8u64;
    let mut index = Vec::with_capacity(docs.len());
    for doc in docs {
        let len = u32::try_from(doc.len()).map_err(|_| Error::config("document longer than u32::MAX tokens"))?;
        index.push(UdocIndexEntry {
            id: doc.id.clone(),
            byte_offset: offset,
            length: len,
            source: doc.source.clone(),
        });
        w.write_all(&len.to_le_bytes()).map_err(io)?;
        for t in &doc.tokens {
            w.write_all(&t.to_le_bytes()).map_err(io)?;
        }
        offset += 4 + 4 * len as u64;
    }
    w.flush().map_err(io)?;

    let index_path = udoc_index_path(path);
    let mut iw = create(&index_path)?;
    serde_json::to_writer(&mut iw, &index).map_err(|e| Error::io(&index_path, e.into()))?;
    iw.write_all(b"\n").map_err(|e| Error::io(&index_path, e))?;
    iw.flush().map_err(|e| Error::io(&index_path, e))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tokens(r: &mut impl Read, n: usize) -> std::io::Result<Vec<u32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Read a `UDOC` file, cross-checking every record against its index.
pub fn read_udoc(path: &Path) -> Result<Vec<Document>> {
    let src = name(path);
    let index_path = udoc_index_path(path);
    let index: Vec<UdocIndexEntry> = serde_json::from_reader(BufReader::new(open(&index_path)?))
        .map_err(|e| Error::format(name(&index_path), 0, e.to_string()))?;

    let mut r = BufReader::new(open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::format(&src, 0, format!("missing header: {e}")))?;
    if &magic != UDOC_MAGIC {
        return Err(Error::format(&src, 0, format!("bad magic {magic:?}, expected UDOC")));
    }
    let version = read_u32(&mut r).map_err(|e| Error::format(&src, 0, e.to_string()))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(&src, 0, format!("unsupported UDOC version {version}")));
    }

    let mut offset = 8u64;
    let mut docs = Vec::with_capacity(index.len());
    for (i, entry) in index.iter().enumerate() {
        let len = read_u32(&mut r).map_err(|e| Error::format(&src, i, format!("truncated record: {e}")))?;
        if entry.byte_offset != offset || entry.length != len {
            return Err(Error::format(
                &src,
                i,
                format!(
                    "index says offset {} length {}, file has offset {offset} length {len}",
                    entry.byte_offset, entry.length
                ),
            ));
        }
        if len == 0 {
            return Err(Error::format(&src, i, "empty document"));
        }
        let tokens =
            read_tokens(&mut r, len as usize).map_err(|e| Error::format(&src, i, format!("truncated record: {e}")))?;
        offset += 4 + 4 * len as u64;
        docs.push(Document::new(entry.id.clone(), entry.source.clone(), tokens));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(&src, index.len(), "trailing bytes after last indexed record"));
    }
    Ok(docs)
}

/// Read a corpus, choosing the format from the file's first bytes.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let mut magic = [0u8; 4];
    let n = open(path)?.read(&mut magic).map_err(|e| Error::io(path, e))?;
    if n == 4 && &magic == UDOC_MAGIC {
        read_udoc(path)
    } else {
        read_jsonl_corpus(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub sequence: u64,
    pub boundaries: Vec<SegmentStart>,
    pub separator_positions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedFile {
    pub target_len: u32,
    pub separator_id: u32,
    pub sequences: Vec<PackedSequence>,
}

fn write_upkd_body(w: &mut impl Write, target_len: u32, separator_id: u32, sequences: &[PackedSequence]) -> std::io::Result<()> {
    w.write_all(UPKD_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&target_len.to_le_bytes())?;
    w.write_all(&separator_id.to_le_bytes())?;
    w.write_all(&(sequences.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(target_len as usize * 4);
    for seq in sequences {
        buf.clear();
        for t in &seq.tokens {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct HashWriter(Digest256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// SHA-256 of the `UPKD` bytes these sequences serialize to.
pub fn upkd_digest(config: &PackConfig, sequences: &[PackedSequence]) -> String {
    let mut h = HashWriter(Digest256::new());
    write_upkd_body(&mut h, config.target_len as u32, config.header_separator_id(), sequences)
        .expect("hashing cannot fail");
    h.0.finish_hex()
}

pub fn write_upkd(path: &Path, config: &PackConfig, sequences: &[PackedSequence]) -> Result<()> {
    write_upkd_raw(path, config.target_len as u32, config.header_separator_id(), sequences)
}

pub fn write_upkd_raw(path: &Path, target_len: u32, separator_id: u32, sequences: &[PackedSequence]) -> Result<()> {
    let mut w = create(path)?;
    write_upkd_body(&mut w, target_len, separator_id, sequences).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta_path = upkd_meta_path(path);
    let mut mw = create(&meta_path)?;
    let io = |e: std::io::Error| Error::io(&meta_path, e);
    for (i, seq) in sequences.iter().enumerate() {
        let meta = SequenceMeta {
            sequence: i as u64,
            boundaries: seq.boundaries.clone(),
            separator_positions: seq.separator_positions.clone(),
        };
        serde_json::to_writer(&mut mw, &meta).map_err(|e| io(e.into()))?;
        mw.write_all(b"\n").map_err(io)?;
    }
    mw.flush().map_err(io)
}

/// Read a `UPKD` file; boundary metadata is filled from the sidecar when present.
pub fn read_upkd(path: &Path) -> Result<PackedFile> {
    let src = name(path);
    let mut r = BufReader::new(open(path)?);
    let fmt = |e: std::io::Error| Error::format(&src, 0, format!("truncated header: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != UPKD_MAGIC {
        return Err(Error::format(&src, 0, format!("bad magic {magic:?}, expected UPKD")));
    }
    let version = read_u32(&mut r).map_err(fmt)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(&src, 0, format!("unsupported UPKD version {version}")));
    }
    let target_len = read_u32(&mut r).map_err(fmt)?;
    let separator_id = read_u32(&mut r).map_err(fmt)?;
    let count = read_u64(&mut r).map_err(fmt)?;

    let meta_path = upkd_meta_path(path);
    let metas: Option<Vec<SequenceMeta>> = if meta_path.exists() {
        let reader = BufReader::new(open(&meta_path)?);
        let mut v = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::format(name(&meta_path), i, e.to_string()))?;
            v.push(serde_json::from_str(&line).map_err(|e| Error::format(name(&meta_path), i, e.to_string()))?);
        }
        if v.len() as u64 != count {
            return Err(Error::format(
                name(&meta_path),
                v.len(),
                format!("metadata lists {} sequences, file has {count}", v.len()),
            ));
        }
        Some(v)
    } else {
        None
    };

    let mut sequences = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let tokens = read_tokens(&mut r, target_len as usize)
            .map_err(|e| Error::format(&src, i, format!("truncated sequence: {e}")))?;
        let (boundaries, separator_positions) = match &metas {
            Some(m) => (m[i].boundaries.clone(), m[i].separator_positions.clone()),
            None => (Vec::new(), Vec::new()),
        };
        sequences.push(PackedSequence {
            tokens,
            boundaries,
            separator_positions,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(&src, count as usize, "trailing bytes after last sequence"));
    }
    Ok(PackedFile {
        target_len,
        separator_id,
        sequences,
    })
}
