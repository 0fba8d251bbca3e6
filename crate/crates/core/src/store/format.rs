//! Embedding file formats.
//!
//! Binary canonical form (all little-endian):
//!
//! ```text
//! "XCAL" | version: u16 = 1 | dimension: u32 | count: u64
//! count × ( id_len: u16 | id: UTF-8 bytes | dimension × f32 )
//! ```
//!
//! JSON Lines is accepted as an alternative: one `{"id", "vec", "label"?}`
//! object per line. Labels may also come from a CSV file with an `id,label`
//! header.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Corpus, EmbeddingVector, ImageRecord};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XCAL";
const VERSION: u16 = 1;

/// Reads an embedding file (binary or JSONL, sniffed by magic bytes) and
/// optionally joins a label CSV onto it by id.
pub fn ingest_corpus(source: &Path, labels: Option<&Path>) -> Result<Corpus> {
    let bytes = fs::read(source)?;
    let mut records = if bytes.starts_with(MAGIC) {
        parse_binary(&bytes)?
    } else {
        parse_jsonl(&bytes)?
    };
    let dimension = records
        .first()
        .map(|r| r.vector.dim())
        .unwrap_or_else(|| binary_dimension(&bytes).unwrap_or(0));

    if let Some(path) = labels {
        let table = read_labels(path)?;
        let positions: HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let mut assigned = Vec::with_capacity(table.len());
        for (id, label) in table {
            let pos = *positions
                .get(id.as_str())
                .ok_or_else(|| Error::NotFound(format!("labelled id `{id}` is not in the corpus")))?;
            assigned.push((pos, label));
        }
        for (pos, label) in assigned {
            records[pos].label = Some(label);
        }
    }
    Corpus::new(dimension, records)
}

/// Reads a corpus, taking labels from `<source>.labels.csv` when present.
pub fn read_corpus(source: &Path) -> Result<Corpus> {
    let sidecar = labels_path_for(source);
    ingest_corpus(source, sidecar.exists().then_some(sidecar.as_path()))
}

pub fn labels_path_for(store: &Path) -> PathBuf {
    let mut name = store.as_os_str().to_owned();
    name.push(".labels.csv");
    PathBuf::from(name)
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::parse(0, "label file must start with an `id,label` header"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let offset = row.position().map(|p| p.byte()).unwrap_or(0);
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(Error::parse(offset, "label row needs two columns"));
        };
        if !seen.insert(id.to_owned()) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
        out.push((id.to_owned(), label.to_owned()));
    }
    Ok(out)
}

/// Writes `corpus` in the binary canonical form.
pub fn write_binary(corpus: &Corpus, mut out: impl Write) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(corpus.dimension() as u32).to_le_bytes())?;
    out.write_all(&(corpus.len() as u64).to_le_bytes())?;
    for record in corpus.records() {
        let id = record.id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "id longer than 65535 bytes"))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(id)?;
        for value in record.vector.as_slice() {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    out.flush()
}

/// Writes the `id,label` CSV for every labelled record.
pub fn write_labels(corpus: &Corpus, out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["id", "label"])?;
    for record in corpus.records() {
        if let Some(label) = &record.label {
            writer.write_record([record.id.as_str(), label.as_str()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated input while reading {what}"),
            ));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice length checked"))
    }
}

fn binary_dimension(bytes: &[u8]) -> Option<usize> {
    let raw: [u8; 4] = bytes.get(6..10)?.try_into().ok()?;
    Some(u32::from_le_bytes(raw) as usize)
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<ImageRecord>> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.take(4, "magic")?;
    let version = u16::from_le_bytes(cur.array("version")?);
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let dimension = u32::from_le_bytes(cur.array("dimension")?) as usize;
    if dimension < 2 {
        return Err(Error::parse(6, format!("dimension must be at least 2, got {dimension}")));
    }
    let count = u64::from_le_bytes(cur.array("count")?);
    let record_floor = 2 + 4 * dimension;
    let mut records = Vec::with_capacity((count as usize).min((bytes.len() - cur.pos) / record_floor));
    for _ in 0..count {
        let start = cur.pos as u64;
        let id_len = u16::from_le_bytes(cur.array("id length")?) as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|e| Error::parse(start + 2, format!("id is not UTF-8: {e}")))?;
        if id.is_empty() {
            return Err(Error::parse(start, "empty id"));
        }
        let raw = cur.take(4 * dimension, "vector")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let vector = EmbeddingVector::new(values)
            .map_err(|e| Error::parse(start, format!("record `{id}`: {e}")))?;
        records.push(ImageRecord::new(id, vector));
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(cur.pos as u64, "trailing bytes after last record"));
    }
    Ok(records)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    id: String,
    vec: Vec<f32>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    media_path: Option<PathBuf>,
}

fn parse_jsonl(bytes: &[u8]) -> Result<Vec<ImageRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        Error::parse(e.valid_up_to() as u64, "input is neither XCAL binary nor UTF-8 JSONL")
    })?;
    let mut records = Vec::new();
    let mut dimension = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(start, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(Error::parse(start, "empty id"));
        }
        let dim = *dimension.get_or_insert(rec.vec.len());
        if rec.vec.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: rec.vec.len(),
            });
        }
        let vector = EmbeddingVector::new(rec.vec)
            .map_err(|e| Error::parse(start, format!("record `{}`: {e}", rec.id)))?;
        records.push(ImageRecord {
            id: rec.id,
            vector,
            label: rec.label,
            media_path: rec.media_path,
        });
    }
    if records.is_empty() {
        return Err(Error::parse(0, "no records in JSONL input"));
    }
    Ok(records)
}
