//! On-disk formats for feature matrices and per-sample score tables.
//!
//! Feature matrices travel as `.nfmb` files: a fixed 28-byte little-endian
//! header (`"NFMB"` magic, format version, row and column counts, reserved
//! word) followed by the payload as row-major `f32`. Values are stored in
//! single precision; all arithmetic downstream happens in `f64`.
//!
//! Score tables travel as two-column CSV (`sample_id,score`) with LF line
//! endings and full round-trip float formatting, so a table can be re-read
//! byte-exactly and diffed across runs.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const NFMB_MAGIC: [u8; 4] = *b"NFMB";
pub const NFMB_VERSION: u32 = 1;
/// magic (4) + version (4) + rows (8) + dim (8) + reserved (4)
pub const NFMB_HEADER_LEN: u64 = 28;

/// Dense row-major `f32` matrix with every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length mismatches and non-finite
    /// values (the first offender is reported with its row and column).
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("tensor dim must be at least 1"));
        }
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::invalid("tensor shape overflows"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match {} rows x {} dim",
                data.len(),
                rows,
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, col {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Tensor { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Copies a contiguous block of rows into a new tensor.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Tensor> {
        let end = start
            .checked_add(count)
            .filter(|&e| e <= self.rows)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "row range {}..{} out of bounds for {} rows",
                    start,
                    start + count,
                    self.rows
                ))
            })?;
        Ok(Tensor {
            rows: count,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        })
    }

    /// Stacks tensors of equal dim on top of each other.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let dim = parts
            .first()
            .map(|t| t.dim)
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for part in parts {
            if part.dim != dim {
                return Err(Error::invalid(format!(
                    "cannot stack dim {} onto dim {}",
                    part.dim, dim
                )));
            }
            rows += part.rows;
            data.extend_from_slice(&part.data);
        }
        Ok(Tensor { rows, dim, data })
    }
}

/// Writes a tensor as an `.nfmb` file.
pub fn write_nfmb(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(&NFMB_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(NFMB_VERSION).map_err(io_err)?;
    w.write_u64::<LittleEndian>(tensor.rows as u64)
        .map_err(io_err)?;
    w.write_u64::<LittleEndian>(tensor.dim as u64)
        .map_err(io_err)?;
    w.write_u32::<LittleEndian>(0).map_err(io_err)?; // reserved
    for &v in &tensor.data {
        w.write_f32::<LittleEndian>(v).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads an `.nfmb` file, validating header fields, payload size, and value
/// finiteness.
pub fn read_nfmb(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let expected_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if magic != NFMB_MAGIC {
        return Err(Error::format(path, format!("bad magic {:?}", magic)));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if version != NFMB_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let rows = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::format(path, "file too short for header"))?;
    let dim = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::format(path, "file too short for header"))?;
    let reserved = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if reserved != 0 {
        return Err(Error::format(
            path,
            format!("reserved header word must be 0, found {reserved}"),
        ));
    }
    if dim == 0 {
        return Err(Error::format(path, "dim must be at least 1"));
    }

    let count = rows
        .checked_mul(dim)
        .filter(|&n| n <= (usize::MAX as u64) / 4)
        .ok_or_else(|| Error::format(path, "payload size overflows"))?;
    let payload_len = expected_len - NFMB_HEADER_LEN;
    if payload_len != count * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, expected {} for {} rows x {} dim",
                payload_len,
                count * 4,
                rows,
                dim
            ),
        ));
    }

    let mut data = vec![0f32; count as usize];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|_| Error::format(path, "truncated payload"))?;
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!(
                "non-finite value at row {}, col {}",
                pos as u64 / dim,
                pos as u64 % dim
            ),
        ));
    }
    Tensor::new(rows as usize, dim as usize, data)
}

/// Named collection of per-sample scores, kept sorted by sample id so every
/// serialization is canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    name: String,
    scores: BTreeMap<String, f64>,
}

impl ScoreTable {
    pub fn new(name: impl Into<String>) -> Self {
        ScoreTable {
            name: name.into(),
            scores: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Inserts a score; a repeated id is a contract violation.
    pub fn insert(&mut self, id: impl Into<String>, score: f64) -> Result<()> {
        let id = id.into();
        if !score.is_finite() {
            return Err(Error::invalid(format!("non-finite score for sample {id}")));
        }
        match self.scores.entry(id) {
            Entry::Vacant(slot) => {
                slot.insert(score);
                Ok(())
            }
            Entry::Occupied(slot) => Err(Error::invalid(format!(
                "duplicate sample id {}",
                slot.key()
            ))),
        }
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Iterates `(id, score)` in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(id, &s)| (id.as_str(), s))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.values().copied()
    }
}

/// Writes a score table as `sample_id,score` CSV with LF endings.
pub fn write_scores_csv(path: &Path, table: &ScoreTable) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["sample_id", "score"]).map_err(csv_err)?;
    for (id, score) in table.iter() {
        w.write_record([id, score.to_string().as_str()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a score table written by [`write_scores_csv`]. The table's name is
/// the file stem. Duplicate ids and non-finite scores are rejected.
pub fn read_scores_csv(path: &Path) -> Result<ScoreTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    {
        let headers = r
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?;
        if headers.len() != 2 || &headers[0] != "sample_id" || &headers[1] != "score" {
            return Err(Error::format(
                path,
                format!("expected header sample_id,score, found {:?}", headers),
            ));
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut table = ScoreTable::new(name);
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(Error::format(
                path,
                format!("row {} has {} fields, expected 2", line + 2, record.len()),
            ));
        }
        let score: f64 = record[1].parse().map_err(|_| {
            Error::format(
                path,
                format!("row {}: unparseable score {:?}", line + 2, &record[1]),
            )
        })?;
        table
            .insert(&record[0], score)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(table)
}
