//! SNP token matrices: samples by ordered chromosomal loci.
//!
//! Token assignment is fixed: `A=0, C=1, G=2, T=3, N=4` (case-insensitive on input).
//! A matrix file is delimited text whose header row is `sample_id` followed by one
//! `X<position>` field per locus in strictly ascending position order. Cells hold
//! either nucleotide letters or the pre-tokenized digits `0..4`.

use std::collections::HashMap;
use std::io::{Read, Write};

use csv::{ByteRecord, ReaderBuilder, WriterBuilder};

use crate::data::io::decompressing_reader;
use crate::error::{Error, Result};

/// Number of distinct tokens.
pub const N_TOKENS: usize = 5;

const SYMBOLS: [char; N_TOKENS] = ['A', 'C', 'G', 'T', 'N'];

/// Maps a nucleotide symbol to its integer token.
pub fn encode_token(symbol: char) -> Result<u8> {
    match symbol.to_ascii_uppercase() {
        'A' => Ok(0),
        'C' => Ok(1),
        'G' => Ok(2),
        'T' => Ok(3),
        'N' => Ok(4),
        other => Err(Error::InvalidData(format!(
            "unknown nucleotide symbol {other:?}"
        ))),
    }
}

pub fn decode_token(token: u8) -> Option<char> {
    SYMBOLS.get(token as usize).copied()
}

/// How cells are written, and which forms are accepted when reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellEncoding {
    /// `A`, `C`, `G`, `T`, `N`.
    Nucleotide,
    /// `0` through `4`.
    Integer,
    /// Accept either form per cell. Writing with `Auto` emits nucleotides.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixFormat {
    pub delimiter: u8,
    pub cells: CellEncoding,
}

impl Default for MatrixFormat {
    fn default() -> Self {
        MatrixFormat {
            delimiter: b'\t',
            cells: CellEncoding::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnpMatrix {
    sample_ids: Vec<String>,
    positions: Vec<u64>,
    tokens: Vec<u8>,
    index: HashMap<String, usize>,
}

impl SnpMatrix {
    /// Builds a matrix from a row-major token grid, validating every invariant.
    pub fn new(sample_ids: Vec<String>, positions: Vec<u64>, tokens: Vec<u8>) -> Result<Self> {
        if let Some(w) = positions.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Structural(format!(
                "positions not strictly ascending: {} followed by {}",
                positions[w],
                positions[w + 1]
            )));
        }
        if tokens.len() != sample_ids.len() * positions.len() {
            return Err(Error::Structural(format!(
                "token grid has {} values, expected {} samples x {} loci",
                tokens.len(),
                sample_ids.len(),
                positions.len()
            )));
        }
        if let Some(bad) = tokens.iter().position(|&t| t as usize >= N_TOKENS) {
            let width = positions.len();
            return Err(Error::data(
                bad / width,
                bad % width,
                format!("token {} outside 0..4", tokens[bad]),
            ));
        }
        let mut index = HashMap::with_capacity(sample_ids.len());
        for (i, id) in sample_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Structural(format!("duplicate sample id {id:?}")));
            }
        }
        Ok(SnpMatrix {
            sample_ids,
            positions,
            tokens,
            index,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_loci(&self) -> usize {
        self.positions.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn positions(&self) -> &[u64] {
        &self.positions
    }

    /// Row-major token grid.
    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn row(&self, sample: usize) -> &[u8] {
        let w = self.n_loci();
        &self.tokens[sample * w..(sample + 1) * w]
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Feature names in the `X<position>` convention.
    pub fn feature_names(&self) -> Vec<String> {
        self.positions.iter().map(|p| format!("X{p}")).collect()
    }

    /// A new matrix holding the given rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SnpMatrix {
        let mut tokens = Vec::with_capacity(rows.len() * self.n_loci());
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            tokens.extend_from_slice(self.row(r));
            ids.push(self.sample_ids[r].clone());
        }
        SnpMatrix::new(ids, self.positions.clone(), tokens)
            .expect("row selection preserves matrix invariants")
    }
}

/// Parses a position header such as `X4435738` or `4435738`.
pub fn parse_position(field: &str) -> Option<u64> {
    let digits = match field.chars().next() {
        Some(c) if c.is_ascii_alphabetic() => &field[1..],
        _ => field,
    };
    digits.parse().ok()
}

fn parse_cell(raw: &[u8], cells: CellEncoding) -> std::result::Result<u8, String> {
    let trimmed = raw.trim_ascii();
    if trimmed.len() != 1 {
        return Err(format!(
            "cell {:?} is not a single symbol",
            String::from_utf8_lossy(trimmed)
        ));
    }
    let b = trimmed[0];
    match (b, cells) {
        (b'0'..=b'9', CellEncoding::Integer | CellEncoding::Auto) => {
            let t = b - b'0';
            if (t as usize) < N_TOKENS {
                Ok(t)
            } else {
                Err(format!("token {t} outside 0..4"))
            }
        }
        (_, CellEncoding::Nucleotide | CellEncoding::Auto) if b.is_ascii_alphabetic() => {
            encode_token(b as char).map_err(|e| e.to_string())
        }
        _ => Err(format!(
            "unexpected cell {:?} for {cells:?} encoding",
            b as char
        )),
    }
}

/// Reads a matrix from a plain or gzip-compressed delimited stream.
///
/// Data errors carry 1-based file line and field numbers.
pub fn parse_snp_matrix<R: Read>(reader: R, format: &MatrixFormat) -> Result<SnpMatrix> {
    let input = decompressing_reader(reader)?;
    let mut csv = ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(input);

    let mut record = ByteRecord::new();
    if !csv.read_byte_record(&mut record)? {
        return SnpMatrix::new(Vec::new(), Vec::new(), Vec::new());
    }
    if record.is_empty() {
        return Err(Error::Structural("empty header row".into()));
    }
    let mut positions = Vec::with_capacity(record.len().saturating_sub(1));
    for (col, field) in record.iter().enumerate().skip(1) {
        let text = String::from_utf8_lossy(field);
        let pos = parse_position(text.trim())
            .ok_or_else(|| Error::data(1, col + 1, format!("bad position header {text:?}")))?;
        if let Some(&prev) = positions.last() {
            if pos <= prev {
                return Err(Error::Structural(format!(
                    "header positions not strictly ascending at field {}: {prev} then {pos}",
                    col + 1
                )));
            }
        }
        positions.push(pos);
    }

    let width = positions.len();
    let mut sample_ids = Vec::new();
    let mut tokens = Vec::new();
    let mut line = 1;
    while csv.read_byte_record(&mut record)? {
        line += 1;
        if record.len() == 1 && record[0].trim_ascii().is_empty() {
            continue;
        }
        if record.len() != width + 1 {
            return Err(Error::Structural(format!(
                "line {line} has {} fields, header has {}",
                record.len(),
                width + 1
            )));
        }
        sample_ids.push(String::from_utf8_lossy(record[0].trim_ascii()).into_owned());
        for (col, cell) in record.iter().enumerate().skip(1) {
            let token = parse_cell(cell, format.cells).map_err(|m| Error::data(line, col + 1, m))?;
            tokens.push(token);
        }
    }
    SnpMatrix::new(sample_ids, positions, tokens)
}

/// Writes a matrix in the same layout [`parse_snp_matrix`] reads.
pub fn write_snp_matrix<W: Write>(writer: W, matrix: &SnpMatrix, format: &MatrixFormat) -> Result<()> {
    let mut csv = WriterBuilder::new()
        .delimiter(format.delimiter)
        .from_writer(writer);
    let mut header = vec!["sample_id".to_string()];
    header.extend(matrix.feature_names());
    csv.write_record(&header)?;
    let mut record = ByteRecord::new();
    for (i, id) in matrix.sample_ids().iter().enumerate() {
        record.clear();
        record.push_field(id.as_bytes());
        for &t in matrix.row(i) {
            let b = match format.cells {
                CellEncoding::Integer => b'0' + t,
                _ => SYMBOLS[t as usize] as u8,
            };
            record.push_field(&[b]);
        }
        csv.write_byte_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}
