use std::collections::BTreeMap;
use std::io::Read;

use csv::{ReaderBuilder, StringRecord};

use crate::data::io::decompressing_reader;
use crate::data::snp::SnpMatrix;
use crate::error::{Error, Result};

/// The four antibiotics of the benchmark panel.
pub const STANDARD_ANTIBIOTICS: [&str; 4] = ["CIP", "CTX", "CTZ", "GEN"];

/// Binary resistance labels (`0` susceptible, `1` resistant) keyed by antibiotic, then sample id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhenotypeTable {
    labels: BTreeMap<String, BTreeMap<String, u8>>,
}

impl PhenotypeTable {
    pub fn insert(&mut self, antibiotic: &str, sample: &str, label: u8) -> Result<()> {
        if label > 1 {
            return Err(Error::InvalidData(format!(
                "label {label} for {sample}/{antibiotic} is not 0 or 1"
            )));
        }
        self.labels
            .entry(antibiotic.to_string())
            .or_default()
            .insert(sample.to_string(), label);
        Ok(())
    }

    pub fn antibiotics(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    pub fn label(&self, antibiotic: &str, sample: &str) -> Option<u8> {
        self.labels.get(antibiotic)?.get(sample).copied()
    }

    /// (susceptible, resistant) counts for one antibiotic.
    pub fn class_counts(&self, antibiotic: &str) -> (usize, usize) {
        self.labels.get(antibiotic).map_or((0, 0), |m| {
            let ones = m.values().filter(|&&l| l == 1).count();
            (m.len() - ones, ones)
        })
    }

    /// Matrix row indices (ascending) and labels of every sample labeled for `antibiotic`.
    ///
    /// Fails if a labeled sample is missing from the matrix.
    pub fn labeled_rows(&self, antibiotic: &str, matrix: &SnpMatrix) -> Result<(Vec<usize>, Vec<u8>)> {
        let per_sample = self
            .labels
            .get(antibiotic)
            .ok_or_else(|| Error::Config(format!("no labels for antibiotic {antibiotic:?}")))?;
        let mut rows = Vec::with_capacity(per_sample.len());
        for (sample, &label) in per_sample {
            let row = matrix.sample_index(sample).ok_or_else(|| {
                Error::InvalidData(format!(
                    "labeled sample {sample:?} ({antibiotic}) not present in SNP matrix"
                ))
            })?;
            rows.push((row, label));
        }
        rows.sort_unstable();
        Ok(rows.into_iter().unzip())
    }
}

fn is_header(record: &StringRecord) -> bool {
    record
        .get(2)
        .map(|f| {
            let f = f.trim();
            f.parse::<i64>().is_err() && !matches!(f, "" | "NA" | "na")
        })
        .unwrap_or(false)
}

/// Reads a long-format phenotype file: `sample_id, antibiotic, label` per row.
///
/// An optional header row is detected by a non-label third field. Empty or `NA` labels
/// are treated as absent.
pub fn parse_phenotypes<R: Read>(reader: R, delimiter: u8) -> Result<PhenotypeTable> {
    let input = decompressing_reader(reader)?;
    let mut csv = ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut table = PhenotypeTable::default();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Structural(format!(
                "phenotype line {line} has {} fields, expected 3",
                record.len()
            )));
        }
        if i == 0 && is_header(&record) {
            continue;
        }
        let (sample, antibiotic, label) = (record[0].trim(), record[1].trim(), record[2].trim());
        let label = match label {
            "" | "NA" | "na" => continue,
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::data(
                    line,
                    3,
                    format!("label {other:?} is not 0 or 1"),
                ))
            }
        };
        if table.label(antibiotic, sample).is_some() {
            return Err(Error::data(
                line,
                1,
                format!("duplicate label for {sample}/{antibiotic}"),
            ));
        }
        table.insert(antibiotic, sample, label)?;
    }
    Ok(table)
}
