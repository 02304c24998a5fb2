use std::io::{BufRead, Read};

use crate::data::io::decompressing_reader;
use crate::error::{Error, Result};

/// Label reported for positions outside every annotated gene.
pub const INTERGENIC: &str = "intergenic";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneInterval {
    pub start: u64,
    /// Inclusive.
    pub end: u64,
    pub name: String,
}

/// Sorted, non-overlapping gene intervals with inclusive ends.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneAnnotation {
    intervals: Vec<GeneInterval>,
}

impl GeneAnnotation {
    pub fn new(mut intervals: Vec<GeneInterval>) -> Result<Self> {
        if let Some(bad) = intervals.iter().find(|g| g.start > g.end) {
            return Err(Error::InvalidData(format!(
                "gene {} has start {} after end {}",
                bad.name, bad.start, bad.end
            )));
        }
        intervals.sort_by_key(|a| (a.start, a.end));
        for w in intervals.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::InvalidData(format!(
                    "overlapping genes {} [{}, {}] and {} [{}, {}]",
                    w[0].name, w[0].start, w[0].end, w[1].name, w[1].start, w[1].end
                )));
            }
        }
        Ok(GeneAnnotation { intervals })
    }

    pub fn intervals(&self) -> &[GeneInterval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Gene containing `position`, if any.
    pub fn gene_at(&self, position: u64) -> Option<&str> {
        let i = self.intervals.partition_point(|g| g.end < position);
        self.intervals
            .get(i)
            .filter(|g| g.start <= position)
            .map(|g| g.name.as_str())
    }
}

/// Maps a position to its gene name, or [`INTERGENIC`].
pub fn map_position_to_gene(annotation: &GeneAnnotation, position: u64) -> &str {
    annotation.gene_at(position).unwrap_or(INTERGENIC)
}

/// Reads `gene_name<TAB>start<TAB>end` rows. Blank lines and `#` comments are skipped.
pub fn parse_gene_annotation<R: Read>(reader: R) -> Result<GeneAnnotation> {
    let input = decompressing_reader(reader)?;
    let mut intervals = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let row = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Structural(format!(
                "annotation line {row} has {} fields, expected 3",
                fields.len()
            )));
        }
        let coord = |col: usize| -> Result<u64> {
            fields[col]
                .trim()
                .parse()
                .map_err(|_| Error::data(row, col + 1, format!("bad coordinate {:?}", fields[col])))
        };
        let (start, end) = (coord(1)?, coord(2)?);
        if start > end {
            return Err(Error::data(
                row,
                2,
                format!("start {start} after end {end}"),
            ));
        }
        intervals.push(GeneInterval {
            start,
            end,
            name: fields[0].trim().to_string(),
        });
    }
    GeneAnnotation::new(intervals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_inside_between_and_at_end() {
        let a = parse_gene_annotation(
            "gyrB\t4438489\t4440903\nparC\t4421000\t4423000\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(a.gene_at(4439000), Some("gyrB"));
        assert_eq!(a.gene_at(4440903), Some("gyrB"));
        assert_eq!(a.gene_at(4438489), Some("gyrB"));
        assert_eq!(a.gene_at(4430000), None);
        assert_eq!(map_position_to_gene(&a, 4430000), INTERGENIC);
        assert_eq!(a.gene_at(1), None);
        assert_eq!(a.gene_at(u64::MAX), None);
        // sorted on load
        assert_eq!(a.intervals()[0].name, "parC");
    }

    #[test]
    fn empty_stream() {
        let a = parse_gene_annotation(&b""[..]).unwrap();
        assert!(a.is_empty());
        assert_eq!(a.gene_at(100), None);
    }

    #[test]
    fn overlap_is_reported_with_both_names() {
        let err = parse_gene_annotation("a\t1\t10\nb\t10\t20\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('a') && msg.contains('b'), "{msg}");
    }

    #[test]
    fn inverted_interval_rejected() {
        let err = parse_gene_annotation("a\t10\t1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data { row: 1, .. }));
    }

    #[test]
    fn comments_skipped() {
        let a = parse_gene_annotation("# gene\tstart\tend\n\nrpsL\t2540000\t2541000\n".as_bytes())
            .unwrap();
        assert_eq!(a.gene_at(2540434), Some("rpsL"));
    }
}
