//! Planted-motif datasets with a known labeling rule, used to check that models can learn
//! sparse local sequence signals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{write_snp_matrix, MatrixFormat, SnpMatrix, N_TOKENS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MotifSpec {
    pub n_samples: usize,
    pub seq_len: usize,
    pub positive_fraction: f64,
    pub motif: Vec<u8>,
    /// Locus index at which positives carry the motif.
    pub locus: usize,
    /// Per-locus probability that a sample differs from the reference token.
    pub variation: f64,
    pub seed: u64,
}

impl MotifSpec {
    /// 600 sequences of 2,048 loci, 25% positive, motif `G A T` planted at locus 1,000,
    /// 10% variation around the reference.
    pub fn standard(seed: u64) -> Self {
        MotifSpec {
            n_samples: 600,
            seq_len: 2048,
            positive_fraction: 0.25,
            motif: vec![2, 0, 3],
            locus: 1000,
            variation: 0.1,
            seed,
        }
    }
}

fn first_occurrence(seq: &[u8], motif: &[u8]) -> Option<usize> {
    seq.windows(motif.len()).position(|w| w == motif)
}

/// Rewrites the first token of each motif occurrence until none is left.
fn scrub(seq: &mut [u8], motif: &[u8], rng: &mut ChaCha8Rng) {
    while let Some(at) = first_occurrence(seq, motif) {
        seq[at] = loop {
            let t = rng.gen_range(0..N_TOKENS as u8);
            if t != motif[0] {
                break t;
            }
        };
    }
}

/// Generates a matrix and labels where label 1 iff the motif occurs in the sequence.
///
/// A random reference sequence is drawn once; each sample copies it and replaces each locus
/// with probability `variation` by a different random token, like the sparse variation of an
/// aligned SNP panel. Every motif occurrence is then scrubbed and positives get the motif
/// written at `locus`. Positions are `1000 + 10 * i`, sample ids `syn<i>`.
pub fn planted_motif(spec: &MotifSpec) -> Result<(SnpMatrix, Vec<u8>)> {
    let k = spec.motif.len();
    if k == 0 || spec.locus + k > spec.seq_len {
        return Err(Error::Config(format!(
            "motif of length {k} at locus {} does not fit in {} loci",
            spec.locus, spec.seq_len
        )));
    }
    if spec.motif.iter().any(|&t| t as usize >= N_TOKENS) {
        return Err(Error::Config("motif tokens must be in 0..4".into()));
    }
    if !(0.0..=1.0).contains(&spec.variation) {
        return Err(Error::Config("variation must be in [0, 1]".into()));
    }
    let n_pos = (spec.n_samples as f64 * spec.positive_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<u8> = (0..spec.n_samples).map(|i| (i < n_pos) as u8).collect();
    labels.shuffle(&mut rng);

    let mut reference: Vec<u8> = (0..spec.seq_len)
        .map(|_| rng.gen_range(0..N_TOKENS as u8))
        .collect();
    scrub(&mut reference, &spec.motif, &mut rng);
    let mut tokens = Vec::with_capacity(spec.n_samples * spec.seq_len);
    for &label in &labels {
        let mut seq = reference.clone();
        for t in seq.iter_mut() {
            if rng.gen_bool(spec.variation) {
                *t = (*t + rng.gen_range(1..N_TOKENS as u8)) % N_TOKENS as u8;
            }
        }
        scrub(&mut seq, &spec.motif, &mut rng);
        if label == 1 {
            seq[spec.locus..spec.locus + k].copy_from_slice(&spec.motif);
        }
        tokens.extend(seq);
    }
    let ids = (0..spec.n_samples).map(|i| format!("syn{i}")).collect();
    let positions = (0..spec.seq_len as u64).map(|i| 1000 + 10 * i).collect();
    Ok((SnpMatrix::new(ids, positions, tokens)?, labels))
}

/// Writes `snps.tsv` and a long-format `phenotypes.tsv` (one antibiotic) into `dir`.
pub fn write_dataset(dir: &Path, matrix: &SnpMatrix, labels: &[u8], antibiotic: &str) -> Result<(PathBuf, PathBuf)> {
    let snps = dir.join("snps.tsv");
    write_snp_matrix(BufWriter::new(File::create(&snps)?), matrix, &MatrixFormat::default())?;
    let phenos = dir.join("phenotypes.tsv");
    let mut w = BufWriter::new(File::create(&phenos)?);
    writeln!(w, "sample_id\tantibiotic\tlabel")?;
    for (id, y) in matrix.sample_ids().iter().zip(labels) {
        writeln!(w, "{id}\t{antibiotic}\t{y}")?;
    }
    w.flush()?;
    Ok((snps, phenos))
}
