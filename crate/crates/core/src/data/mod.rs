//! Input parsing, stratified splitting and class weighting.

pub mod annotation;
pub mod io;
pub mod phenotype;
pub mod snp;
pub mod split;

pub use annotation::{map_position_to_gene, parse_gene_annotation, GeneAnnotation, GeneInterval, INTERGENIC};
pub use io::open_input;
pub use phenotype::{parse_phenotypes, PhenotypeTable, STANDARD_ANTIBIOTICS};
pub use snp::{
    decode_token, encode_token, parse_position, parse_snp_matrix, write_snp_matrix, CellEncoding,
    MatrixFormat, SnpMatrix, N_TOKENS,
};
pub use split::{protocol_split, stratified_split, ClassWeights, DatasetSplit, SplitFractions};
