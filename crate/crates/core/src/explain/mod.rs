//! SHAP attributions for boosted trees, feature rankings and gene mapping of top loci.

pub mod ranking;
pub mod treeshap;

pub use ranking::{
    gene_report, mean_abs_shap_ranking, summary_export, FeatureRanking, GeneReportRow, RankedFeature,
    SummaryRow,
};
pub use treeshap::{
    brute_force_shap, expected_margin, tree_expectation, tree_shap, tree_shap_sample, ShapValues,
};
