use serde::{Deserialize, Serialize};

use crate::data::{decode_token, map_position_to_gene, parse_position, GeneAnnotation};
use crate::error::{Error, Result};
use crate::explain::treeshap::ShapValues;
use crate::gbt::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub name: String,
    pub mean_abs_shap: f64,
}

/// Features by descending mean |SHAP|; ties go to the lower feature index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking(pub Vec<RankedFeature>);

pub fn mean_abs_shap_ranking(shap: &ShapValues) -> Result<FeatureRanking> {
    if shap.values.is_empty() {
        return Err(Error::Input("no samples to rank features over".into()));
    }
    let n = shap.n_samples() as f64;
    let mut sums = vec![0.0; shap.n_features()];
    for row in &shap.values {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.abs();
        }
    }
    let mut ranked: Vec<RankedFeature> = sums
        .into_iter()
        .enumerate()
        .map(|(index, s)| RankedFeature {
            index,
            name: shap.feature_names[index].clone(),
            mean_abs_shap: s / n,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.mean_abs_shap
            .total_cmp(&a.mean_abs_shap)
            .then(a.index.cmp(&b.index))
    });
    Ok(FeatureRanking(ranked))
}

/// One point of a beeswarm plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub feature: String,
    pub sample: String,
    pub shap: f64,
    /// Nucleotide symbol of the sample at that locus.
    pub token: char,
}

/// Long-format rows for the `top_k` ranked features (clamped to the feature count),
/// feature-major in rank order, samples in input order.
pub fn summary_export(
    shap: &ShapValues,
    ranking: &FeatureRanking,
    x: &FeatureMatrix,
    sample_ids: &[String],
    top_k: usize,
) -> Result<Vec<SummaryRow>> {
    if x.n_rows() != shap.n_samples() || sample_ids.len() != shap.n_samples() {
        return Err(Error::Input(format!(
            "{} SHAP rows, {} feature rows, {} sample ids",
            shap.n_samples(),
            x.n_rows(),
            sample_ids.len()
        )));
    }
    if x.n_features() != shap.n_features() {
        return Err(Error::Input("SHAP and feature widths differ".into()));
    }
    let mut rows = Vec::new();
    for feature in ranking.0.iter().take(top_k) {
        for (s, id) in sample_ids.iter().enumerate() {
            let token = x.get(s, feature.index);
            rows.push(SummaryRow {
                feature: feature.name.clone(),
                sample: id.clone(),
                shap: shap.values[s][feature.index],
                token: decode_token(token)
                    .ok_or_else(|| Error::InvalidData(format!("token {token} outside 0..4")))?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneReportRow {
    pub rank: usize,
    pub feature: String,
    pub position: u64,
    pub gene: String,
    pub mean_abs_shap: f64,
}

/// Maps the `top_k` ranked loci to annotated genes.
pub fn gene_report(
    ranking: &FeatureRanking,
    annotation: &GeneAnnotation,
    top_k: usize,
) -> Result<Vec<GeneReportRow>> {
    ranking
        .0
        .iter()
        .take(top_k)
        .enumerate()
        .map(|(i, f)| {
            let position = parse_position(&f.name).ok_or_else(|| {
                Error::InvalidData(format!("feature name {:?} has no genomic position", f.name))
            })?;
            Ok(GeneReportRow {
                rank: i + 1,
                feature: f.name.clone(),
                position,
                gene: map_position_to_gene(annotation, position).to_string(),
                mean_abs_shap: f.mean_abs_shap,
            })
        })
        .collect()
}
