use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::data::{
    open_input, parse_gene_annotation, parse_phenotypes, parse_snp_matrix, protocol_split, CellEncoding,
    ClassWeights, DatasetSplit, GeneAnnotation, MatrixFormat, PhenotypeTable, SnpMatrix,
};
use crate::ensemble::{classify, ensemble_proba};
use crate::error::{Error, Result};
use crate::explain::{gene_report, mean_abs_shap_ranking, summary_export, tree_shap, GeneReportRow};
use crate::gbt::{fit_gbt, fit_random_forest, BoostHistory, FeatureMatrix, GbtModel, RandomForest};
use crate::metrics::{evaluate, MetricReport};
use crate::nn::{build_amr_cnn, train, Real, TrainHistory};
use crate::pipeline::config::{ExperimentConfig, ModelKind, Precision};
use crate::pipeline::manifest::{hash_tree, sha256_file, sha256_hex, Manifest};
use crate::pipeline::persist::{save_model, SavedModel};
use crate::pipeline::report::{beeswarm_svg, emit_reports, write_json, ReportFormat};
use crate::seed::derive_seed;

/// Parsed inputs shared by every antibiotic.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrix: SnpMatrix,
    pub phenotypes: PhenotypeTable,
    pub annotation: GeneAnnotation,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let format = MatrixFormat {
        delimiter: cfg.delimiter()?,
        cells: CellEncoding::Auto,
    };
    let matrix = parse_snp_matrix(open_input(&cfg.data.snp_matrix)?, &format)?;
    let phenotypes = parse_phenotypes(open_input(&cfg.data.phenotypes)?, format.delimiter)?;
    let annotation = match &cfg.data.annotation {
        Some(p) => parse_gene_annotation(open_input(p)?)?,
        None => GeneAnnotation::new(Vec::new())?,
    };
    info!(
        "loaded {} samples x {} loci, antibiotics {:?}",
        matrix.n_samples(),
        matrix.n_loci(),
        phenotypes.antibiotics().collect::<Vec<_>>()
    );
    Ok(Dataset {
        matrix,
        phenotypes,
        annotation,
    })
}

/// Sizes the global worker pool. Only the first call has an effect.
pub fn configure_workers(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Seed of one pipeline stage for one antibiotic.
pub fn stage_seed(global: u64, antibiotic: &str, stage: &str) -> u64 {
    derive_seed(global, &format!("{antibiotic}/{stage}"))
}

/// The labeled samples of one antibiotic with its split and class weights.
/// All models of the antibiotic share this split.
#[derive(Debug, Clone)]
pub struct Task {
    pub antibiotic: String,
    /// Labeled samples only, in matrix order.
    pub matrix: SnpMatrix,
    pub labels: Vec<u8>,
    pub split: DatasetSplit,
    pub weights: ClassWeights,
}

impl Task {
    pub fn labels_of(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn features(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix::from_snp(&self.matrix, idx)
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.split
            .test
            .iter()
            .map(|&i| self.matrix.sample_ids()[i].clone())
            .collect()
    }
}

pub fn prepare_task(cfg: &ExperimentConfig, data: &Dataset, antibiotic: &str) -> Result<Task> {
    let (rows, labels) = data.phenotypes.labeled_rows(antibiotic, &data.matrix)?;
    let matrix = data.matrix.select_rows(&rows);
    let split = protocol_split(
        &labels,
        cfg.split.test_fraction,
        cfg.split.val_fraction,
        stage_seed(cfg.seed, antibiotic, "split"),
    )?;
    let train_labels: Vec<u8> = split.train.iter().map(|&i| labels[i]).collect();
    let weights = ClassWeights::from_labels(&train_labels)?;
    Ok(Task {
        antibiotic: antibiotic.to_string(),
        matrix,
        labels,
        split,
        weights,
    })
}

fn fit_cnn<T: Real>(cfg: &ExperimentConfig, task: &Task) -> Result<(crate::nn::CnnModel<T>, TrainHistory)> {
    let mut model = build_amr_cnn::<T>(task.matrix.n_loci(), stage_seed(cfg.seed, &task.antibiotic, "cnn-init"))?;
    let mut train_cfg = cfg.cnn.train.clone();
    train_cfg.seed = stage_seed(cfg.seed, &task.antibiotic, "cnn");
    let history = train(&mut model, &task.matrix, &task.labels, &task.split, &task.weights, &train_cfg)?;
    Ok((model, history))
}

pub fn train_cnn(cfg: &ExperimentConfig, task: &Task) -> Result<(SavedModel, TrainHistory)> {
    Ok(match cfg.cnn.precision {
        Precision::F32 => {
            let (m, h) = fit_cnn::<f32>(cfg, task)?;
            (SavedModel::Cnn32(m), h)
        }
        Precision::F64 => {
            let (m, h) = fit_cnn::<f64>(cfg, task)?;
            (SavedModel::Cnn64(m), h)
        }
    })
}

pub fn train_gbt(cfg: &ExperimentConfig, task: &Task) -> Result<(GbtModel, BoostHistory)> {
    let mut params = cfg.gbt.clone();
    params.seed = stage_seed(cfg.seed, &task.antibiotic, "xgb");
    let x = task.features(&task.split.train);
    let y = task.labels_of(&task.split.train);
    let vx = task.features(&task.split.val);
    let vy = task.labels_of(&task.split.val);
    let validation = (!task.split.val.is_empty()).then_some((&vx, vy.as_slice()));
    fit_gbt(&x, &y, &task.weights, &params, validation)
}

pub fn train_rf(cfg: &ExperimentConfig, task: &Task) -> Result<RandomForest> {
    let mut params = cfg.rf.clone();
    params.seed = stage_seed(cfg.seed, &task.antibiotic, "rf");
    fit_random_forest(
        &task.features(&task.split.train),
        &task.labels_of(&task.split.train),
        &params,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AntibioticResult {
    pub antibiotic: String,
    /// (susceptible, resistant) over all labeled samples.
    pub class_counts: (usize, usize),
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seeds: BTreeMap<String, u64>,
    pub metrics: BTreeMap<ModelKind, MetricReport>,
    pub cnn_history: Option<TrainHistory>,
    pub gbt_history: Option<BoostHistory>,
    /// Artifact name to path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub top_genes: Vec<GeneReportRow>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntibioticFailure {
    pub antibiotic: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub antibiotics: Vec<AntibioticResult>,
    pub failures: Vec<AntibioticFailure>,
}

impl ExperimentResult {
    /// Metric reports only, keyed by antibiotic then model; free of timings.
    pub fn metrics_by_antibiotic(&self) -> BTreeMap<String, BTreeMap<ModelKind, MetricReport>> {
        self.antibiotics
            .iter()
            .map(|a| (a.antibiotic.clone(), a.metrics.clone()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Writes `sample,label,<model>...` with full-precision probabilities.
pub fn write_predictions(
    path: &Path,
    ids: &[String],
    labels: &[u8],
    columns: &BTreeMap<ModelKind, Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample", "label"];
    header.extend(columns.keys().map(|k| k.name()));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut record = vec![id.clone(), labels[i].to_string()];
        record.extend(columns.values().map(|c| c[i].to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores one model's column of a predictions file written by [`write_predictions`].
pub fn evaluate_predictions(path: &Path, model: ModelKind) -> Result<MetricReport> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == model.name())
        .ok_or_else(|| Error::Input(format!("no {} column in {}", model.name(), path.display())))?;
    let (mut y, mut p) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |c: usize| Error::Data {
            row: i + 2,
            column: c + 1,
            message: "not a number".into(),
        };
        y.push(rec[1].parse::<u8>().map_err(|_| bad(1))?);
        p.push(rec[col].parse::<f64>().map_err(|_| bad(col))?);
    }
    evaluate(&y, &classify(&p))
}

/// Scores every model column present in a predictions file.
pub fn evaluate_prediction_file(path: &Path) -> Result<BTreeMap<ModelKind, MetricReport>> {
    let headers = csv::Reader::from_path(path)?.headers()?.clone();
    let mut out = BTreeMap::new();
    for model in ModelKind::ALL {
        if headers.iter().any(|h| h == model.name()) {
            out.insert(model, evaluate_predictions(path, model)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no model columns in {}", path.display())));
    }
    Ok(out)
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
    out
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// SHAP on the test rows of `task`: summary, ranking and gene report files (plus the
/// beeswarm SVG when enabled) in `dir`. Returns the gene report and artifact paths.
pub fn write_explanations(
    cfg: &ExperimentConfig,
    task: &Task,
    gbt: &GbtModel,
    annotation: &GeneAnnotation,
    dir: &Path,
) -> Result<(Vec<GeneReportRow>, BTreeMap<String, String>)> {
    fs::create_dir_all(dir)?;
    let test = &task.split.test;
    let x = task.features(test);
    let shap = tree_shap(gbt, &x, task.matrix.feature_names())?;
    let ranking = mean_abs_shap_ranking(&shap)?;
    let k = cfg.explain.top_k;
    let summary = summary_export(&shap, &ranking, &x, &task.test_ids(), k)?;
    let genes = gene_report(&ranking, annotation, k)?;

    let mut artifacts = BTreeMap::new();
    let mut record = |name: &str, path: PathBuf| {
        artifacts.insert(name.to_string(), rel(&cfg.output_dir, &path));
    };
    let path = dir.join("shap_summary.csv");
    write_rows(&path, &summary)?;
    record("shap_summary", path);
    let path = dir.join("feature_ranking.csv");
    write_rows(&path, &ranking.0)?;
    record("feature_ranking", path);
    let path = dir.join("gene_report.csv");
    write_rows(&path, &genes)?;
    record("gene_report", path);
    let path = dir.join("gene_report.json");
    write_json(&path, &genes)?;
    record("gene_report_json", path);
    if cfg.explain.svg {
        let path = dir.join("shap_beeswarm.svg");
        let title = format!("{}: top {k} loci by mean |SHAP| (log-odds)", task.antibiotic);
        fs::write(&path, beeswarm_svg(&title, &summary))?;
        record("shap_beeswarm", path);
    }
    Ok((genes, artifacts))
}

/// Splits, trains, evaluates and explains one antibiotic, writing artifacts under `out/<antibiotic>/`.
pub fn run_antibiotic(cfg: &ExperimentConfig, data: &Dataset, antibiotic: &str) -> Result<AntibioticResult> {
    let out = &cfg.output_dir;
    let dir = out.join(antibiotic);
    fs::create_dir_all(&dir)?;
    let task = prepare_task(cfg, data, antibiotic)?;
    let mut result = AntibioticResult {
        antibiotic: antibiotic.to_string(),
        class_counts: data.phenotypes.class_counts(antibiotic),
        n_train: task.split.train.len(),
        n_val: task.split.val.len(),
        n_test: task.split.test.len(),
        ..Default::default()
    };
    for stage in ["split", "cnn-init", "cnn", "xgb", "rf"] {
        result
            .seeds
            .insert(stage.to_string(), stage_seed(cfg.seed, antibiotic, stage));
    }
    let test = &task.split.test;
    let y_test = task.labels_of(test);
    let mut probs: BTreeMap<ModelKind, Vec<f64>> = BTreeMap::new();
    let mut timings = BTreeMap::new();
    let both = cfg.runs(ModelKind::Cnn) && cfg.runs(ModelKind::Xgb);

    if cfg.runs(ModelKind::Cnn) {
        let (model, history) = timed(&mut timings, "cnn_train", || train_cnn(cfg, &task))?;
        probs.insert(ModelKind::Cnn, model.predict_rows(&task.matrix, test)?);
        let path = dir.join("cnn.amrm");
        save_model(&model, &path)?;
        result.artifacts.insert("cnn_model".into(), rel(out, &path));
        result.cnn_history = Some(history);
    }
    let mut gbt = None;
    if cfg.runs(ModelKind::Xgb) {
        let (model, history) = timed(&mut timings, "xgb_train", || train_gbt(cfg, &task))?;
        probs.insert(ModelKind::Xgb, model.predict_proba(&task.features(test))?);
        let path = dir.join("xgb.amrm");
        let saved = SavedModel::Gbt(model);
        save_model(&saved, &path)?;
        result.artifacts.insert("xgb_model".into(), rel(out, &path));
        result.gbt_history = Some(history);
        gbt = Some(saved.into_gbt()?);
    }
    if cfg.runs(ModelKind::Rf) {
        let model = timed(&mut timings, "rf_train", || train_rf(cfg, &task))?;
        probs.insert(ModelKind::Rf, model.predict_proba(&task.features(test))?);
        let path = dir.join("rf.amrm");
        save_model(&SavedModel::Rf(model), &path)?;
        result.artifacts.insert("rf_model".into(), rel(out, &path));
    }
    if cfg.runs(ModelKind::Ensemble) && both {
        let p = ensemble_proba(&[&probs[&ModelKind::Cnn], &probs[&ModelKind::Xgb]], None)?;
        probs.insert(ModelKind::Ensemble, p);
    }
    for (model, p) in &probs {
        result.metrics.insert(*model, evaluate(&y_test, &classify(p))?);
    }
    let pred_path = dir.join("predictions.csv");
    write_predictions(&pred_path, &task.test_ids(), &y_test, &probs)?;
    result.artifacts.insert("predictions".into(), rel(out, &pred_path));

    if let Some(gbt) = &gbt {
        let (genes, artifacts) = timed(&mut timings, "explain", || {
            write_explanations(cfg, &task, gbt, &data.annotation, &dir)
        })?;
        result.top_genes = genes;
        result.artifacts.extend(artifacts);
    }
    result.timings = timings;
    Ok(result)
}

/// Full protocol over every selected antibiotic. A failing antibiotic is recorded and the
/// rest still run; setup problems (config, unreadable inputs) fail the whole run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let data = load_dataset(cfg)?;
    let antibiotics: Vec<String> = if cfg.antibiotics.is_empty() {
        data.phenotypes.antibiotics().map(str::to_string).collect()
    } else {
        cfg.antibiotics.clone()
    };
    if antibiotics.is_empty() {
        return Err(Error::Config("no antibiotics to run".into()));
    }
    let mut result = ExperimentResult {
        seed: cfg.seed,
        ..Default::default()
    };
    for ab in &antibiotics {
        info!("antibiotic {ab}");
        match run_antibiotic(cfg, &data, ab) {
            Ok(r) => result.antibiotics.push(r),
            Err(e) => {
                error!("{ab} failed: {e}");
                result.failures.push(AntibioticFailure {
                    antibiotic: ab.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let out = &cfg.output_dir;
    let mut formats = vec![ReportFormat::Csv, ReportFormat::Json];
    if cfg.explain.svg {
        formats.push(ReportFormat::Svg);
    }
    emit_reports(&result, out, &formats)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    write_json(&out.join("result.json"), &result)?;
    write_manifest(cfg, &result)?;
    Ok(result)
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Records config and input checksums, seeds, and checksums of every deterministic output.
/// `result.json` carries wall-clock timings and is left out of the output hashes.
pub fn write_manifest(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<PathBuf> {
    let mut manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(cfg.to_toml()?.as_bytes()),
        ..Default::default()
    };
    let mut inputs = vec![&cfg.data.snp_matrix, &cfg.data.phenotypes];
    inputs.extend(cfg.data.annotation.as_ref());
    for p in inputs {
        manifest
            .inputs
            .insert(p.display().to_string(), sha256_file(p)?);
    }
    manifest.seeds.insert("global".into(), cfg.seed);
    for ab in &result.antibiotics {
        for (stage, s) in &ab.seeds {
            manifest.seeds.insert(format!("{}/{stage}", ab.antibiotic), *s);
        }
    }
    manifest.outputs = hash_tree(&cfg.output_dir, &[MANIFEST_FILE, "result.json"])?;
    let path = cfg.output_dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_motif, write_dataset, MotifSpec};

    fn small_config(dir: &Path, out: &str) -> ExperimentConfig {
        let spec = MotifSpec {
            n_samples: 120,
            seq_len: 64,
            locus: 20,
            variation: 0.2,
            ..MotifSpec::standard(5)
        };
        let (m, y) = planted_motif(&spec).unwrap();
        let (snps, phenos) = write_dataset(dir, &m, &y, "CIP").unwrap();
        let mut cfg = ExperimentConfig::new(snps, phenos, dir.join(out));
        cfg.seed = 11;
        cfg.cnn.train.epochs = 2;
        cfg.gbt.n_rounds = 20;
        cfg.rf.n_trees = 10;
        cfg.explain.top_k = 3;
        cfg
    }

    #[test]
    fn run_writes_reports_and_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&small_config(dir.path(), "a")).unwrap();
        let b = run_experiment(&small_config(dir.path(), "b")).unwrap();
        assert!(a.failures.is_empty());
        let models: Vec<_> = a.antibiotics[0].metrics.keys().copied().collect();
        assert_eq!(models, ModelKind::ALL.to_vec());
        assert_eq!(a.metrics_by_antibiotic(), b.metrics_by_antibiotic());
        let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
        assert_eq!(read("a", "metrics.json"), read("b", "metrics.json"));
        assert_eq!(read("a", "CIP/predictions.csv"), read("b", "CIP/predictions.csv"));
        assert_eq!(read("a", "CIP/xgb.amrm"), read("b", "CIP/xgb.amrm"));
        for f in ["metrics.csv", "metrics_CIP.svg", "CIP/shap_summary.csv", "CIP/gene_report.json", "CIP/shap_beeswarm.svg", "manifest.json"] {
            assert!(dir.path().join("a").join(f).is_file(), "{f}");
        }
        let manifest: Manifest = serde_json::from_slice(&read("a", "manifest.json")).unwrap();
        assert_eq!(manifest.seeds["global"], 11);
        assert!(manifest.outputs.contains_key("CIP/cnn.amrm"));
        assert!(!manifest.outputs.contains_key("result.json"));
    }

    #[test]
    fn stored_predictions_rescore_to_the_same_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), "out");
        cfg.models = vec![ModelKind::Xgb, ModelKind::Rf];
        let result = run_experiment(&cfg).unwrap();
        let ab = &result.antibiotics[0];
        assert!(!ab.metrics.contains_key(&ModelKind::Ensemble));
        let path = cfg.output_dir.join("CIP/predictions.csv");
        for model in [ModelKind::Xgb, ModelKind::Rf] {
            assert_eq!(evaluate_predictions(&path, model).unwrap(), ab.metrics[&model]);
        }
        let rescored = evaluate_prediction_file(&path).unwrap();
        assert_eq!(
            crate::pipeline::report::metrics_table_csv(&rescored).unwrap().into_bytes(),
            fs::read(cfg.output_dir.join("metrics_CIP.csv")).unwrap()
        );
        assert!(matches!(evaluate_predictions(&path, ModelKind::Cnn), Err(Error::Input(_))));
    }

    #[test]
    fn unknown_antibiotic_is_a_recorded_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), "out");
        cfg.models = vec![ModelKind::Xgb];
        cfg.antibiotics = vec!["XYZ".into(), "CIP".into()];
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.antibiotics.len(), 1);
        assert_eq!(result.failures[0].antibiotic, "XYZ");
    }

    #[test]
    fn stage_seeds_differ_by_antibiotic_and_stage() {
        assert_ne!(stage_seed(1, "CIP", "split"), stage_seed(1, "GEN", "split"));
        assert_ne!(stage_seed(1, "CIP", "split"), stage_seed(1, "CIP", "xgb"));
        assert_eq!(stage_seed(1, "CIP", "rf"), stage_seed(1, "CIP", "rf"));
    }
}
