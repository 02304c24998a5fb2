use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::{ForestConfig, GbtConfig};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Xgb,
    Rf,
    Ensemble,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Cnn, ModelKind::Xgb, ModelKind::Rf, ModelKind::Ensemble];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Xgb => "xgb",
            ModelKind::Rf => "rf",
            ModelKind::Ensemble => "ensemble",
        }
    }

    /// Row label in report tables.
    pub fn display(self) -> &'static str {
        match self {
            ModelKind::Cnn => "CNN",
            ModelKind::Xgb => "XGBoost",
            ModelKind::Rf => "Random Forest",
            ModelKind::Ensemble => "Ensemble (CNN+XGBoost)",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnn" => Ok(ModelKind::Cnn),
            "xgb" | "gbt" | "xgboost" => Ok(ModelKind::Xgb),
            "rf" | "forest" => Ok(ModelKind::Rf),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Samples x loci token matrix (optionally gzipped).
    pub snp_matrix: PathBuf,
    /// Long-format `sample, antibiotic, label` table.
    pub phenotypes: PathBuf,
    /// Tab-separated `start end gene` intervals; loci outside every interval are intergenic.
    #[serde(default)]
    pub annotation: Option<PathBuf>,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
}

fn default_delimiter() -> String {
    "\t".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Share of the training part held out for early stopping.
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnSection {
    pub precision: Precision,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for CnnSection {
    fn default() -> Self {
        CnnSection {
            precision: Precision::F32,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub top_k: usize,
    pub svg: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { top_k: 10, svg: true }
    }
}

/// Everything a full run needs; read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Empty means every antibiotic in the phenotype table.
    #[serde(default)]
    pub antibiotics: Vec<String>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub cnn: CnnSection,
    #[serde(default)]
    pub gbt: GbtConfig,
    #[serde(default)]
    pub rf: ForestConfig,
    #[serde(default)]
    pub explain: ExplainConfig,
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

impl ExperimentConfig {
    /// Default settings for the given inputs.
    pub fn new(snp_matrix: PathBuf, phenotypes: PathBuf, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir,
            antibiotics: Vec::new(),
            models: default_models(),
            data: DataConfig {
                snp_matrix,
                phenotypes,
                annotation: None,
                delimiter: default_delimiter(),
            },
            split: SplitConfig::default(),
            cnn: CnnSection::default(),
            gbt: GbtConfig::default(),
            rf: ForestConfig::default(),
            explain: ExplainConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.snp_matrix);
        fix(&mut self.data.phenotypes);
        if let Some(a) = self.data.annotation.as_mut() {
            fix(a);
        }
    }

    pub fn delimiter(&self) -> Result<u8> {
        match self.data.delimiter.as_bytes() {
            [b] => Ok(*b),
            _ if self.data.delimiter == "\\t" => Ok(b'\t'),
            _ => Err(Error::Config(format!(
                "delimiter must be a single byte, got {:?}",
                self.data.delimiter
            ))),
        }
    }

    pub fn runs(&self, model: ModelKind) -> bool {
        self.models.contains(&model)
    }

    /// Checks values and that every input file exists.
    pub fn validate(&self) -> Result<()> {
        self.delimiter()?;
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) || !(0.0..1.0).contains(&s.val_fraction) {
            return Err(Error::Config(
                "test_fraction must be in (0, 1) and val_fraction in [0, 1)".into(),
            ));
        }
        let mut inputs = vec![&self.data.snp_matrix, &self.data.phenotypes];
        inputs.extend(self.data.annotation.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
