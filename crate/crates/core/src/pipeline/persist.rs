//! Versioned, checksummed model files.
//!
//! Layout: magic `AMRM`, u32 version, u8 kind tag, u64 payload length, u32 CRC32 of the
//! payload, then the bincode payload. Integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SnpMatrix;
use crate::error::{Error, Result};
use crate::gbt::{FeatureMatrix, GbtModel, RandomForest};
use crate::nn::CnnModel;

const MAGIC: &[u8; 4] = b"AMRM";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4;

/// Any fitted model the pipeline produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SavedModel {
    Cnn32(CnnModel<f32>),
    Cnn64(CnnModel<f64>),
    Gbt(GbtModel),
    Rf(RandomForest),
}

impl SavedModel {
    fn tag(&self) -> u8 {
        match self {
            SavedModel::Cnn32(_) => 1,
            SavedModel::Cnn64(_) => 2,
            SavedModel::Gbt(_) => 3,
            SavedModel::Rf(_) => 4,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        tag_name(self.tag())
    }

    /// Resistance probabilities for the given matrix rows.
    pub fn predict_rows(&self, matrix: &SnpMatrix, rows: &[usize]) -> Result<Vec<f64>> {
        match self {
            SavedModel::Cnn32(m) => m.predict_rows(matrix, rows),
            SavedModel::Cnn64(m) => m.predict_rows(matrix, rows),
            SavedModel::Gbt(m) => m.predict_proba(&FeatureMatrix::from_snp(matrix, rows)),
            SavedModel::Rf(m) => m.predict_proba(&FeatureMatrix::from_snp(matrix, rows)),
        }
    }

    pub fn into_gbt(self) -> Result<GbtModel> {
        match self {
            SavedModel::Gbt(m) => Ok(m),
            other => Err(Error::Container(format!(
                "expected a gbt model, found {}",
                other.kind_name()
            ))),
        }
    }
}

fn tag_name(tag: u8) -> &'static str {
    match tag {
        1 => "cnn32",
        2 => "cnn64",
        3 => "gbt",
        4 => "rf",
        _ => "unknown",
    }
}

pub fn encode_model(model: &SavedModel) -> Result<Vec<u8>> {
    let payload = bincode::serialize(model).map_err(|e| Error::Container(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.push(model.tag());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<SavedModel> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Container("not a model file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CONTAINER_VERSION {
        return Err(Error::Version {
            expected: CONTAINER_VERSION,
            found: version,
        });
    }
    let tag = bytes[8];
    let len = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let expected = u32_at(17);
    let payload = &bytes[HEADER_LEN..];
    let found = crc32fast::hash(payload);
    if payload.len() as u64 != len || found != expected {
        return Err(Error::Checksum { expected, found });
    }
    let model: SavedModel =
        bincode::deserialize(payload).map_err(|e| Error::Container(e.to_string()))?;
    if model.tag() != tag {
        return Err(Error::Container(format!(
            "header says {} but payload holds {}",
            tag_name(tag),
            model.kind_name()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    decode_model(&fs::read(path)?)
}
