//! On-disk JSON artifacts and their provenance hashes.

use std::collections::BTreeMap;
use std::path::Path;

use gst_vqa::eval::EvalReport;
use gst_vqa::filterbank::FilterBankConfig;
use gst_vqa::video::SUPPORTED_SCALES;
use gst_vqa::{Error, Result, SpatialModel, SvrModel, TgreedFeatures};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FEATURES_FORMAT: &str = "gst-vqa-features/1";
pub const MODEL_FORMAT: &str = "gst-vqa-model/1";
pub const TRAIN_REPORT_FORMAT: &str = "gst-vqa-train-report/1";
pub const EVAL_REPORT_FORMAT: &str = "gst-vqa-eval-report/1";

/// Everything that changes the numbers in a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub scales: Vec<u32>,
    pub filter_bank: FilterBankConfig,
    pub spatial_model: SpatialModel,
    /// Spatial metric runs on frames block-averaged by `2^spatial_prescale`.
    pub spatial_prescale: u32,
}

impl FeatureConfig {
    pub fn new(spatial_model: SpatialModel, spatial_prescale: u32) -> Self {
        FeatureConfig {
            scales: SUPPORTED_SCALES.to_vec(),
            filter_bank: FilterBankConfig::default(),
            spatial_model,
            spatial_prescale,
        }
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRecord {
    pub model: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureArtifact {
    pub format: String,
    pub pair_id: String,
    pub content_id: String,
    pub config: FeatureConfig,
    pub config_hash: String,
    pub inputs: BTreeMap<String, InputRecord>,
    pub ref_fps: gst_vqa::Fps,
    pub dist_fps: gst_vqa::Fps,
    /// `None` for external spatial models until scores are joined in.
    pub spatial: Option<SpatialRecord>,
    pub temporal: TgreedFeatures,
    /// The fused 15-vector; absent while the spatial entry is a placeholder.
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub config_hash: String,
    pub spatial_model: String,
    pub regressor: SvrModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub pair_id: String,
    pub subset: String,
    pub mos: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub hyperparams: gst_vqa::Hyperparams,
    pub val_rmse: Vec<Option<f64>>,
    pub predictions: Vec<PairPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub format: String,
    pub config_hash: String,
    pub spatial_model: String,
    pub report: EvalReport,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, format: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == format => {}
        other => {
            return Err(Error::Format(format!(
                "{}: expected a {format} artifact, found {other:?}",
                path.display()
            )))
        }
    }
    Ok(serde_json::from_value(value)?)
}
