//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use gst_vqa::eval::{self, EvalOptions};
use gst_vqa::fusion::{self, default_grid, Dataset, GstFeatureVector};
use gst_vqa::manifest::DatasetManifest;
use gst_vqa::spatial::{self, read_external_scores};
use gst_vqa::tgreed::compute_tgreed;
use gst_vqa::video::{block_mean_downsample, read_video, PixFormat, VideoMeta};
use gst_vqa::{Error, Fps, PlanarVideo, Result, SpatialIndex, SpatialModel};

use crate::artifacts::*;

/// How to open input videos. Y4M files ignore the geometry flags.
#[derive(Debug, Clone, Default)]
pub struct InputOptions {
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub fps: Option<Fps>,
    pub dist_fps: Option<Fps>,
}

impl InputOptions {
    fn meta(&self, path: &Path, fps: Option<Fps>) -> Result<VideoMeta> {
        let dims = match (self.width, self.height) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => return Err(Error::Argument("--width and --height go together".into())),
        };
        Ok(VideoMeta {
            path: path.to_path_buf(),
            pix_format: PixFormat::Yuv420p,
            declared_fps: fps,
            dims,
        })
    }
}

pub const MAX_PRESCALE: u32 = 6;

fn spatial_for(r: &PlanarVideo<u8>, d: &PlanarVideo<u8>, config: &FeatureConfig) -> Result<Option<SpatialIndex>> {
    if let SpatialModel::External(_) = config.spatial_model {
        return Ok(None);
    }
    let index = if config.spatial_prescale == 0 {
        spatial::spatial_index(r, d, &config.spatial_model)?
    } else {
        let f = 1usize << config.spatial_prescale;
        spatial::spatial_index(&block_mean_downsample(r, f)?, &block_mean_downsample(d, f)?, &config.spatial_model)?
    };
    Ok(Some(index))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Features for one pair. `dist_fps` overrides the distorted rate.
pub fn extract_pair(
    ref_path: &Path,
    dist_path: &Path,
    pair_id: &str,
    content_id: &str,
    inputs: &InputOptions,
    dist_fps: Option<Fps>,
    config: &FeatureConfig,
) -> Result<FeatureArtifact> {
    if config.spatial_prescale > MAX_PRESCALE {
        return Err(Error::Argument(format!(
            "--scale {} exceeds the maximum of {MAX_PRESCALE}",
            config.spatial_prescale
        )));
    }
    let r = read_video(&inputs.meta(ref_path, inputs.fps)?)?;
    let d = read_video(&inputs.meta(dist_path, dist_fps.or(inputs.dist_fps).or(inputs.fps))?)?;
    let temporal = compute_tgreed(&r, &d, &config.filter_bank)?;
    let spatial = spatial_for(&r, &d, config)?;
    let features = match &spatial {
        Some(s) => Some(GstFeatureVector::assemble(s, &temporal)?.0.to_vec()),
        None => None,
    };
    let mut records = BTreeMap::new();
    for (key, path) in [("ref", ref_path), ("dist", dist_path)] {
        records.insert(
            key.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: hash_file(path)?,
            },
        );
    }
    Ok(FeatureArtifact {
        format: FEATURES_FORMAT.into(),
        pair_id: pair_id.into(),
        content_id: content_id.into(),
        config: config.clone(),
        config_hash: config.hash()?,
        inputs: records,
        ref_fps: r.fps(),
        dist_fps: d.fps(),
        spatial: spatial.map(|s| SpatialRecord {
            model: s.model_name,
            value: s.value,
        }),
        temporal,
        features,
    })
}

pub fn feature_path(dir: &Path, pair_id: &str) -> PathBuf {
    dir.join(format!("{pair_id}.json"))
}

/// Single pair: writes `out`. Returns the artifact.
pub fn cmd_features_single(
    ref_path: &Path,
    dist_path: &Path,
    inputs: &InputOptions,
    config: &FeatureConfig,
    out: &Path,
) -> Result<FeatureArtifact> {
    let art = extract_pair(ref_path, dist_path, &stem(dist_path), &stem(ref_path), inputs, None, config)?;
    write_json(out, &art)?;
    Ok(art)
}

/// Every manifest row, one file per pair in `dir`.
pub fn cmd_features_manifest(
    manifest: &DatasetManifest,
    inputs: &InputOptions,
    config: &FeatureConfig,
    dir: &Path,
) -> Result<usize> {
    for row in &manifest.rows {
        let art = extract_pair(
            &row.ref_path,
            &row.dist_path,
            &row.pair_id,
            &row.content_id,
            inputs,
            Some(row.dist_fps),
            config,
        )?;
        write_json(&feature_path(dir, &row.pair_id), &art)?;
    }
    Ok(manifest.len())
}

/// External spatial scores keyed by (ref_id, dist_id).
pub type ScoreTable = HashMap<(String, String), SpatialIndex>;

pub fn load_scores(path: Option<&Path>) -> Result<Option<ScoreTable>> {
    let Some(path) = path else { return Ok(None) };
    let mut table = HashMap::new();
    for row in read_external_scores(path)? {
        let key = (row.ref_id.clone(), row.dist_id.clone());
        if table.insert(key, row.to_index()?).is_some() {
            return Err(Error::Data(format!(
                "duplicate external score for ({}, {})",
                row.ref_id, row.dist_id
            )));
        }
    }
    Ok(Some(table))
}

/// The fused vector of an artifact, joining an external score if needed.
pub fn fused_vector(art: &FeatureArtifact, scores: Option<&ScoreTable>) -> Result<Vec<f64>> {
    if let Some(f) = &art.features {
        return Ok(GstFeatureVector::from_slice(f)?.0.to_vec());
    }
    let want = art.config.spatial_model.name();
    let table = scores.ok_or_else(|| {
        Error::Data(format!(
            "pair {} has no spatial score; supply --external-scores for model {want}",
            art.pair_id
        ))
    })?;
    let s = table
        .get(&(art.content_id.clone(), art.pair_id.clone()))
        .ok_or_else(|| Error::Data(format!("no external score for ({}, {})", art.content_id, art.pair_id)))?;
    if s.model_name != want {
        return Err(Error::Data(format!(
            "external score for {} comes from {}, expected {want}",
            art.pair_id, s.model_name
        )));
    }
    Ok(GstFeatureVector::assemble(s, &art.temporal)?.0.to_vec())
}

/// Loads every pair's features; all must share one configuration.
pub struct LoadedFeatures {
    pub config_hash: String,
    pub spatial_model: String,
    pub vectors: Vec<Vec<f64>>,
}

pub fn load_features(manifest: &DatasetManifest, dir: &Path, scores: Option<&ScoreTable>) -> Result<LoadedFeatures> {
    if manifest.is_empty() {
        return Err(Error::Data("manifest has no rows".into()));
    }
    let missing: Vec<&str> = manifest
        .rows
        .iter()
        .filter(|r| !feature_path(dir, &r.pair_id).is_file())
        .map(|r| r.pair_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing features for pairs: {}", missing.join(", "))));
    }
    let mut hash: Option<(String, String)> = None;
    let mut vectors = Vec::with_capacity(manifest.len());
    for row in &manifest.rows {
        let art: FeatureArtifact = read_json(&feature_path(dir, &row.pair_id), FEATURES_FORMAT)?;
        if art.pair_id != row.pair_id {
            return Err(Error::Data(format!(
                "feature file for {} records pair {}",
                row.pair_id, art.pair_id
            )));
        }
        match &hash {
            None => hash = Some((art.config_hash.clone(), art.config.spatial_model.name().to_string())),
            Some((h, _)) if *h != art.config_hash => {
                return Err(Error::Data(format!(
                    "pair {} was extracted with config {} but earlier pairs used {h}; refusing to mix",
                    row.pair_id, art.config_hash
                )))
            }
            Some(_) => {}
        }
        vectors.push(fused_vector(&art, scores)?);
    }
    let (config_hash, spatial_model) = hash.expect("non-empty manifest");
    Ok(LoadedFeatures {
        config_hash,
        spatial_model,
        vectors,
    })
}

fn subset(manifest: &DatasetManifest, feats: &[Vec<f64>], rows: &[usize]) -> Dataset {
    Dataset {
        content_ids: rows.iter().map(|&i| manifest.rows[i].content_id.clone()).collect(),
        features: rows.iter().map(|&i| feats[i].clone()).collect(),
        mos: rows.iter().map(|&i| manifest.rows[i].mos).collect(),
    }
}

pub struct TrainOutput {
    pub model: ModelArtifact,
    pub report: TrainReport,
}

pub fn cmd_train(
    manifest: &DatasetManifest,
    loaded: &LoadedFeatures,
    seed: u64,
    fractions: [f64; 3],
) -> Result<TrainOutput> {
    let split = eval::split_by_content(manifest, fractions, seed)?;
    let train = subset(manifest, &loaded.vectors, &split.train);
    let val = subset(manifest, &loaded.vectors, &split.val);
    let (hp, val_rmse) = if val.is_empty() {
        (EvalOptions::default().fallback, Vec::new())
    } else {
        let g = fusion::grid_search(&train, &val, &default_grid())?;
        (g.best, g.val_rmse)
    };
    let model = fusion::fit(&train.features, &train.mos, &hp)?;
    let mut predictions = Vec::new();
    for (name, rows) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for &i in rows {
            predictions.push(PairPrediction {
                pair_id: manifest.rows[i].pair_id.clone(),
                subset: name.into(),
                mos: manifest.rows[i].mos,
                prediction: fusion::predict(&model, &loaded.vectors[i])?,
            });
        }
    }
    Ok(TrainOutput {
        model: ModelArtifact {
            format: MODEL_FORMAT.into(),
            config_hash: loaded.config_hash.clone(),
            spatial_model: loaded.spatial_model.clone(),
            regressor: model,
        },
        report: TrainReport {
            format: TRAIN_REPORT_FORMAT.into(),
            config_hash: loaded.config_hash.clone(),
            seed,
            fractions,
            hyperparams: hp,
            val_rmse,
            predictions,
        },
    })
}

pub fn cmd_predict(model: &ModelArtifact, features: &FeatureArtifact, scores: Option<&ScoreTable>) -> Result<f64> {
    if model.config_hash != features.config_hash {
        return Err(Error::Data(format!(
            "features were extracted with config {} but the model expects {}",
            features.config_hash, model.config_hash
        )));
    }
    fusion::predict(&model.regressor, &fused_vector(features, scores)?)
}

pub fn cmd_evaluate(manifest: &DatasetManifest, loaded: &LoadedFeatures, opts: &EvalOptions) -> Result<EvalArtifact> {
    let report = eval::run_trials(manifest, &loaded.vectors, opts)?;
    Ok(EvalArtifact {
        format: EVAL_REPORT_FORMAT.into(),
        config_hash: loaded.config_hash.clone(),
        spatial_model: loaded.spatial_model.clone(),
        report,
    })
}
