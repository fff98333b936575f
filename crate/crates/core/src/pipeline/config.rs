//! TOML run configuration: parsing with unknown-key rejection, defaults, and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::acquisition::{RoiSpec, ENV_ENDPOINT};
use crate::error::{Error, Result};
use crate::hexbin::HexParams;
use crate::indices::BandNames;
use crate::mdm::{NormalizationMode, DEFAULT_MIN_OBS};
use crate::predictor::{BaselineWeights, ThresholdFile, ThresholdPreset};

pub const DEFAULT_PRODUCT_TYPE: &str = "S2MSI1C";

/// Threshold as written in the config: a preset name or a number in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    Preset(String),
    Value(f64),
}

impl Default for ThresholdSetting {
    fn default() -> Self {
        ThresholdSetting::Preset("opt".into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenesSection {
    pub local_dir: Option<PathBuf>,
    pub catalog: Option<CatalogSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSection {
    /// Falls back to `DDE_CATALOG_ENDPOINT`.
    pub endpoint: Option<String>,
    #[serde(default = "default_product_type")]
    pub product_type: String,
}

fn default_product_type() -> String {
    DEFAULT_PRODUCT_TYPE.into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    /// Baseline logistic weights (JSON).
    pub weights: Option<PathBuf>,
    /// Directory of externally produced `probs_<sceneid>_<date>` rasters.
    pub prob_dir: Option<PathBuf>,
    /// Thresholds JSON `{opt, hp}` replacing the built-in preset values.
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasksSection {
    /// Holds one `fmask_<sceneid>` raster per scene.
    pub scene_class_dir: Option<PathBuf>,
    /// GeoJSON land polygons.
    pub land_polygons: Option<PathBuf>,
}

/// The config file as written, with defaults filled in. Paths are kept as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub output_dir: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub threshold: ThresholdSetting,
    #[serde(default = "default_min_obs")]
    pub min_obs: u32,
    #[serde(default)]
    pub normalization: NormalizationMode,
    pub roi: RoiSpec,
    pub scenes: ScenesSection,
    pub predictor: PredictorSection,
    #[serde(default)]
    pub masks: MasksSection,
    #[serde(default)]
    pub hexbin: HexParams,
    #[serde(default)]
    pub bands: BandNames,
}

fn default_min_obs() -> u32 {
    DEFAULT_MIN_OBS
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    LocalDir(PathBuf),
    Catalog { endpoint: Url, product_type: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSource {
    Baseline(BaselineWeights),
    External(PathBuf),
}

/// Validated configuration with paths resolved against the config file's directory.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub file: ConfigFile,
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub threshold: ThresholdPreset,
    pub scene_source: SceneSource,
    pub predictor: PredictorSource,
    pub scene_class_dir: Option<PathBuf>,
    pub land_polygons: Option<PathBuf>,
}

impl PipelineConfig {
    /// First 12 hex digits of the config hash.
    pub fn run_id(&self) -> &str {
        &self.config_hash[..12]
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }
}

/// Parse and validate the config file at `path`.
pub fn validate_config(path: &Path) -> Result<PipelineConfig> {
    resolve(ConfigFile::read(path)?, config_base(path))
}

/// Directory that relative paths in the config at `path` are resolved against.
pub fn config_base(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn existing(base: &Path, p: &Path, what: &str) -> Result<PathBuf> {
    let full = base.join(p);
    if !full.exists() {
        return Err(Error::Validation(format!("{what} `{}` does not exist", full.display())));
    }
    Ok(full)
}

/// Validate `file`, resolving relative paths against `base`.
pub fn resolve(file: ConfigFile, base: &Path) -> Result<PipelineConfig> {
    file.roi.validate()?;
    file.hexbin
        .validate()
        .map_err(|e| Error::Validation(e.to_string()))?;
    if file.min_obs == 0 {
        return Err(Error::Validation("min_obs must be at least 1".into()));
    }
    let workers = match file.workers {
        Some(0) => return Err(Error::Validation("workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(4, |n| n.get()),
    };

    let scene_source = match (&file.scenes.local_dir, &file.scenes.catalog) {
        (Some(_), Some(_)) => {
            return Err(Error::Validation("configure either scenes.local_dir or scenes.catalog, not both".into()))
        }
        (None, None) => return Err(Error::Validation("no scene source: set scenes.local_dir or scenes.catalog".into())),
        (Some(dir), None) => SceneSource::LocalDir(existing(base, dir, "scene directory")?),
        (None, Some(cat)) => {
            let raw = match &cat.endpoint {
                Some(e) => e.clone(),
                None => std::env::var(ENV_ENDPOINT).map_err(|_| {
                    Error::Validation(format!("catalog endpoint missing: set scenes.catalog.endpoint or {ENV_ENDPOINT}"))
                })?,
            };
            let endpoint =
                Url::parse(&raw).map_err(|e| Error::Validation(format!("bad catalog endpoint `{raw}`: {e}")))?;
            SceneSource::Catalog {
                endpoint,
                product_type: cat.product_type.clone(),
            }
        }
    };

    let predictor = match (&file.predictor.weights, &file.predictor.prob_dir) {
        (Some(_), Some(_)) => {
            return Err(Error::Validation("configure either predictor.weights or predictor.prob_dir, not both".into()))
        }
        (None, None) => {
            return Err(Error::Validation("no predictor: set predictor.weights or predictor.prob_dir".into()))
        }
        (Some(w), None) => PredictorSource::Baseline(BaselineWeights::load(&existing(base, w, "weights file")?)?),
        (None, Some(d)) => PredictorSource::External(existing(base, d, "probability directory")?),
    };

    let presets = match &file.predictor.thresholds {
        Some(p) => ThresholdFile::load(&existing(base, p, "thresholds file")?)?,
        None => ThresholdFile::default(),
    };
    let threshold = match &file.threshold {
        ThresholdSetting::Preset(name) => match name.as_str() {
            "opt" => presets.opt(),
            "hp" => presets.hp(),
            other => ThresholdPreset::parse(other).map_err(|e| Error::Config(e.to_string()))?,
        },
        ThresholdSetting::Value(v) => ThresholdPreset::custom(*v).map_err(|e| Error::Config(e.to_string()))?,
    };

    let scene_class_dir = file
        .masks
        .scene_class_dir
        .as_deref()
        .map(|d| existing(base, d, "scene-class directory"))
        .transpose()?;
    let land_polygons = file
        .masks
        .land_polygons
        .as_deref()
        .map(|p| existing(base, p, "land polygon file"))
        .transpose()?;

    Ok(PipelineConfig {
        config_hash: file.hash(),
        output_dir: base.join(&file.output_dir),
        workers,
        threshold,
        scene_source,
        predictor,
        scene_class_dir,
        land_polygons,
        file,
    })
}
