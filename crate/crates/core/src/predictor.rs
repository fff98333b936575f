//! Per-pixel debris probabilities: a logistic baseline over spectral features, or
//! probability rasters produced by an external model. Thresholding turns either into
//! detections.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indices::{fdi, ndvi, BandQuad};
use crate::raster::{read_raster, GeoGrid, SceneRaster};

/// Values this far outside `[0, 1]` are rejected on ingestion; closer ones are clamped.
pub const PROBABILITY_TOLERANCE: f32 = 1e-6;

/// Threshold of maximum F1 on the validation precision-recall curve.
pub const OPT_THRESHOLD: f64 = 0.815;
/// High-precision threshold (validation precision 0.95).
pub const HP_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Opt,
    Hp,
    Custom,
}

/// Detection threshold `T`: `p >= T` counts as a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPreset {
    pub name: PresetName,
    pub value: f64,
}

impl ThresholdPreset {
    pub fn opt() -> Self {
        ThresholdPreset {
            name: PresetName::Opt,
            value: OPT_THRESHOLD,
        }
    }

    pub fn hp() -> Self {
        ThresholdPreset {
            name: PresetName::Hp,
            value: HP_THRESHOLD,
        }
    }

    pub fn custom(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::Argument(format!("threshold {value} is not in (0, 1)")));
        }
        Ok(ThresholdPreset {
            name: PresetName::Custom,
            value,
        })
    }

    /// `opt`, `hp`, or a number in (0, 1).
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "opt" => Ok(Self::opt()),
            "hp" => Ok(Self::hp()),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("unknown threshold preset `{text}`")))
                .and_then(Self::custom),
        }
    }

    pub fn detects(&self, p: f64) -> bool {
        p >= self.value
    }
}

impl Default for ThresholdPreset {
    fn default() -> Self {
        Self::opt()
    }
}

impl fmt::Display for ThresholdPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name {
            PresetName::Opt => write!(f, "opt ({})", self.value),
            PresetName::Hp => write!(f, "hp ({})", self.value),
            PresetName::Custom => write!(f, "{}", self.value),
        }
    }
}

/// Thresholds chosen on a validation set, as `{"opt": .., "hp": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdFile {
    pub opt: f64,
    pub hp: f64,
}

impl ThresholdFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: ThresholdFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("thresholds: {e}")))?;
        for (name, v) in [("opt", t.opt), ("hp", t.hp)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("thresholds: `{name}` = {v} is not in (0, 1)")));
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn opt(&self) -> ThresholdPreset {
        ThresholdPreset {
            name: PresetName::Opt,
            value: self.opt,
        }
    }

    pub fn hp(&self) -> ThresholdPreset {
        ThresholdPreset {
            name: PresetName::Hp,
            value: self.hp,
        }
    }
}

impl Default for ThresholdFile {
    fn default() -> Self {
        ThresholdFile {
            opt: OPT_THRESHOLD,
            hp: HP_THRESHOLD,
        }
    }
}

/// File stem `probs_<scene_id>_<YYYY-MM-DD>` shared with external model runners.
pub fn probability_stem(scene_id: &str, date: NaiveDate) -> String {
    format!("probs_{scene_id}_{}", date.format("%Y-%m-%d"))
}

/// Inverse of [`probability_stem`]. The scene id may itself contain underscores.
pub fn parse_probability_stem(stem: &str) -> Option<(String, NaiveDate)> {
    let rest = stem.strip_prefix("probs_")?;
    let (id, date) = rest.rsplit_once('_')?;
    if id.is_empty() {
        return None;
    }
    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    Some((id.to_string(), date))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilitySource {
    Baseline,
    External,
}

/// Per-pixel debris probability for one date. NaN marks an invalid pixel.
#[derive(Debug, Clone)]
pub struct ProbabilityRaster {
    pub grid: GeoGrid,
    pub probs: Array2<f32>,
    pub date: NaiveDate,
    pub source: ProbabilitySource,
}

impl ProbabilityRaster {
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.probs[[row, col]].is_nan()
    }

    pub fn valid_count(&self) -> usize {
        self.probs.iter().filter(|p| !p.is_nan()).count()
    }

    pub fn to_scene(&self, nodata: f32) -> Result<SceneRaster> {
        let data = self.probs.mapv(|v| if v.is_nan() { nodata } else { v });
        SceneRaster::single(self.grid.clone(), "probability", data, self.date, nodata)
    }

    /// Interpret a single-band raster as probabilities, validating the range.
    pub fn from_scene(scene: &SceneRaster, date: NaiveDate, source: ProbabilitySource) -> Result<Self> {
        if scene.bands.len() != 1 {
            return Err(Error::Format(format!(
                "probability raster must have 1 band, found {}",
                scene.bands.len()
            )));
        }
        let mut probs = Array2::from_elem(scene.grid.shape(), f32::NAN);
        for ((idx, &v), out) in scene.bands[0].data.indexed_iter().zip(probs.iter_mut()) {
            if scene.is_nodata(v) {
                continue;
            }
            if v < -PROBABILITY_TOLERANCE || v > 1.0 + PROBABILITY_TOLERANCE {
                return Err(Error::Integrity(format!(
                    "probability {v} at {idx:?} is outside [0, 1]"
                )));
            }
            *out = v.clamp(0.0, 1.0);
        }
        Ok(ProbabilityRaster {
            grid: scene.grid.clone(),
            probs,
            date,
            source,
        })
    }
}

pub const BASELINE_FEATURES: [&str; 6] = ["red", "re2", "nir", "swir1", "ndvi", "fdi"];

/// Logistic-regression weights over the baseline features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineWeights {
    pub bias: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl BaselineWeights {
    /// The weights shipped with the crate (`data/baseline_weights.json`).
    pub fn default_set() -> Self {
        let w: BaselineWeights = serde_json::from_str(include_str!("../data/baseline_weights.json"))
            .expect("bundled weights parse");
        w
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: BaselineWeights =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("weights: {e}")))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bias.is_finite() {
            return Err(Error::Config("weights: bias is not finite".into()));
        }
        for f in BASELINE_FEATURES {
            match self.coefficients.get(f) {
                None => return Err(Error::Config(format!("weights: missing coefficient `{f}`"))),
                Some(c) if !c.is_finite() => {
                    return Err(Error::Config(format!("weights: coefficient `{f}` is not finite")))
                }
                _ => {}
            }
        }
        if let Some(k) = self.coefficients.keys().find(|k| !BASELINE_FEATURES.contains(&k.as_str())) {
            return Err(Error::Config(format!("weights: unknown feature `{k}`")));
        }
        Ok(())
    }

    fn coefficient_array(&self) -> [f64; 6] {
        BASELINE_FEATURES.map(|f| self.coefficients[f])
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic baseline `sigmoid(bias + w . [red, re2, nir, swir1, ndvi, fdi])`. Pixels where
/// any feature is nodata get NaN.
pub fn predict_baseline(q: &BandQuad, w: &BaselineWeights) -> Result<ProbabilityRaster> {
    w.validate()?;
    let ndvi = ndvi(q)?.values;
    let fdi = fdi(q)?.values;
    let coef = w.coefficient_array();
    let mut probs = Array2::from_elem(q.grid.shape(), f32::NAN);
    Zip::indexed(&mut probs).par_for_each(|idx, p| {
        let features = [q.red[idx], q.re2[idx], q.nir[idx], q.swir1[idx], ndvi[idx], fdi[idx]];
        if features.iter().any(|v| v.is_nan()) {
            return;
        }
        let z = features
            .iter()
            .zip(coef)
            .fold(w.bias, |acc, (&x, c)| acc + c * x as f64);
        *p = logistic(z) as f32;
    });
    Ok(ProbabilityRaster {
        grid: q.grid.clone(),
        probs,
        date: q.date,
        source: ProbabilitySource::Baseline,
    })
}

/// Load an externally produced single-band probability raster.
pub fn ingest_probability(path: impl AsRef<Path>, date: NaiveDate) -> Result<ProbabilityRaster> {
    let scene = read_raster(path.as_ref())?;
    ProbabilityRaster::from_scene(&scene, date, ProbabilitySource::External)
}

/// Binary detections `p >= T`; `valid` is false where the probability is nodata.
#[derive(Debug, Clone)]
pub struct DetectionRaster {
    pub grid: GeoGrid,
    pub detected: Array2<bool>,
    pub valid: Array2<bool>,
    pub threshold_used: f64,
}

impl DetectionRaster {
    pub fn count(&self) -> usize {
        self.detected.iter().filter(|d| **d).count()
    }
}

pub fn threshold(p: &ProbabilityRaster, t: &ThresholdPreset) -> DetectionRaster {
    let valid = p.probs.mapv(|v| !v.is_nan());
    let detected = p.probs.mapv(|v| !v.is_nan() && t.detects(v as f64));
    DetectionRaster {
        grid: p.grid.clone(),
        detected,
        valid,
        threshold_used: t.value,
    }
}
