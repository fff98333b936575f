//! Stage orchestration with content-keyed caching.
//!
//! Layout under `<output_dir>/<run_id>/`:
//!
//! ```text
//! ledger.json
//! acquire/manifest.json           (+ downloads/ for catalog sources)
//! ingest/<scene>.json             4-band reflectance (B4, B6, B8, B11)
//! indices/{ndvi,fdi}_<scene>.json
//! predict/probs_<scene>_<date>.json
//! mask/probs_<scene>_<date>.json  after scene-class and land masking
//! mdm/{mdm.json, mdm.f64, mdm.csv, params.json}
//! hexbin/{hex_cells.csv, top_pixels.csv, hexbin.json}
//! render/map.svg
//! ```
//!
//! Every stage directory holds a `stage.json` marker with its cache key and artifacts.

mod config;
mod ledger;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::acquisition::{
    build_manifest, fetch_all, query_catalog, safe_file_name, transport_for, Manifest, SceneRecord, SCENE_RASTER_STEM,
};
use crate::error::{Error, Result};
use crate::hexbin::{build_map, render_map, HexBinMap, RenderStyle};
use crate::indices::{fdi, ndvi, BandNames, BandQuad, IndexRaster};
use crate::masking::{apply_scene_mask, rasterize_land, LandPolygons, SceneClassMask, ValidityMask};
use crate::mdm::{mdm_with_mode, MdmRaster};
use crate::predictor::{
    ingest_probability, predict_baseline, probability_stem, ProbabilityRaster, ProbabilitySource,
};
use crate::raster::{align_stack, find_raster, read_raster, write_raster, GeoGrid, RasterFormat, SceneRaster, DEFAULT_NODATA};

pub use config::{
    config_base, resolve, validate_config, CatalogSection, ConfigFile, MasksSection, PipelineConfig, PredictorSection,
    PredictorSource, SceneSource, ScenesSection, ThresholdSetting, DEFAULT_PRODUCT_TYPE,
};
pub use ledger::{RunLedger, StageRecord, StageStatus};

pub const LEDGER_FILE: &str = "ledger.json";
pub const MARKER_FILE: &str = "stage.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Acquire,
    Ingest,
    Indices,
    Predict,
    Mask,
    Mdm,
    Hexbin,
    Render,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Acquire,
        Stage::Ingest,
        Stage::Indices,
        Stage::Predict,
        Stage::Mask,
        Stage::Mdm,
        Stage::Hexbin,
        Stage::Render,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Acquire => "acquire",
            Stage::Ingest => "ingest",
            Stage::Indices => "indices",
            Stage::Predict => "predict",
            Stage::Mask => "mask",
            Stage::Mdm => "mdm",
            Stage::Hexbin => "hexbin",
            Stage::Render => "render",
        }
    }

    pub fn parse(name: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Argument(format!("unknown stage `{name}`")))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Marker {
    key: String,
    /// Relative to the stage directory.
    artifacts: Vec<PathBuf>,
}

/// SHA-256 over a file's bytes, or over the sorted relative paths and contents of every
/// file below a directory.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            let bytes = std::fs::read(path.join(&rel)).map_err(|e| Error::io(path.join(&rel), e))?;
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

/// Configuration and external inputs a stage depends on, as JSON. Paths enter only
/// through content digests, so keys do not depend on where the inputs live.
fn stage_inputs(cfg: &PipelineConfig, stage: Stage) -> Result<serde_json::Value> {
    let f = &cfg.file;
    Ok(match stage {
        Stage::Acquire => match &cfg.scene_source {
            SceneSource::LocalDir(d) => json!({ "roi": f.roi, "local": digest_path(d)? }),
            SceneSource::Catalog { endpoint, product_type } => {
                json!({ "roi": f.roi, "endpoint": endpoint.as_str(), "product_type": product_type })
            }
        },
        Stage::Ingest => json!({ "bands": f.bands }),
        Stage::Indices | Stage::Render => json!({}),
        Stage::Predict => match &cfg.predictor {
            PredictorSource::Baseline(w) => json!({ "weights": w }),
            PredictorSource::External(d) => json!({ "prob_dir": digest_path(d)? }),
        },
        Stage::Mask => json!({
            "scene_class": cfg.scene_class_dir.as_deref().map(digest_path).transpose()?,
            "land": cfg.land_polygons.as_deref().map(digest_path).transpose()?,
        }),
        Stage::Mdm => json!({
            "threshold": cfg.threshold.value,
            "min_obs": f.min_obs,
            "normalization": f.normalization,
        }),
        Stage::Hexbin => json!({ "hexbin": f.hexbin }),
    })
}

fn stage_key(cfg: &PipelineConfig, stage: Stage, upstream: &str) -> Result<String> {
    let inputs = serde_json::to_vec(&stage_inputs(cfg, stage)?).expect("json value serialises");
    let mut h = Sha256::new();
    h.update(stage.name().as_bytes());
    h.update([0]);
    h.update(upstream.as_bytes());
    h.update([0]);
    h.update(&inputs);
    Ok(hex::encode(h.finalize()))
}

/// Artifacts of a completed stage whose marker matches `key` and whose files all exist.
fn cached(dir: &Path, key: &str) -> Option<Vec<PathBuf>> {
    let text = std::fs::read_to_string(dir.join(MARKER_FILE)).ok()?;
    let marker: Marker = serde_json::from_str(&text).ok()?;
    let all_there = marker.artifacts.iter().all(|a| dir.join(a).is_file());
    (marker.key == key && all_there).then_some(marker.artifacts)
}

/// Run every stage up to and including `until` (all stages when `None`).
pub fn run_pipeline(cfg: &PipelineConfig, until: Option<Stage>) -> Result<RunLedger> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {} workers: {e}", cfg.workers)))?;
    pool.install(|| run_stages(cfg, until.unwrap_or(Stage::Render)))
}

fn run_stages(cfg: &PipelineConfig, until: Stage) -> Result<RunLedger> {
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let ledger_path = run_dir.join(LEDGER_FILE);
    let mut ledger = RunLedger::new(cfg.run_id(), &cfg.config_hash);
    let mut upstream = String::new();
    let mut upstream_ran = false;

    for stage in Stage::ALL.into_iter().filter(|s| *s <= until) {
        let started = Instant::now();
        let dir = run_dir.join(stage.name());
        let attempt = stage_key(cfg, stage, &upstream).and_then(|key| {
            if !upstream_ran {
                if let Some(artifacts) = cached(&dir, &key) {
                    log::info!("{stage}: up to date");
                    return Ok((key, artifacts, StageStatus::Skipped));
                }
            }
            log::info!("{stage}: running");
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let produced = run_stage(cfg, stage, &run_dir, &dir)?;
            let artifacts: Vec<PathBuf> = produced
                .iter()
                .map(|p| p.strip_prefix(&dir).unwrap_or(p).to_path_buf())
                .collect();
            let marker = Marker {
                key: key.clone(),
                artifacts: artifacts.clone(),
            };
            let marker_path = dir.join(MARKER_FILE);
            std::fs::write(&marker_path, serde_json::to_vec_pretty(&marker).expect("marker serialises"))
                .map_err(|e| Error::io(&marker_path, e))?;
            Ok((key, artifacts, StageStatus::Succeeded))
        });
        let wall_time_s = started.elapsed().as_secs_f64();
        let in_run = |a: Vec<PathBuf>| a.into_iter().map(|p| Path::new(stage.name()).join(p)).collect();
        match attempt {
            Ok((key, artifacts, status)) => {
                upstream_ran |= status == StageStatus::Succeeded;
                ledger.stages.push(StageRecord {
                    name: stage.name().into(),
                    status,
                    wall_time_s,
                    artifacts: in_run(artifacts),
                    key: key.clone(),
                    error: None,
                });
                ledger.save(&ledger_path)?;
                upstream = key;
            }
            Err(e) => {
                log::error!("{stage}: {e}");
                ledger.stages.push(StageRecord {
                    name: stage.name().into(),
                    status: StageStatus::Failed,
                    wall_time_s,
                    artifacts: Vec::new(),
                    key: String::new(),
                    error: Some(e.to_string()),
                });
                ledger.save(&ledger_path)?;
                return Err(Error::Stage {
                    stage: stage.name().into(),
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(ledger)
}

fn run_stage(cfg: &PipelineConfig, stage: Stage, run_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let upstream = |s: Stage| run_dir.join(s.name());
    let manifest = || Manifest::load(&upstream(Stage::Acquire).join("manifest.json"));
    match stage {
        Stage::Acquire => acquire(cfg, dir),
        Stage::Ingest => ingest(cfg, &manifest()?, dir),
        Stage::Indices => indices(&manifest()?, &upstream(Stage::Ingest), dir),
        Stage::Predict => predict(cfg, &manifest()?, &upstream(Stage::Ingest), dir),
        Stage::Mask => mask(cfg, &manifest()?, &upstream(Stage::Predict), dir),
        Stage::Mdm => mdm_stage(cfg, &manifest()?, &upstream(Stage::Mask), dir),
        Stage::Hexbin => {
            let m = MdmRaster::load_exact(&upstream(Stage::Mdm).join("mdm.f64"))?;
            build_map(&m, &cfg.file.hexbin)?.save(dir)
        }
        Stage::Render => {
            let map = HexBinMap::load(&upstream(Stage::Hexbin))?;
            let svg = render_map(&map, &RenderStyle::default())?;
            let path = dir.join("map.svg");
            std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
    }
}

fn acquire(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let roi = &cfg.file.roi;
    let manifest = match &cfg.scene_source {
        SceneSource::LocalDir(scene_dir) => {
            let (m, report) = build_manifest(roi, scene_dir)?;
            log::info!(
                "{} scenes registered, {} outside the ROI, {} unreadable",
                m.scenes.len(),
                report.excluded,
                report.warnings
            );
            m
        }
        SceneSource::Catalog { endpoint, product_type } => {
            let transport = transport_for(endpoint)?;
            let mut records = query_catalog(roi, product_type, endpoint, transport.as_ref())?;
            let downloads = dir.join("downloads");
            std::fs::create_dir_all(&downloads).map_err(|e| Error::io(&downloads, e))?;
            for r in fetch_all(&mut records, &downloads, transport.as_ref(), cfg.workers) {
                r?;
            }
            Manifest::new(roi.clone(), records)
        }
    };
    if manifest.scenes.is_empty() {
        return Err(Error::Validation("no scenes fall inside the ROI".into()));
    }
    let mut artifacts: Vec<PathBuf> = manifest.scenes.iter().filter_map(|s| s.local_path.clone()).filter(|p| p.starts_with(dir)).collect();
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    artifacts.insert(0, path);
    Ok(artifacts)
}

/// Reflectance raster of a manifest entry: `bands.*` inside a scene directory, or the
/// downloaded file itself.
fn scene_raster_path(rec: &SceneRecord) -> Result<PathBuf> {
    let path = rec
        .local_path
        .as_ref()
        .ok_or_else(|| Error::Integrity(format!("scene {} has no local copy", rec.scene_id)))?;
    if path.is_dir() {
        return find_raster(path, SCENE_RASTER_STEM).ok_or_else(|| {
            Error::Integrity(format!("scene directory {} has no {SCENE_RASTER_STEM} raster", path.display()))
        });
    }
    RasterFormat::from_path(path).map_err(|_| {
        Error::Format(format!(
            "{} is not a raster; point scenes.local_dir at atmospherically corrected scenes",
            path.display()
        ))
    })?;
    Ok(path.clone())
}

fn ingested(dir: &Path, rec: &SceneRecord) -> PathBuf {
    dir.join(format!("{}.json", safe_file_name(&rec.scene_id)))
}

fn read_quad(ingest_dir: &Path, rec: &SceneRecord) -> Result<BandQuad> {
    BandQuad::from_scene(&read_raster(ingested(ingest_dir, rec))?, &BandNames::default())
}

fn probs_name(rec: &SceneRecord) -> String {
    format!("{}.json", safe_file_name(&probability_stem(&rec.scene_id, rec.sensing_date)))
}

fn ingest(cfg: &PipelineConfig, manifest: &Manifest, dir: &Path) -> Result<Vec<PathBuf>> {
    manifest
        .scenes
        .par_iter()
        .map(|rec| {
            let scene = read_raster(scene_raster_path(rec)?)?;
            let quad = BandQuad::from_scene(&scene, &cfg.file.bands)?;
            let out = ingested(dir, rec);
            write_raster(&quad.to_scene(DEFAULT_NODATA)?, &out)?;
            Ok(out)
        })
        .collect()
}

fn index_scene(ix: &IndexRaster, name: &str, date: chrono::NaiveDate) -> Result<SceneRaster> {
    let data = ix.values.mapv(|v| if v.is_nan() { DEFAULT_NODATA } else { v });
    SceneRaster::single(ix.grid.clone(), name, data, date, DEFAULT_NODATA)
}

fn indices(manifest: &Manifest, ingest_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let per_scene: Vec<Vec<PathBuf>> = manifest
        .scenes
        .par_iter()
        .map(|rec| {
            let q = read_quad(ingest_dir, rec)?;
            let id = safe_file_name(&rec.scene_id);
            let mut out = Vec::new();
            for ix in [ndvi(&q)?, fdi(&q)?] {
                let name = ix.index_name.name();
                let path = dir.join(format!("{}_{id}.json", name.to_ascii_lowercase()));
                write_raster(&index_scene(&ix, name, q.date)?, &path)?;
                out.push(path);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

fn predict(cfg: &PipelineConfig, manifest: &Manifest, ingest_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    manifest
        .scenes
        .par_iter()
        .map(|rec| {
            let p = match &cfg.predictor {
                PredictorSource::Baseline(w) => predict_baseline(&read_quad(ingest_dir, rec)?, w)?,
                PredictorSource::External(prob_dir) => {
                    let stem = probability_stem(&rec.scene_id, rec.sensing_date);
                    let path = find_raster(prob_dir, &stem)
                        .or_else(|| find_raster(prob_dir, &safe_file_name(&stem)))
                        .ok_or_else(|| {
                            Error::Integrity(format!("no probability raster `{stem}` in {}", prob_dir.display()))
                        })?;
                    ingest_probability(path, rec.sensing_date)?
                }
            };
            let out = dir.join(probs_name(rec));
            write_raster(&p.to_scene(DEFAULT_NODATA)?, &out)?;
            Ok(out)
        })
        .collect()
}

fn mask(cfg: &PipelineConfig, manifest: &Manifest, predict_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let source = match cfg.predictor {
        PredictorSource::Baseline(_) => ProbabilitySource::Baseline,
        PredictorSource::External(_) => ProbabilitySource::External,
    };
    let land = match &cfg.land_polygons {
        Some(path) => {
            let (la0, la1, lo0, lo1) = cfg.file.roi.bbox();
            Some(LandPolygons::read(path)?.crop(la0, la1, lo0, lo1))
        }
        None => None,
    };
    let mut land_masks: Vec<(GeoGrid, ValidityMask)> = Vec::new();
    let mut out = Vec::with_capacity(manifest.scenes.len());
    for rec in &manifest.scenes {
        let scene = read_raster(predict_dir.join(probs_name(rec)))?;
        let mut p = ProbabilityRaster::from_scene(&scene, rec.sensing_date, source)?;
        if let Some(class_dir) = &cfg.scene_class_dir {
            let stem = format!("fmask_{}", rec.scene_id);
            let path = find_raster(class_dir, &stem)
                .or_else(|| find_raster(class_dir, &safe_file_name(&stem)))
                .ok_or_else(|| Error::Integrity(format!("no scene-class raster `{stem}` in {}", class_dir.display())))?;
            p = apply_scene_mask(&p, &SceneClassMask::read(path)?)?;
        }
        if let Some(polys) = &land {
            let i = match land_masks.iter().position(|(g, _)| *g == p.grid) {
                Some(i) => i,
                None => {
                    land_masks.push((p.grid.clone(), rasterize_land(polys, &p.grid)?));
                    land_masks.len() - 1
                }
            };
            p = land_masks[i].1.apply(&p)?;
        }
        let path = dir.join(probs_name(rec));
        write_raster(&p.to_scene(DEFAULT_NODATA)?, &path)?;
        out.push(path);
    }
    Ok(out)
}

fn mdm_stage(cfg: &PipelineConfig, manifest: &Manifest, mask_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let layers = manifest
        .scenes
        .iter()
        .map(|rec| read_raster(mask_dir.join(probs_name(rec))))
        .collect::<Result<Vec<_>>>()?;
    let stack = align_stack(&layers)?;
    let m = mdm_with_mode(&stack, &cfg.threshold, cfg.file.min_obs, cfg.file.normalization)?;
    let last = *stack.dates.last().expect("non-empty stack");

    let paths = ["mdm.json", "mdm.f64", "mdm.csv", "params.json"].map(|n| dir.join(n));
    write_raster(&m.to_scene(last)?, &paths[0])?;
    m.save_exact(&paths[1])?;
    m.save_csv(&paths[2])?;
    let params = json!({
        "threshold": cfg.threshold,
        "min_obs": cfg.file.min_obs,
        "normalization": cfg.file.normalization,
        "dates": stack.dates,
        "valid_pixels": m.valid_count(),
    });
    std::fs::write(&paths[3], serde_json::to_string_pretty(&params).expect("params serialise"))
        .map_err(|e| Error::io(&paths[3], e))?;
    Ok(paths.to_vec())
}
