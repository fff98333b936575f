//! Synthetic multi-date scenes with a planted floating-debris target, for end-to-end runs
//! without real imagery.
//!
//! Scene layout (UTM zone 51N, 10 m pixels): open water with mild noise, a vegetated land
//! strip along the west edge (flagged by both the scene-class rasters and a land polygon),
//! a 4×5 debris target near the centre, and single-date bright distractors. Two dates carry
//! a cloud over the target, and one date has a nodata stripe along the south edge.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::acquisition::{RoiSpec, SCENE_RASTER_STEM};
use crate::crs::Crs;
use crate::error::{Error, Result};
use crate::hexbin::HexParams;
use crate::indices::{BandNames, DETECTOR_BANDS};
use crate::masking::{class, SceneClassMask};
use crate::pipeline::{ConfigFile, MasksSection, PredictorSection, ScenesSection, ThresholdSetting};
use crate::predictor::BaselineWeights;
use crate::raster::{write_raster, Band, GeoGrid, SceneRaster, DEFAULT_NODATA};

pub const CRS_ID: &str = "EPSG:32651";
pub const ORIGIN: (f64, f64) = (280_000.0, 1_620_000.0);
pub const PIXEL_M: f64 = 10.0;

/// Red, red-edge 2, NIR, SWIR1 reflectance.
pub const WATER: [f32; 4] = [0.03, 0.015, 0.012, 0.006];
pub const DEBRIS: [f32; 4] = [0.10, 0.06, 0.12, 0.04];
pub const VEGETATION: [f32; 4] = [0.04, 0.20, 0.30, 0.20];
pub const CLOUD: [f32; 4] = [0.30, 0.30, 0.30, 0.30];
const NOISE: f32 = 0.002;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Scene width and height in pixels, at least 64.
    pub size: usize,
    /// At least 3.
    pub dates: usize,
    pub first_date: NaiveDate,
    pub revisit_days: i64,
    pub seed: u64,
    pub distractors: usize,
    /// Hexagon width written into the generated config.
    pub hex_width_m: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            size: 256,
            dates: 5,
            first_date: NaiveDate::from_ymd_opt(2021, 4, 2).expect("valid date"),
            revisit_days: 5,
            seed: 7,
            distractors: 12,
            hex_width_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config_path: PathBuf,
    pub grid: GeoGrid,
    pub scene_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `(row, col)` of every target pixel.
    pub target: Vec<(usize, usize)>,
    /// Dates (indices into `dates`) on which the target is under cloud.
    pub cloudy_dates: Vec<usize>,
    /// Columns `0..land_cols` are land.
    pub land_cols: usize,
}

impl SynthScene {
    pub fn is_target(&self, row: usize, col: usize) -> bool {
        self.target.contains(&(row, col))
    }

    /// `(lat, lon)` of the centre of the target block.
    pub fn target_centre(&self) -> Result<(f64, f64)> {
        let n = self.target.len() as f64;
        let (r, c) = self
            .target
            .iter()
            .fold((0.0, 0.0), |(r, c), &(tr, tc)| (r + tr as f64, c + tc as f64));
        let (x, y) = self.grid.pixel_center(0, 0);
        let x = x + c / n * self.grid.pixel_size_x;
        let y = y + r / n * self.grid.pixel_size_y;
        Ok(self.grid.crs()?.to_lat_lon(x, y))
    }
}

fn noisy(rng: &mut ChaCha8Rng, v: f32) -> f32 {
    (v + rng.gen_range(-NOISE..=NOISE)).max(0.0)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("json serialises");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write scenes, scene-class rasters, land polygon, baseline weights and a run config
/// under `root`.
pub fn generate(root: &Path, spec: &SynthSpec) -> Result<SynthScene> {
    if spec.size < 64 || spec.dates < 3 {
        return Err(Error::Argument("synthetic scenes need size >= 64 and at least 3 dates".into()));
    }
    let n = spec.size;
    let grid = GeoGrid::new(n, n, ORIGIN, (PIXEL_M, -PIXEL_M), CRS_ID)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (t_row, t_col) = (n * 15 / 32, n * 19 / 32);
    let target: Vec<(usize, usize)> = (t_row..t_row + 4)
        .flat_map(|r| (t_col..t_col + 5).map(move |c| (r, c)))
        .collect();
    let land_cols = n / 10;
    let cloud_rows = t_row.saturating_sub(12)..t_row + 16;
    let cloud_cols = t_col.saturating_sub(12)..t_col + 17;
    let cloudy_dates = vec![1, 3];
    let stripe_rows = n - 8..n;
    let stripe_date = 2;

    // Distractors keep clear of the land strip and the target's surroundings.
    let mut distractors = Vec::with_capacity(spec.distractors);
    while distractors.len() < spec.distractors {
        let (r, c) = (rng.gen_range(0..n - 8), rng.gen_range(land_cols + 2..n));
        let near_target = r + 20 > t_row && r < t_row + 24 && c + 20 > t_col && c < t_col + 25;
        if !near_target && !distractors.iter().any(|&(dr, dc, _)| (dr, dc) == (r, c)) {
            distractors.push((r, c, rng.gen_range(0..spec.dates)));
        }
    }

    let dirs = ["scenes", "fmask"].map(|d| root.join(d));
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let dates: Vec<NaiveDate> = (0..spec.dates)
        .map(|k| spec.first_date + Duration::days(spec.revisit_days * k as i64))
        .collect();
    let mut scene_ids = Vec::with_capacity(dates.len());

    for (k, &date) in dates.iter().enumerate() {
        let mut planes: [Array2<f32>; 4] = std::array::from_fn(|_| Array2::zeros((n, n)));
        let mut classes = Array2::from_elem((n, n), class::WATER);
        for r in 0..n {
            for c in 0..n {
                let cloudy = cloudy_dates.contains(&k) && cloud_rows.contains(&r) && cloud_cols.contains(&c);
                let (spectrum, code) = if k == stripe_date && stripe_rows.contains(&r) {
                    (None, class::NODATA)
                } else if c < land_cols {
                    (Some(VEGETATION), class::LAND)
                } else if cloudy {
                    (Some(CLOUD), class::CLOUD)
                } else if target.contains(&(r, c)) || distractors.contains(&(r, c, k)) {
                    (Some(DEBRIS), class::WATER)
                } else {
                    (Some(WATER), class::WATER)
                };
                classes[[r, c]] = code;
                for (b, plane) in planes.iter_mut().enumerate() {
                    plane[[r, c]] = spectrum.map_or(DEFAULT_NODATA, |s| noisy(&mut rng, s[b]));
                }
            }
        }
        let id = format!("SYN_{}", date.format("%Y%m%d"));
        let names = BandNames::default();
        let bands = [&names.red, &names.re2, &names.nir, &names.swir1]
            .into_iter()
            .zip(DETECTOR_BANDS)
            .zip(planes)
            .map(|((name, spec), data)| Band::new(name.clone(), data, Some(spec.wavelength_nm)))
            .collect();
        let scene_dir = dirs[0].join(&id);
        std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
        let scene = SceneRaster::new(grid.clone(), bands, date, DEFAULT_NODATA)?;
        write_raster(&scene, scene_dir.join(format!("{SCENE_RASTER_STEM}.json")))?;
        let mask = SceneClassMask::new(grid.clone(), classes)?;
        write_raster(&mask.to_scene(date)?, dirs[1].join(format!("fmask_{id}.json")))?;
        scene_ids.push(id);
    }

    // Land polygon: the west strip, padded outward so only its east edge cuts the grid.
    let crs = Crs::parse(CRS_ID)?;
    let (x0, x1) = (ORIGIN.0 - 500.0, ORIGIN.0 + land_cols as f64 * PIXEL_M);
    let (y0, y1) = (ORIGIN.1 - n as f64 * PIXEL_M - 500.0, ORIGIN.1 + 500.0);
    let ring: Vec<[f64; 2]> = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
        .iter()
        .map(|&(x, y)| {
            let (lat, lon) = crs.to_lat_lon(x, y);
            [lon, lat]
        })
        .collect();
    write_json(
        &root.join("land.geojson"),
        &json!({
            "type": "FeatureCollection",
            "features": [{
                "type": "Feature",
                "properties": { "name": "synthetic coast" },
                "geometry": { "type": "Polygon", "coordinates": [ring] }
            }]
        }),
    )?;

    let weights = BaselineWeights::default_set();
    write_json(&root.join("weights.json"), &serde_json::to_value(&weights).expect("weights serialise"))?;

    let (la0, la1, lo0, lo1) = grid.lat_lon_bounds()?;
    let pad = 0.01;
    let config = ConfigFile {
        output_dir: "out".into(),
        workers: None,
        threshold: ThresholdSetting::default(),
        min_obs: crate::mdm::DEFAULT_MIN_OBS,
        normalization: Default::default(),
        roi: RoiSpec::new((la0 - pad, lo0 - pad), (la1 + pad, lo1 + pad), dates[0], *dates.last().expect("dates"))?,
        scenes: ScenesSection {
            local_dir: Some("scenes".into()),
            catalog: None,
        },
        predictor: PredictorSection {
            weights: Some("weights.json".into()),
            prob_dir: None,
            thresholds: None,
        },
        masks: MasksSection {
            scene_class_dir: Some("fmask".into()),
            land_polygons: Some("land.geojson".into()),
        },
        hexbin: HexParams {
            width_m: spec.hex_width_m,
            ..HexParams::default()
        },
        bands: BandNames::default(),
    };
    let config_path = root.join("run.toml");
    std::fs::write(&config_path, config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;

    Ok(SynthScene {
        config_path,
        grid,
        scene_ids,
        dates,
        target,
        cloudy_dates,
        land_cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::{fdi_value, ndvi_value};
    use crate::raster::read_raster;

    #[test]
    fn debris_spectrum_stands_out() {
        let f = |s: [f32; 4]| fdi_value(s[1] as f64, s[2] as f64, s[3] as f64).unwrap();
        let v = |s: [f32; 4]| ndvi_value(s[0] as f64, s[2] as f64).unwrap();
        assert!(f(DEBRIS) > 5.0 * f(WATER));
        assert!(v(DEBRIS) < v(VEGETATION));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            size: 64,
            dates: 3,
            ..SynthSpec::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = generate(a.path(), &spec).unwrap();
        let sb = generate(b.path(), &spec).unwrap();
        assert_eq!(sa.target.len(), 20);
        for id in &sa.scene_ids {
            let rel = Path::new("scenes").join(id).join("bands.json");
            let ra = read_raster(a.path().join(&rel)).unwrap();
            let rb = read_raster(b.path().join(&rel)).unwrap();
            assert!(ra.bit_eq(&rb));
        }
        assert_eq!(sa.scene_ids, sb.scene_ids);
        let (lat, lon) = sa.target_centre().unwrap();
        assert!((14.0..15.0).contains(&lat) && (120.0..121.0).contains(&lon));
    }

    #[test]
    fn cloud_covers_target_on_cloudy_dates() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate(dir.path(), &SynthSpec { size: 64, ..SynthSpec::default() }).unwrap();
        for (k, id) in s.scene_ids.iter().enumerate() {
            let m = SceneClassMask::read(dir.path().join("fmask").join(format!("fmask_{id}.json"))).unwrap();
            let (r, c) = s.target[0];
            let expected = if s.cloudy_dates.contains(&k) { class::CLOUD } else { class::WATER };
            assert_eq!(m.classes[[r, c]], expected);
            assert_eq!(m.classes[[r, 0]], class::LAND);
        }
    }
}
