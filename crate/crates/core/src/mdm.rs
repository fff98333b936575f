//! Marine Debris Mapping index over a date stack of probabilities.
//!
//! For pixel `(i, j)` with valid observations `p_1..p_N`:
//! `D = 100/N * #{k : p_k >= T}`, `P = (1/N) * sum p_k`, `MDM = D * P`.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::ThresholdPreset;
use crate::raster::{Band, DateStack, GeoGrid, SceneRaster, DEFAULT_NODATA};

pub const DEFAULT_MIN_OBS: u32 = 3;

/// What `N` divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Per-pixel count of valid observations.
    #[default]
    ValidObservations,
    /// Number of dates in the stack; masked dates count as `p = 0`.
    AllDates,
}

#[derive(Debug, Clone)]
pub struct MdmRaster {
    pub grid: GeoGrid,
    pub detection_pct: Array2<f64>,
    pub mean_prob: Array2<f64>,
    pub mdm: Array2<f64>,
    pub obs_count: Array2<u32>,
}

/// Sum in index order by recursive halving; the grouping depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().fold(0.0, |a, b| a + b);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Debug, Clone, Copy)]
struct PixelStats {
    d: f64,
    p: f64,
}

fn check_args(stack: &DateStack, min_obs: u32) -> Result<()> {
    if stack.is_empty() {
        return Err(Error::Argument("empty probability stack".into()));
    }
    if min_obs == 0 {
        return Err(Error::Argument("min_obs must be at least 1".into()));
    }
    Ok(())
}

fn pixel_stats(
    stack: &DateStack,
    idx: (usize, usize),
    t: f64,
    min_obs: u32,
    mode: NormalizationMode,
    buf: &mut Vec<f64>,
) -> Option<PixelStats> {
    buf.clear();
    let mut hits = Vec::with_capacity(stack.len());
    let mut n_valid = 0u32;
    for (layer, valid) in stack.layers.iter().zip(&stack.valid) {
        if valid[idx] {
            let p = layer[idx] as f64;
            n_valid += 1;
            buf.push(p);
            hits.push(if p >= t { 1.0 } else { 0.0 });
        } else if mode == NormalizationMode::AllDates {
            buf.push(0.0);
            hits.push(0.0);
        }
    }
    if n_valid < min_obs {
        return None;
    }
    let n = match mode {
        NormalizationMode::ValidObservations => n_valid as f64,
        NormalizationMode::AllDates => stack.len() as f64,
    };
    Some(PixelStats {
        d: 100.0 * pairwise_sum(&hits) / n,
        p: pairwise_sum(buf) / n,
    })
}

fn stats_plane(stack: &DateStack, t: f64, min_obs: u32, mode: NormalizationMode) -> Array2<Option<PixelStats>> {
    let mut out = Array2::from_elem(stack.grid.shape(), None);
    Zip::indexed(out.rows_mut()).par_for_each(|r, mut row| {
        let mut buf = Vec::with_capacity(stack.len());
        for (c, v) in row.iter_mut().enumerate() {
            *v = pixel_stats(stack, (r, c), t, min_obs, mode, &mut buf);
        }
    });
    out
}

/// `D` plane in percent; NaN where fewer than `min_obs` valid observations exist.
pub fn detection_rate(stack: &DateStack, t: &ThresholdPreset, min_obs: u32) -> Result<Array2<f64>> {
    check_args(stack, min_obs)?;
    Ok(stats_plane(stack, t.value, min_obs, NormalizationMode::ValidObservations)
        .mapv(|s| s.map_or(f64::NAN, |s| s.d)))
}

/// Mean probability plane; NaN where fewer than `min_obs` valid observations exist.
pub fn mean_probability(stack: &DateStack, min_obs: u32) -> Result<Array2<f64>> {
    check_args(stack, min_obs)?;
    Ok(stats_plane(stack, f64::INFINITY, min_obs, NormalizationMode::ValidObservations)
        .mapv(|s| s.map_or(f64::NAN, |s| s.p)))
}

pub fn mdm(stack: &DateStack, t: &ThresholdPreset, min_obs: u32) -> Result<MdmRaster> {
    mdm_with_mode(stack, t, min_obs, NormalizationMode::ValidObservations)
}

pub fn mdm_with_mode(
    stack: &DateStack,
    t: &ThresholdPreset,
    min_obs: u32,
    mode: NormalizationMode,
) -> Result<MdmRaster> {
    check_args(stack, min_obs)?;
    let stats = stats_plane(stack, t.value, min_obs, mode);
    let pick = |f: fn(&PixelStats) -> f64| stats.mapv(|s| s.as_ref().map_or(f64::NAN, f));
    let detection_pct = pick(|s| s.d);
    let mean_prob = pick(|s| s.p);
    let mdm = pick(|s| s.d * s.p);
    let obs_count = Zip::indexed(&stats).map_collect(|idx, _| {
        stack.valid.iter().filter(|v| v[idx]).count() as u32
    });
    Ok(MdmRaster {
        grid: stack.grid.clone(),
        detection_pct,
        mean_prob,
        mdm,
        obs_count,
    })
}

const EXACT_MAGIC: &[u8; 8] = b"DDEMDM01";

pub const MDM_BAND_NAMES: [&str; 4] = ["detection_pct", "mean_prob", "mdm", "obs_count"];

impl MdmRaster {
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.mdm[[row, col]].is_nan()
    }

    pub fn valid_count(&self) -> usize {
        self.mdm.iter().filter(|v| !v.is_nan()).count()
    }

    /// Four-band raster (D, P, MDM, N) stamped with `date`; nodata is [`DEFAULT_NODATA`].
    pub fn to_scene(&self, date: NaiveDate) -> Result<SceneRaster> {
        let f = |a: &Array2<f64>| a.mapv(|v| if v.is_nan() { DEFAULT_NODATA } else { v as f32 });
        let planes = [
            f(&self.detection_pct),
            f(&self.mean_prob),
            f(&self.mdm),
            self.obs_count.mapv(|n| n as f32),
        ];
        let bands = MDM_BAND_NAMES
            .iter()
            .zip(planes)
            .map(|(name, data)| Band::new(*name, data, None))
            .collect();
        SceneRaster::new(self.grid.clone(), bands, date, DEFAULT_NODATA)
    }

    /// Inverse of [`MdmRaster::to_scene`]. Values pass through f32.
    pub fn from_scene(scene: &SceneRaster) -> Result<Self> {
        let get = |name: &str| {
            scene
                .band(name)
                .map(|b| b.data.mapv(|v| if scene.is_nodata(v) { f64::NAN } else { v as f64 }))
                .ok_or_else(|| Error::Format(format!("MDM raster has no `{name}` band")))
        };
        Ok(MdmRaster {
            grid: scene.grid.clone(),
            detection_pct: get(MDM_BAND_NAMES[0])?,
            mean_prob: get(MDM_BAND_NAMES[1])?,
            mdm: get(MDM_BAND_NAMES[2])?,
            obs_count: get(MDM_BAND_NAMES[3])?.mapv(|v| if v.is_nan() { 0 } else { v as u32 }),
        })
    }

    /// Lossless binary form: magic, header length, grid JSON, then the three f64 planes
    /// and the u32 count plane, all little-endian and row-major.
    pub fn save_exact(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.grid).map_err(|e| Error::Format(e.to_string()))?;
        let n = self.mdm.len();
        let mut buf = Vec::with_capacity(16 + header.len() + n * 28);
        buf.extend_from_slice(EXACT_MAGIC);
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for plane in [&self.detection_pct, &self.mean_prob, &self.mdm] {
            for v in plane.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in self.obs_count.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_exact(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != EXACT_MAGIC {
            return Err(bad("not an MDM plane file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let grid: GeoGrid = serde_json::from_slice(header).map_err(|e| bad(&e.to_string()))?;
        grid.validate()?;
        let n = grid.width * grid.height;
        let body = &bytes[16 + hlen..];
        if body.len() != n * 28 {
            return Err(bad("payload size does not match grid"));
        }
        let f64_plane = |k: usize| {
            let v: Vec<f64> = body[k * n * 8..(k + 1) * n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Array2::from_shape_vec(grid.shape(), v).expect("length checked")
        };
        let counts: Vec<u32> = body[3 * n * 8..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(MdmRaster {
            detection_pct: f64_plane(0),
            mean_prob: f64_plane(1),
            mdm: f64_plane(2),
            obs_count: Array2::from_shape_vec(grid.shape(), counts).expect("length checked"),
            grid,
        })
    }

    /// One row per valid pixel in row-major order: `lat,lon,D,P,MDM,N`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let latlon = self.grid.pixel_lat_lon()?;
        let io = |e| Error::io("<csv>", e);
        writeln!(out, "row,col,lat,lon,detection_pct,mean_prob,mdm,obs_count").map_err(io)?;
        for ((r, c), &m) in self.mdm.indexed_iter() {
            if m.is_nan() {
                continue;
            }
            let (lat, lon) = latlon[[r, c]];
            writeln!(
                out,
                "{r},{c},{lat:.7},{lon:.7},{},{},{},{}",
                self.detection_pct[[r, c]],
                self.mean_prob[[r, c]],
                m,
                self.obs_count[[r, c]]
            )
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}
