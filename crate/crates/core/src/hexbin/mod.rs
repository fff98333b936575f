//! Hexagonal aggregation of per-pixel MDM and top-K pixel extraction.
//!
//! Hexagons are pointy-top with `width` measured flat to flat, so the size
//! (centre to corner) is `width / sqrt(3)` and the area is `sqrt(3)/2 * width^2`.

mod render;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::path::Path;

use ndarray::Zip;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdm::MdmRaster;

pub use render::{render_map, ColourRamp, RenderStyle};

pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
pub const DEFAULT_HEX_WIDTH_M: f64 = 5000.0;
pub const DEFAULT_TRIM: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 10;
const MAX_LAT: f64 = 89.0;

/// Equirectangular projection about an origin; adequate over ROI-sized extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub earth_radius: f64,
}

impl LocalProjection {
    pub fn new(origin_lat: f64, origin_lon: f64) -> Result<Self> {
        if !(origin_lat.abs() < MAX_LAT) || !origin_lon.is_finite() {
            return Err(Error::Projection(format!(
                "projection origin ({origin_lat}, {origin_lon}) is too close to a pole"
            )));
        }
        Ok(LocalProjection {
            origin_lat,
            origin_lon,
            earth_radius: EARTH_RADIUS_M,
        })
    }

    /// Centred on the lat/lon bounding box of `m`.
    pub fn centred_on(m: &MdmRaster) -> Result<Self> {
        let (a, b, c, d) = m.grid.lat_lon_bounds()?;
        Self::new((a + b) / 2.0, (c + d) / 2.0)
    }

    pub fn project(&self, lat: f64, lon: f64) -> Result<(f64, f64)> {
        if !(lat.abs() <= MAX_LAT) {
            return Err(Error::Projection(format!("latitude {lat} is outside +/-{MAX_LAT}")));
        }
        Ok(self.project_unchecked(lat, lon))
    }

    fn project_unchecked(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = self.earth_radius * (lon - self.origin_lon).to_radians() * self.origin_lat.to_radians().cos();
        let y = self.earth_radius * (lat - self.origin_lat).to_radians();
        (x, y)
    }

    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.origin_lat + (y / self.earth_radius).to_degrees();
        let lon = self.origin_lon + (x / (self.earth_radius * self.origin_lat.to_radians().cos())).to_degrees();
        (lat, lon)
    }
}

pub fn project_local(lat: f64, lon: f64, proj: &LocalProjection) -> Result<(f64, f64)> {
    proj.project(lat, lon)
}

fn hex_size(width_m: f64) -> f64 {
    width_m / 3f64.sqrt()
}

/// Axial `(q, r)` of the hexagon containing `(x, y)`.
pub fn assign_hex(x: f64, y: f64, width_m: f64) -> (i64, i64) {
    let s = hex_size(width_m);
    let q = (3f64.sqrt() / 3.0 * x - y / 3.0) / s;
    let r = (2.0 / 3.0 * y) / s;
    cube_round(q, r)
}

fn cube_round(q: f64, r: f64) -> (i64, i64) {
    let z = -q - r;
    let (mut rq, mut rr, rz) = (q.round(), r.round(), z.round());
    let (dq, dr, dz) = ((rq - q).abs(), (rr - r).abs(), (rz - z).abs());
    if dq > dr && dq > dz {
        rq = -rr - rz;
    } else if dr > dz {
        rr = -rq - rz;
    }
    (rq as i64, rr as i64)
}

pub fn hex_centre(q: i64, r: i64, width_m: f64) -> (f64, f64) {
    let s = hex_size(width_m);
    let (q, r) = (q as f64, r as f64);
    (s * (3f64.sqrt() * q + 3f64.sqrt() / 2.0 * r), s * 1.5 * r)
}

/// Corners counter-clockwise starting at the lower-right one.
pub fn hex_vertices(q: i64, r: i64, width_m: f64) -> [(f64, f64); 6] {
    let (cx, cy) = hex_centre(q, r, width_m);
    let s = hex_size(width_m);
    std::array::from_fn(|i| {
        let a = (60.0 * i as f64 - 30.0).to_radians();
        (cx + s * a.cos(), cy + s * a.sin())
    })
}

pub fn hex_area(width_m: f64) -> f64 {
    3f64.sqrt() / 2.0 * width_m * width_m
}

/// Drop the `floor(n * trim)` smallest values and average the rest.
/// Returns `(mean, kept)`; `None` for an empty slice.
pub fn trimmed_mean(values: &[f64], trim: f64) -> Option<(f64, usize)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let drop = (v.len() as f64 * trim).floor() as usize;
    let kept = &v[drop.min(v.len() - 1)..];
    Some((kept.iter().sum::<f64>() / kept.len() as f64, kept.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    pub q: i64,
    pub r: i64,
    pub centre_x: f64,
    pub centre_y: f64,
    pub centre_lat: f64,
    pub centre_lon: f64,
    pub trimmed_mean: f64,
    pub pixel_count: usize,
    pub kept_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopPixel {
    pub row: usize,
    pub col: usize,
    pub lat: f64,
    pub lon: f64,
    pub mdm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexBinMap {
    pub width_m: f64,
    pub trim_fraction: f64,
    pub projection: LocalProjection,
    pub cells: Vec<HexCell>,
    pub top_pixels: Vec<TopPixel>,
    /// Fewer valid pixels than the requested K.
    pub top_k_short: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HexParams {
    pub width_m: f64,
    pub trim: f64,
    pub top_k: usize,
}

impl Default for HexParams {
    fn default() -> Self {
        HexParams {
            width_m: DEFAULT_HEX_WIDTH_M,
            trim: DEFAULT_TRIM,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl HexParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.width_m.is_finite()) {
            return Err(Error::Argument(format!("hexagon width {} must be positive", self.width_m)));
        }
        if !(0.0..1.0).contains(&self.trim) {
            return Err(Error::Argument(format!("trim fraction {} is not in [0, 1)", self.trim)));
        }
        if self.top_k == 0 {
            return Err(Error::Argument("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cells in `(q, r)` order with their trimmed means. Cells without valid pixels are absent.
pub fn aggregate(m: &MdmRaster, proj: &LocalProjection, width_m: f64, trim: f64) -> Result<Vec<HexCell>> {
    HexParams { width_m, trim, top_k: 1 }.validate()?;
    let latlon = m.grid.pixel_lat_lon()?;
    let assigned: Vec<((i64, i64), f64)> = Zip::from(&latlon)
        .and(&m.mdm)
        .into_par_iter()
        .filter(|(_, v)| !v.is_nan())
        .map(|(&(lat, lon), &v)| {
            let (x, y) = proj.project(lat, lon)?;
            Ok((assign_hex(x, y, width_m), v))
        })
        .collect::<Result<_>>()?;

    let mut members: BTreeMap<(i64, i64), Vec<f64>> = BTreeMap::new();
    for (key, v) in assigned {
        members.entry(key).or_default().push(v);
    }
    Ok(members
        .into_iter()
        .map(|((q, r), values)| {
            let (mean, kept) = trimmed_mean(&values, trim).expect("cell has members");
            let (cx, cy) = hex_centre(q, r, width_m);
            let (lat, lon) = proj.unproject(cx, cy);
            HexCell {
                q,
                r,
                centre_x: cx,
                centre_y: cy,
                centre_lat: lat,
                centre_lon: lon,
                trimmed_mean: mean,
                pixel_count: values.len(),
                kept_count: kept,
            }
        })
        .collect())
}

#[derive(PartialEq)]
struct Ranked {
    mdm: f64,
    idx: (usize, usize),
}

impl Eq for Ranked {}

impl Ord for Ranked {
    // "Greater" means ranked earlier: larger MDM, then smaller (row, col).
    fn cmp(&self, other: &Self) -> Ordering {
        self.mdm.total_cmp(&other.mdm).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` highest-MDM valid pixels, descending, ties by `(row, col)` ascending.
/// The flag is set when fewer than `k` valid pixels exist.
pub fn top_k(m: &MdmRaster, k: usize) -> Result<(Vec<TopPixel>, bool)> {
    if k == 0 {
        return Err(Error::Argument("top_k must be at least 1".into()));
    }
    // Min-heap of the best k seen so far.
    let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (idx, &v) in m.mdm.indexed_iter() {
        if v.is_nan() {
            continue;
        }
        heap.push(std::cmp::Reverse(Ranked { mdm: v, idx }));
        if heap.len() > k {
            heap.pop();
        }
    }
    let crs = m.grid.crs()?;
    let ranked: Vec<Ranked> = heap.into_sorted_vec().into_iter().map(|r| r.0).collect();
    let short = ranked.len() < k;
    let top = ranked
        .into_iter()
        .map(|Ranked { mdm, idx: (row, col) }| {
            let (x, y) = m.grid.pixel_center(row, col);
            let (lat, lon) = crs.to_lat_lon(x, y);
            TopPixel { row, col, lat, lon, mdm }
        })
        .collect();
    Ok((top, short))
}

/// Aggregate and extract top pixels with a projection centred on the raster.
pub fn build_map(m: &MdmRaster, params: &HexParams) -> Result<HexBinMap> {
    params.validate()?;
    let projection = LocalProjection::centred_on(m)?;
    let cells = aggregate(m, &projection, params.width_m, params.trim)?;
    let (top_pixels, top_k_short) = top_k(m, params.top_k)?;
    Ok(HexBinMap {
        width_m: params.width_m,
        trim_fraction: params.trim,
        projection,
        cells,
        top_pixels,
        top_k_short,
    })
}

impl HexBinMap {
    /// Cell with the largest trimmed mean; ties go to the first in `(q, r)` order.
    pub fn best_cell(&self) -> Option<&HexCell> {
        self.cells.iter().fold(None, |best: Option<&HexCell>, c| match best {
            Some(b) if b.trimmed_mean >= c.trimmed_mean => Some(b),
            _ => Some(c),
        })
    }

    pub fn cell_of(&self, lat: f64, lon: f64) -> Result<(i64, i64)> {
        let (x, y) = self.projection.project(lat, lon)?;
        Ok(assign_hex(x, y, self.width_m))
    }

    pub fn write_cells_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "q,r,centre_lat,centre_lon,trimmed_mean,pixel_count,kept_count")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{:.7},{:.7},{},{},{}",
                c.q, c.r, c.centre_lat, c.centre_lon, c.trimmed_mean, c.pixel_count, c.kept_count
            )?;
        }
        Ok(())
    }

    pub fn write_top_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "rank,row,col,lat,lon,mdm")?;
        for (i, p) in self.top_pixels.iter().enumerate() {
            writeln!(out, "{},{},{},{:.7},{:.7},{}", i + 1, p.row, p.col, p.lat, p.lon, p.mdm)?;
        }
        Ok(())
    }

    /// Writes `hex_cells.csv`, `top_pixels.csv` and `hexbin.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
            let path = dir.join(name);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            Ok::<_, Error>(path)
        };
        Ok(vec![
            write("hex_cells.csv", &|b| self.write_cells_csv(b))?,
            write("top_pixels.csv", &|b| self.write_top_csv(b))?,
            write("hexbin.json", &|b| {
                serde_json::to_writer_pretty(&mut *b, self).map_err(std::io::Error::other)
            })?,
        ])
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("hexbin.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
