//! Water-only masking: scene-classification rasters keep water pixels, land polygons
//! remove coastline and islands, and the two combine by logical AND.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::predictor::ProbabilityRaster;
use crate::raster::{read_raster, GeoGrid, SceneRaster};

/// Scene-classification codes (Fmask convention).
pub mod class {
    pub const LAND: u8 = 0;
    pub const WATER: u8 = 1;
    pub const CLOUD_SHADOW: u8 = 2;
    pub const SNOW: u8 = 3;
    pub const CLOUD: u8 = 4;
    pub const NODATA: u8 = 255;

    pub const ALL: [u8; 6] = [LAND, WATER, CLOUD_SHADOW, SNOW, CLOUD, NODATA];

    /// Only water survives masking; shadow, snow and cloud are treated alike.
    pub fn keeps(code: u8) -> bool {
        code == WATER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneClassMask {
    pub grid: GeoGrid,
    pub classes: Array2<u8>,
}

impl SceneClassMask {
    pub fn new(grid: GeoGrid, classes: Array2<u8>) -> Result<Self> {
        if classes.dim() != grid.shape() {
            return Err(Error::Argument(format!(
                "class plane {:?} does not match grid {:?}",
                classes.dim(),
                grid.shape()
            )));
        }
        if let Some((idx, v)) = classes.indexed_iter().find(|(_, v)| !class::ALL.contains(v)) {
            return Err(Error::Integrity(format!("unknown scene class {v} at {idx:?}")));
        }
        Ok(SceneClassMask { grid, classes })
    }

    /// Single-band raster of integer codes; raster nodata maps to class 255.
    pub fn from_scene(scene: &SceneRaster) -> Result<Self> {
        if scene.bands.len() != 1 {
            return Err(Error::Format(format!(
                "scene-class raster must have 1 band, found {}",
                scene.bands.len()
            )));
        }
        let mut classes = Array2::from_elem(scene.grid.shape(), class::NODATA);
        for ((idx, &v), out) in scene.bands[0].data.indexed_iter().zip(classes.iter_mut()) {
            if scene.is_nodata(v) {
                continue;
            }
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                return Err(Error::Integrity(format!("scene class {v} at {idx:?} is not an integer code")));
            }
            *out = v as u8;
        }
        SceneClassMask::new(scene.grid.clone(), classes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_scene(&read_raster(path)?)
    }

    pub fn to_scene(&self, date: chrono::NaiveDate) -> Result<SceneRaster> {
        SceneRaster::single(
            self.grid.clone(),
            "class",
            self.classes.mapv(|c| c as f32),
            date,
            class::NODATA as f32,
        )
    }

    pub fn validity(&self) -> ValidityMask {
        let mut provenance = BTreeSet::new();
        provenance.insert(MaskSource::SceneClass);
        ValidityMask {
            grid: self.grid.clone(),
            valid: self.classes.mapv(class::keeps),
            provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    SceneClass,
    Land,
    Nodata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    pub grid: GeoGrid,
    pub valid: Array2<bool>,
    pub provenance: BTreeSet<MaskSource>,
}

impl ValidityMask {
    pub fn all_valid(grid: &GeoGrid) -> Self {
        ValidityMask {
            grid: grid.clone(),
            valid: Array2::from_elem(grid.shape(), true),
            provenance: BTreeSet::new(),
        }
    }

    /// Pixels where the probability raster holds data.
    pub fn from_probability(p: &ProbabilityRaster) -> Self {
        ValidityMask {
            grid: p.grid.clone(),
            valid: p.probs.mapv(|v| !v.is_nan()),
            provenance: [MaskSource::Nodata].into(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Set every invalid pixel of `p` to nodata.
    pub fn apply(&self, p: &ProbabilityRaster) -> Result<ProbabilityRaster> {
        p.grid.ensure_aligned(&self.grid, "mask")?;
        let mut out = p.clone();
        Zip::from(&mut out.probs).and(&self.valid).for_each(|v, &ok| {
            if !ok {
                *v = f32::NAN;
            }
        });
        Ok(out)
    }
}

pub fn apply_scene_mask(p: &ProbabilityRaster, m: &SceneClassMask) -> Result<ProbabilityRaster> {
    m.validity().apply(p)
}

pub fn combine_masks(a: &ValidityMask, b: &ValidityMask) -> Result<ValidityMask> {
    a.grid.ensure_aligned(&b.grid, "combine_masks")?;
    Ok(ValidityMask {
        grid: a.grid.clone(),
        valid: Zip::from(&a.valid).and(&b.valid).map_collect(|&x, &y| x && y),
        provenance: a.provenance.union(&b.provenance).copied().collect(),
    })
}

/// One polygon: an outer ring followed by its holes, vertices as `(lat, lon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandPolygon {
    pub rings: Vec<Vec<(f64, f64)>>,
}

impl LandPolygon {
    fn validate(&self) -> Result<()> {
        if self.rings.is_empty() {
            return Err(Error::Geometry("polygon has no rings".into()));
        }
        for ring in &self.rings {
            if ring.len() < 4 || ring.first() != ring.last() {
                return Err(Error::Geometry("polygon ring is not closed".into()));
            }
            let mut distinct: Vec<(u64, u64)> = ring[..ring.len() - 1]
                .iter()
                .map(|(a, b)| (a.to_bits(), b.to_bits()))
                .collect();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 {
                return Err(Error::Geometry("polygon ring has fewer than 3 distinct vertices".into()));
            }
            if ring.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
                return Err(Error::Geometry("polygon ring has non-finite coordinates".into()));
            }
        }
        Ok(())
    }

    /// `(lat_min, lat_max, lon_min, lon_max)` of the outer ring.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.rings[0].iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(lat, lon)| (a.min(lat), b.max(lat), c.min(lon), d.max(lon)),
        )
    }

    /// Even-odd rule over all rings, so a point inside a hole is outside.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.rings.iter().fold(false, |inside, ring| inside ^ ring_crossings_odd(ring, lat, lon))
    }
}

fn ring_crossings_odd(ring: &[(f64, f64)], lat: f64, lon: f64) -> bool {
    let mut odd = false;
    for w in ring.windows(2) {
        let ((y0, x0), (y1, x1)) = (w[0], w[1]);
        if (y0 > lat) != (y1 > lat) {
            let x = x0 + (lat - y0) / (y1 - y0) * (x1 - x0);
            if lon < x {
                odd = !odd;
            }
        }
    }
    odd
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandPolygons {
    pub polygons: Vec<LandPolygon>,
    pub source_name: String,
}

impl LandPolygons {
    pub fn empty() -> Self {
        LandPolygons {
            polygons: Vec::new(),
            source_name: String::new(),
        }
    }

    pub fn new(polygons: Vec<LandPolygon>, source_name: impl Into<String>) -> Result<Self> {
        polygons.iter().try_for_each(LandPolygon::validate)?;
        Ok(LandPolygons {
            polygons,
            source_name: source_name.into(),
        })
    }

    /// Parse GeoJSON `Polygon` / `MultiPolygon` geometries, bare or inside `Feature` /
    /// `FeatureCollection` wrappers. Other geometry types are ignored.
    pub fn from_geojson(text: &str, source_name: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("{source_name}: {e}")))?;
        let mut polygons = Vec::new();
        collect_geometry(&doc, &mut polygons)?;
        LandPolygons::new(polygons, source_name)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_geojson(&text, &path.display().to_string())
    }

    /// Keep only polygons whose bounding box meets the given lat/lon box.
    pub fn crop(&self, lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> LandPolygons {
        let polygons = self
            .polygons
            .iter()
            .filter(|p| {
                let (a, b, c, d) = p.bbox();
                a <= lat_max && b >= lat_min && c <= lon_max && d >= lon_min
            })
            .cloned()
            .collect();
        LandPolygons {
            polygons,
            source_name: self.source_name.clone(),
        }
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(lat, lon))
    }
}

fn collect_geometry(v: &Value, out: &mut Vec<LandPolygon>) -> Result<()> {
    let kind = v.get("type").and_then(Value::as_str).unwrap_or("");
    match kind {
        "FeatureCollection" => {
            let features = v
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Parse("FeatureCollection without features".into()))?;
            for f in features {
                collect_geometry(f, out)?;
            }
        }
        "Feature" => {
            if let Some(g) = v.get("geometry").filter(|g| !g.is_null()) {
                collect_geometry(g, out)?;
            }
        }
        "GeometryCollection" => {
            for g in v.get("geometries").and_then(Value::as_array).into_iter().flatten() {
                collect_geometry(g, out)?;
            }
        }
        "Polygon" => out.push(parse_polygon(coordinates(v)?)?),
        "MultiPolygon" => {
            let parts = coordinates(v)?
                .as_array()
                .ok_or_else(|| Error::Geometry("MultiPolygon coordinates must be an array".into()))?;
            for p in parts {
                out.push(parse_polygon(p)?);
            }
        }
        "" => return Err(Error::Parse("GeoJSON object without a type".into())),
        _ => {}
    }
    Ok(())
}

fn coordinates(v: &Value) -> Result<&Value> {
    v.get("coordinates")
        .ok_or_else(|| Error::Geometry("geometry without coordinates".into()))
}

fn parse_polygon(v: &Value) -> Result<LandPolygon> {
    let bad = || Error::Geometry("malformed polygon coordinates".into());
    let rings = v
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|pt| {
                    let pt = pt.as_array().filter(|p| p.len() >= 2).ok_or_else(bad)?;
                    let lon = pt[0].as_f64().ok_or_else(bad)?;
                    let lat = pt[1].as_f64().ok_or_else(bad)?;
                    Ok((lat, lon))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandPolygon { rings })
}

/// Pixels whose centre lies inside land become invalid.
pub fn rasterize_land(polys: &LandPolygons, grid: &GeoGrid) -> Result<ValidityMask> {
    polys.polygons.iter().try_for_each(LandPolygon::validate)?;
    let mut provenance = BTreeSet::new();
    provenance.insert(MaskSource::Land);
    if polys.polygons.is_empty() {
        return Ok(ValidityMask {
            provenance,
            ..ValidityMask::all_valid(grid)
        });
    }
    let (a, b, c, d) = grid.lat_lon_bounds()?;
    let cropped = polys.crop(a, b, c, d);
    let crs = grid.crs()?;
    let valid = Zip::indexed(&Array2::<()>::default(grid.shape())).par_map_collect(|(r, col), _| {
        let (x, y) = grid.pixel_center(r, col);
        let (lat, lon) = crs.to_lat_lon(x, y);
        !cropped.contains(lat, lon)
    });
    Ok(ValidityMask {
        grid: grid.clone(),
        valid,
        provenance,
    })
}
