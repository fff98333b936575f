//! Spectral indices over the four Sentinel-2 bands the detector consumes: NDVI and the
//! Floating Debris Index (FDI).

use chrono::NaiveDate;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GeoGrid, SceneRaster};

/// Sentinel-2 band used by the detector, with its central wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub role: &'static str,
    pub sentinel2_band: u8,
    pub wavelength_nm: f64,
}

pub const RED: BandSpec = BandSpec {
    role: "red",
    sentinel2_band: 4,
    wavelength_nm: 665.0,
};
pub const RED_EDGE_2: BandSpec = BandSpec {
    role: "re2",
    sentinel2_band: 6,
    wavelength_nm: 740.0,
};
pub const NIR: BandSpec = BandSpec {
    role: "nir",
    sentinel2_band: 8,
    wavelength_nm: 842.0,
};
pub const SWIR1: BandSpec = BandSpec {
    role: "swir1",
    sentinel2_band: 11,
    wavelength_nm: 1610.4,
};

/// The four bands in detector input order.
pub const DETECTOR_BANDS: [BandSpec; 4] = [RED, RED_EDGE_2, NIR, SWIR1];

/// Baseline interpolation factor of the FDI:
/// `10 * (λ_nir - λ_red) / (λ_swir1 - λ_red)`.
pub fn fdi_baseline_factor() -> f64 {
    10.0 * (NIR.wavelength_nm - RED.wavelength_nm) / (SWIR1.wavelength_nm - RED.wavelength_nm)
}

/// Band names to look up in a scene raster for each detector band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandNames {
    #[serde(default = "default_red")]
    pub red: String,
    #[serde(default = "default_re2")]
    pub re2: String,
    #[serde(default = "default_nir")]
    pub nir: String,
    #[serde(default = "default_swir1")]
    pub swir1: String,
}

fn default_red() -> String {
    "B4".into()
}
fn default_re2() -> String {
    "B6".into()
}
fn default_nir() -> String {
    "B8".into()
}
fn default_swir1() -> String {
    "B11".into()
}

impl Default for BandNames {
    fn default() -> Self {
        BandNames {
            red: default_red(),
            re2: default_re2(),
            nir: default_nir(),
            swir1: default_swir1(),
        }
    }
}

impl BandNames {
    /// ACOLITE surface-reflectance band names for Sentinel-2A.
    pub fn acolite_s2a() -> Self {
        BandNames {
            red: "rhos_665".into(),
            re2: "rhos_740".into(),
            nir: "rhos_833".into(),
            swir1: "rhos_1614".into(),
        }
    }
}

/// Red, red-edge 2, NIR and SWIR1 reflectance planes of one acquisition. Nodata is NaN.
#[derive(Debug, Clone)]
pub struct BandQuad {
    pub red: Array2<f32>,
    pub re2: Array2<f32>,
    pub nir: Array2<f32>,
    pub swir1: Array2<f32>,
    pub grid: GeoGrid,
    pub date: NaiveDate,
}

impl BandQuad {
    pub fn new(
        grid: GeoGrid,
        date: NaiveDate,
        red: Array2<f32>,
        re2: Array2<f32>,
        nir: Array2<f32>,
        swir1: Array2<f32>,
    ) -> Result<Self> {
        let q = BandQuad {
            red,
            re2,
            nir,
            swir1,
            grid,
            date,
        };
        q.check()?;
        Ok(q)
    }

    fn check(&self) -> Result<()> {
        let shape = self.grid.shape();
        for (name, p) in self.planes() {
            if p.dim() != shape {
                return Err(Error::Argument(format!(
                    "{name} plane has shape {:?}, grid is {shape:?}",
                    p.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn planes(&self) -> [(&'static str, &Array2<f32>); 4] {
        [
            (RED.role, &self.red),
            (RED_EDGE_2.role, &self.re2),
            (NIR.role, &self.nir),
            (SWIR1.role, &self.swir1),
        ]
    }

    pub fn from_scene(scene: &SceneRaster, names: &BandNames) -> Result<Self> {
        let get = |name: &str| {
            scene
                .band_nan(name)
                .ok_or_else(|| Error::Integrity(format!("scene {} has no band `{name}`", scene.acquisition_date)))
        };
        BandQuad::new(
            scene.grid.clone(),
            scene.acquisition_date,
            get(&names.red)?,
            get(&names.re2)?,
            get(&names.nir)?,
            get(&names.swir1)?,
        )
    }

    /// Scene raster with the four bands under their Sentinel-2 names (`B4`, `B6`, `B8`,
    /// `B11`), NaN mapped to `nodata`.
    pub fn to_scene(&self, nodata: f32) -> Result<SceneRaster> {
        let bands = DETECTOR_BANDS
            .iter()
            .zip(self.planes())
            .map(|(spec, (_, plane))| {
                crate::raster::Band::new(
                    format!("B{}", spec.sentinel2_band),
                    plane.mapv(|v| if v.is_nan() { nodata } else { v }),
                    Some(spec.wavelength_nm),
                )
            })
            .collect();
        SceneRaster::new(self.grid.clone(), bands, self.date, nodata)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    Ndvi,
    Fdi,
}

impl IndexKind {
    pub fn name(&self) -> &'static str {
        match self {
            IndexKind::Ndvi => "NDVI",
            IndexKind::Fdi => "FDI",
        }
    }
}

/// One index plane; NaN is nodata. Nodata in any of the four input bands yields nodata.
#[derive(Debug, Clone)]
pub struct IndexRaster {
    pub grid: GeoGrid,
    pub values: Array2<f32>,
    pub index_name: IndexKind,
}

pub fn ndvi_value(red: f64, nir: f64) -> Option<f64> {
    let den = nir + red;
    if den == 0.0 || !den.is_finite() {
        None
    } else {
        Some((nir - red) / den)
    }
}

pub fn fdi_value(re2: f64, nir: f64, swir1: f64) -> Option<f64> {
    let nir_baseline = re2 + (swir1 - re2) * fdi_baseline_factor();
    let v = nir - nir_baseline;
    v.is_finite().then_some(v)
}

pub fn ndvi(q: &BandQuad) -> Result<IndexRaster> {
    q.check()?;
    let values = Zip::from(&q.red)
        .and(&q.re2)
        .and(&q.nir)
        .and(&q.swir1)
        .par_map_collect(|&red, &re2, &nir, &swir1| {
            if re2.is_nan() || swir1.is_nan() {
                return f32::NAN;
            }
            ndvi_value(red as f64, nir as f64).map_or(f32::NAN, |v| v as f32)
        });
    Ok(IndexRaster {
        grid: q.grid.clone(),
        values,
        index_name: IndexKind::Ndvi,
    })
}

pub fn fdi(q: &BandQuad) -> Result<IndexRaster> {
    q.check()?;
    let values = Zip::from(&q.red)
        .and(&q.re2)
        .and(&q.nir)
        .and(&q.swir1)
        .par_map_collect(|&red, &re2, &nir, &swir1| {
            if red.is_nan() {
                return f32::NAN;
            }
            fdi_value(re2 as f64, nir as f64, swir1 as f64).map_or(f32::NAN, |v| v as f32)
        });
    Ok(IndexRaster {
        grid: q.grid.clone(),
        values,
        index_name: IndexKind::Fdi,
    })
}
