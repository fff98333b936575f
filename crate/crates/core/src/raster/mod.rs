//! Georeferenced raster model, file I/O, patch tiling and date stacks.

mod geotiff;
mod sidecar;
mod stack;
mod tiling;

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::crs::Crs;
use crate::error::{Error, Result};

pub use stack::{align_stack, DateStack};
pub use tiling::{stitch, tile, Patch, PatchSet};

/// Default nodata sentinel written by the engine.
pub const DEFAULT_NODATA: f32 = -9999.0;

/// Affine north-up grid: pixel `(row, col)` has its top-left corner at
/// `(origin_x + col * pixel_size_x, origin_y + row * pixel_size_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub crs_id: String,
}

impl GeoGrid {
    pub fn new(
        width: usize,
        height: usize,
        origin: (f64, f64),
        pixel_size: (f64, f64),
        crs_id: impl Into<String>,
    ) -> Result<Self> {
        let grid = GeoGrid {
            width,
            height,
            origin_x: origin.0,
            origin_y: origin.1,
            pixel_size_x: pixel_size.0,
            pixel_size_y: pixel_size.1,
            crs_id: crs_id.into(),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument(format!(
                "grid dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size_x > 0.0) || !self.pixel_size_x.is_finite() {
            return Err(Error::Argument(format!(
                "pixel_size_x must be positive, got {}",
                self.pixel_size_x
            )));
        }
        if self.pixel_size_y == 0.0 || !self.pixel_size_y.is_finite() {
            return Err(Error::Argument("pixel_size_y must be nonzero".into()));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Argument("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// CRS coordinates of the centre of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size_x,
            self.origin_y + (row as f64 + 0.5) * self.pixel_size_y,
        )
    }

    /// Pixel containing CRS point `(x, y)`, or `None` when it falls outside the grid.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.pixel_size_x).floor();
        let row = ((y - self.origin_y) / self.pixel_size_y).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// `(x_min, x_max, y_min, y_max)` of the grid footprint.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let x1 = self.origin_x + self.width as f64 * self.pixel_size_x;
        let y1 = self.origin_y + self.height as f64 * self.pixel_size_y;
        (
            self.origin_x.min(x1),
            self.origin_x.max(x1),
            self.origin_y.min(y1),
            self.origin_y.max(y1),
        )
    }

    pub fn crs(&self) -> Result<Crs> {
        Crs::parse(&self.crs_id)
    }

    /// Latitude/longitude of every pixel centre, row-major.
    pub fn pixel_lat_lon(&self) -> Result<Array2<(f64, f64)>> {
        let crs = self.crs()?;
        Ok(Array2::from_shape_fn(self.shape(), |(r, c)| {
            let (x, y) = self.pixel_center(r, c);
            crs.to_lat_lon(x, y)
        }))
    }

    /// `(lat_min, lat_max, lon_min, lon_max)` enclosing the grid, sampled along its edges.
    pub fn lat_lon_bounds(&self) -> Result<(f64, f64, f64, f64)> {
        let crs = self.crs()?;
        let (x0, x1, y0, y1) = self.bounds();
        let mut lat = (f64::INFINITY, f64::NEG_INFINITY);
        let mut lon = (f64::INFINITY, f64::NEG_INFINITY);
        const STEPS: usize = 16;
        for i in 0..=STEPS {
            let t = i as f64 / STEPS as f64;
            for (x, y) in [
                (x0 + t * (x1 - x0), y0),
                (x0 + t * (x1 - x0), y1),
                (x0, y0 + t * (y1 - y0)),
                (x1, y0 + t * (y1 - y0)),
            ] {
                let (la, lo) = crs.to_lat_lon(x, y);
                lat = (lat.0.min(la), lat.1.max(la));
                lon = (lon.0.min(lo), lon.1.max(lo));
            }
        }
        Ok((lat.0, lat.1, lon.0, lon.1))
    }

    /// Same dimensions, CRS and (to 1e-9 of a pixel) the same transform.
    pub fn is_aligned_with(&self, other: &GeoGrid) -> bool {
        let tol_x = self.pixel_size_x.abs() * 1e-9;
        let tol_y = self.pixel_size_y.abs() * 1e-9;
        self.width == other.width
            && self.height == other.height
            && self.crs_id == other.crs_id
            && (self.origin_x - other.origin_x).abs() <= tol_x
            && (self.origin_y - other.origin_y).abs() <= tol_y
            && (self.pixel_size_x - other.pixel_size_x).abs() <= tol_x
            && (self.pixel_size_y - other.pixel_size_y).abs() <= tol_y
    }

    pub(crate) fn ensure_aligned(&self, other: &GeoGrid, what: &str) -> Result<()> {
        if self.is_aligned_with(other) {
            Ok(())
        } else {
            Err(Error::Alignment(format!("{what}: grids are not aligned")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub data: Array2<f32>,
    pub wavelength_nm: Option<f64>,
}

impl Band {
    pub fn new(name: impl Into<String>, data: Array2<f32>, wavelength_nm: Option<f64>) -> Self {
        Band {
            name: name.into(),
            data,
            wavelength_nm,
        }
    }
}

/// One acquisition: a stack of co-registered bands on a [`GeoGrid`].
#[derive(Debug, Clone)]
pub struct SceneRaster {
    pub grid: GeoGrid,
    pub bands: Vec<Band>,
    pub acquisition_date: NaiveDate,
    pub nodata: f32,
}

impl SceneRaster {
    pub fn new(grid: GeoGrid, bands: Vec<Band>, acquisition_date: NaiveDate, nodata: f32) -> Result<Self> {
        let raster = SceneRaster {
            grid,
            bands,
            acquisition_date,
            nodata,
        };
        raster.validate()?;
        Ok(raster)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.bands.is_empty() {
            return Err(Error::EmptyRaster);
        }
        let mut names = HashSet::new();
        for band in &self.bands {
            if band.data.dim() != self.grid.shape() {
                return Err(Error::Argument(format!(
                    "band `{}` has shape {:?}, grid is {:?}",
                    band.name,
                    band.data.dim(),
                    self.grid.shape()
                )));
            }
            if !names.insert(band.name.as_str()) {
                return Err(Error::Argument(format!("duplicate band name `{}`", band.name)));
            }
            if let Some(v) = band.data.iter().find(|v| !v.is_finite() && !self.is_nodata(**v)) {
                return Err(Error::Argument(format!(
                    "band `{}` contains non-finite value {v} that is not nodata",
                    band.name
                )));
            }
        }
        Ok(())
    }

    /// Single-band raster.
    pub fn single(grid: GeoGrid, name: &str, data: Array2<f32>, date: NaiveDate, nodata: f32) -> Result<Self> {
        SceneRaster::new(grid, vec![Band::new(name, data, None)], date, nodata)
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        v.is_nan() || v == self.nodata
    }

    pub fn band(&self, name: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.name == name)
    }

    /// Copy of the named band with nodata replaced by NaN.
    pub fn band_nan(&self, name: &str) -> Option<Array2<f32>> {
        self.band(name)
            .map(|b| b.data.mapv(|v| if self.is_nodata(v) { f32::NAN } else { v }))
    }

    /// Raw payload comparison: grid, band names, wavelengths, date and the bit patterns of
    /// every sample.
    pub fn bit_eq(&self, other: &SceneRaster) -> bool {
        self.grid == other.grid
            && self.acquisition_date == other.acquisition_date
            && self.nodata.to_bits() == other.nodata.to_bits()
            && self.bands.len() == other.bands.len()
            && self.bands.iter().zip(&other.bands).all(|(a, b)| {
                a.name == b.name
                    && a.wavelength_nm == b.wavelength_nm
                    && a.data.dim() == b.data.dim()
                    && a.data.iter().zip(b.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Header fields of a raster file, without the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterHeader {
    pub grid: GeoGrid,
    pub band_names: Vec<String>,
    pub acquisition_date: NaiveDate,
    pub nodata: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    /// Raw little-endian float32 payload plus JSON header.
    Sidecar,
    GeoTiff,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<RasterFormat> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "json" | "bin" => Ok(RasterFormat::Sidecar),
            "tif" | "tiff" => Ok(RasterFormat::GeoTiff),
            _ => Err(Error::Format(format!(
                "unsupported raster extension for {}",
                path.display()
            ))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            RasterFormat::Sidecar => "json",
            RasterFormat::GeoTiff => "tif",
        }
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<SceneRaster> {
    let path = path.as_ref();
    match RasterFormat::from_path(path)? {
        RasterFormat::Sidecar => sidecar::read(path),
        RasterFormat::GeoTiff => geotiff::read(path),
    }
}

pub fn read_raster_header(path: impl AsRef<Path>) -> Result<RasterHeader> {
    let path = path.as_ref();
    match RasterFormat::from_path(path)? {
        RasterFormat::Sidecar => sidecar::read_header(path),
        RasterFormat::GeoTiff => geotiff::read_header(path),
    }
}

pub fn write_raster(raster: &SceneRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    raster.validate()?;
    match RasterFormat::from_path(path)? {
        RasterFormat::Sidecar => sidecar::write(raster, path),
        RasterFormat::GeoTiff => geotiff::write(raster, path),
    }
}

/// Locate `<dir>/<stem>.json` or `<dir>/<stem>.tif[f]`, preferring the sidecar.
pub fn find_raster(dir: &Path, stem: &str) -> Option<std::path::PathBuf> {
    ["json", "tif", "tiff"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Extract a date from a file or folder name: `YYYY-MM-DD`, `YYYY_MM_DD` or `YYYYMMDD`
/// (the last also matches Sentinel-2 product names such as `..._20220105T021341_...`).
pub fn date_from_name(name: &str) -> Option<NaiveDate> {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        regex::Regex::new(r"(?:^|[^0-9])((?:19|20)\d{2})[-_]?(\d{2})[-_]?(\d{2})(?:[^0-9]|$)").unwrap()
    });
    re.captures_iter(name).find_map(|c| {
        NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?)
    })
}
