//! Sidecar raster format: `<stem>.json` header plus `<stem>.bin` holding the band-major,
//! row-major little-endian float32 payload.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Band, GeoGrid, RasterHeader, SceneRaster};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    width: usize,
    height: usize,
    #[serde(default)]
    origin: Option<[f64; 2]>,
    #[serde(default)]
    pixel_size: Option<[f64; 2]>,
    #[serde(default)]
    crs: Option<String>,
    bands: Vec<BandHeader>,
    #[serde(default)]
    date: Option<NaiveDate>,
    /// `null` encodes a NaN sentinel.
    #[serde(default)]
    nodata: Option<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandHeader {
    name: String,
    #[serde(default)]
    wavelength_nm: Option<f64>,
}

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

fn parse_header(header_path: &Path) -> Result<(Header, RasterHeader)> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    let (origin, pixel_size) = match (header.origin, header.pixel_size) {
        (Some(o), Some(p)) => (o, p),
        _ => {
            return Err(Error::Metadata(format!(
                "{}: missing origin/pixel_size geotransform",
                header_path.display()
            )))
        }
    };
    let crs = header
        .crs
        .clone()
        .ok_or_else(|| Error::Metadata(format!("{}: missing crs", header_path.display())))?;
    let grid = GeoGrid::new(
        header.width,
        header.height,
        (origin[0], origin[1]),
        (pixel_size[0], pixel_size[1]),
        crs,
    )
    .map_err(|e| Error::Metadata(format!("{}: {e}", header_path.display())))?;
    let date = header
        .date
        .or_else(|| {
            header_path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(super::date_from_name)
        })
        .ok_or_else(|| Error::Metadata(format!("{}: no acquisition date", header_path.display())))?;
    if header.bands.is_empty() {
        return Err(Error::EmptyRaster);
    }
    let summary = RasterHeader {
        grid,
        band_names: header.bands.iter().map(|b| b.name.clone()).collect(),
        acquisition_date: date,
        nodata: header.nodata.unwrap_or(f32::NAN),
    };
    Ok((header, summary))
}

pub(super) fn read_header(path: &Path) -> Result<RasterHeader> {
    let (header_path, _) = paths(path);
    parse_header(&header_path).map(|(_, h)| h)
}

pub(super) fn read(path: &Path) -> Result<SceneRaster> {
    let (header_path, data_path) = paths(path);
    let (header, summary) = parse_header(&header_path)?;
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let plane = header.width * header.height;
    let expected = plane * header.bands.len() * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header implies {expected}",
            data_path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let bands = header
        .bands
        .into_iter()
        .enumerate()
        .map(|(i, b)| {
            let data = Array2::from_shape_vec(
                (header.height, header.width),
                values[i * plane..(i + 1) * plane].to_vec(),
            )
            .expect("payload length checked above");
            Band::new(b.name, data, b.wavelength_nm)
        })
        .collect();
    SceneRaster::new(summary.grid, bands, summary.acquisition_date, summary.nodata)
        .map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))
}

pub(super) fn write(raster: &SceneRaster, path: &Path) -> Result<()> {
    let (header_path, data_path) = paths(path);
    let g = &raster.grid;
    let header = Header {
        width: g.width,
        height: g.height,
        origin: Some([g.origin_x, g.origin_y]),
        pixel_size: Some([g.pixel_size_x, g.pixel_size_y]),
        crs: Some(g.crs_id.clone()),
        bands: raster
            .bands
            .iter()
            .map(|b| BandHeader {
                name: b.name.clone(),
                wavelength_nm: b.wavelength_nm,
            })
            .collect(),
        date: Some(raster.acquisition_date),
        nodata: (!raster.nodata.is_nan()).then_some(raster.nodata),
    };
    let mut bytes = Vec::with_capacity(g.width * g.height * raster.bands.len() * 4);
    for band in &raster.bands {
        for v in band.data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&data_path, &bytes).map_err(|e| Error::io(&data_path, e))?;
    let text = serde_json::to_string_pretty(&header).expect("header serialises");
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
    Ok(())
}
