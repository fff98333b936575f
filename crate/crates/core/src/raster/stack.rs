use chrono::NaiveDate;
use ndarray::Array2;

use super::{GeoGrid, SceneRaster};
use crate::error::{Error, Result};

/// Date-ordered single-band layers on one grid. Entries with `valid == false` carry no
/// information and are ignored by every consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct DateStack {
    pub grid: GeoGrid,
    pub dates: Vec<NaiveDate>,
    pub layers: Vec<Array2<f32>>,
    pub valid: Vec<Array2<bool>>,
}

impl DateStack {
    /// Build a stack from `(date, layer, valid)` entries in any order.
    pub fn new(grid: GeoGrid, mut entries: Vec<(NaiveDate, Array2<f32>, Array2<bool>)>) -> Result<Self> {
        grid.validate()?;
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Argument("stack dates must be distinct".into()));
        }
        for (date, layer, valid) in &entries {
            if layer.dim() != grid.shape() || valid.dim() != grid.shape() {
                return Err(Error::Argument(format!("layer for {date} does not match the stack grid")));
            }
        }
        let mut stack = DateStack {
            grid,
            dates: Vec::with_capacity(entries.len()),
            layers: Vec::with_capacity(entries.len()),
            valid: Vec::with_capacity(entries.len()),
        };
        for (d, l, v) in entries {
            stack.dates.push(d);
            stack.layers.push(l);
            stack.valid.push(v);
        }
        Ok(stack)
    }

    /// Stack from layers where NaN marks an invalid entry.
    pub fn from_nan_layers(grid: GeoGrid, entries: Vec<(NaiveDate, Array2<f32>)>) -> Result<Self> {
        let entries = entries
            .into_iter()
            .map(|(d, l)| {
                let v = l.mapv(|x| !x.is_nan());
                (d, l, v)
            })
            .collect();
        DateStack::new(grid, entries)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Valid observations of pixel `(row, col)` in date order.
    pub fn observations(&self, row: usize, col: usize) -> impl Iterator<Item = f32> + '_ {
        self.layers
            .iter()
            .zip(&self.valid)
            .filter(move |(_, v)| v[[row, col]])
            .map(move |(l, _)| l[[row, col]])
    }
}

/// Resample single-band rasters (nearest neighbour) onto the intersection of their
/// footprints. The first raster in date order fixes the pixel size and grid phase.
pub fn align_stack(rasters: &[SceneRaster]) -> Result<DateStack> {
    if rasters.is_empty() {
        return Err(Error::Argument("cannot align an empty raster list".into()));
    }
    if let Some(r) = rasters.iter().find(|r| r.bands.len() != 1) {
        return Err(Error::Argument(format!(
            "align_stack expects single-band rasters, {} has {} bands",
            r.acquisition_date,
            r.bands.len()
        )));
    }
    let mut order: Vec<&SceneRaster> = rasters.iter().collect();
    order.sort_by_key(|r| r.acquisition_date);
    let reference = &order[0].grid;
    if let Some(r) = order.iter().find(|r| r.grid.crs_id != reference.crs_id) {
        return Err(Error::Alignment(format!(
            "CRS mismatch: {} vs {}",
            reference.crs_id, r.grid.crs_id
        )));
    }

    let grid = if order.iter().all(|r| r.grid.is_aligned_with(reference)) {
        reference.clone()
    } else {
        intersection_grid(reference, order.iter().map(|r| &r.grid))?
    };

    let entries = order
        .iter()
        .map(|r| {
            let (layer, valid) = resample(r, &grid);
            (r.acquisition_date, layer, valid)
        })
        .collect();
    DateStack::new(grid, entries)
}

fn intersection_grid<'a>(reference: &GeoGrid, grids: impl Iterator<Item = &'a GeoGrid>) -> Result<GeoGrid> {
    let (mut x0, mut x1, mut y0, mut y1) = reference.bounds();
    for g in grids {
        let (a0, a1, b0, b1) = g.bounds();
        x0 = x0.max(a0);
        x1 = x1.min(a1);
        y0 = y0.max(b0);
        y1 = y1.min(b1);
    }
    let px = reference.pixel_size_x;
    let py = reference.pixel_size_y.abs();
    // Snap inwards to the reference lattice so resampled pixels stay phase-aligned.
    let snap = |v: f64, origin: f64, step: f64, up: bool| {
        let k = (v - origin) / step;
        let k = if up { (k - 1e-9).ceil() } else { (k + 1e-9).floor() };
        origin + k * step
    };
    let x0 = snap(x0, reference.origin_x, px, true);
    let x1 = snap(x1, reference.origin_x, px, false);
    let y0 = snap(y0, reference.origin_y, py, true);
    let y1 = snap(y1, reference.origin_y, py, false);
    let width = ((x1 - x0) / px).round();
    let height = ((y1 - y0) / py).round();
    if width < 1.0 || height < 1.0 {
        return Err(Error::Alignment("raster footprints do not intersect".into()));
    }
    let origin_y = if reference.pixel_size_y < 0.0 { y1 } else { y0 };
    GeoGrid::new(
        width as usize,
        height as usize,
        (x0, origin_y),
        (px, reference.pixel_size_y),
        reference.crs_id.clone(),
    )
}

fn resample(raster: &SceneRaster, target: &GeoGrid) -> (Array2<f32>, Array2<bool>) {
    let src = &raster.bands[0].data;
    let mut layer = Array2::from_elem(target.shape(), f32::NAN);
    let mut valid = Array2::from_elem(target.shape(), false);
    for r in 0..target.height {
        for c in 0..target.width {
            let (x, y) = target.pixel_center(r, c);
            if let Some(idx) = raster.grid.pixel_of(x, y) {
                let v = src[idx];
                if !raster.is_nodata(v) {
                    layer[[r, c]] = v;
                    valid[[r, c]] = true;
                }
            }
        }
    }
    (layer, valid)
}
