use ndarray::{s, Array2, Array3};

use super::{GeoGrid, SceneRaster};
use crate::error::{Error, Result};

/// One window of a [`PatchSet`]; `data` is band-major `(band, row, col)`.
#[derive(Debug, Clone)]
pub struct Patch {
    pub row_offset: usize,
    pub col_offset: usize,
    pub data: Array3<f32>,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }
}

#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patch_size: usize,
    pub overlap: usize,
    pub patches: Vec<Patch>,
    pub source_grid: GeoGrid,
}

/// Window offsets along one axis. The last window is pulled back so it ends on the edge,
/// which keeps every window inside the source. An axis shorter than the window yields a
/// single window spanning the whole axis.
fn axis_offsets(len: usize, patch: usize, step: usize) -> Vec<usize> {
    if len <= patch {
        return vec![0];
    }
    let mut offsets = Vec::new();
    let mut off = 0;
    loop {
        offsets.push(off);
        if off + patch >= len {
            break;
        }
        off += step;
        if off + patch > len {
            offsets.push(len - patch);
            break;
        }
    }
    offsets
}

pub fn tile(raster: &SceneRaster, patch_size: usize, overlap: usize) -> Result<PatchSet> {
    if patch_size == 0 {
        return Err(Error::Argument("patch_size must be positive".into()));
    }
    if patch_size <= overlap {
        return Err(Error::Argument(format!(
            "patch_size {patch_size} must exceed overlap {overlap}"
        )));
    }
    let (h, w) = raster.grid.shape();
    let step = patch_size - overlap;
    let rows = axis_offsets(h, patch_size, step);
    let cols = axis_offsets(w, patch_size, step);
    let (ph, pw) = (patch_size.min(h), patch_size.min(w));

    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let mut data = Array3::zeros((raster.bands.len(), ph, pw));
            for (b, band) in raster.bands.iter().enumerate() {
                data.slice_mut(s![b, .., ..])
                    .assign(&band.data.slice(s![r..r + ph, c..c + pw]));
            }
            patches.push(Patch {
                row_offset: r,
                col_offset: c,
                data,
            });
        }
    }
    Ok(PatchSet {
        patch_size,
        overlap,
        patches,
        source_grid: raster.grid.clone(),
    })
}

/// Reassemble per-patch planes onto the source grid. Pixels covered by several patches get
/// the arithmetic mean of the contributing values; NaN contributions are skipped, and a
/// pixel with no finite contribution is NaN.
pub fn stitch(patch_set: &PatchSet, planes: &[Array2<f32>]) -> Result<Array2<f32>> {
    if planes.len() != patch_set.patches.len() {
        return Err(Error::Argument(format!(
            "{} planes supplied for {} patches",
            planes.len(),
            patch_set.patches.len()
        )));
    }
    let shape = patch_set.source_grid.shape();
    let mut sum = Array2::<f64>::zeros(shape);
    let mut count = Array2::<u32>::zeros(shape);
    for (patch, plane) in patch_set.patches.iter().zip(planes) {
        if plane.dim() != (patch.rows(), patch.cols()) {
            return Err(Error::Argument(format!(
                "plane for patch at ({}, {}) has shape {:?}, expected {:?}",
                patch.row_offset,
                patch.col_offset,
                plane.dim(),
                (patch.rows(), patch.cols())
            )));
        }
        for ((r, c), &v) in plane.indexed_iter() {
            if v.is_nan() {
                continue;
            }
            let idx = [patch.row_offset + r, patch.col_offset + c];
            sum[idx] += v as f64;
            count[idx] += 1;
        }
    }
    Ok(ndarray::Zip::from(&sum)
        .and(&count)
        .map_collect(|&s, &n| if n == 0 { f32::NAN } else { (s / n as f64) as f32 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Band, DEFAULT_NODATA};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn raster(h: usize, w: usize, bands: usize) -> SceneRaster {
        let g = GeoGrid::new(w, h, (0.0, 0.0), (10.0, -10.0), "EPSG:32631").unwrap();
        let bands = (0..bands)
            .map(|b| {
                Band::new(
                    format!("b{b}"),
                    Array2::from_shape_fn((h, w), |(r, c)| (b * 10_000 + r * 100 + c) as f32),
                    None,
                )
            })
            .collect();
        SceneRaster::new(g, bands, NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), DEFAULT_NODATA).unwrap()
    }

    fn offsets(ps: &PatchSet) -> Vec<(usize, usize)> {
        ps.patches.iter().map(|p| (p.row_offset, p.col_offset)).collect()
    }

    #[test]
    fn divisible_raster_tiles_exactly() {
        let ps = tile(&raster(64, 64, 2), 32, 0).unwrap();
        assert_eq!(offsets(&ps), vec![(0, 0), (0, 32), (32, 0), (32, 32)]);
        assert_eq!(ps.patches[3].data[[1, 0, 0]], 13_232.0);
    }

    #[test]
    fn ragged_edge_is_clamped() {
        let ps = tile(&raster(33, 33, 1), 32, 0).unwrap();
        assert_eq!(offsets(&ps), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(ps.patches.iter().all(|p| p.rows() == 32 && p.cols() == 32));
    }

    #[test]
    fn overlap_must_be_smaller_than_patch() {
        assert!(matches!(tile(&raster(8, 8, 1), 32, 32), Err(Error::Argument(_))));
        assert!(matches!(tile(&raster(8, 8, 1), 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn small_raster_yields_one_short_patch() {
        let ps = tile(&raster(5, 7, 1), 32, 8).unwrap();
        assert_eq!(offsets(&ps), vec![(0, 0)]);
        assert_eq!((ps.patches[0].rows(), ps.patches[0].cols()), (5, 7));
    }

    #[test]
    fn overlapping_values_are_averaged() {
        let r = raster(4, 6, 1);
        let ps = tile(&r, 4, 2).unwrap();
        assert_eq!(offsets(&ps), vec![(0, 0), (0, 2)]);
        let planes = vec![Array2::from_elem((4, 4), 0.2f32), Array2::from_elem((4, 4), 0.4f32)];
        let out = stitch(&ps, &planes).unwrap();
        assert_eq!(out[[0, 0]], 0.2);
        assert!((out[[0, 2]] - 0.3).abs() < 1e-7);
        assert!((out[[3, 3]] - 0.3).abs() < 1e-7);
        assert_eq!(out[[0, 5]], 0.4);
    }

    #[test]
    fn stitch_rejects_missing_plane() {
        let ps = tile(&raster(64, 64, 1), 32, 0).unwrap();
        let planes = vec![Array2::zeros((32, 32)); 3];
        assert!(matches!(stitch(&ps, &planes), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn every_pixel_is_covered(h in 1usize..70, w in 1usize..70, patch in 2usize..40, ov in 0usize..20) {
            prop_assume!(ov < patch);
            let r = raster(h, w, 1);
            let ps = tile(&r, patch, ov).unwrap();
            let mut cover = Array2::<u32>::zeros((h, w));
            for p in &ps.patches {
                cover.slice_mut(s![p.row_offset..p.row_offset + p.rows(), p.col_offset..p.col_offset + p.cols()])
                    .mapv_inplace(|v| v + 1);
                prop_assert!(p.row_offset + p.rows() <= h && p.col_offset + p.cols() <= w);
            }
            prop_assert!(cover.iter().all(|&c| c >= 1));
            if ov == 0 && h % patch == 0 && w % patch == 0 {
                prop_assert!(cover.iter().all(|&c| c == 1));
            }
        }

        #[test]
        fn stitch_inverts_tile(h in 2usize..60, w in 2usize..60, patch in 2usize..40) {
            prop_assume!(patch <= h.min(w));
            let r = raster(h, w, 1);
            let ps = tile(&r, patch, 0).unwrap();
            let planes: Vec<_> = ps.patches.iter().map(|p| p.data.slice(s![0, .., ..]).to_owned()).collect();
            let out = stitch(&ps, &planes).unwrap();
            prop_assert_eq!(out, r.bands[0].data.clone());
        }
    }
}
