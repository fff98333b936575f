//! Scene discovery: catalog queries, downloads with checksum verification, and
//! manifests of scenes already on disk.

mod catalog;
mod transport;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::error::{Error, Result};
use crate::raster::{find_raster, read_raster_header};

pub use catalog::{page_url, parse_page, parse_wkt, query_catalog, query_expression, Page, PAGE_ROWS};
pub use transport::{
    transport_for, with_retry, FileTransport, HttpTransport, Transport, ENV_ENDPOINT, ENV_PASS, ENV_USER,
};

/// File stem of the reflectance raster inside each local scene directory.
pub const SCENE_RASTER_STEM: &str = "bands";

/// Rectangle given by two opposite corners, plus an inclusive date range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    /// `(lat, lon)` in degrees.
    pub corner_a: (f64, f64),
    pub corner_b: (f64, f64),
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
}

impl RoiSpec {
    pub fn new(corner_a: (f64, f64), corner_b: (f64, f64), date_start: NaiveDate, date_end: NaiveDate) -> Result<Self> {
        let roi = RoiSpec {
            corner_a,
            corner_b,
            date_start,
            date_end,
        };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        for (lat, lon) in [self.corner_a, self.corner_b] {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Validation(format!("ROI corner ({lat}, {lon}) is out of range")));
            }
        }
        if self.corner_a.0 == self.corner_b.0 || self.corner_a.1 == self.corner_b.1 {
            return Err(Error::Validation("ROI corners do not span a rectangle".into()));
        }
        if self.date_start > self.date_end {
            return Err(Error::Validation(format!(
                "ROI date range {} .. {} is reversed",
                self.date_start, self.date_end
            )));
        }
        Ok(())
    }

    /// `(lat_min, lat_max, lon_min, lon_max)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let (a, b) = (self.corner_a, self.corner_b);
        (a.0.min(b.0), a.0.max(b.0), a.1.min(b.1), a.1.max(b.1))
    }

    /// Closed WKT polygon, `lon lat` order.
    pub fn wkt(&self) -> String {
        let (la0, la1, lo0, lo1) = self.bbox();
        format!("POLYGON(({lo0} {la0}, {lo1} {la0}, {lo1} {la1}, {lo0} {la1}, {lo0} {la0}))")
    }

    pub fn contains_date(&self, d: NaiveDate) -> bool {
        self.date_start <= d && d <= self.date_end
    }

    /// Whether any ring of `footprint` (`(lat, lon)` vertices) meets the rectangle.
    pub fn intersects(&self, footprint: &[Vec<(f64, f64)>]) -> bool {
        let bbox = self.bbox();
        footprint.iter().any(|ring| ring_meets_rect(ring, bbox))
    }
}

fn ring_meets_rect(ring: &[(f64, f64)], (la0, la1, lo0, lo1): (f64, f64, f64, f64)) -> bool {
    let inside_rect = |&(lat, lon): &(f64, f64)| (la0..=la1).contains(&lat) && (lo0..=lo1).contains(&lon);
    if ring.iter().any(inside_rect) {
        return true;
    }
    let corners = [(la0, lo0), (la0, lo1), (la1, lo1), (la1, lo0)];
    let in_ring = |(lat, lon): (f64, f64)| {
        let mut odd = false;
        for w in ring.windows(2) {
            let ((y0, x0), (y1, x1)) = (w[0], w[1]);
            if (y0 > lat) != (y1 > lat) && lon < x0 + (lat - y0) / (y1 - y0) * (x1 - x0) {
                odd = !odd;
            }
        }
        odd
    };
    if corners.iter().any(|&c| in_ring(c)) {
        return true;
    }
    let edges: Vec<_> = (0..4).map(|i| (corners[i], corners[(i + 1) % 4])).collect();
    ring.windows(2)
        .any(|w| edges.iter().any(|&(a, b)| segments_cross(w[0], w[1], a, b)))
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let (d1, d2) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let (d3, d4) = (orient(p1, p2, q1), orient(p1, p2, q2));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub sensing_date: NaiveDate,
    /// Rings of `(lat, lon)` vertices.
    pub footprint: Vec<Vec<(f64, f64)>>,
    /// Absent when the source does not report it.
    pub cloud_cover_pct: Option<f64>,
    pub download_uri: String,
    pub local_path: Option<PathBuf>,
    pub checksum_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub roi: RoiSpec,
    pub scenes: Vec<SceneRecord>,
    pub created_at: DateTime<Utc>,
}

impl Manifest {
    /// Sorts by `(sensing_date, scene_id)`; duplicate IDs keep their first occurrence.
    pub fn new(roi: RoiSpec, mut scenes: Vec<SceneRecord>) -> Self {
        let mut seen = std::collections::HashSet::new();
        scenes.retain(|s| seen.insert(s.scene_id.clone()));
        scenes.sort_by(|a, b| (a.sensing_date, &a.scene_id).cmp(&(b.sensing_date, &b.scene_id)));
        Manifest {
            roi,
            scenes,
            created_at: Utc::now(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        let mut ids = std::collections::HashSet::new();
        for s in &self.scenes {
            if !ids.insert(&s.scene_id) {
                return Err(Error::Validation(format!("duplicate scene id `{}`", s.scene_id)));
            }
        }
        if self.scenes.windows(2).any(|w| w[0].sensing_date > w[1].sensing_date) {
            return Err(Error::Validation("manifest scenes are not sorted by date".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }
}

/// Counts from [`build_manifest`] besides the manifest itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestReport {
    /// Entries that are not scene directories or whose raster header cannot be read.
    pub warnings: usize,
    /// Readable scenes outside the ROI dates or footprint.
    pub excluded: usize,
}

/// Register every `<scene_dir>/<scene_id>/bands.{json,tif,tiff}` whose date and footprint
/// fall inside the ROI.
pub fn build_manifest(roi: &RoiSpec, scene_dir: &Path) -> Result<(Manifest, ManifestReport)> {
    roi.validate()?;
    let mut entries: Vec<_> = std::fs::read_dir(scene_dir)
        .map_err(|e| Error::io(scene_dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(scene_dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    let mut report = ManifestReport::default();
    let mut scenes = Vec::new();
    for entry in entries {
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(raster) = path.is_dir().then(|| find_raster(&path, SCENE_RASTER_STEM)).flatten() else {
            log::warn!("ignoring {}: not a scene directory", path.display());
            report.warnings += 1;
            continue;
        };
        let header = match read_raster_header(&raster) {
            Ok(h) => h,
            Err(e) => {
                log::warn!("ignoring {}: {e}", path.display());
                report.warnings += 1;
                continue;
            }
        };
        let (la0, la1, lo0, lo1) = match header.grid.lat_lon_bounds() {
            Ok(b) => b,
            Err(e) => {
                log::warn!("ignoring {}: {e}", path.display());
                report.warnings += 1;
                continue;
            }
        };
        let footprint = vec![vec![(la0, lo0), (la0, lo1), (la1, lo1), (la1, lo0), (la0, lo0)]];
        if !roi.contains_date(header.acquisition_date) || !roi.intersects(&footprint) {
            log::info!("excluding {name}: outside the ROI");
            report.excluded += 1;
            continue;
        }
        scenes.push(SceneRecord {
            scene_id: name,
            sensing_date: header.acquisition_date,
            footprint,
            cloud_cover_pct: None,
            download_uri: Url::from_file_path(&raster)
                .map(|u| u.to_string())
                .unwrap_or_else(|_| raster.display().to_string()),
            local_path: Some(path),
            checksum_sha256: None,
        });
    }
    Ok((Manifest::new(roi.clone(), scenes), report))
}

fn download_name(record: &SceneRecord) -> String {
    let ext = Url::parse(&record.download_uri)
        .ok()
        .and_then(|u| u.path_segments()?.next_back().map(str::to_string))
        .and_then(|seg| Path::new(&seg).extension().map(|e| e.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "zip".into());
    format!("{}.{ext}", safe_file_name(&record.scene_id))
}

/// `id` with everything except ASCII alphanumerics, `-`, `_` and `.` replaced by `_`.
pub fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Download a scene into `dest_dir`, verifying the catalog checksum when present. The
/// payload is written to a `.part` file first and only renamed once verified.
pub fn fetch_scene(record: &mut SceneRecord, dest_dir: &Path, transport: &dyn Transport) -> Result<PathBuf> {
    let url = Url::parse(&record.download_uri)
        .map_err(|e| Error::Argument(format!("bad download URI `{}`: {e}", record.download_uri)))?;
    let final_path = dest_dir.join(download_name(record));
    let part = final_path.with_extension("part");
    let digest = with_retry(3, std::time::Duration::from_millis(50), || {
        let mut reader = transport.open(&url)?;
        let mut file = std::fs::File::create(&part).map_err(|e| Error::io(&part, e))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = match reader.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) => {
                    let _ = std::fs::remove_file(&part);
                    return Err(transport::transport_io(&url, e));
                }
            };
            hasher.update(&buf[..n]);
            file.write_all(&buf[..n]).map_err(|e| Error::io(&part, e))?;
        }
        file.sync_all().map_err(|e| Error::io(&part, e))?;
        Ok(hex::encode(hasher.finalize()))
    })?;
    if let Some(expected) = &record.checksum_sha256 {
        if !expected.eq_ignore_ascii_case(&digest) {
            let _ = std::fs::remove_file(&part);
            return Err(Error::Integrity(format!(
                "{}: sha256 {digest} does not match catalog {expected}",
                record.scene_id
            )));
        }
    }
    std::fs::rename(&part, &final_path).map_err(|e| Error::io(&final_path, e))?;
    record.local_path = Some(final_path.clone());
    Ok(final_path)
}

/// Fetch many scenes with at most `workers` downloads in flight. Results are in input order.
pub fn fetch_all(
    records: &mut [SceneRecord],
    dest_dir: &Path,
    transport: &dyn Transport,
    workers: usize,
) -> Vec<Result<PathBuf>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<&mut SceneRecord>> = records.iter_mut().map(Mutex::new).collect();
    let results: Vec<Mutex<Option<Result<PathBuf>>>> = (0..slots.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(slots.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= slots.len() {
                    break;
                }
                let mut rec = slots[i].lock().expect("slot lock");
                let r = fetch_scene(&mut rec, dest_dir, transport);
                *results[i].lock().expect("result lock") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result lock").expect("every slot visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn roi() -> RoiSpec {
        RoiSpec::new((14.0, 120.0), (15.0, 121.0), d("2021-01-01"), d("2021-06-30")).unwrap()
    }

    #[test]
    fn roi_validation() {
        assert!(RoiSpec::new((91.0, 0.0), (0.0, 1.0), d("2021-01-01"), d("2021-01-02")).is_err());
        assert!(RoiSpec::new((0.0, 0.0), (0.0, 1.0), d("2021-01-01"), d("2021-01-02")).is_err());
        assert!(matches!(
            RoiSpec::new((0.0, 0.0), (1.0, 1.0), d("2021-01-03"), d("2021-01-02")),
            Err(Error::Validation(_))
        ));
        let r = RoiSpec::new((15.0, 121.0), (14.0, 120.0), d("2021-01-01"), d("2021-01-01")).unwrap();
        assert_eq!(r.bbox(), (14.0, 15.0, 120.0, 121.0));
    }

    #[test]
    fn footprint_intersection() {
        let r = roi();
        let sq = |la: f64, lo: f64, s: f64| vec![vec![(la, lo), (la, lo + s), (la + s, lo + s), (la + s, lo), (la, lo)]];
        assert!(r.intersects(&sq(14.5, 120.5, 0.1)));
        assert!(r.intersects(&sq(13.0, 119.0, 5.0)));
        assert!(!r.intersects(&sq(16.0, 120.0, 0.5)));
        // Thin diagonal strip crossing the rectangle with no vertex inside and no corner covered.
        let strip = vec![vec![(13.0, 120.5), (13.0, 120.6), (16.0, 120.6), (16.0, 120.5), (13.0, 120.5)]];
        assert!(r.intersects(&strip));
    }

    #[test]
    fn manifest_sorts_and_dedups() {
        let rec = |id: &str, date: &str| SceneRecord {
            scene_id: id.into(),
            sensing_date: d(date),
            footprint: vec![],
            cloud_cover_pct: Some(3.0),
            download_uri: "file:///x".into(),
            local_path: None,
            checksum_sha256: None,
        };
        let m = Manifest::new(roi(), vec![rec("b", "2021-03-01"), rec("a", "2021-02-01"), rec("b", "2021-01-01")]);
        assert_eq!(m.scenes.iter().map(|s| s.scene_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        m.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        assert_eq!(Manifest::load(&p).unwrap(), m);
    }

    #[test]
    fn download_names() {
        let mut r = SceneRecord {
            scene_id: "S2A/odd id".into(),
            sensing_date: d("2021-01-01"),
            footprint: vec![],
            cloud_cover_pct: None,
            download_uri: "http://h/odata/Products('x')/$value".into(),
            local_path: None,
            checksum_sha256: None,
        };
        assert_eq!(download_name(&r), "S2A_odd_id.zip");
        r.download_uri = "http://h/files/scene.tif".into();
        assert_eq!(download_name(&r), "S2A_odd_id.tif");
    }
}
