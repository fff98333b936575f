//! GeoTIFF reading and writing.
//!
//! Decoding (including compressed and planar files written by GDAL-based tools) goes through
//! the `tiff` crate. Writing emits an uncompressed, pixel-interleaved float32 image with the
//! GeoTIFF georeferencing tags and a GDAL metadata block carrying band names, wavelengths and
//! the acquisition date.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use tiff::decoder::{ifd::Value, Decoder, DecodingResult, Limits};
use tiff::encoder::TiffEncoder;
use tiff::tags::{PlanarConfiguration, Tag};

use super::{Band, GeoGrid, RasterHeader, SceneRaster};
use crate::crs::Crs;
use crate::error::{Error, Result};

const TAG_GDAL_METADATA: Tag = Tag::Unknown(42112);

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_CS_TYPE: u16 = 3072;
const MODEL_TYPE_PROJECTED: u16 = 1;
const MODEL_TYPE_GEOGRAPHIC: u16 = 2;
const RASTER_PIXEL_IS_AREA: u16 = 1;
const RASTER_PIXEL_IS_POINT: u16 = 2;
const USER_DEFINED: u16 = 32767;

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

#[derive(Debug, Default)]
struct GdalMetadata {
    dataset: Vec<(String, String)>,
    bands: Vec<(usize, String, Option<String>, String)>,
}

impl GdalMetadata {
    fn item(&self, name: &str) -> Option<&str> {
        self.dataset
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn band_item(&self, sample: usize, name: &str, role: Option<&str>) -> Option<&str> {
        self.bands
            .iter()
            .find(|(s, n, r, _)| *s == sample && (n == name || (role.is_some() && r.as_deref() == role)))
            .map(|(_, _, _, v)| v.as_str())
    }

    fn parse(xml: &str) -> GdalMetadata {
        use std::sync::OnceLock;
        static RE: OnceLock<regex::Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            regex::Regex::new(
                r#"<Item\s+name="([^"]*)"(?:\s+sample="(\d+)")?(?:\s+role="([^"]*)")?\s*>([^<]*)</Item>"#,
            )
            .unwrap()
        });
        let mut md = GdalMetadata::default();
        for c in re.captures_iter(xml) {
            let name = xml_unescape(&c[1]);
            let value = xml_unescape(&c[4]);
            match c.get(2).and_then(|s| s.as_str().parse().ok()) {
                Some(sample) => {
                    let role = c.get(3).map(|r| r.as_str().to_string());
                    md.bands.push((sample, name, role, value));
                }
                None => md.dataset.push((name, value)),
            }
        }
        md
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
}

fn render_metadata(raster: &SceneRaster, crs_in_keys: bool) -> String {
    let mut xml = String::from("<GDALMetadata>\n");
    xml.push_str(&format!(
        "  <Item name=\"ACQUISITION_DATE\">{}</Item>\n",
        raster.acquisition_date
    ));
    if !crs_in_keys {
        xml.push_str(&format!(
            "  <Item name=\"CRS_ID\">{}</Item>\n",
            xml_escape(&raster.grid.crs_id)
        ));
    }
    for (i, band) in raster.bands.iter().enumerate() {
        xml.push_str(&format!(
            "  <Item name=\"DESCRIPTION\" sample=\"{i}\" role=\"description\">{}</Item>\n",
            xml_escape(&band.name)
        ));
        if let Some(w) = band.wavelength_nm {
            xml.push_str(&format!("  <Item name=\"WAVELENGTH_NM\" sample=\"{i}\">{w:?}</Item>\n"));
        }
    }
    xml.push_str("</GDALMetadata>");
    xml
}

pub(super) fn write(raster: &SceneRaster, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    let g = &raster.grid;
    let n = raster.bands.len();
    let (width, height) = (g.width as u32, g.height as u32);

    let rows_per_strip = (65_536 / (g.width * n * 4)).clamp(1, g.height);
    let mut offsets = Vec::new();
    let mut counts = Vec::new();
    {
        let mut dir = encoder.image_directory().map_err(|e| tiff_err(path, e))?;
        let mut strip = Vec::with_capacity(rows_per_strip * g.width * n);
        for row0 in (0..g.height).step_by(rows_per_strip) {
            strip.clear();
            for row in row0..(row0 + rows_per_strip).min(g.height) {
                for col in 0..g.width {
                    strip.extend(raster.bands.iter().map(|b| b.data[[row, col]]));
                }
            }
            let off = dir.write_data(&strip[..]).map_err(|e| tiff_err(path, e))?;
            offsets.push(u32::try_from(off).map_err(|_| Error::Format("raster exceeds 4 GiB".into()))?);
            counts.push((strip.len() * 4) as u32);
        }

        let epsg = Crs::parse(&g.crs_id).ok().map(|c| c.epsg());
        let mut keys: Vec<u16> = vec![1, 1, 0, 0];
        let mut push_key = |k: u16, v: u16| keys.extend_from_slice(&[k, 0, 1, v]);
        match epsg {
            Some(4326) => {
                push_key(KEY_MODEL_TYPE, MODEL_TYPE_GEOGRAPHIC);
                push_key(KEY_RASTER_TYPE, RASTER_PIXEL_IS_AREA);
                push_key(KEY_GEOGRAPHIC_TYPE, 4326);
            }
            Some(code) => {
                push_key(KEY_MODEL_TYPE, MODEL_TYPE_PROJECTED);
                push_key(KEY_RASTER_TYPE, RASTER_PIXEL_IS_AREA);
                push_key(KEY_PROJECTED_CS_TYPE, code as u16);
            }
            None => {
                push_key(KEY_MODEL_TYPE, MODEL_TYPE_PROJECTED);
                push_key(KEY_RASTER_TYPE, RASTER_PIXEL_IS_AREA);
                push_key(KEY_PROJECTED_CS_TYPE, USER_DEFINED);
            }
        }
        keys[3] = ((keys.len() - 4) / 4) as u16;

        macro_rules! tag {
            ($tag:expr, $value:expr $(,)?) => {
                dir.write_tag($tag, $value).map_err(|e| tiff_err(path, e))?
            };
        }
        tag!(Tag::ImageWidth, width);
        tag!(Tag::ImageLength, height);
        tag!(Tag::BitsPerSample, &vec![32u16; n][..]);
        tag!(Tag::Compression, 1u16);
        tag!(Tag::PhotometricInterpretation, 1u16);
        tag!(Tag::StripOffsets, &offsets[..]);
        tag!(Tag::SamplesPerPixel, n as u16);
        tag!(Tag::RowsPerStrip, rows_per_strip as u32);
        tag!(Tag::StripByteCounts, &counts[..]);
        tag!(Tag::PlanarConfiguration, 1u16);
        tag!(Tag::SampleFormat, &vec![3u16; n][..]);
        if n > 1 {
            tag!(Tag::ExtraSamples, &vec![0u16; n - 1][..]);
        }
        if g.pixel_size_y < 0.0 {
            tag!(Tag::ModelPixelScaleTag, &[g.pixel_size_x, -g.pixel_size_y, 0.0][..]);
            tag!(
                Tag::ModelTiepointTag,
                &[0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0][..],
            );
        } else {
            let m = [
                g.pixel_size_x, 0.0, 0.0, g.origin_x,
                0.0, g.pixel_size_y, 0.0, g.origin_y,
                0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 1.0,
            ];
            tag!(Tag::ModelTransformationTag, &m[..]);
        }
        tag!(Tag::GeoKeyDirectoryTag, &keys[..]);
        let nodata = if raster.nodata.is_nan() {
            "nan".to_string()
        } else {
            format!("{}", raster.nodata)
        };
        tag!(Tag::GdalNodata, nodata.as_str());
        let md = render_metadata(raster, epsg.is_some());
        tag!(TAG_GDAL_METADATA, md.as_str());
        let stamp = raster.acquisition_date.format("%Y:%m:%d 00:00:00").to_string();
        tag!(Tag::DateTime, stamp.as_str());
        dir.finish().map_err(|e| tiff_err(path, e))?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(file))
        .map(|d| d.with_limits(Limits::unlimited()))
        .map_err(|e| tiff_err(path, e))
}

fn find(decoder: &mut Decoder<BufReader<File>>, path: &Path, tag: Tag) -> Result<Option<Value>> {
    decoder.find_tag(tag).map_err(|e| tiff_err(path, e))
}

fn parse_header(decoder: &mut Decoder<BufReader<File>>, path: &Path) -> Result<RasterHeader> {
    let (width, height) = decoder.dimensions().map_err(|e| tiff_err(path, e))?;
    let samples: u16 = decoder
        .find_tag_unsigned(Tag::SamplesPerPixel)
        .map_err(|e| tiff_err(path, e))?
        .unwrap_or(1);
    if samples == 0 {
        return Err(Error::EmptyRaster);
    }

    let md = match find(decoder, path, TAG_GDAL_METADATA)? {
        Some(v) => GdalMetadata::parse(&v.into_string().map_err(|e| tiff_err(path, e))?),
        None => GdalMetadata::default(),
    };

    let keys = match find(decoder, path, Tag::GeoKeyDirectoryTag)? {
        Some(v) => v.into_u16_vec().map_err(|e| tiff_err(path, e))?,
        None => Vec::new(),
    };
    let key = |k: u16| -> Option<u16> {
        keys.get(4..)?
            .chunks_exact(4)
            .find(|e| e[0] == k && e[1] == 0)
            .map(|e| e[3])
    };
    let pixel_is_point = key(KEY_RASTER_TYPE) == Some(RASTER_PIXEL_IS_POINT);

    let scale = find(decoder, path, Tag::ModelPixelScaleTag)?
        .map(|v| v.into_f64_vec())
        .transpose()
        .map_err(|e| tiff_err(path, e))?;
    let tie = find(decoder, path, Tag::ModelTiepointTag)?
        .map(|v| v.into_f64_vec())
        .transpose()
        .map_err(|e| tiff_err(path, e))?;
    let transform = find(decoder, path, Tag::ModelTransformationTag)?
        .map(|v| v.into_f64_vec())
        .transpose()
        .map_err(|e| tiff_err(path, e))?;

    let (mut origin, pixel) = match (scale, tie, transform) {
        (Some(s), Some(t), _) if s.len() >= 2 && t.len() >= 6 => (
            (t[3] - t[0] * s[0], t[4] + t[1] * s[1]),
            (s[0], -s[1]),
        ),
        (_, _, Some(m)) if m.len() >= 8 => {
            if m[1] != 0.0 || m[4] != 0.0 {
                return Err(Error::Metadata(format!(
                    "{}: rotated geotransforms are not supported",
                    path.display()
                )));
            }
            ((m[3], m[7]), (m[0], m[5]))
        }
        _ => {
            return Err(Error::Metadata(format!(
                "{}: no geotransform (ModelPixelScale/ModelTiepoint or ModelTransformation)",
                path.display()
            )))
        }
    };
    if pixel_is_point {
        origin = (origin.0 - 0.5 * pixel.0, origin.1 - 0.5 * pixel.1);
    }

    let crs_id = match md.item("CRS_ID") {
        Some(id) => id.to_string(),
        None => match key(KEY_PROJECTED_CS_TYPE).or_else(|| key(KEY_GEOGRAPHIC_TYPE)) {
            Some(code) if code != USER_DEFINED => format!("EPSG:{code}"),
            _ => {
                return Err(Error::Metadata(format!(
                    "{}: no coordinate reference system in GeoKeys",
                    path.display()
                )))
            }
        },
    };
    let grid = GeoGrid::new(width as usize, height as usize, origin, pixel, crs_id)
        .map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))?;

    let date = md
        .item("ACQUISITION_DATE")
        .and_then(|d| d.parse::<NaiveDate>().ok())
        .or_else(|| {
            let stamp = find(decoder, path, Tag::DateTime).ok()??.into_string().ok()?;
            NaiveDate::parse_from_str(stamp.get(..10)?, "%Y:%m:%d").ok()
        })
        .or_else(|| path.file_stem()?.to_str().and_then(super::date_from_name))
        .ok_or_else(|| Error::Metadata(format!("{}: no acquisition date", path.display())))?;

    let nodata = match find(decoder, path, Tag::GdalNodata)? {
        Some(v) => {
            let text = v.into_string().map_err(|e| tiff_err(path, e))?;
            let text = text.trim_matches(char::from(0)).trim();
            if text.eq_ignore_ascii_case("nan") {
                f32::NAN
            } else {
                text.parse::<f32>()
                    .map_err(|_| Error::Metadata(format!("{}: bad GDAL_NODATA `{text}`", path.display())))?
            }
        }
        None => f32::NAN,
    };

    let band_names = (0..samples as usize)
        .map(|i| {
            md.band_item(i, "DESCRIPTION", Some("description"))
                .map(str::to_string)
                .unwrap_or_else(|| format!("band_{}", i + 1))
        })
        .collect();

    Ok(RasterHeader {
        grid,
        band_names,
        acquisition_date: date,
        nodata,
    })
}

pub(super) fn read_header(path: &Path) -> Result<RasterHeader> {
    let mut decoder = open(path)?;
    parse_header(&mut decoder, path)
}

fn to_f32(result: DecodingResult) -> Result<Vec<f32>> {
    Ok(match result {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return Err(Error::Format("unsupported TIFF sample type".into())),
    })
}

pub(super) fn read(path: &Path) -> Result<SceneRaster> {
    let mut decoder = open(path)?;
    let header = parse_header(&mut decoder, path)?;
    let planar = decoder
        .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)
        .map_err(|e| tiff_err(path, e))?
        .and_then(PlanarConfiguration::from_u16)
        .unwrap_or(PlanarConfiguration::Chunky);

    let md = match find(&mut decoder, path, TAG_GDAL_METADATA)? {
        Some(v) => GdalMetadata::parse(&v.into_string().map_err(|e| tiff_err(path, e))?),
        None => GdalMetadata::default(),
    };

    let mut buffer = DecodingResult::F32(Vec::new());
    decoder
        .read_image_to_buffer(&mut buffer)
        .map_err(|e| tiff_err(path, e))?;
    let values = to_f32(buffer)?;

    let (h, w) = header.grid.shape();
    let n = header.band_names.len();
    let plane = h * w;
    if values.len() < plane * n {
        return Err(Error::Format(format!(
            "{}: decoded {} samples, expected {}",
            path.display(),
            values.len(),
            plane * n
        )));
    }
    let bands = header
        .band_names
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let data: Vec<f32> = match planar {
                PlanarConfiguration::Planar => values[b * plane..(b + 1) * plane].to_vec(),
                _ => values.iter().skip(b).step_by(n).take(plane).copied().collect(),
            };
            let wavelength = md
                .band_item(b, "WAVELENGTH_NM", None)
                .and_then(|s| s.trim().parse::<f64>().ok());
            Band::new(
                name.clone(),
                Array2::from_shape_vec((h, w), data).expect("plane length checked"),
                wavelength,
            )
        })
        .collect();
    SceneRaster::new(header.grid, bands, header.acquisition_date, header.nodata)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{read_raster, read_raster_header, write_raster, DEFAULT_NODATA};

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 1, 5).unwrap()
    }

    #[test]
    fn multiband_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GeoGrid::new(5, 3, (280_000.0, 1_620_000.0), (10.0, -10.0), "EPSG:32651").unwrap();
        let bands = ["B4", "B6", "B8", "B11"]
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let data = Array2::from_shape_fn((3, 5), |(r, c)| (i * 100 + r * 10 + c) as f32 * 0.001);
                Band::new(*n, data, Some(665.0 + i as f64))
            })
            .collect();
        let r = SceneRaster::new(g, bands, date(), DEFAULT_NODATA).unwrap();
        let p = dir.path().join("scene.tif");
        write_raster(&r, &p).unwrap();
        let back = read_raster(&p).unwrap();
        assert!(back.bit_eq(&r), "{back:?}");
        let h = read_raster_header(&p).unwrap();
        assert_eq!(h.band_names, vec!["B4", "B6", "B8", "B11"]);
    }

    #[test]
    fn south_up_and_custom_crs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GeoGrid::new(2, 2, (1.5, -3.25), (0.25, 0.5), "LOCAL:my-grid").unwrap();
        let data = Array2::from_shape_vec((2, 2), vec![1.0, f32::NAN, 3.0, 4.0]).unwrap();
        let r = SceneRaster::single(g, "probability", data, date(), f32::NAN).unwrap();
        let p = dir.path().join("p.tiff");
        write_raster(&r, &p).unwrap();
        assert!(read_raster(&p).unwrap().bit_eq(&r));
    }

    #[test]
    fn plain_tiff_without_georeferencing_is_metadata_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plain.tif");
        let file = File::create(&p).unwrap();
        let mut enc = TiffEncoder::new(BufWriter::new(file)).unwrap();
        enc.write_image::<tiff::encoder::colortype::Gray32Float>(2, 2, &[0.0, 1.0, 2.0, 3.0])
            .unwrap();
        drop(enc);
        assert!(matches!(read_raster(&p), Err(Error::Metadata(_))));
    }

    #[test]
    fn not_a_tiff_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.tif");
        std::fs::write(&p, b"definitely not a tiff").unwrap();
        assert!(matches!(read_raster(&p), Err(Error::Format(_))));
    }

    #[test]
    fn metadata_parser_handles_gdal_layout() {
        let md = GdalMetadata::parse(
            r#"<GDALMetadata>
  <Item name="ACQUISITION_DATE">2022-01-05</Item>
  <Item name="DESCRIPTION" sample="1" role="description">rhos_740</Item>
  <Item name="WAVELENGTH_NM" sample="1">740.0</Item>
</GDALMetadata>"#,
        );
        assert_eq!(md.item("ACQUISITION_DATE"), Some("2022-01-05"));
        assert_eq!(md.band_item(1, "DESCRIPTION", Some("description")), Some("rhos_740"));
        assert_eq!(md.band_item(1, "WAVELENGTH_NM", None), Some("740.0"));
        assert_eq!(md.band_item(0, "DESCRIPTION", None), None);
    }
}
