//! OpenSearch-style catalog client: paged JSON queries by footprint, date range and
//! product type.

use std::collections::BTreeSet;
use std::time::Duration;

use chrono::NaiveDate;
use regex::Regex;
use serde_json::Value;
use url::Url;

use super::transport::{with_retry, Transport};
use super::{RoiSpec, SceneRecord};
use crate::error::{Error, Result};

pub const PAGE_ROWS: usize = 100;
const ATTEMPTS: u32 = 3;
const BACKOFF: Duration = Duration::from_millis(50);

/// Search expression for the ROI rectangle, date interval and product type.
pub fn query_expression(roi: &RoiSpec, product_type: &str) -> String {
    format!(
        "footprint:\"Intersects({})\" AND beginposition:[{}T00:00:00.000Z TO {}T23:59:59.999Z] AND producttype:{}",
        roi.wkt(),
        roi.date_start,
        roi.date_end,
        product_type
    )
}

pub fn page_url(endpoint: &Url, roi: &RoiSpec, product_type: &str, start: usize) -> Url {
    let mut url = endpoint.clone();
    url.query_pairs_mut()
        .append_pair("q", &query_expression(roi, product_type))
        .append_pair("rows", &PAGE_ROWS.to_string())
        .append_pair("start", &start.to_string())
        .append_pair("format", "json");
    url
}

/// All catalog entries intersecting the ROI within its date range, across every page.
pub fn query_catalog(
    roi: &RoiSpec,
    product_type: &str,
    endpoint: &Url,
    transport: &dyn Transport,
) -> Result<Vec<SceneRecord>> {
    roi.validate()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let url = page_url(endpoint, roi, product_type, start);
        let body = with_retry(ATTEMPTS, BACKOFF, || transport.get(&url))?;
        let page = parse_page(&body)?;
        let fresh: Vec<SceneRecord> = page
            .entries
            .into_iter()
            .filter(|r| seen.insert(r.scene_id.clone()))
            .collect();
        let n_fresh = fresh.len();
        start += n_fresh;
        out.extend(fresh.into_iter().filter(|r| roi.contains_date(r.sensing_date) && roi.intersects(&r.footprint)));
        // A page with nothing new means the source ignores paging or is exhausted.
        if n_fresh == 0 || start >= page.total_results {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct Page {
    pub total_results: usize,
    pub entries: Vec<SceneRecord>,
}

fn as_list(v: Option<&Value>) -> Vec<&Value> {
    match v {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a.iter().collect(),
        Some(other) => vec![other],
    }
}

/// `content` of the element named `name` in the typed list `kind` (`str`, `date`, ...).
fn named<'a>(entry: &'a Value, kind: &str, name: &str) -> Option<&'a str> {
    as_list(entry.get(kind))
        .into_iter()
        .find(|e| e.get("name").and_then(Value::as_str) == Some(name))
        .and_then(|e| e.get("content"))
        .and_then(Value::as_str)
}

pub fn parse_page(body: &[u8]) -> Result<Page> {
    let doc: Value = serde_json::from_slice(body).map_err(|e| Error::Parse(format!("catalog response: {e}")))?;
    let feed = doc
        .get("feed")
        .ok_or_else(|| Error::Parse("catalog response has no `feed`".into()))?;
    let total_results = match feed.get("opensearch:totalResults") {
        None | Some(Value::Null) => 0,
        Some(Value::String(s)) => s
            .parse()
            .map_err(|_| Error::Parse(format!("bad totalResults `{s}`")))?,
        Some(Value::Number(n)) => n
            .as_u64()
            .ok_or_else(|| Error::Parse(format!("bad totalResults {n}")))? as usize,
        Some(other) => return Err(Error::Parse(format!("bad totalResults {other}"))),
    };
    let entries = as_list(feed.get("entry"))
        .into_iter()
        .map(parse_entry)
        .collect::<Result<Vec<_>>>()?;
    Ok(Page {
        total_results: total_results.max(entries.len()),
        entries,
    })
}

fn parse_entry(e: &Value) -> Result<SceneRecord> {
    let field = |k: &str| e.get(k).and_then(Value::as_str);
    let scene_id = field("title")
        .or_else(|| field("id"))
        .ok_or_else(|| Error::Parse("catalog entry without title".into()))?
        .to_string();
    let missing = |what: &str| Error::Parse(format!("entry {scene_id}: missing {what}"));
    let begin = named(e, "date", "beginposition").ok_or_else(|| missing("beginposition"))?;
    let sensing_date = NaiveDate::parse_from_str(begin.get(..10).unwrap_or(begin), "%Y-%m-%d")
        .map_err(|_| Error::Parse(format!("entry {scene_id}: bad date `{begin}`")))?;
    let footprint = parse_wkt(named(e, "str", "footprint").ok_or_else(|| missing("footprint"))?)?;
    let cloud_cover_pct = match named(e, "double", "cloudcoverpercentage") {
        None => None,
        Some(s) => Some(
            s.parse::<f64>()
                .ok()
                .filter(|v| (0.0..=100.0).contains(v))
                .ok_or_else(|| Error::Parse(format!("entry {scene_id}: bad cloud cover `{s}`")))?,
        ),
    };
    let download_uri = as_list(e.get("link"))
        .into_iter()
        .find(|l| l.get("rel").is_none() || l.get("rel").and_then(Value::as_str) == Some("enclosure"))
        .and_then(|l| l.get("href"))
        .and_then(Value::as_str)
        .ok_or_else(|| missing("download link"))?
        .to_string();
    let checksum_sha256 = named(e, "str", "checksum_sha256")
        .or_else(|| {
            e.get("checksum")
                .filter(|c| c.get("algorithm").and_then(Value::as_str).is_some_and(|a| a.eq_ignore_ascii_case("sha256")))
                .and_then(|c| c.get("value"))
                .and_then(Value::as_str)
        })
        .map(str::to_ascii_lowercase);
    Ok(SceneRecord {
        scene_id,
        sensing_date,
        footprint,
        cloud_cover_pct,
        download_uri,
        local_path: None,
        checksum_sha256,
    })
}

/// Rings of a WKT `POLYGON` or `MULTIPOLYGON` as `(lat, lon)` vertices.
pub fn parse_wkt(text: &str) -> Result<Vec<Vec<(f64, f64)>>> {
    let upper = text.trim_start().to_ascii_uppercase();
    if !(upper.starts_with("POLYGON") || upper.starts_with("MULTIPOLYGON")) {
        return Err(Error::Parse(format!("unsupported footprint geometry `{text}`")));
    }
    let ring_re = Regex::new(r"\(([^()]+)\)").expect("static regex");
    let rings: Vec<Vec<(f64, f64)>> = ring_re
        .captures_iter(text)
        .map(|c| {
            c[1].split(',')
                .map(|pt| {
                    let mut it = pt.split_whitespace().map(str::parse::<f64>);
                    match (it.next(), it.next()) {
                        (Some(Ok(lon)), Some(Ok(lat))) => Ok((lat, lon)),
                        _ => Err(Error::Parse(format!("bad footprint vertex `{}`", pt.trim()))),
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if rings.is_empty() || rings.iter().any(|r| r.len() < 3) {
        return Err(Error::Parse(format!("footprint `{text}` has no usable ring")));
    }
    Ok(rings)
}
