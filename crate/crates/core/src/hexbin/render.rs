use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{hex_vertices, HexBinMap};
use crate::error::{Error, Result};

/// Piecewise-linear colour ramp through RGB stops spread evenly over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColourRamp {
    pub stops: Vec<[u8; 3]>,
}

impl ColourRamp {
    pub fn viridis() -> Self {
        ColourRamp {
            stops: vec![[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
        }
    }

    pub fn hot() -> Self {
        ColourRamp {
            stops: vec![[255, 255, 178], [254, 204, 92], [253, 141, 60], [240, 59, 32], [189, 0, 38]],
        }
    }

    pub fn colour(&self, t: f64) -> String {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let n = self.stops.len();
        if n == 1 {
            return hex_rgb(self.stops[0]);
        }
        let pos = t * (n - 1) as f64;
        let i = (pos.floor() as usize).min(n - 2);
        let f = pos - i as f64;
        let (a, b) = (self.stops[i], self.stops[i + 1]);
        let mix = |k: usize| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * f).round() as u8;
        hex_rgb([mix(0), mix(1), mix(2)])
    }
}

fn hex_rgb(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub map_width_px: f64,
    pub cell_ramp: ColourRamp,
    pub point_ramp: ColourRamp,
    pub title: String,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            map_width_px: 800.0,
            cell_ramp: ColourRamp::viridis(),
            point_ramp: ColourRamp::hot(),
            title: "Marine debris density".into(),
        }
    }
}

const MARGIN: f64 = 20.0;
const LEGEND_W: f64 = 170.0;

fn normalise(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        v / max
    } else {
        0.0
    }
}

/// SVG document: hexagons coloured by trimmed-mean MDM, top pixels as markers on a
/// second ramp, one legend for each, and a scale bar.
pub fn render_map(map: &HexBinMap, style: &RenderStyle) -> Result<String> {
    if map.cells.is_empty() {
        return Err(Error::Render("hexbin map has no cells".into()));
    }
    let polys: Vec<[(f64, f64); 6]> = map.cells.iter().map(|c| hex_vertices(c.q, c.r, map.width_m)).collect();
    let points: Vec<(f64, f64)> = map
        .top_pixels
        .iter()
        .map(|p| map.projection.project(p.lat, p.lon))
        .collect::<Result<_>>()?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in polys.iter().flatten().chain(&points) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let scale = style.map_width_px / (x1 - x0);
    let map_h = (y1 - y0) * scale;
    let to_px = |x: f64, y: f64| (MARGIN + (x - x0) * scale, MARGIN + (y1 - y) * scale);
    let total_w = style.map_width_px + 2.0 * MARGIN + LEGEND_W;
    let total_h = (map_h + 2.0 * MARGIN + 60.0).max(360.0);

    let cell_max = map.cells.iter().map(|c| c.trimmed_mean).fold(0.0, f64::max);
    let point_max = map.top_pixels.iter().map(|p| p.mdm).fold(0.0, f64::max);

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0}" height="{total_h:.0}" viewBox="0 0 {total_w:.2} {total_h:.2}">"#
    );
    let _ = writeln!(w, "<title>{}</title>", xml_escape(&style.title));
    let _ = writeln!(w, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(w, r#"<g id="cells">"#);
    for (cell, poly) in map.cells.iter().zip(&polys) {
        let mut d = String::new();
        for (i, &(x, y)) in poly.iter().enumerate() {
            let (px, py) = to_px(x, y);
            let _ = write!(d, "{}{px:.2},{py:.2} ", if i == 0 { "M" } else { "L" });
        }
        d.push('Z');
        let _ = writeln!(
            w,
            r##"<path class="hex" data-q="{}" data-r="{}" d="{d}" fill="{}" stroke="#333333" stroke-width="0.5"><title>{:.4}</title></path>"##,
            cell.q,
            cell.r,
            style.cell_ramp.colour(normalise(cell.trimmed_mean, cell_max)),
            cell.trimmed_mean
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r#"<g id="top-pixels">"#);
    for (p, &(x, y)) in map.top_pixels.iter().zip(&points) {
        let (px, py) = to_px(x, y);
        let _ = writeln!(
            w,
            r##"<circle class="top" cx="{px:.2}" cy="{py:.2}" r="4" fill="{}" stroke="#000000" stroke-width="0.8"><title>{:.4}</title></circle>"##,
            style.point_ramp.colour(normalise(p.mdm, point_max)),
            p.mdm
        );
    }
    let _ = writeln!(w, "</g>");

    let lx = style.map_width_px + 2.0 * MARGIN;
    legend(w, "Trimmed mean MDM", &style.cell_ramp, cell_max, lx, MARGIN);
    legend(w, "Top pixel MDM", &style.point_ramp, point_max, lx + 85.0, MARGIN);
    scale_bar(w, map.width_m, scale, MARGIN, MARGIN + map_h + 30.0);
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

fn legend(w: &mut String, label: &str, ramp: &ColourRamp, max: f64, x: f64, y: f64) {
    const H: f64 = 240.0;
    const STEPS: usize = 24;
    let _ = writeln!(w, r#"<g class="legend">"#);
    let _ = writeln!(
        w,
        r#"<text x="{x:.2}" y="{:.2}" font-size="10" font-family="sans-serif">{}</text>"#,
        y + 8.0,
        xml_escape(label)
    );
    let step_h = H / STEPS as f64;
    for i in 0..STEPS {
        let t = 1.0 - (i as f64 + 0.5) / STEPS as f64;
        let _ = writeln!(
            w,
            r#"<rect x="{x:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            y + 16.0 + i as f64 * step_h,
            step_h + 0.1,
            ramp.colour(t)
        );
    }
    for (t, v) in [(0.0, max), (1.0, 0.0)] {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" font-family="sans-serif">{v:.2}</text>"#,
            x + 20.0,
            y + 20.0 + t * H
        );
    }
    let _ = writeln!(w, "</g>");
}

fn scale_bar(w: &mut String, width_m: f64, scale: f64, x: f64, y: f64) {
    let len_px = width_m * scale;
    let label = if width_m >= 1000.0 {
        format!("{} km", width_m / 1000.0)
    } else {
        format!("{width_m} m")
    };
    let _ = writeln!(w, r#"<g class="scale-bar">"#);
    let _ = writeln!(
        w,
        r##"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000000" stroke-width="2"/>"##,
        x + len_px
    );
    let _ = writeln!(
        w,
        r#"<text x="{x:.2}" y="{:.2}" font-size="10" font-family="sans-serif">{label}</text>"#,
        y + 14.0
    );
    let _ = writeln!(w, "</g>");
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
