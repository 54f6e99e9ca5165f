//! Self-contained SVG output: line charts with optional error bars and
//! raster heatmaps (PNG embedded in the SVG) with a viridis scale bar.
//! Every plot is derived from data that also lands in a sibling CSV.

use crate::model::Zone;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::{ImageBuffer, ImageEncoder, Rgb};
use std::fmt::Write as _;

const SERIES_COLORS: [&str; 6] =
    ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Viridis anchors sampled uniformly on [0, 1]; linear interpolation in
/// between keeps the map perceptually ordered.
const VIRIDIS: [[u8; 3]; 16] = [
    [68, 1, 84],
    [72, 26, 108],
    [71, 47, 125],
    [65, 68, 135],
    [57, 86, 140],
    [49, 104, 142],
    [42, 120, 142],
    [35, 136, 142],
    [31, 152, 139],
    [34, 168, 132],
    [53, 183, 121],
    [84, 197, 104],
    [122, 209, 81],
    [165, 219, 54],
    [210, 226, 27],
    [253, 231, 37],
];

pub fn viridis(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let a = VIRIDIS[i];
    let b = VIRIDIS[i + 1];
    [
        (a[0] as f64 + f * (b[0] as f64 - a[0] as f64)).round() as u8,
        (a[1] as f64 + f * (b[1] as f64 - a[1] as f64)).round() as u8,
        (a[2] as f64 + f * (b[2] as f64 - a[2] as f64)).round() as u8,
    ]
}

/// "Nice" tick positions covering [lo, hi].
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    } * mag;
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// One line of a chart; `stddev[i]`, when present, draws symmetric error
/// bars around `points[i]`.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub stddev: Option<Vec<f64>>,
}

pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let (w, h) = (640.0, 440.0);
        let (ml, mr, mt, mb) = (64.0, 24.0, 36.0, 52.0);
        let (pw, ph) = (w - ml - mr, h - mt - mb);

        let mut x_lo = f64::INFINITY;
        let mut x_hi = f64::NEG_INFINITY;
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        for s in &self.series {
            for (i, &(x, y)) in s.points.iter().enumerate() {
                let e = s.stddev.as_ref().map_or(0.0, |sd| sd.get(i).copied().unwrap_or(0.0));
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
                y_lo = y_lo.min(y - e);
                y_hi = y_hi.max(y + e);
            }
        }
        if !x_lo.is_finite() {
            x_lo = 0.0;
            x_hi = 1.0;
        }
        if !y_lo.is_finite() {
            y_lo = 0.0;
            y_hi = 1.0;
        }
        if x_hi - x_lo < 1e-12 {
            x_hi = x_lo + 1.0;
        }
        let pad = 0.05 * (y_hi - y_lo).max(1e-9);
        y_lo -= pad;
        y_hi += pad;

        let sx = move |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * pw;
        let sy = move |y: f64| mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

        let mut svg = String::new();
        let _ = write!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            w / 2.0,
            xml_escape(&self.title)
        );
        for t in ticks(x_lo, x_hi, 7) {
            let x = sx(t);
            let _ = write!(
                svg,
                "<line x1=\"{x:.1}\" y1=\"{mt}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#e0e0e0\"/>\n\
                 <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
                mt + ph,
                mt + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y_lo, y_hi, 7) {
            let y = sy(t);
            let _ = write!(
                svg,
                "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#e0e0e0\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                ml + pw,
                ml - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = write!(
            svg,
            "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            ml + pw / 2.0,
            h - 12.0,
            xml_escape(&self.x_label),
            mt + ph / 2.0,
            mt + ph / 2.0,
            xml_escape(&self.y_label)
        );
        for (si, s) in self.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            if let Some(sd) = &s.stddev {
                for (i, &(x, y)) in s.points.iter().enumerate() {
                    let e = sd.get(i).copied().unwrap_or(0.0);
                    if e > 0.0 {
                        let (px, y0, y1) = (sx(x), sy(y - e), sy(y + e));
                        let _ = write!(
                            svg,
                            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{y1:.1}\" \
                             stroke=\"{color}\" stroke-opacity=\"0.5\"/>\n\
                             <line x1=\"{:.1}\" y1=\"{y0:.1}\" x2=\"{:.1}\" y2=\"{y0:.1}\" stroke=\"{color}\" stroke-opacity=\"0.5\"/>\n\
                             <line x1=\"{:.1}\" y1=\"{y1:.1}\" x2=\"{:.1}\" y2=\"{y1:.1}\" stroke=\"{color}\" stroke-opacity=\"0.5\"/>\n",
                            px - 3.0, px + 3.0, px - 3.0, px + 3.0
                        );
                    }
                }
            }
            let path: String = s
                .points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y))
                })
                .collect();
            let _ = write!(
                svg,
                "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n"
            );
            for &(x, y) in &s.points {
                let _ = write!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.4\" fill=\"{color}\"/>\n",
                    sx(x),
                    sy(y)
                );
            }
            let ly = mt + 16.0 + 16.0 * si as f64;
            let _ = write!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
                ml + pw - 130.0,
                ml + pw - 106.0,
                ml + pw - 100.0,
                ly + 4.0,
                xml_escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Rectangle annotation drawn over a heatmap (zone outlines).
pub struct RectAnnotation {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub color: &'static str,
    pub label: String,
}

impl RectAnnotation {
    pub fn for_zone(zone: &Zone, color: &'static str, label: &str) -> Self {
        RectAnnotation {
            x_min: zone.x_min,
            x_max: zone.x_max,
            z_min: zone.z_min,
            z_max: zone.z_max,
            color,
            label: label.to_string(),
        }
    }
}

pub struct Heatmap<'a> {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub colorbar_label: String,
    pub xs: &'a [f64],
    pub zs: &'a [f64],
    /// Row-major over (z, x), like [`crate::field::SplMap`].
    pub values: &'a [f64],
    /// Color range; None auto-scales to [max-60, max] which suits dB maps.
    pub v_range: Option<(f64, f64)>,
    pub rects: Vec<RectAnnotation>,
}

impl Heatmap<'_> {
    pub fn to_svg(&self) -> String {
        let nx = self.xs.len();
        let nz = self.zs.len();
        let (v_lo, v_hi) = self.v_range.unwrap_or_else(|| {
            let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (hi - 60.0, hi)
        });
        // raster with z increasing upward
        let img = ImageBuffer::from_fn(nx as u32, nz as u32, |px, py| {
            let iz = nz - 1 - py as usize;
            let v = self.values[iz * nx + px as usize];
            let t = (v - v_lo) / (v_hi - v_lo);
            Rgb(viridis(t))
        });
        let mut png = Vec::new();
        image::codecs::png::PngEncoder::new(&mut png)
            .write_image(&img, nx as u32, nz as u32, image::ExtendedColorType::Rgb8)
            .expect("png encode");
        let data = BASE64.encode(&png);

        let (w, h) = (700.0, 520.0);
        let (ml, mr, mt, mb) = (64.0, 110.0, 36.0, 52.0);
        let (pw, ph) = (w - ml - mr, h - mt - mb);
        let x_lo = self.xs[0];
        let x_hi = self.xs[nx - 1];
        let z_lo = self.zs[0];
        let z_hi = self.zs[nz - 1];
        let sx = move |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * pw;
        let sz = move |z: f64| mt + (1.0 - (z - z_lo) / (z_hi - z_lo)) * ph;

        let mut svg = String::new();
        let _ = write!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
             <image x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" preserveAspectRatio=\"none\" \
             image-rendering=\"pixelated\" href=\"data:image/png;base64,{data}\"/>\n",
            w / 2.0,
            xml_escape(&self.title)
        );
        for t in ticks(x_lo, x_hi, 7) {
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
                sx(t),
                mt + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(z_lo, z_hi, 7) {
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                ml - 6.0,
                sz(t) + 4.0,
                fmt_tick(t)
            );
        }
        let _ = write!(
            svg,
            "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            ml + pw / 2.0,
            h - 12.0,
            xml_escape(&self.x_label),
            mt + ph / 2.0,
            mt + ph / 2.0,
            xml_escape(&self.y_label)
        );
        for r in &self.rects {
            let (x0, x1) = (sx(r.x_min), sx(r.x_max));
            let (z0, z1) = (sz(r.z_max), sz(r.z_min));
            let _ = write!(
                svg,
                "<rect x=\"{x0:.1}\" y=\"{z0:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
                 fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n\
                 <text x=\"{x0:.1}\" y=\"{:.1}\" fill=\"{}\">{}</text>\n",
                x1 - x0,
                z1 - z0,
                r.color,
                z0 - 4.0,
                r.color,
                xml_escape(&r.label)
            );
        }
        // colorbar: vertical gradient built from the viridis anchors
        let cb_x = ml + pw + 24.0;
        svg.push_str("<defs><linearGradient id=\"cb\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\n");
        for (i, c) in VIRIDIS.iter().enumerate() {
            let _ = write!(
                svg,
                "<stop offset=\"{:.3}\" stop-color=\"rgb({},{},{})\"/>\n",
                i as f64 / (VIRIDIS.len() - 1) as f64,
                c[0],
                c[1],
                c[2]
            );
        }
        svg.push_str("</linearGradient></defs>\n");
        let _ = write!(
            svg,
            "<rect x=\"{cb_x:.1}\" y=\"{mt}\" width=\"16\" height=\"{ph}\" fill=\"url(#cb)\" stroke=\"black\"/>\n"
        );
        for t in ticks(v_lo, v_hi, 6) {
            let y = mt + (1.0 - (t - v_lo) / (v_hi - v_lo)) * ph;
            let _ = write!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
                cb_x + 16.0,
                cb_x + 20.0,
                cb_x + 24.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            cb_x + 8.0,
            mt - 8.0,
            xml_escape(&self.colorbar_label)
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
