//! CSV and SVG emission. Every file carries the tool version and the
//! resolved configuration: CSV in a leading `#` comment line, SVG in a
//! `<metadata>` element.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{CliError, Result};

/// Compact one-line provenance string.
pub fn provenance_line(echo: &serde_json::Value) -> String {
    let v = serde_json::json!({ "tool_version": coropve_core::VERSION, "config": echo });
    serde_json::to_string(&v).expect("provenance serializes")
}

/// Serialize `rows` as CSV after a `# {...}` provenance comment.
pub fn csv_bytes<R: Serialize>(echo: &serde_json::Value, rows: &[R]) -> Result<Vec<u8>> {
    let mut out = format!("# {}\n", provenance_line(echo)).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for row in rows {
            w.serialize(row).map_err(|e| CliError::data(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| CliError::data(format!("csv: {e}")))?;
    }
    Ok(out)
}

/// CSV reader that skips `#` comment lines.
pub fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One data series of a plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// Draw point markers instead of a connecting line.
    pub markers: bool,
}

/// Minimal line/scatter plot.
#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub series: Vec<Series>,
    /// Draw the `y = x` diagonal (ROC chance line).
    pub diagonal: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const TICKS: usize = 5;

impl Plot {
    /// Range padded by 5% that always has positive width.
    pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5_f64.max(lo.abs() * 0.05) };
        (lo - pad, hi + pad)
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let px = MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        (px, py)
    }

    pub fn to_svg(&self, echo: &serde_json::Value) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, "<metadata>{}</metadata>", xml_escape(&provenance_line(echo)));
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            xml_escape(&self.title)
        );
        let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        for k in 0..=TICKS {
            let t = k as f64 / TICKS as f64;
            let xv = self.x_range.0 + t * (self.x_range.1 - self.x_range.0);
            let yv = self.y_range.0 + t * (self.y_range.1 - self.y_range.0);
            let (px, _) = self.map(xv, self.y_range.0);
            let (_, py) = self.map(self.x_range.0, yv);
            let _ =
                writeln!(s, r#"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{}" stroke="black"/>"#, bottom + 5.0);
            let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{xv:.2}</text>"#, bottom + 18.0);
            let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/>"#, left - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#, left - 8.0, py + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 18.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            xml_escape(&self.y_label)
        );
        if self.diagonal {
            let (ax, ay) = self.map(self.x_range.0, self.x_range.0);
            let (bx, by) = self.map(self.x_range.1, self.x_range.1);
            let _ = writeln!(
                s,
                r#"<line x1="{ax:.2}" y1="{ay:.2}" x2="{bx:.2}" y2="{by:.2}" stroke="gray" stroke-dasharray="4 4"/>"#
            );
        }
        for (k, series) in self.series.iter().enumerate() {
            let pts: Vec<(f64, f64)> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| self.map(x, y))
                .collect();
            if series.markers {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}"/>"#, series.color);
                }
            } else if !pts.is_empty() {
                let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    series.color,
                    coords.join(" ")
                );
            }
            let ly = top + 16.0 + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="12" height="4" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                left + 10.0,
                ly - 6.0,
                series.color,
                left + 28.0,
                ly,
                xml_escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
