use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use slowfast_core::simulate::Histogram;

use crate::error::CliError;

/// 17 significant digits; enough to round-trip any `f64`.
pub fn real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// CSV text built row by row.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        Self {
            text: format!("{header}\n"),
        }
    }

    /// Starts with `# comment` above the header.
    pub fn with_comment(comment: &str, header: &str) -> Self {
        Self {
            text: format!("# {comment}\n{header}\n"),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        write_file(dir, name, &self.text)
    }
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn histogram_csv(h: &Histogram) -> Csv {
    let mut csv = Csv::new("bin_lo,bin_hi,count");
    for (k, c) in h.counts.iter().enumerate() {
        let (a, b) = h.bin_edges(k);
        csv.row(&[real(a), real(b), c.to_string()]);
    }
    csv
}

pub enum PlotData<'a> {
    Histogram(&'a Histogram),
    Trace { t: &'a [f64], v: &'a [f64] },
}

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 600.0;
const MARGIN: f64 = 50.0;

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Standalone SVG on a fixed 800 x 600 viewport: bars for a histogram (empty
/// bins are not drawn), a polyline for a trace.
pub fn emit_svg(data: &PlotData, title: &str) -> Result<String, CliError> {
    let (pw, ph) = (SVG_WIDTH - 2.0 * MARGIN, SVG_HEIGHT - 2.0 * MARGIN);
    let base = SVG_HEIGHT - MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        SVG_WIDTH / 2.0,
        title.replace('&', "&amp;").replace('<', "&lt;")
    );
    let (lo, hi) = match data {
        PlotData::Histogram(h) => {
            let max = h.counts.iter().copied().max().unwrap_or(0);
            if max == 0 {
                return Err(CliError::EmptyData);
            }
            let w = pw / h.bins() as f64;
            for (k, &c) in h.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
                let height = ph * c as f64 / max as f64;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="steelblue"/>"#,
                    MARGIN + w * k as f64,
                    base - height,
                    w,
                    height
                );
            }
            (h.lo(), h.hi())
        }
        PlotData::Trace { t, v } => {
            if t.is_empty() || t.len() != v.len() {
                return Err(CliError::EmptyData);
            }
            let (t0, t1) = extent(t.iter().copied());
            let (v0, v1) = extent(v.iter().copied());
            let mut pts = String::new();
            for (a, b) in t.iter().zip(v.iter()) {
                let _ = write!(
                    pts,
                    "{:.3},{:.3} ",
                    MARGIN + pw * (a - t0) / (t1 - t0),
                    base - ph * (b - v0) / (v1 - v0)
                );
            }
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1"/>"#,
                pts.trim_end()
            );
            (t0, t1)
        }
    };
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        SVG_WIDTH - MARGIN
    );
    for (x, label) in [(MARGIN, lo), (SVG_WIDTH - MARGIN, hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{label:.3}</text>"#,
            base + 20.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(real(0.1), "1.0000000000000001e-1");
        assert_eq!(real(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(real(f64::INFINITY), "inf");
    }

    #[test]
    fn three_bins_three_rectangles() {
        let mut h = Histogram::new(0.0, 3.0, 3).unwrap();
        for x in [0.5, 1.5, 1.5, 2.5] {
            h.add(x);
        }
        let svg = emit_svg(&PlotData::Histogram(&h), "h").unwrap();
        let heights: Vec<f64> = svg
            .lines()
            .filter(|l| l.contains("steelblue"))
            .map(|l| {
                let i = l.find("height=\"").unwrap() + 8;
                l[i..].split('"').next().unwrap().parse().unwrap()
            })
            .collect();
        assert_eq!(heights.len(), 3);
        assert!((heights[1] / heights[0] - 2.0).abs() < 1e-9);
        assert!((heights[2] / heights[0] - 1.0).abs() < 1e-9);
        assert!(svg.contains(r#"viewBox="0 0 800 600""#));
    }

    #[test]
    fn empty_inputs_rejected() {
        let h = Histogram::new(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            emit_svg(&PlotData::Histogram(&h), "h"),
            Err(CliError::EmptyData)
        ));
        assert!(matches!(
            emit_svg(&PlotData::Trace { t: &[], v: &[] }, "t"),
            Err(CliError::EmptyData)
        ));
    }

    #[test]
    fn svg_is_deterministic() {
        let t = [0.0, 1.0, 2.0];
        let v = [0.0, 0.5, -0.25];
        let a = emit_svg(&PlotData::Trace { t: &t, v: &v }, "trace").unwrap();
        let b = emit_svg(&PlotData::Trace { t: &t, v: &v }, "trace").unwrap();
        assert_eq!(a, b);
    }
}
