//! SVG reliability diagrams.
//!
//! By default accuracy runs along x and confidence along y, so over-confident
//! bins sit above the identity line; `standard_axes` swaps them. Each bin is a
//! circle whose radius grows with `ln(1 + sample_count)`. Output depends only
//! on the report and style, byte for byte.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CalibrationReport, Level};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("report has no bins to draw")]
    EmptyReport,
    #[error("invalid style: {0}")]
    InvalidStyle(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityStyle {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    /// Radius of an empty bin.
    pub base_radius: f64,
    /// Radius added per unit of `ln(1 + sample_count)`.
    pub radius_scale: f64,
    /// Confidence on x and accuracy on y.
    pub standard_axes: bool,
    /// Heading above the metrics line.
    pub title: Option<String>,
}

impl Default for ReliabilityStyle {
    fn default() -> Self {
        Self {
            width: 420.0,
            height: 440.0,
            margin: 60.0,
            base_radius: 2.0,
            radius_scale: 2.0,
            standard_axes: false,
            title: None,
        }
    }
}

impl ReliabilityStyle {
    pub fn radius(&self, sample_count: usize) -> f64 {
        self.base_radius + self.radius_scale * (1.0 + sample_count as f64).ln()
    }

    fn validate(&self) -> Result<(), RenderError> {
        let dims = [self.width, self.height, self.margin, self.base_radius, self.radius_scale];
        if dims.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RenderError::InvalidStyle("sizes must be finite and non-negative".into()));
        }
        if self.width <= 2.0 * self.margin || self.height <= 2.0 * self.margin {
            return Err(RenderError::InvalidStyle("margins leave no plot area".into()));
        }
        Ok(())
    }
}

/// "EM 58.12 | ECE 7.40" for sequence reports, "Acc ..." for token reports.
pub fn metrics_line(report: &CalibrationReport) -> String {
    let label = match report.level {
        Level::Sequence => "EM",
        Level::Token => "Acc",
    };
    format!("{label} {:.2} | ECE {:.2}", 100.0 * report.overall_accuracy, report.ece)
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Frame {
    left: f64,
    top: f64,
    size_x: f64,
    size_y: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + v * self.size_x
    }

    fn y(&self, v: f64) -> f64 {
        self.top + (1.0 - v) * self.size_y
    }
}

pub fn render_reliability(report: &CalibrationReport, style: &ReliabilityStyle) -> Result<String, RenderError> {
    if report.bins.is_empty() {
        return Err(RenderError::EmptyReport);
    }
    style.validate()?;
    let frame = Frame {
        left: style.margin,
        top: style.margin,
        size_x: style.width - 2.0 * style.margin,
        size_y: style.height - 2.0 * style.margin,
    };
    let (x_label, y_label) = if style.standard_axes {
        ("Confidence", "Accuracy")
    } else {
        ("Accuracy", "Confidence")
    };

    let mut s = String::new();
    let w = &mut s;
    // Writing to a String cannot fail.
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" data-level="{}" data-ece="{}" data-accuracy="{}" data-total="{}">"#,
        style.width, style.height, style.width, style.height, report.level, report.ece, report.overall_accuracy, report.total_samples
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{:.0}" height="{:.0}" fill="white"/>"#, style.width, style.height);
    let mut heading_y = 22.0;
    if let Some(title) = &style.title {
        let _ = writeln!(
            w,
            r#"<text class="title" x="{:.2}" y="{heading_y:.2}" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
            style.width / 2.0,
            escape(title)
        );
        heading_y += 18.0;
    }
    let _ = writeln!(
        w,
        r#"<text class="metrics" x="{:.2}" y="{heading_y:.2}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        style.width / 2.0,
        metrics_line(report)
    );

    let _ = writeln!(
        w,
        r##"<rect class="frame" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
        frame.left, frame.top, frame.size_x, frame.size_y
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            w,
            r##"<line class="tick" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333"/>"##,
            frame.x(v),
            frame.y(0.0),
            frame.x(v),
            frame.y(0.0) + 5.0
        );
        let _ = writeln!(
            w,
            r#"<text class="tick-label" x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{v:.2}</text>"#,
            frame.x(v),
            frame.y(0.0) + 18.0
        );
        let _ = writeln!(
            w,
            r##"<line class="tick" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333"/>"##,
            frame.x(0.0) - 5.0,
            frame.y(v),
            frame.x(0.0),
            frame.y(v)
        );
        let _ = writeln!(
            w,
            r#"<text class="tick-label" x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.2}</text>"#,
            frame.x(0.0) - 8.0,
            frame.y(v) + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text class="axis-label" x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="13">{x_label}</text>"#,
        frame.x(0.5),
        frame.y(0.0) + 40.0
    );
    let (lx, ly) = (frame.x(0.0) - 42.0, frame.y(0.5));
    let _ = writeln!(
        w,
        r#"<text class="axis-label" x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 {lx:.2} {ly:.2})">{y_label}</text>"#
    );
    let _ = writeln!(
        w,
        r##"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
        frame.x(0.0),
        frame.y(0.0),
        frame.x(1.0),
        frame.y(1.0)
    );

    for bin in &report.bins {
        let (vx, vy) = if style.standard_axes {
            (bin.mean_confidence, bin.mean_accuracy)
        } else {
            (bin.mean_accuracy, bin.mean_confidence)
        };
        let _ = writeln!(
            w,
            r##"<circle class="bin" cx="{:.3}" cy="{:.3}" r="{:.3}" fill="#1f77b4" fill-opacity="0.6" stroke="#1f77b4" data-count="{}" data-mean-confidence="{}" data-mean-accuracy="{}" data-confidence-lo="{}" data-confidence-hi="{}"/>"##,
            frame.x(vx),
            frame.y(vy),
            style.radius(bin.sample_count),
            bin.sample_count,
            bin.mean_confidence,
            bin.mean_accuracy,
            bin.confidence_lo,
            bin.confidence_hi
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{BinningConfig, CalibrationBin};

    fn bin(n: usize, conf: f64, acc: f64) -> CalibrationBin {
        CalibrationBin {
            sample_count: n,
            mean_confidence: conf,
            mean_accuracy: acc,
            confidence_lo: conf,
            confidence_hi: conf,
        }
    }

    fn report(bins: Vec<CalibrationBin>) -> CalibrationReport {
        let total = bins.iter().map(|b| b.sample_count).sum();
        CalibrationReport {
            level: Level::Sequence,
            ece: crate::metrics::ece(&bins, total).unwrap(),
            overall_accuracy: bins.iter().map(|b| b.mean_accuracy * b.sample_count as f64).sum::<f64>() / total as f64,
            total_samples: total,
            binning: BinningConfig::default(),
            bins,
        }
    }

    fn attr(element: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = element.find(&key).unwrap() + key.len();
        let end = start + element[start..].find('"').unwrap();
        element[start..end].parse().unwrap()
    }

    fn circles(svg: &str) -> Vec<&str> {
        svg.lines().filter(|l| l.starts_with("<circle")).collect()
    }

    #[test]
    fn structure() {
        let r = report(vec![bin(10, 0.3, 0.2), bin(20, 0.6, 0.7), bin(30, 0.9, 0.8)]);
        let svg = render_reliability(&r, &ReliabilityStyle::default()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches(r#"class="identity""#).count(), 1);
        assert!(svg.contains(&metrics_line(&r)));
        assert!(metrics_line(&r).starts_with("EM "));
    }

    #[test]
    fn radius_ratio_follows_log_count() {
        let style = ReliabilityStyle {
            base_radius: 1.5,
            radius_scale: 4.0,
            ..Default::default()
        };
        let svg = render_reliability(&report(vec![bin(10, 0.2, 0.2), bin(1000, 0.8, 0.8)]), &style).unwrap();
        let radii: Vec<f64> = circles(&svg).iter().map(|c| attr(c, "r")).collect();
        let expected = (1.5 + 4.0 * 11f64.ln()) / (1.5 + 4.0 * 1001f64.ln());
        assert!((radii[0] / radii[1] - expected).abs() < 1e-3);
    }

    /// Maps a circle center back to (horizontal, vertical) axis values.
    fn values(c: &str, style: &ReliabilityStyle) -> (f64, f64) {
        let sx = style.width - 2.0 * style.margin;
        let sy = style.height - 2.0 * style.margin;
        ((attr(c, "cx") - style.margin) / sx, 1.0 - (attr(c, "cy") - style.margin) / sy)
    }

    #[test]
    fn calibrated_bins_sit_on_identity() {
        let style = ReliabilityStyle::default();
        let r = report(vec![bin(5, 0.1, 0.1), bin(5, 0.45, 0.45), bin(5, 0.95, 0.95)]);
        let svg = render_reliability(&r, &style).unwrap();
        for c in circles(&svg) {
            let (h, v) = values(c, &style);
            assert!((h - v).abs() < 1e-4);
        }
    }

    #[test]
    fn overconfident_bin_is_above_line_by_default() {
        let r = report(vec![bin(5, 0.9, 0.5)]);
        let style = ReliabilityStyle::default();
        let default_axes = render_reliability(&r, &style).unwrap();
        let (h, v) = values(circles(&default_axes)[0], &style);
        assert!((h - 0.5).abs() < 1e-4 && (v - 0.9).abs() < 1e-4);
        let standard_style = ReliabilityStyle {
            standard_axes: true,
            ..Default::default()
        };
        let standard = render_reliability(&r, &standard_style).unwrap();
        let (h, v) = values(circles(&standard)[0], &standard_style);
        assert!((h - 0.9).abs() < 1e-4 && (v - 0.5).abs() < 1e-4);
    }

    #[test]
    fn labels_parse_back() {
        let r = report(vec![bin(7, 1.0 / 3.0, 2.0 / 7.0), bin(9, 0.7123456789, 0.5)]);
        let svg = render_reliability(&r, &ReliabilityStyle::default()).unwrap();
        for (c, b) in circles(&svg).iter().zip(&r.bins) {
            assert_eq!(attr(c, "data-mean-confidence"), b.mean_confidence);
            assert_eq!(attr(c, "data-mean-accuracy"), b.mean_accuracy);
            assert_eq!(attr(c, "data-count") as usize, b.sample_count);
        }
        let root = svg.lines().next().unwrap();
        assert_eq!(attr(root, "data-ece"), r.ece);
        assert_eq!(attr(root, "data-accuracy"), r.overall_accuracy);
    }

    #[test]
    fn title_is_escaped_and_errors() {
        let style = ReliabilityStyle {
            title: Some("T5 <small> & co".into()),
            ..Default::default()
        };
        let svg = render_reliability(&report(vec![bin(1, 0.5, 1.0)]), &style).unwrap();
        assert!(svg.contains("T5 &lt;small&gt; &amp; co"));
        let mut empty = report(vec![bin(1, 0.5, 1.0)]);
        empty.bins.clear();
        assert_eq!(render_reliability(&empty, &style), Err(RenderError::EmptyReport));
        let cramped = ReliabilityStyle {
            margin: 300.0,
            ..Default::default()
        };
        assert!(matches!(
            render_reliability(&report(vec![bin(1, 0.5, 1.0)]), &cramped),
            Err(RenderError::InvalidStyle(_))
        ));
    }
}
