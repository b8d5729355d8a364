//! Score-trace figure: per-method score curves over time with ground-truth
//! anomalies marked, written as SVG plus a CSV of the plotted values.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::create;
use crate::error::{check_dim, Error, Result};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub fn csv_twin_path(svg_path: &Path) -> PathBuf {
    svg_path.with_extension("csv")
}

/// Writes `svg_path` and its CSV twin (`t,<method>...,label`). Each trace is
/// scaled to its own maximum so methods with different score units share
/// one axis. Returns the CSV path.
pub fn emit_trace_plot(
    series: &[(&str, &[f64])],
    labels: &[u8],
    svg_path: &Path,
) -> Result<PathBuf> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("no score series to plot".into()));
    }
    let n = labels.len();
    for (name, s) in series {
        check_dim("plot series length", n, s.len()).map_err(|e| match e {
            Error::DimensionMismatch {
                expected, actual, ..
            } => Error::InvalidConfig(format!(
                "series {name} has {actual} points, labels have {expected}"
            )),
            other => other,
        })?;
    }

    let csv_path = csv_twin_path(svg_path);
    let mut csv = create(&csv_path)?;
    let io_err = |p: &Path, e| Error::io(p, e);
    let names: Vec<&str> = series.iter().map(|(n, _)| *n).collect();
    writeln!(csv, "t,{},label", names.join(",")).map_err(|e| io_err(&csv_path, e))?;
    for t in 0..n {
        let vals: Vec<String> = series.iter().map(|(_, s)| format!("{:?}", s[t])).collect();
        writeln!(csv, "{t},{},{}", vals.join(","), labels[t]).map_err(|e| io_err(&csv_path, e))?;
    }
    csv.flush().map_err(|e| io_err(&csv_path, e))?;

    let mut svg = String::new();
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x_of = |t: usize| {
        MARGIN
            + if n > 1 {
                plot_w * t as f64 / (n - 1) as f64
            } else {
                plot_w / 2.0
            }
    };
    let y_of = |v: f64| HEIGHT - MARGIN - plot_h * v;

    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect width="100%" height="100%" fill="#ffffff"/>"##
    );
    let _ = writeln!(svg, r##"<g id="anomalies" fill="#f4c7c3">"##);
    for t in (0..n).filter(|&t| labels[t] != 0) {
        let _ = writeln!(
            svg,
            r#"<rect class="anomaly" x="{:.2}" y="{MARGIN}" width="3" height="{plot_h}"/>"#,
            x_of(t) - 1.5
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333333"/>"##
    );
    for (k, (name, s)) in series.iter().enumerate() {
        let max = s
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0_f64, f64::max);
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let points: Vec<String> = s
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x_of(t), y_of((v * scale).clamp(0.0, 1.0))))
            .collect();
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<polyline class="trace" data-method="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            MARGIN + 8.0 + 90.0 * k as f64,
            MARGIN - 10.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="#333333">timestep</text>"##,
        WIDTH / 2.0 - 25.0,
        HEIGHT - 10.0
    );
    svg.push_str("</svg>\n");

    let mut w = create(svg_path)?;
    w.write_all(svg.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(svg_path, e))?;
    Ok(csv_path)
}
