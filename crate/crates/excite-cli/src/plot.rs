//! Deterministic SVG rendering of experiment reports: one median line per
//! policy with a shaded percentile band, log-scale error axis.

use std::fmt::Write as _;
use std::path::Path;

use crate::experiment::Report;
use crate::{CliError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

/// Stable policy palette.
fn color(policy: &str) -> &'static str {
    match policy {
        "active" => "#1f77b4",
        "oracle" => "#2ca02c",
        "iso_noise" => "#d62728",
        "opt_noise" => "#ff7f0e",
        _ => "#7f7f7f",
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Render the report as an SVG string.
pub fn render_plot(report: &Report) -> Result<String> {
    let series: Vec<_> = report
        .policies
        .iter()
        .filter(|p| !p.checkpoints.is_empty())
        .collect();
    if series.is_empty() {
        return Err(CliError::Config("report has no checkpoints to plot".into()));
    }

    // Axis ranges over positive, finite errors; the y axis is logarithmic.
    let mut t_min = f64::INFINITY;
    let mut t_max: f64 = 0.0;
    let mut y_min = f64::INFINITY;
    let mut y_max: f64 = 0.0;
    for p in &series {
        for c in &p.checkpoints {
            t_min = t_min.min(c.t_total as f64);
            t_max = t_max.max(c.t_total as f64);
            for v in [c.p10, c.median, c.p90] {
                if v.is_finite() && v > 0.0 {
                    y_min = y_min.min(v);
                    y_max = y_max.max(v);
                }
            }
        }
    }
    if !(y_min.is_finite() && y_max > 0.0) {
        return Err(CliError::Config("report has no positive errors to plot".into()));
    }
    if y_min == y_max {
        y_min *= 0.5;
        y_max *= 2.0;
    }
    if t_min == t_max {
        t_min = (t_min - 1.0).max(0.0);
        t_max += 1.0;
    }
    let (ly_min, ly_max) = (y_min.log10(), y_max.log10());
    let x_of = |t: f64| {
        MARGIN_L + (t - t_min) / (t_max - t_min) * (WIDTH - MARGIN_L - MARGIN_R)
    };
    let y_of = |v: f64| {
        let lv = v.max(y_min).min(y_max).log10();
        HEIGHT - MARGIN_B - (lv - ly_min) / (ly_max - ly_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // Axes.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let yb = HEIGHT - MARGIN_B;
    let _ = writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        fmt(x0), fmt(MARGIN_T), fmt(x0), fmt(yb)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        fmt(x0), fmt(yb), fmt(x1), fmt(yb)
    );

    // Decade ticks on the log axis.
    let mut dec = ly_min.floor() as i64;
    while (dec as f64) <= ly_max.ceil() {
        let v = 10f64.powi(dec as i32);
        if v >= y_min * 0.999 && v <= y_max * 1.001 {
            let y = y_of(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#cccccc"/>"##,
                fmt(x0), fmt(y), fmt(x1), fmt(y)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end">1e{}</text>"#,
                fmt(x0 - 6.0), fmt(y + 4.0), dec
            );
        }
        dec += 1;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">steps</text>"#,
        fmt((x0 + x1) / 2.0), fmt(HEIGHT - 12.0)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">spectral error</text>"#,
        fmt((MARGIN_T + yb) / 2.0), fmt((MARGIN_T + yb) / 2.0)
    );

    for (i, p) in series.iter().enumerate() {
        let col = color(&p.policy);
        // Percentile band: p90 forward, p10 backward.
        let mut band = String::new();
        for c in &p.checkpoints {
            let _ = write!(band, "{},{} ", fmt(x_of(c.t_total as f64)), fmt(y_of(c.p90)));
        }
        for c in p.checkpoints.iter().rev() {
            let _ = write!(band, "{},{} ", fmt(x_of(c.t_total as f64)), fmt(y_of(c.p10)));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end(), col
        );
        let mut line = String::new();
        for c in &p.checkpoints {
            let _ = write!(line, "{},{} ", fmt(x_of(c.t_total as f64)), fmt(y_of(c.median)));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            line.trim_end(), col
        );
        // Legend entry.
        let ly = MARGIN_T + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/>"#,
            fmt(x1 + 10.0), fmt(ly), fmt(x1 + 30.0), fmt(ly), col
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11">{}</text>"#,
            fmt(x1 + 34.0), fmt(ly + 4.0), p.policy
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render the report and write it to `path`.
pub fn emit_plot(report: &Report, path: &Path) -> Result<()> {
    let svg = render_plot(report)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
