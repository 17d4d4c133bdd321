//! Minimal static SVG line plots. Output depends only on the input: fixed
//! canvas, fixed decimal formatting, no timestamps.

use std::fmt::Write as _;

use crate::report::Table;
use crate::{CliError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x: String,
    /// Columns drawn against `x`, one series each.
    pub y: Vec<String>,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub mark: Mark,
}

impl Axes {
    pub fn linear(title: &str, x: &str, y: &[&str]) -> Self {
        Axes {
            title: title.to_string(),
            x: x.to_string(),
            y: y.iter().map(|s| s.to_string()).collect(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            mark: Mark::Line,
        }
    }

    pub fn log_log(title: &str, x: &str, y: &[&str]) -> Self {
        Axes {
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            mark: Mark::Points,
            ..Self::linear(title, x, y)
        }
    }
}

struct Mapping {
    scale: Scale,
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Mapping {
    fn new(scale: Scale, values: impl Iterator<Item = f64>, from: f64, to: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = transform(scale, v);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if scale == Scale::Log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Mapping { scale, lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (transform(self.scale, v) - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    /// Tick values in data units.
    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Log => (self.lo as i32..=self.hi as i32).map(|k| 10f64.powi(k)).collect(),
            Scale::Linear => (0..=4).map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0).collect(),
        }
    }
}

fn transform(scale: Scale, v: f64) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log => v.log10(),
    }
}

fn usable(scale: Scale, v: f64) -> bool {
    v.is_finite() && (scale == Scale::Linear || v > 0.0)
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the `axes.y` columns of `table` against `axes.x`. Points that
/// cannot be drawn (non-finite, or non-positive on a log axis) are skipped.
pub fn render(table: &Table, axes: &Axes) -> Result<String> {
    let xs = table.column(&axes.x).ok_or_else(|| CliError::Unknown {
        what: "column",
        name: axes.x.clone(),
    })?;
    let mut series = Vec::new();
    for name in &axes.y {
        let ys = table.column(name).ok_or_else(|| CliError::Unknown {
            what: "column",
            name: name.clone(),
        })?;
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| usable(axes.x_scale, **x) && usable(axes.y_scale, **y))
            .map(|(x, y)| (*x, *y))
            .collect();
        series.push((name, pts));
    }
    if series.iter().all(|(_, p)| p.is_empty()) {
        return Err(CliError::EmptyTable);
    }

    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let mx = Mapping::new(axes.x_scale, all().map(|p| p.0), LEFT, WIDTH - RIGHT);
    let my = Mapping::new(axes.y_scale, all().map(|p| p.1), HEIGHT - BOTTOM, TOP);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(&axes.title)).unwrap();

    let class = |scale: Scale| if scale == Scale::Log { "decade" } else { "grid" };
    for t in mx.ticks() {
        let x = mx.map(t);
        writeln!(
            s,
            r##"<line class="{}" x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
            class(axes.x_scale),
            HEIGHT - BOTTOM
        )
        .unwrap();
        writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, HEIGHT - BOTTOM + 15.0, label(t)).unwrap();
    }
    for t in my.ticks() {
        let y = my.map(t);
        writeln!(
            s,
            r##"<line class="{}" x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            class(axes.y_scale),
            WIDTH - RIGHT
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 5.0, y + 4.0, label(t)).unwrap();
    }
    writeln!(
        s,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000000"/>"##,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    )
    .unwrap();
    writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 10.0, escape(&axes.x)).unwrap();

    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", mx.map(*x), my.map(*y))).collect();
        match axes.mark {
            Mark::Line => {
                writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" ")).unwrap();
            }
            Mark::Points => {
                for (x, y) in pts {
                    writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, mx.map(*x), my.map(*y)).unwrap();
                }
            }
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
            LEFT + 8.0,
            TOP + 14.0 * (k as f64 + 1.0),
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(path: &std::path::Path, table: &Table, axes: &Axes) -> Result<()> {
    let s = render(table, axes)?;
    crate::write_file(path, s.as_bytes())
}
