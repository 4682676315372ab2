//! Result files: sweep CSV, runtime side file, constellation dumps and SVG
//! plots. All writers produce byte-identical output for identical input.

use std::fmt::Write as _;
use std::path::Path;

use super::config::Method;
use super::sweep::SweepResult;
use crate::txrx::SymbolFrame;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "sweep_var,method,ber,ser,q_db,evm_pct,ber_is_floor,runtime_s,seed";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Results table. With `with_runtime` false the runtime column is left
/// empty so the file depends only on configuration and seed.
pub fn csv_string(result: &SweepResult, with_runtime: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &result.rows {
        let runtime = if with_runtime { format!("{:.3}", r.runtime_s) } else { String::new() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.sweep_var,
            r.method.as_str(),
            r.report.ber,
            r.report.ser,
            r.report.q_db,
            r.report.evm_pct,
            r.report.ber_is_floor,
            runtime,
            r.seed
        );
    }
    s
}

pub fn emit_csv(result: &SweepResult, path: &Path, with_runtime: bool) -> Result<()> {
    write(path, &csv_string(result, with_runtime))
}

pub fn emit_runtime_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut s = String::from("sweep_var,method,runtime_s,seed\n");
    for r in &result.rows {
        let _ = writeln!(s, "{},{},{:.3},{}", r.sweep_var, r.method.as_str(), r.runtime_s, r.seed);
    }
    write(path, &s)
}

/// `(I, Q)` pairs before and after equalization, one symbol per line.
pub fn emit_constellation(before: &SymbolFrame, after: &SymbolFrame, path: &Path) -> Result<()> {
    if before.len() != after.len() {
        return Err(Error::invalid(format!(
            "constellation frames differ in length ({} vs {})",
            before.len(),
            after.len()
        )));
    }
    let mut s = String::from("i_before,q_before,i_after,q_after\n");
    for (b, a) in before.symbols.iter().zip(&after.symbols) {
        let _ = writeln!(s, "{},{},{},{}", b.re, b.im, a.re, a.im);
    }
    write(path, &s)
}

/// One plotted line: method name and `(x, Q dB)` points.
pub type Series = (String, Vec<(f64, f64)>);

pub fn series_from_result(result: &SweepResult) -> Vec<Series> {
    Method::ALL
        .iter()
        .filter_map(|&m| {
            let pts: Vec<(f64, f64)> = result
                .rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| (r.sweep_var, r.report.q_db))
                .collect();
            (!pts.is_empty()).then(|| (m.as_str().to_string(), pts))
        })
        .collect()
}

/// Reads `(method, x, Q)` series back from a results CSV.
pub fn series_from_csv(text: &str) -> Result<Vec<Series>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format {
            what: "results csv",
            detail: "missing or unexpected header".into(),
        });
    }
    let mut out: Vec<Series> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |k: usize| -> Result<f64> {
            f.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format {
                what: "results csv",
                detail: format!("line {}: bad field {k}", i + 2),
            })
        };
        let (x, q) = (parse(0)?, parse(4)?);
        let method = f[1].to_string();
        match out.iter_mut().find(|(m, _)| *m == method) {
            Some((_, pts)) => pts.push((x, q)),
            None => out.push((method, vec![(x, q)])),
        }
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 { 0.0 } else { t });
        t += step;
    }
    out
}

/// Self-contained SVG line chart.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 60.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.1).max(0.25);
    y0 -= pad;
    y1 += pad;
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    for t in nice_ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, top + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, top + ph + 18.0);
    }
    for t in nice_ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 18.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut sorted: Vec<_> = pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).copied().collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = sorted.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in &sorted {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(x), sy(y));
        }
        let ly = top + 16.0 + 20.0 * k as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn axis_label(var: &str) -> &'static str {
    match var {
        "launch_power_dbm" => "Launch power (dBm)",
        "n_spans" => "Number of spans",
        _ => "Sweep value",
    }
}

pub fn emit_plot(result: &SweepResult, path: &Path) -> Result<()> {
    let svg = render_svg(
        "Q factor",
        axis_label(result.variable.as_str()),
        "Q (dB)",
        &series_from_result(result),
    );
    write(path, &svg)
}
