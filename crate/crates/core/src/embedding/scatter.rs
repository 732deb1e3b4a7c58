use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Tableau-style categorical colors, cycled when classes outnumber them.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub protein_id: String,
    pub class: String,
    pub x: f64,
    pub y: f64,
}

pub fn scatter_points(ids: &[String], classes: &[String], points: &[[f64; 2]]) -> Result<Vec<ScatterPoint>> {
    if ids.len() != points.len() || classes.len() != points.len() {
        return Err(Error::Input(format!(
            "{} ids, {} classes and {} points",
            ids.len(),
            classes.len(),
            points.len()
        )));
    }
    Ok(ids
        .iter()
        .zip(classes)
        .zip(points)
        .map(|((id, class), p)| ScatterPoint {
            protein_id: id.clone(),
            class: class.clone(),
            x: p[0],
            y: p[1],
        })
        .collect())
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("protein_id,class,x,y\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.protein_id, p.class, p.x, p.y);
    }
    out
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
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

/// Class to color, in sorted class order.
pub fn class_colors(points: &[ScatterPoint]) -> BTreeMap<String, &'static str> {
    let mut colors = BTreeMap::new();
    for p in points {
        colors.entry(p.class.clone()).or_insert("");
    }
    for (i, c) in colors.values_mut().enumerate() {
        *c = PALETTE[i % PALETTE.len()];
    }
    colors
}

pub fn scatter_svg(points: &[ScatterPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const MARGIN: f64 = 40.0;
    const LEGEND: f64 = 140.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let plot_w = W - 2.0 * MARGIN - LEGEND;
    let plot_h = H - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + if x1 > x0 { (x - x0) / span(x0, x1) * plot_w } else { plot_w / 2.0 };
    let sy = |y: f64| H - MARGIN - if y1 > y0 { (y - y0) / span(y0, y1) * plot_h } else { plot_h / 2.0 };
    let colors = class_colors(points);

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for p in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            colors[&p.class],
            escape_xml(&p.protein_id)
        );
    }
    let lx = W - LEGEND - MARGIN / 2.0;
    for (i, (class, color)) in colors.iter().enumerate() {
        let ly = MARGIN + 18.0 * i as f64;
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{ly:.2}" r="5" fill="{color}"/>"#, lx + 6.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 16.0,
            ly + 4.0,
            escape_xml(class)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `<stem>.csv` and `<stem>.svg`, returning both paths.
pub fn emit_scatter(points: &[ScatterPoint], stem: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let csv = stem.with_extension("csv");
    let svg = stem.with_extension("svg");
    write_atomic(&csv, scatter_csv(points).as_bytes())?;
    write_atomic(&svg, scatter_svg(points).as_bytes())?;
    Ok((csv, svg))
}
