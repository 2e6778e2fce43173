//! Deterministic scatter plots as SVG, plus their data as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 12;

/// Twelve well-separated colours, used in class first-appearance order.
pub const DEFAULT_PALETTE: [&str; MAX_CLASSES] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#f7b6d2",
];

const HEALTHY: (&str, &str) = ("healthy", "#2ca02c");
const SICK: (&str, &str) = ("sick", "#d62728");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub class: String,
    pub tooltip: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterSpec {
    pub title: String,
    pub points: Vec<ScatterPoint>,
    pub width: u32,
    pub height: u32,
    pub palette: Vec<String>,
    pub legend: bool,
}

impl ScatterSpec {
    pub fn new(title: impl Into<String>, points: Vec<ScatterPoint>) -> Self {
        Self {
            title: title.into(),
            points,
            width: 800,
            height: 600,
            palette: DEFAULT_PALETTE.iter().map(|s| s.to_string()).collect(),
            legend: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Validation(format!("point {i} has a non-finite coordinate")));
        }
        let classes = self.classes();
        if classes.len() > MAX_CLASSES {
            return Err(Error::Class(format!("{} classes; at most {MAX_CLASSES} can be drawn", classes.len())));
        }
        if !self.is_binary_health() && classes.len() > self.palette.len() {
            return Err(Error::Class(format!(
                "{} classes but only {} palette colours",
                classes.len(),
                self.palette.len()
            )));
        }
        if self.width < 200 || self.height < 150 {
            return Err(Error::Validation("plot must be at least 200×150 pixels".into()));
        }
        Ok(())
    }

    /// Distinct classes in first-appearance order.
    pub fn classes(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in &self.points {
            if !seen.contains(&p.class.as_str()) {
                seen.push(p.class.as_str());
            }
        }
        seen
    }

    fn is_binary_health(&self) -> bool {
        let classes = self.classes();
        !classes.is_empty() && classes.iter().all(|c| *c == HEALTHY.0 || *c == SICK.0)
    }

    /// `(class, colour)` in first-appearance order.
    pub fn class_colors(&self) -> Vec<(String, String)> {
        let binary = self.is_binary_health();
        self.classes()
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let colour = match c {
                    _ if !binary => self.palette[i % self.palette.len()].clone(),
                    "healthy" => HEALTHY.1.to_owned(),
                    _ => SICK.1.to_owned(),
                };
                (c.to_owned(), colour)
            })
            .collect()
    }
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

/// Data bounds widened by 5% on each side; degenerate ranges get ±1.
fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo == 0.0 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn scatter_svg(spec: &ScatterSpec) -> Result<String> {
    spec.validate()?;
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (left, right, top, bottom) = (70.0, if spec.legend { 170.0 } else { 30.0 }, 50.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let (x0, x1) = bounds(spec.points.iter().map(|p| p.x));
    let (y0, y1) = bounds(spec.points.iter().map(|p| p.y));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
    let colours: BTreeMap<String, String> = spec.class_colors().into_iter().collect();

    let mut s = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        spec.width, spec.height, spec.width, spec.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, spec.width, spec.height);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(&spec.title)
    );

    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}"/>"#, top + ph);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="10" fill="black">"#);
    for k in 0..=4 {
        let t = f64::from(k) / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            sy(yv) + 3.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(s, "</g>");

    let _ = writeln!(s, r#"<g fill-opacity="0.8">"#);
    for p in &spec.points {
        let colour = &colours[&p.class];
        match &p.tooltip {
            Some(t) => {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"><title>{}</title></circle>"#,
                    sx(p.x),
                    sy(p.y),
                    escape(t)
                );
            }
            None => {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(p.x), sy(p.y));
            }
        }
    }
    let _ = writeln!(s, "</g>");

    if spec.legend {
        let lx = left + pw + 20.0;
        let _ = writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="12">"#);
        for (i, (class, colour)) in spec.class_colors().iter().enumerate() {
            let ly = top + 10.0 + 20.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{colour}"/>"#, ly - 10.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 18.0, escape(class));
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

/// Header `x,y,class,tooltip`, rows in input order.
pub fn scatter_csv(spec: &ScatterSpec) -> Result<String> {
    spec.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "class", "tooltip"])?;
    for p in &spec.points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.class.clone(), p.tooltip.clone().unwrap_or_default()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Inverse of [`scatter_csv`]; an empty tooltip reads back as `None`.
pub fn parse_scatter_csv(text: &str) -> Result<Vec<ScatterPoint>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>() != ["x", "y", "class", "tooltip"] {
        return Err(Error::Parse("scatter CSV header must be x,y,class,tooltip".into()));
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let num = |k: usize| {
            record
                .get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad coordinate", i + 2)))
        };
        let tooltip = record.get(3).unwrap_or_default();
        points.push(ScatterPoint {
            x: num(0)?,
            y: num(1)?,
            class: record.get(2).unwrap_or_default().to_owned(),
            tooltip: (!tooltip.is_empty()).then(|| tooltip.to_owned()),
        });
    }
    Ok(points)
}

/// Points from a reduction export (`node_id,label,class,x,y`); the tooltip
/// is `"{label} {node_id}"`.
pub fn points_from_reduction_csv(text: &str) -> Result<Vec<ScatterPoint>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>() != ["node_id", "label", "class", "x", "y"] {
        return Err(Error::Parse("reduction CSV header must be node_id,label,class,x,y".into()));
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: usize| record.get(k).unwrap_or_default();
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: bad coordinate", i + 2)))
        };
        points.push(ScatterPoint {
            x: num(3)?,
            y: num(4)?,
            class: field(2).to_owned(),
            tooltip: Some(format!("{} {}", field(1), field(0))),
        });
    }
    Ok(points)
}
