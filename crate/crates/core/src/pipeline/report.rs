//! CSV and SVG rendering of study reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::study::{AblationReport, NoiseTypeReport, SetMetrics, SweepReport};
use crate::error::{Error, Result};
use crate::metrics::Measured;

pub const REPORT_CSV: &str = "summary.csv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Sweep(SweepReport),
    NoiseType(NoiseTypeReport),
    Ablation(AblationReport),
}

impl Report {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Name of the x axis and whether it is numeric.
    fn axis(&self) -> (&str, bool) {
        match self {
            Report::Sweep(s) => (s.axis.as_str(), true),
            Report::NoiseType(_) => ("noise_kind", false),
            Report::Ablation(_) => ("arm", false),
        }
    }

    fn rows(&self) -> Vec<Row<'_>> {
        match self {
            Report::Sweep(s) => s
                .points
                .iter()
                .map(|p| Row {
                    label: format!("{}", p.value),
                    param: Some(p.value),
                    metrics: &p.metrics,
                })
                .collect(),
            Report::NoiseType(r) => r
                .rows
                .iter()
                .map(|row| Row {
                    label: row.kind.name().to_owned(),
                    param: None,
                    metrics: &row.metrics,
                })
                .collect(),
            Report::Ablation(a) => a
                .arms
                .iter()
                .map(|row| Row {
                    label: row.arm.name().to_owned(),
                    param: None,
                    metrics: &row.metrics,
                })
                .collect(),
        }
    }
}

struct Row<'a> {
    label: String,
    param: Option<f64>,
    metrics: &'a SetMetrics,
}

const METRICS: [&str; 8] = [
    "diversity",
    "fid",
    "nfid",
    "ssim",
    "clip_score",
    "entropy_input",
    "entropy_output",
    "n_samples",
];

fn metric(m: &SetMetrics, name: &str) -> Option<f64> {
    let v = |x: &Option<Measured>| x.map(|m| m.value);
    match name {
        "diversity" => v(&m.diversity),
        "fid" => v(&m.report.fid),
        "nfid" => v(&m.report.nfid),
        "ssim" => v(&m.report.ssim),
        "clip_score" => v(&m.report.clip_score),
        "entropy_input" => v(&m.entropy_input),
        "entropy_output" => v(&m.report.entropy_bits),
        "n_samples" => Some(m.n_samples as f64),
        _ => None,
    }
}

/// Write `summary.csv`, `report.json` and SVG plots into `out_dir`.
pub fn emit_report(report: &Report, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out_dir.as_ref();
    let rows = report.rows();
    if rows.is_empty() {
        return Err(Error::InsufficientData("report has no rows".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    put(REPORT_CSV.into(), csv(&rows))?;
    put(REPORT_JSON.into(), report.to_json() + "\n")?;

    let (axis, numeric) = report.axis();
    let xs: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| if numeric { r.param.unwrap_or(i as f64) } else { i as f64 })
        .collect();
    let ticks: Option<Vec<String>> = (!numeric).then(|| rows.iter().map(|r| r.label.clone()).collect());
    for name in METRICS.iter().filter(|n| **n != "n_samples") {
        let points: Vec<Point> = rows
            .iter()
            .zip(&xs)
            .filter_map(|(r, &x)| metric(r.metrics, name).map(|y| Point { x, y, label: None }))
            .collect();
        if points.is_empty() {
            continue;
        }
        let plot = Plot {
            title: format!("{name} vs {axis}"),
            x_label: axis.to_owned(),
            y_label: (*name).to_owned(),
            points,
            connect: true,
            categories: ticks.clone(),
        };
        put(format!("{name}_vs_{axis}.svg"), plot.render())?;
    }

    let fid_axis = if rows.iter().any(|r| r.metrics.report.nfid.is_some()) {
        "nfid"
    } else {
        "fid"
    };
    for (file, x, y) in [
        ("nfid_ssim.svg", fid_axis, "ssim"),
        ("clip_ssim.svg", "clip_score", "ssim"),
        ("nfid_clip.svg", fid_axis, "clip_score"),
    ] {
        let points = rows
            .iter()
            .filter_map(|r| {
                Some(Point {
                    x: metric(r.metrics, x)?,
                    y: metric(r.metrics, y)?,
                    label: Some(r.label.clone()),
                })
            })
            .collect();
        let plot = Plot {
            title: format!("{y} vs {x}"),
            x_label: x.to_owned(),
            y_label: y.to_owned(),
            points,
            connect: false,
            categories: None,
        };
        put(file.into(), plot.render())?;
    }
    Ok(written)
}

fn csv(rows: &[Row<'_>]) -> String {
    let mut s = String::from("label,param");
    for m in METRICS {
        s.push(',');
        s.push_str(m);
    }
    s.push('\n');
    for r in rows {
        s.push_str(&csv_field(&r.label));
        s.push(',');
        if let Some(p) = r.param {
            let _ = write!(s, "{p}");
        }
        for m in METRICS {
            s.push(',');
            if let Some(v) = metric(r.metrics, m) {
                let _ = write!(s, "{v}");
            }
        }
        s.push('\n');
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

struct Point {
    x: f64,
    y: f64,
    label: Option<String>,
}

struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    points: Vec<Point>,
    connect: bool,
    /// Tick labels for a categorical x axis at positions 0, 1, ….
    categories: Option<Vec<String>>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { (hi - lo) * 0.08 } else { lo.abs().max(1.0) * 0.1 };
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    fn render(&self) -> String {
        let (x0, x1) = match &self.categories {
            Some(c) => (-0.5, c.len() as f64 - 0.5),
            None => span(self.points.iter().map(|p| p.x)),
        };
        let (y0, y1) = span(self.points.iter().map(|p| p.y));
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
        let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let (bx, by) = (H - BOTTOM, W - RIGHT);
        let _ = writeln!(
            s,
            r#"<path d="M{LEFT} {TOP} V{bx} H{by}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let y = y0 + (y1 - y0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" x2="{by}" y1="{0:.2}" y2="{0:.2}" stroke="#ddd"/><text x="{1}" y="{0:.2}" text-anchor="end" dy="4">{2}</text>"##,
                py(y),
                LEFT - 6.0,
                tick(y)
            );
        }
        match &self.categories {
            Some(cats) => {
                for (i, c) in cats.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                        px(i as f64),
                        bx + 18.0,
                        escape(c)
                    );
                }
            }
            None => {
                for i in 0..=4 {
                    let x = x0 + (x1 - x0) * i as f64 / 4.0;
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                        px(x),
                        bx + 18.0,
                        tick(x)
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            H - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            escape(&self.y_label)
        );
        if self.points.is_empty() {
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="middle" fill="#888">no data</text>"##,
                W / 2.0,
                H / 2.0
            );
        }
        if self.connect && self.points.len() > 1 {
            let path: Vec<String> = self
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| format!("{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, px(p.x), py(p.y)))
                .collect();
            let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, path.join(" "));
        }
        for p in &self.points {
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##, px(p.x), py(p.y));
            if let Some(l) = &p.label {
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, px(p.x) + 6.0, py(p.y) - 6.0, escape(l));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
