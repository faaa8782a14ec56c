use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "run,step,metric,class,value";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub run: String,
    pub step: u64,
    pub metric: String,
    /// `None` for whole-model metrics such as mIoU.
    pub class: Option<usize>,
    pub value: f64,
}

impl MetricRow {
    pub fn new(run: &str, step: u64, metric: &str, class: Option<usize>, value: f64) -> Self {
        Self {
            run: run.to_string(),
            step,
            metric: metric.to_string(),
            class,
            value,
        }
    }
}

fn check_field(path: &Path, s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r']) {
        return Err(Error::format(path, format!("unwritable field {s:?}")));
    }
    Ok(())
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let class = r.class.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.run, r.step, r.metric, class, r.value);
    }
    out
}

pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, "missing metrics header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        rows.push(MetricRow {
            run: f[0].to_string(),
            step: f[1].parse().map_err(|_| bad("step"))?,
            metric: f[2].to_string(),
            class: if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse().map_err(|_| bad("class"))?)
            },
            value: f[4].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(rows)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One bar per (run, class) of `metric`, keeping the latest step of each.
pub fn render_svg(metric: &str, rows: &[MetricRow]) -> Option<String> {
    let mut latest: BTreeMap<(String, usize), (u64, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        let Some(c) = r.class else { continue };
        let e = latest.entry((r.run.clone(), c)).or_insert((r.step, r.value));
        if r.step >= e.0 {
            *e = (r.step, r.value);
        }
    }
    if latest.is_empty() {
        return None;
    }
    let bar_w = 28.0;
    let gap = 12.0;
    let (left, top, plot_h) = (40.0, 30.0, 200.0);
    let width = left + latest.len() as f64 * (bar_w + gap) + gap;
    let height = top + plot_h + 60.0;
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let max = latest.values().map(|v| finite(v.1).max(0.0)).fold(0.0, f64::max);
    let min = latest.values().map(|v| finite(v.1).min(0.0)).fold(0.0, f64::min);
    let span = if max - min > 0.0 { max - min } else { 1.0 };
    let zero_y = top + plot_h * max / span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18" font-family="sans-serif" font-size="13">{}</text>"#, escape(metric));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{zero_y:.2}" x2="{width:.0}" y2="{zero_y:.2}" stroke="black" stroke-width="1"/>"#
    );
    for (k, ((run, class), (_, value))) in latest.iter().enumerate() {
        let v = finite(*value);
        let x = left + gap + k as f64 * (bar_w + gap);
        let h = plot_h * v.abs() / span;
        let y = if v >= 0.0 { zero_y - h } else { zero_y };
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{bar_w}" height="{h:.2}" fill="#4a78b5"><title>{} class {class}: {value}</title></rect>"##,
            escape(run)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{}:{class}</text>"#,
            x + bar_w / 2.0,
            top + plot_h + 16.0,
            escape(run)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Writes `metrics.csv` and one SVG per per-class metric into `dir`.
pub fn emit_report(rows: &[MetricRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("metrics.csv");
    for r in rows {
        check_field(&csv_path, &r.run)?;
        check_field(&csv_path, &r.metric)?;
    }
    std::fs::write(&csv_path, metrics_csv(rows)).map_err(|e| Error::io(&csv_path, e))?;
    let mut metrics: Vec<&str> = rows.iter().filter(|r| r.class.is_some()).map(|r| r.metric.as_str()).collect();
    metrics.sort_unstable();
    metrics.dedup();
    for m in metrics {
        if let Some(svg) = render_svg(m, rows) {
            let name: String = m.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
            let p = dir.join(format!("{name}.svg"));
            std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}
