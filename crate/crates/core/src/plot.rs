//! Static SVG line plots of sweep summaries, one series per grid cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::SummaryRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    NmseVsT,
    InnerItersVsT,
    TimeVsT,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmse_vs_t" => Ok(PlotKind::NmseVsT),
            "inner_iters_vs_t" => Ok(PlotKind::InnerItersVsT),
            "time_vs_t" => Ok(PlotKind::TimeVsT),
            other => Err(Error::InvalidParameter(format!(
                "unknown plot kind {other:?}; expected nmse_vs_t, inner_iters_vs_t or time_vs_t"
            ))),
        }
    }
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::NmseVsT, PlotKind::InnerItersVsT, PlotKind::TimeVsT];

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::NmseVsT => "nmse_vs_t",
            PlotKind::InnerItersVsT => "inner_iters_vs_t",
            PlotKind::TimeVsT => "time_vs_t",
        }
    }

    fn y_label(&self) -> &'static str {
        match self {
            PlotKind::NmseVsT => "NMSE (dB)",
            PlotKind::InnerItersVsT => "inner iterations",
            PlotKind::TimeVsT => "time (s)",
        }
    }

    fn value(&self, r: &SummaryRow) -> f64 {
        match self {
            PlotKind::NmseVsT => r.nmse_db,
            PlotKind::InnerItersVsT => r.inner_iters_mean,
            PlotKind::TimeVsT => r.elapsed_mean,
        }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// Rounds axis limits outward to a 1-2-5 step.
fn nice_range(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `rows` as an SVG document. Output depends only on the inputs.
pub fn plot_summary(rows: &[SummaryRow], kind: PlotKind) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("summary is empty".into()));
    }
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let y = kind.value(r);
        if y.is_finite() {
            series.entry(r.cell.as_str()).or_default().push((r.t as f64, y));
        }
    }
    let points = series.values().flatten();
    let (x_min, x_max) = points.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y_min, y_max) = points.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !x_min.is_finite() {
        return Err(Error::InvalidParameter("summary has no finite values".into()));
    }
    let (x0, x1, xs) = nice_range(x_min, x_max.max(x_min + 1.0));
    let (y0, y1, ys) = nice_range(y_min, y_max);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

    let mut x = x0;
    while x <= x1 + 1e-9 * xs {
        let gx = px(x);
        let _ = writeln!(s, r##"<line x1="{gx:.2}" y1="{TOP}" x2="{gx:.2}" y2="{:.2}" stroke="#ddd"/>"##, TOP + ph);
        let _ = writeln!(
            s,
            r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            fmt_tick(x, xs)
        );
        x += xs;
    }
    let mut y = y0;
    while y <= y1 + 1e-9 * ys {
        let gy = py(y);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            gy + 4.0,
            fmt_tick(y, ys)
        );
        y += ys;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">outer iteration t</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        kind.y_label()
    );

    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}" font-size="10">{}</text>"#, lx + 24.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
