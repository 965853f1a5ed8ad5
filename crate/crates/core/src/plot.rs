//! Minimal self-contained SVG line charts with optional interval bands.
//!
//! Output is a pure function of the chart contents: numbers are printed with
//! fixed precision, so identical inputs give byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, low, high)` interval drawn as a shaded band.
    pub band: Vec<(f64, f64, f64)>,
    /// Draw markers only, without connecting lines.
    pub markers_only: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Labels for x tick positions; numeric ticks are used when empty.
    pub x_ticks: Vec<(f64, String)>,
    pub hline: Option<f64>,
    pub vline: Option<f64>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick step (1, 2 or 5 times a power of ten) giving about `n` ticks.
fn nice_step(span: f64, n: f64) -> f64 {
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0).chain(s.band.iter().map(|b| b.0)))
            .chain(self.vline)
            .chain(self.x_ticks.iter().map(|t| t.0));
        let (x0, x1) = range(xs);
        let ys = self
            .series
            .iter()
            .flat_map(|s| {
                s.points
                    .iter()
                    .map(|p| p.1)
                    .chain(s.band.iter().flat_map(|b| [b.1, b.2]))
            })
            .chain(self.hline);
        let (y0, y1) = range(ys);
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_L + pw / 2.0,
            esc(&self.title)
        );

        // Axes and ticks.
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_L:.1}" y="{MARGIN_T:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##
        );
        let ystep = nice_step(y1 - y0, 6.0);
        let mut t = (y0 / ystep).ceil() * ystep;
        while t <= y1 + 1e-12 {
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_L + pw,
                MARGIN_L - 6.0,
                y + 4.0,
                fmt_tick(t, ystep)
            );
            t += ystep;
        }
        let ticks: Vec<(f64, String)> = if self.x_ticks.is_empty() {
            let xstep = nice_step(x1 - x0, 8.0);
            let mut out = Vec::new();
            let mut t = (x0 / xstep).ceil() * xstep;
            while t <= x1 + 1e-12 {
                out.push((t, fmt_tick(t, xstep)));
                t += xstep;
            }
            out
        } else {
            self.x_ticks.clone()
        };
        for (v, label) in &ticks {
            let x = sx(*v);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="#444"/><text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"##,
                MARGIN_T + ph,
                MARGIN_T + ph + 5.0,
                MARGIN_T + ph + 18.0,
                esc(label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 15.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph / 2.0,
            esc(&self.y_label)
        );
        if let Some(h) = self.hline {
            let y = sy(h);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
                MARGIN_L + pw
            );
        }
        if let Some(v) = self.vline {
            let x = sx(v);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{MARGIN_T:.1}" x2="{x:.2}" y2="{:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
                MARGIN_T + ph
            );
        }

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if !series.band.is_empty() {
                let upper = series.band.iter().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.2)));
                let lower = series
                    .band
                    .iter()
                    .rev()
                    .map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.1)));
                let pts: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                    pts.join(" ")
                );
            }
            if !series.markers_only && series.points.len() > 1 {
                let pts: Vec<String> = series
                    .points
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    pts.join(" ")
                );
            }
            for p in &series.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(p.0),
                    sy(p.1)
                );
            }
            let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
            let lx = MARGIN_L + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
                ly - 10.0,
                lx + 18.0,
                esc(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
    format!("{v:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Chart {
        Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series {
                name: "s".into(),
                points: vec![(0.0, 0.1), (1.0, 0.3), (2.0, 0.2)],
                band: vec![(0.0, 0.0, 0.2), (1.0, 0.2, 0.4), (2.0, 0.1, 0.3)],
                markers_only: false,
            }],
            hline: Some(0.0),
            ..Chart::default()
        }
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let a = chart().to_svg();
        assert_eq!(a, chart().to_svg());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a &lt; b"));
        assert_eq!(a.matches("<circle").count(), 3);
        assert_eq!(a.matches("<polygon").count(), 1);
    }

    #[test]
    fn empty_and_flat_charts_render() {
        assert!(Chart::default().to_svg().contains("</svg>"));
        let mut c = chart();
        c.series[0].points = vec![(1.0, 0.5)];
        c.series[0].band.clear();
        c.hline = None;
        assert!(!c.to_svg().contains("NaN"));
    }

    #[test]
    fn tick_steps() {
        assert_eq!(nice_step(10.0, 5.0), 2.0);
        assert_eq!(nice_step(0.3, 6.0), 0.05);
        assert_eq!(fmt_tick(0.05, 0.05), "0.05");
    }
}
