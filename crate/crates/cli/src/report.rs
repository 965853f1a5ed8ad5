//! SVG charts rendered from result CSVs.
//!
//! Charts depend only on CSV contents, so `report` over an output directory
//! reproduces the SVGs written by `run`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use sociolex_core::corpus::TimeBucket;
use sociolex_core::embedshift::{series_chart, AssociationPoint};
use sociolex_core::plot::{Chart, Series};

fn records(csv_text: &[u8], header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(csv_text);
    let got: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if got != header {
        bail!("expected header {}, found {}", header.join(","), got.join(","));
    }
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

fn num(s: &str) -> Result<f64> {
    s.parse().with_context(|| format!("bad number {s:?}"))
}

/// Rows of a `bucket,p,ci_low,ci_high,n` table.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub bucket: TimeBucket,
    pub p: f64,
    pub ci: Option<(f64, f64)>,
    pub n: u64,
}

pub const RATES_HEADER: [&str; 5] = ["bucket", "p", "ci_low", "ci_high", "n"];

pub fn read_rates(csv_text: &[u8]) -> Result<Vec<RateRow>> {
    records(csv_text, &RATES_HEADER)?
        .iter()
        .map(|r| {
            let ci = match (&r[2], &r[3]) {
                ("", "") => None,
                (lo, hi) => Some((num(lo)?, num(hi)?)),
            };
            Ok(RateRow {
                bucket: TimeBucket::parse(&r[0]).with_context(|| format!("bad bucket {:?}", &r[0]))?,
                p: num(&r[1])?,
                ci,
                n: r[4].parse().with_context(|| format!("bad count {:?}", &r[4]))?,
            })
        })
        .collect()
}

pub fn rates_chart(rows: &[RateRow], title: &str) -> Chart {
    let every = rows.len().div_ceil(8).max(1);
    Chart {
        title: title.to_string(),
        x_label: "time".into(),
        y_label: "rate".into(),
        series: vec![Series {
            name: "rate".into(),
            points: rows.iter().map(|r| (r.bucket.index as f64, r.p)).collect(),
            band: rows
                .iter()
                .filter_map(|r| r.ci.map(|(lo, hi)| (r.bucket.index as f64, lo, hi)))
                .collect(),
            markers_only: false,
        }],
        x_ticks: rows
            .iter()
            .step_by(every)
            .map(|r| (r.bucket.index as f64, r.bucket.label()))
            .collect(),
        ..Chart::default()
    }
}

pub const DID_HEADER: [&str; 3] = ["coef", "estimate", "se"];

/// Event-time coefficients with a one-standard-error band; the reference
/// offset 0 is drawn at zero.
pub fn did_chart(csv_text: &[u8], title: &str) -> Result<Chart> {
    let mut pts = vec![(0.0, 0.0, 0.0)];
    for r in records(csv_text, &DID_HEADER)? {
        let k = match r[0].split_once(':') {
            Some(("pre" | "post", k)) => num(k)?,
            _ => continue,
        };
        let (est, se) = (num(&r[1])?, num(&r[2])?);
        pts.push((k, est, if se.is_finite() { se } else { 0.0 }));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Chart {
        title: title.to_string(),
        x_label: "months relative to treatment".into(),
        y_label: "estimate".into(),
        series: vec![Series {
            name: "estimate ± 1 SE".into(),
            points: pts.iter().map(|p| (p.0, p.1)).collect(),
            band: pts.iter().map(|p| (p.0, p.1 - p.2, p.1 + p.2)).collect(),
            markers_only: false,
        }],
        hline: Some(0.0),
        vline: Some(0.0),
        ..Chart::default()
    })
}

pub const SHIFT_HEADER: [&str; 5] = ["year", "target", "diff", "ci_low", "ci_high"];

pub fn shift_chart(csv_text: &[u8], title: &str) -> Result<Chart> {
    let points: Vec<AssociationPoint> = records(csv_text, &SHIFT_HEADER)?
        .iter()
        .map(|r| {
            Ok(AssociationPoint {
                period: r[0].to_string(),
                target: r[1].to_string(),
                difference: num(&r[2])?,
                ci_low: num(&r[3])?,
                ci_high: num(&r[4])?,
                run_values: Vec::new(),
                missing: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(series_chart(&points, title))
}

/// Chart for a result CSV, chosen by file-name prefix.
pub fn chart_for(path: &Path, csv_text: &[u8]) -> Result<Option<Chart>> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let chart = if let Some(name) = stem.strip_prefix("rates_") {
        Some(rates_chart(&read_rates(csv_text)?, &format!("rate: {name}")))
    } else if let Some(name) = stem.strip_prefix("did_") {
        Some(did_chart(csv_text, &format!("event study: {name}"))?)
    } else if let Some(name) = stem.strip_prefix("shift_").filter(|n| !n.ends_with("_trend")) {
        Some(shift_chart(csv_text, &format!("association: {name}"))?)
    } else {
        None
    };
    Ok(chart)
}

/// Renders an SVG next to every recognized CSV in `dir`; returns the SVG
/// paths in name order.
pub fn render_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    csvs.sort();
    let mut out = Vec::new();
    for p in csvs {
        let text = std::fs::read(&p)?;
        if let Some(chart) = chart_for(&p, &text).with_context(|| format!("rendering {}", p.display()))? {
            let svg = p.with_extension("svg");
            crate::fsutil::write_atomic(&svg, chart.to_svg().as_bytes())?;
            out.push(svg);
        }
    }
    Ok(out)
}
