//! One function per analysis kind. Each writes its result CSV (and SVG where
//! a chart applies) and returns the paths it produced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use sociolex_core::corpus::{load_messages, tokenize, Granularity, ReadOptions, TimeBucket};
use sociolex_core::embedshift::{
    anchor_stability, association_series, period_seed, procrustes_align, train_embeddings, write_series_csv,
    AssociationPoint, PeriodCorpus, PoleSets, SeriesParams,
};
use sociolex_core::estimation::{
    community_mean_series, group_comparison, pearson, pearson_trend, quartile_comparison, rate_series, BootstrapParams,
    GroupEstimate, Target, TrendResult,
};
use sociolex_core::eventstudy::{build_design, build_panel, fit_event_study, FitOptions, PanelOptions, TreatmentTable};
use sociolex_core::variables::Occurrence;

use crate::config::{DidBlock, GroupsBlock, RatesBlock, ShiftBlock, TrendBlock, TrendMode};
use crate::fsutil::write_atomic;
use crate::report;

fn target(s: &str) -> Result<Target> {
    s.parse::<Target>().map_err(anyhow::Error::msg)
}

/// Writes a CSV and, when its name maps to a chart, the SVG beside it.
fn write_with_chart(csv_path: &Path, bytes: &[u8]) -> Result<Vec<PathBuf>> {
    write_atomic(csv_path, bytes)?;
    let mut files = vec![csv_path.to_path_buf()];
    if let Some(chart) = report::chart_for(csv_path, bytes)? {
        let svg = csv_path.with_extension("svg");
        write_atomic(&svg, chart.to_svg().as_bytes())?;
        files.push(svg);
    }
    Ok(files)
}

/// `bucket,p,ci_low,ci_high,n` with a binomial bootstrap interval.
pub fn rates(b: &RatesBlock, occ: &[Occurrence], csv_path: &Path) -> Result<Vec<PathBuf>> {
    let series = rate_series(occ, &b.variable, &target(&b.target)?, &b.filter, b.granularity, b.min_n)?
        .with_binomial_ci(b.resamples, b.seed.unwrap_or(0))?;
    if !series.omitted.is_empty() {
        eprintln!(
            "note: {} bucket(s) below min_n = {} omitted from {}",
            series.omitted.len(),
            b.min_n,
            csv_path.display()
        );
    }
    let mut out = report::RATES_HEADER.join(",");
    out.push('\n');
    for p in &series.points {
        let (lo, hi) =
            p.ci.map_or((String::new(), String::new()), |(l, h)| (l.to_string(), h.to_string()));
        writeln!(out, "{},{},{lo},{hi},{}", p.bucket.label(), p.rate.p(), p.rate.n)?;
    }
    write_with_chart(csv_path, out.as_bytes())
}

fn trend_csv(t: &TrendResult) -> String {
    format!("r,p_value,n\n{},{},{}\n", t.r, t.p_value, t.n)
}

/// Pearson correlation of rate against bucket index.
pub fn trend_result(b: &TrendBlock, occ: &[Occurrence]) -> Result<TrendResult> {
    let t = target(&b.target)?;
    Ok(match b.mode {
        TrendMode::Raw => pearson_trend(&rate_series(occ, &b.variable, &t, &b.filter, b.granularity, b.min_n)?)?,
        TrendMode::CommunityMean => {
            let boot = BootstrapParams {
                resamples: b.resamples,
                seed: b.seed.unwrap_or(0),
                ..BootstrapParams::default()
            };
            let s = community_mean_series(occ, &b.variable, &t, &b.filter, b.granularity, b.min_n, &boot)?;
            let xs: Vec<f64> = s.iter().map(|(bk, _)| bk.index as f64).collect();
            let ys: Vec<f64> = s.iter().map(|(_, g)| g.mean).collect();
            pearson(&xs, &ys)?
        }
    })
}

pub fn trend(b: &TrendBlock, occ: &[Occurrence], csv_path: &Path) -> Result<Vec<PathBuf>> {
    let t = trend_result(b, occ)?;
    write_atomic(csv_path, trend_csv(&t).as_bytes())?;
    Ok(vec![csv_path.to_path_buf()])
}

/// The trend of a rates table written by [`rates`]: counts are recovered
/// exactly from `p * n`, so the result equals the library call on the
/// original series.
pub fn trend_from_rates(csv_text: &[u8]) -> Result<TrendResult> {
    use sociolex_core::estimation::{Rate, RateSeries, SeriesPoint};
    let rows = report::read_rates(csv_text)?;
    let granularity = rows.first().map_or(Granularity::Month, |r| r.bucket.granularity);
    let points = rows
        .iter()
        .map(|r| SeriesPoint {
            bucket: r.bucket,
            rate: Rate::new((r.p * r.n as f64).round() as u64, r.n),
            ci: r.ci,
        })
        .collect();
    Ok(pearson_trend(&RateSeries {
        granularity,
        points,
        omitted: Vec::new(),
    })?)
}

fn group_rows(out: &mut String, groups: &BTreeMap<String, GroupEstimate>) {
    out.push_str("group,mean,ci_low,ci_high,n_units\n");
    for (g, e) in groups {
        let _ = writeln!(out, "{g},{},{},{},{}", e.mean, e.ci_low, e.ci_high, e.n_units);
    }
}

/// `group,mean,ci_low,ci_high,n_units` per identity label, or per quartile
/// of a demographic attribute (with a `_ks` table comparing Q4 and Q1).
pub fn groups(b: &GroupsBlock, occ: &[Occurrence], csv_path: &Path) -> Result<Vec<PathBuf>> {
    let t = target(&b.target)?;
    let boot = BootstrapParams {
        resamples: b.resamples,
        seed: b.seed.unwrap_or(0),
        weighting: b.weighting,
    };
    let mut out = String::new();
    let mut files = Vec::new();
    match &b.attribute {
        None => {
            let g = group_comparison(occ, &b.variable, &t, &b.filter, &b.groups, b.min_n, &boot)?;
            group_rows(&mut out, &g);
        }
        Some(attr) => {
            let q = quartile_comparison(occ, &b.variable, &t, &b.filter, attr, b.min_n, &boot)?;
            group_rows(&mut out, &q.groups);
            if let Some(ks) = q.ks_top_bottom {
                let stem = csv_path.file_stem().context("bad output name")?.to_string_lossy();
                let ks_path = csv_path.with_file_name(format!("{stem}_ks.csv"));
                write_atomic(&ks_path, format!("d,p_value\n{},{}\n", ks.d, ks.p_value).as_bytes())?;
                files.push(ks_path);
            }
        }
    }
    write_atomic(csv_path, out.as_bytes())?;
    files.insert(0, csv_path.to_path_buf());
    Ok(files)
}

/// Event-study coefficients `coef,estimate,se` and their chart.
pub fn did(b: &DidBlock, treatments: &TreatmentTable, occ: &[Occurrence], csv_path: &Path) -> Result<Vec<PathBuf>> {
    let opts = PanelOptions {
        variable: b.variable.clone(),
        window_pre: -b.window,
        window_post: b.window,
        min_n: b.min_n,
        conditioning: b.conditioning,
    };
    let panel = build_panel(occ, treatments, &target(&b.target)?, &opts)?;
    if panel.dropped_cells > 0 {
        eprintln!(
            "note: {} state-month cell(s) below min_n = {} dropped",
            panel.dropped_cells, b.min_n
        );
    }
    let design = build_design(&panel.rows)?;
    for w in &design.warnings {
        eprintln!("warning: {w}");
    }
    let fit = fit_event_study(
        &design,
        &FitOptions {
            weighted: b.weighted,
            standard_errors: b.standard_errors,
        },
    )?;
    let mut buf = Vec::new();
    fit.write_csv(&mut buf)?;
    write_with_chart(csv_path, &buf)
}

/// Reads a corpus and groups message tokens by calendar year.
pub fn period_corpora(path: &Path, keep: &[String]) -> Result<Vec<PeriodCorpus>> {
    let mut by_year: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let reader = load_messages(path, None, ReadOptions::default())?;
    for m in reader {
        let m = m?;
        let year = TimeBucket::of(m.timestamp, Granularity::Year).label();
        if keep.is_empty() || keep.contains(&year) {
            by_year.entry(year).or_default().push(tokenize(&m.text).tokens);
        }
    }
    for k in keep {
        if !by_year.contains_key(k) {
            anyhow::bail!("period {k} has no messages in {}", path.display());
        }
    }
    Ok(by_year.into_iter().collect())
}

/// Association series `year,target,diff,ci_low,ci_high`, its chart, a
/// trend table when there are at least three periods, and, when anchors
/// are given, sequential-period anchor cosines after alignment.
pub fn shift(b: &ShiftBlock, corpus: &Path, poles: &PoleSets, csv_path: &Path) -> Result<Vec<PathBuf>> {
    let periods = period_corpora(corpus, &b.periods)?;
    let params = SeriesParams {
        runs: b.runs,
        train: b.train.clone(),
        seed: b.seed.unwrap_or(0),
        resamples: b.resamples,
        bootstrap: b.bootstrap,
    };
    let points: Vec<AssociationPoint> = association_series(&periods, &b.target, poles, &params)?;
    for p in points.iter().filter(|p| !p.missing.is_empty()) {
        eprintln!(
            "note: {}: pole words missing from vocabulary: {}",
            p.period,
            p.missing.join(" ")
        );
    }
    let mut buf = Vec::new();
    write_series_csv(&mut buf, &points)?;
    let mut files = write_with_chart(csv_path, &buf)?;
    let stem = csv_path
        .file_stem()
        .context("bad output name")?
        .to_string_lossy()
        .into_owned();

    if points.len() >= 3 {
        let xs: Vec<f64> = (0..points.len()).map(|i| i as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.difference).collect();
        let t = pearson(&xs, &ys)?;
        let path = csv_path.with_file_name(format!("{stem}_trend.csv"));
        write_atomic(&path, trend_csv(&t).as_bytes())?;
        files.push(path);
    }

    if !b.anchors.is_empty() {
        let seed = b.seed.unwrap_or(0);
        let spaces = periods
            .par_iter()
            .map(|(label, docs)| train_embeddings(docs, &b.train, period_seed(seed, label, 0), label))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut out = Vec::new();
        for (i, pair) in spaces.windows(2).enumerate() {
            let al = procrustes_align(&pair[0], &pair[1], None)?;
            let rep = anchor_stability(&pair[0], &pair[1], &b.anchors, Some(&al))?;
            eprintln!("note: anchors {}: min {:.3}, mean {:.3}", rep.pair, rep.min, rep.mean);
            rep.write_csv(&mut out, i == 0)?;
        }
        let name = stem.strip_prefix("shift_").unwrap_or(&stem);
        let path = csv_path.with_file_name(format!("anchors_{name}.csv"));
        write_atomic(&path, &out)?;
        files.push(path);
    }
    Ok(files)
}

/// Loads the occurrence table and its demographics sidecar, if present.
pub fn load_occurrences(path: &Path) -> Result<Vec<Occurrence>> {
    use sociolex_core::variables::{attach_demographics, read_occurrences_csv};
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut occ =
        read_occurrences_csv(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    let side = demographics_path(path);
    if side.is_file() {
        attach_demographics(std::fs::File::open(&side)?, &mut occ)
            .with_context(|| format!("reading {}", side.display()))?;
    }
    Ok(occ)
}

/// `occ.csv` -> `occ.demographics.csv`.
pub fn demographics_path(occurrences: &Path) -> PathBuf {
    let stem = occurrences
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    occurrences.with_file_name(format!("{stem}.demographics.csv"))
}
