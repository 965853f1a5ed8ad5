//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any criterion fails.
//!
//! ```text
//! cargo test -p sociolex --test acceptance
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use sociolex_core::corpus::{Granularity, Message, Platform, TimeBucket};
use sociolex_core::embedshift::{
    anchor_stability, association_difference, association_series, cbow_gradients, cbow_loss, period_seed,
    procrustes_align, train_embeddings, CbowExample, EmbeddingSpace, PoleSets, SeriesParams, TrainParams,
};
use sociolex_core::estimation::{
    bootstrap_group_mean, ks_two_sample, pearson, pearson_trend, variant_rate, Filter, Rate, RateSeries, SeriesPoint,
    Target, Weighting,
};
use sociolex_core::eventstudy::{build_design, fit_event_study, Design, FitOptions};
use sociolex_core::synth::{self, AssociationSpec, StaggeredSpec};
use sociolex_core::variables::{extract_occurrences, GenderClass, VariableSpec};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("extraction oracle equivalence", extraction_oracle),
        ("pattern fidelity", pattern_fidelity),
        ("rate recovery", rate_recovery),
        ("bootstrap calibration", bootstrap_calibration),
        ("trend and KS oracle", trend_ks_oracle),
        ("event-study recovery", event_study_recovery),
        ("embedding trainer", embedding_trainer),
        ("procrustes alignment", procrustes),
        ("semantic-narrowing pipeline", narrowing_pipeline),
        ("end-to-end reproducibility", end_to_end),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}

// 1 -----------------------------------------------------------------------

fn message(id: usize, text: String) -> Message {
    Message {
        id: format!("m{id}"),
        platform: Platform::Twitter,
        timestamp: 1_420_070_400,
        text,
        community: None,
        labels: BTreeSet::new(),
        state: None,
        demographics: Arc::new(Default::default()),
    }
}

type Hit = (String, String, String, String);

/// Every adjacent (precursor, variant) pair, by direct comparison.
fn brute_force(id: &str, tokens: &[String], specs: &[VariableSpec]) -> Vec<Hit> {
    let mut out = Vec::new();
    for spec in specs {
        for i in 1..tokens.len() {
            let variant = spec.variants.iter().any(|v| v.surface == tokens[i]);
            let precursor = spec.rule.precursors.iter().any(|p| *p == tokens[i - 1]);
            if variant && precursor {
                out.push((
                    id.to_string(),
                    spec.name.clone(),
                    tokens[i].clone(),
                    tokens[i - 1].clone(),
                ));
            }
        }
    }
    out
}

fn extraction_oracle() -> Outcome {
    let specs = [VariableSpec::sigother(), VariableSpec::person()];
    let streams = synth::random_token_streams(10_000, 25, &specs, 2024);
    let messages: Vec<Message> = streams
        .iter()
        .enumerate()
        .map(|(i, t)| message(i, t.join(" ")))
        .collect();

    let start = Instant::now();
    let got: Result<BTreeSet<Hit>, _> = extract_occurrences(messages.iter().cloned().map(Ok), &specs)
        .map(|o| o.map(|o| (o.message_id, o.variable, o.variant, o.precursor)))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let got = got.map_err(|e| e.to_string())?;

    let want: BTreeSet<Hit> = messages
        .iter()
        .zip(&streams)
        .flat_map(|(m, t)| brute_force(&m.id, t, &specs))
        .collect();
    let discrepancies = got.symmetric_difference(&want).count();
    check!(!want.is_empty(), "oracle found no matches");
    check!(discrepancies == 0, "{discrepancies} discrepancies");
    check!(secs < 10.0, "extraction took {secs:.2} s");
    Ok(format!(
        "10000 streams, {} matches, 0 discrepancies, extraction {secs:.2} s",
        want.len()
    ))
}

// 2 -----------------------------------------------------------------------

fn pattern_fidelity() -> Outcome {
    let specs = [VariableSpec::sigother(), VariableSpec::person()];
    let matches = |text: &str| -> Vec<String> {
        extract_occurrences([Ok(message(0, text.to_string()))], &specs)
            .map(|o| o.expect("in-memory source").variant)
            .collect()
    };
    let cases = [
        ("my husband", Some("husband")),
        ("my partner", Some("partner")),
        ("her lover", Some("lover")),
        ("a woman", Some("woman")),
        ("a man", Some("man")),
        ("many people", Some("people")),
        ("if dudes", Some("dudes")),
        ("a fella", Some("fella")),
        ("business partner", None),
    ];
    for (text, want) in cases {
        let got = matches(text);
        let want: Vec<String> = want.into_iter().map(String::from).collect();
        check!(got == want, "{text:?}: got {got:?}, want {want:?}");
    }
    Ok(format!("{} / {} contexts agree", cases.len(), cases.len()))
}

// 3 -----------------------------------------------------------------------

fn rate_recovery() -> Outcome {
    let none = Filter::default();
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for (i, p) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        let (occ, k) = synth::planted_choice(100_000, p, 300 + i as u64);
        let r = variant_rate(&occ, "SigOther", &Target::Variant("partner".into()), &none).map_err(|e| e.to_string())?;
        check!(
            r.k == k && r.n == 100_000,
            "counts {}/{} vs planted {k}/100000",
            r.k,
            r.n
        );
        let err = (r.p() - p).abs();
        check!(err <= 0.005, "p = {p}: estimate {}", r.p());
        worst = worst.max(err);

        let class_sum: f64 = [GenderClass::Masculine, GenderClass::Feminine, GenderClass::Neutral]
            .into_iter()
            .map(|g| variant_rate(&occ, "SigOther", &Target::Gender(g), &none).map(|r| r.p()))
            .sum::<Result<f64, _>>()
            .map_err(|e| e.to_string())?;
        let variants: BTreeSet<&str> = occ.iter().map(|o| o.variant.as_str()).collect();
        let variant_sum: f64 = variants
            .iter()
            .map(|v| variant_rate(&occ, "SigOther", &Target::Variant(v.to_string()), &none).map(|r| r.p()))
            .sum::<Result<f64, _>>()
            .map_err(|e| e.to_string())?;
        for s in [class_sum, variant_sum] {
            check!((s - 1.0).abs() <= 1e-12, "rates sum to {s}");
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }
    Ok(format!("max |p_hat - p| = {worst:.4}, max |sum - 1| = {worst_sum:.1e}"))
}

// 4 -----------------------------------------------------------------------

fn bootstrap_calibration() -> Outcome {
    let mu = 0.4;
    let mut covered = 0;
    for rep in 0..100u64 {
        let rates = synth::community_rates(20, mu, 0.05, 2_000, 1_000 + rep);
        let g = bootstrap_group_mean(&rates, 1000, rep, Weighting::Communities).map_err(|e| e.to_string())?;
        if g.ci_low <= mu && mu <= g.ci_high {
            covered += 1;
        }
    }
    check!(covered >= 90, "coverage {covered} / 100");
    let rates = synth::community_rates(20, mu, 0.05, 2_000, 1_000);
    let a = bootstrap_group_mean(&rates, 1000, 5, Weighting::Communities).map_err(|e| e.to_string())?;
    let b = bootstrap_group_mean(&rates, 1000, 5, Weighting::Communities).map_err(|e| e.to_string())?;
    check!(a == b, "identical seeds gave {a:?} and {b:?}");
    Ok(format!(
        "coverage {covered} / 100, identical seeds reproduce the interval"
    ))
}

// 5 -----------------------------------------------------------------------

/// Two-sided Student-t p-value by the finite trigonometric series, exact for
/// integer degrees of freedom.
fn t_two_sided(t: f64, df: u32) -> f64 {
    let theta = (t.abs() / (df as f64).sqrt()).atan();
    let (s, c) = (theta.sin(), theta.cos());
    let series = |from: u32| {
        let (mut term, mut sum) = (1.0, 1.0);
        for j in (from..df).step_by(2) {
            term *= (j - 1) as f64 / j as f64 * c * c;
            sum += term;
        }
        sum
    };
    let inside = if df % 2 == 0 {
        s * series(2)
    } else if df == 1 {
        2.0 / std::f64::consts::PI * theta
    } else {
        2.0 / std::f64::consts::PI * (theta + s * c * series(3))
    };
    1.0 - inside
}

/// Two-pass Pearson correlation.
fn two_pass_r(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn ecdf_distance(xs: &[f64], ys: &[f64]) -> f64 {
    let ecdf = |s: &[f64], v: f64| s.iter().filter(|&&x| x <= v).count() as f64 / s.len() as f64;
    xs.iter()
        .chain(ys)
        .map(|&v| (ecdf(xs, v) - ecdf(ys, v)).abs())
        .fold(0.0, f64::max)
}

/// Kolmogorov tail by its alternating series, summed far past convergence.
fn kolmogorov_tail(lambda: f64) -> f64 {
    let sum: f64 = (1..10_000)
        .map(|j| {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
        })
        .sum();
    (2.0 * sum).clamp(0.0, 1.0)
}

fn monthly_series(r: &mut ChaCha8Rng, len: usize, slope: f64) -> RateSeries {
    let mut bucket = TimeBucket::from_year_month(2012, 1, Granularity::Month);
    let mut points = Vec::with_capacity(len);
    for i in 0..len {
        let n = 100_000;
        let p = (0.3 + slope * i as f64 + r.random_range(-0.1..0.1)).clamp(0.0, 1.0);
        points.push(SeriesPoint {
            bucket,
            rate: Rate::new((p * n as f64).round() as u64, n),
            ci: None,
        });
        // Occasional gaps make the bucket index differ from the position.
        for _ in 0..r.random_range(1..3) {
            bucket = bucket.next();
        }
    }
    RateSeries {
        granularity: Granularity::Month,
        points,
        omitted: Vec::new(),
    }
}

fn trend_ks_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut dr, mut dp, mut dd, mut dk) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for fixture in 0..50 {
        let len = rng.random_range(4..40);
        let slope = rng.random_range(-0.01..0.01);
        let s = monthly_series(&mut rng, len, slope);
        let got = pearson_trend(&s).map_err(|e| e.to_string())?;
        let xs: Vec<f64> = s.points.iter().map(|p| p.bucket.index as f64).collect();
        let ys: Vec<f64> = s.points.iter().map(|p| p.rate.p()).collect();
        let r = two_pass_r(&xs, &ys);
        let t = r * ((len - 2) as f64 / (1.0 - r * r)).sqrt();
        let p = t_two_sided(t, len as u32 - 2);
        check!((got.r - r).abs() <= 1e-10, "fixture {fixture}: r {} vs {r}", got.r);
        check!(
            (got.p_value - p).abs() <= 1e-6,
            "fixture {fixture}: p {} vs {p}",
            got.p_value
        );
        dr = dr.max((got.r - r).abs());
        dp = dp.max((got.p_value - p).abs());

        let (n, m) = (rng.random_range(20..200), rng.random_range(20..200));
        let shift = rng.random_range(0.0..0.5);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + shift).collect();
        let got = ks_two_sample(&xs, &ys).map_err(|e| e.to_string())?;
        let d = ecdf_distance(&xs, &ys);
        let p = kolmogorov_tail(((n * m) as f64 / (n + m) as f64).sqrt() * d);
        check!((got.d - d).abs() <= 1e-10, "fixture {fixture}: D {} vs {d}", got.d);
        check!(
            (got.p_value - p).abs() <= 1e-6,
            "fixture {fixture}: KS p {} vs {p}",
            got.p_value
        );
        dd = dd.max((got.d - d).abs());
        dk = dk.max((got.p_value - p).abs());
    }

    let mut bucket = TimeBucket::from_year_month(2010, 1, Granularity::Month);
    let mut points = Vec::new();
    for i in 0..24u64 {
        points.push(SeriesPoint {
            bucket,
            rate: Rate::new(100 + 10 * i, 1000),
            ci: None,
        });
        bucket = bucket.next();
    }
    let linear = pearson_trend(&RateSeries {
        granularity: Granularity::Month,
        points,
        omitted: Vec::new(),
    })
    .map_err(|e| e.to_string())?;
    check!((linear.r - 1.0).abs() <= 1e-12, "linear series r = {}", linear.r);
    Ok(format!(
        "50 fixtures, max error r {dr:.1e}, p {dp:.1e}, D {dd:.1e}, KS p {dk:.1e}; linear r = {}",
        linear.r
    ))
}

// 6 -----------------------------------------------------------------------

/// Solves `X'X b = X'y` by Gaussian elimination with partial pivoting.
fn normal_equations(design: &Design) -> Vec<f64> {
    let (n, k) = design.x.shape();
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = (0..n).map(|r| design.x[(r, i)] * design.x[(r, j)]).sum();
        }
        a[i][k] = (0..n).map(|r| design.x[(r, i)] * design.y[r]).sum();
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("non-empty");
        a.swap(col, piv);
        for row in 0..k {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=k {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

/// Standardized errors of every coefficient against its planted value.
fn z_scores(spec: &StaggeredSpec) -> Result<Vec<f64>, String> {
    let panel = synth::staggered_panel(spec);
    let design = build_design(&panel).map_err(|e| e.to_string())?;
    let fit = fit_event_study(&design, &FitOptions::default()).map_err(|e| e.to_string())?;
    let post = fit.post().into_iter().map(|(_, c)| (c.estimate - spec.effect) / c.se);
    Ok(fit
        .pre()
        .into_iter()
        .map(|(_, c)| c.estimate / c.se)
        .chain(post)
        .collect())
}

fn event_study_recovery() -> Outcome {
    // The canonical panel: 30 states, effect 0.02, noise 0.001, seed 0.
    let spec = StaggeredSpec::default();
    let panel = synth::staggered_panel(&spec);
    let start = Instant::now();
    let design = build_design(&panel).map_err(|e| e.to_string())?;
    let fit = fit_event_study(&design, &FitOptions::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 5.0, "fit took {secs:.2} s");

    let (pre, post) = (fit.pre(), fit.post());
    check!(post.len() == 12, "{} post coefficients", post.len());
    for (k, c) in &post {
        check!(
            (c.estimate - 0.02).abs() <= 3.0 * c.se,
            "phi {k} = {} (se {})",
            c.estimate,
            c.se
        );
    }
    for (k, c) in &pre {
        check!(c.estimate.abs() <= 3.0 * c.se, "pi {k} = {} (se {})", c.estimate, c.se);
    }

    let oracle = normal_equations(&design);
    let max_dev = fit
        .coefficients
        .iter()
        .zip(&oracle)
        .map(|(c, b)| (c.estimate - b).abs())
        .fold(0.0, f64::max);
    check!(max_dev <= 1e-8, "QR and normal equations differ by {max_dev:.2e}");

    // Flat before, level jump after.
    let max_pre = pre.iter().map(|(_, c)| c.estimate.abs()).fold(0.0, f64::max);
    let post_est: Vec<f64> = post.iter().map(|(_, c)| c.estimate).collect();
    let (lo, hi) = post_est
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    check!(max_pre < 0.1 * spec.effect, "pre-period not flat: max |pi| = {max_pre}");
    check!(hi - lo < 0.25 * spec.effect, "post-period not level: range {lo}..{hi}");

    // With 23 coefficients at 3 SE about 6% of panels have one outside by
    // chance; the standard errors must be calibrated for that to hold.
    let mut all = Vec::new();
    let mut outside = 0;
    for seed in 0..100 {
        let z = z_scores(&StaggeredSpec { seed, ..spec })?;
        outside += z.iter().any(|z| z.abs() > 3.0) as usize;
        all.extend(z);
    }
    let sd = (all.iter().map(|z| z * z).sum::<f64>() / all.len() as f64).sqrt();
    check!((0.9..=1.1).contains(&sd), "z-score rms {sd:.3} over 100 panels");
    check!(outside <= 10, "{outside} / 100 panels have a coefficient outside 3 SE");
    Ok(format!(
        "{} rows, {} columns; phi in [{lo:.4}, {hi:.4}], max |pi| {max_pre:.1e}; oracle gap {max_dev:.1e}; fit {secs:.2} s; \
         100 panels: z rms {sd:.3}, {outside} with any |z| > 3",
        panel.len(),
        fit.coefficients.len()
    ))
}

// 7 -----------------------------------------------------------------------

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn gradient_check() -> Result<f64, String> {
    let (v, d) = (12, 8);
    let input = gaussian(v, d, 71) * 0.3;
    let output = gaussian(v, d, 72) * 0.3;
    let ex = CbowExample {
        context: vec![0, 4, 5, 9],
        target: 3,
        negatives: vec![1, 7, 11, 7, 2],
    };
    let (g_in, g_out) = cbow_gradients(&input, &output, &ex);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, &g_in), (1, &g_out)] {
        for i in 0..v {
            for j in 0..d {
                let (mut ip, mut op, mut im, mut om) = (input.clone(), output.clone(), input.clone(), output.clone());
                if which == 0 {
                    ip[(i, j)] += h;
                    im[(i, j)] -= h;
                } else {
                    op[(i, j)] += h;
                    om[(i, j)] -= h;
                }
                let numeric = (cbow_loss(&ip, &op, &ex) - cbow_loss(&im, &om, &ex)) / (2.0 * h);
                let a = analytic[(i, j)];
                let scale = a.abs().max(numeric.abs());
                if scale == 0.0 {
                    continue;
                }
                // Entries untouched by the example are exactly zero both ways.
                let rel = (a - numeric).abs() / scale;
                check!(
                    rel < 1e-4 || scale < 1e-9,
                    "gradient ({i},{j}): analytic {a} vs numeric {numeric}"
                );
                if scale >= 1e-9 {
                    worst = worst.max(rel);
                }
            }
        }
    }
    Ok(worst)
}

fn embedding_trainer() -> Outcome {
    let worst = gradient_check()?;
    let poles = PoleSets::terms();
    let params = TrainParams {
        dim: 32,
        epochs: 3,
        threads: 1,
        ..TrainParams::default()
    };
    let mut diffs = Vec::new();
    for seed in 0..5u64 {
        let corpus =
            synth::association_corpus(&AssociationSpec::new(poles.clone(), "dude", 0.8, 2_000_000, 500 + seed));
        let space = train_embeddings(&corpus, &params, seed, "2015").map_err(|e| e.to_string())?;
        diffs.push(
            association_difference(&space, "dude", &poles)
                .map_err(|e| e.to_string())?
                .difference,
        );
    }
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    check!(positive == 5, "sign recovered in {positive}/5 runs: {diffs:?}");

    let corpus = synth::association_corpus(&AssociationSpec::new(poles.clone(), "dude", 0.8, 100_000, 9));
    let small = TrainParams {
        min_tokens: 50_000,
        ..params
    };
    let a = train_embeddings(&corpus, &small, 3, "x").map_err(|e| e.to_string())?;
    let b = train_embeddings(&corpus, &small, 3, "x").map_err(|e| e.to_string())?;
    check!(a == b, "single-thread training differs between identical runs");
    let shown: Vec<String> = diffs.iter().map(|d| format!("{d:.3}")).collect();
    Ok(format!(
        "gradient max rel error {worst:.1e}; sign recovered 5/5 (diffs {}); bit-identical reruns",
        shown.join(", ")
    ))
}

// 8 -----------------------------------------------------------------------

fn space_from(m: &DMatrix<f64>, period: &str) -> Result<EmbeddingSpace, String> {
    let words = (0..m.nrows()).map(|i| format!("t{i}")).collect();
    let rows = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    EmbeddingSpace::from_rows(period, words, rows).map_err(|e| e.to_string())
}

fn procrustes() -> Outcome {
    let mut rotation_err: f64 = 0.0;
    let mut ortho_err: f64 = 0.0;
    let mut anchor_err: f64 = 0.0;
    for (d, seed) in [(10, 11), (50, 12), (300, 13)] {
        let a = gaussian(d + 50, d, seed);
        let r = gaussian(d, d, seed + 100).qr().q();
        let (sa, sb) = (space_from(&a, "a")?, space_from(&(&a * &r), "b")?);
        let al = procrustes_align(&sa, &sb, None).map_err(|e| e.to_string())?;
        let e = (&al.w - &r).norm();
        check!(e < 1e-6, "d = {d}: |W - R| = {e:.2e}");
        let o = (al.w.transpose() * &al.w - DMatrix::<f64>::identity(d, d)).abs().max();
        check!(o <= 1e-8, "d = {d}: |W'W - I| = {o:.2e}");
        let anchors: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
        let rep = anchor_stability(&sa, &sb, &anchors, None).map_err(|e| e.to_string())?;
        let worst = rep.cosines.iter().map(|(_, c)| (c - 1.0).abs()).fold(0.0, f64::max);
        check!(worst <= 1e-6, "d = {d}: anchor cosine off by {worst:.2e}");
        rotation_err = rotation_err.max(e);
        ortho_err = ortho_err.max(o);
        anchor_err = anchor_err.max(worst);
    }

    let poles = PoleSets::terms();
    let periods = synth::drift_corpus(&poles, "dude", &[("2014", 0.5), ("2015", 0.5)], 1_000_000, 81);
    let params = TrainParams {
        dim: 100,
        epochs: 5,
        threads: 1,
        ..TrainParams::default()
    };
    let spaces = periods
        .iter()
        .map(|(label, docs)| train_embeddings(docs, &params, period_seed(8, label, 0), label))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let anchors: Vec<String> = poles.set_a.iter().chain(&poles.set_b).cloned().collect();
    let al = procrustes_align(&spaces[0], &spaces[1], None).map_err(|e| e.to_string())?;
    let rep = anchor_stability(&spaces[0], &spaces[1], &anchors, Some(&al)).map_err(|e| e.to_string())?;
    check!(
        rep.min >= 0.85,
        "stable corpus: min anchor cosine {:.3} (mean {:.3})",
        rep.min,
        rep.mean
    );
    Ok(format!(
        "|W - R| <= {rotation_err:.1e}, |W'W - I| <= {ortho_err:.1e}, rotated anchors within {anchor_err:.1e}; \
         stable corpus {} anchors min {:.3}, mean {:.3}",
        anchors.len(),
        rep.min,
        rep.mean
    ))
}

// 9 -----------------------------------------------------------------------

fn narrowing_pipeline() -> Outcome {
    let poles = PoleSets::terms();
    let periods = synth::drift_corpus(
        &poles,
        "dude",
        &[("2014", 0.2), ("2015", 0.5), ("2016", 0.8)],
        500_000,
        91,
    );
    let params = SeriesParams {
        runs: 2,
        train: TrainParams {
            dim: 32,
            epochs: 5,
            threads: 1,
            min_tokens: 100_000,
            ..TrainParams::default()
        },
        seed: 19,
        resamples: 500,
        ..SeriesParams::default()
    };
    let points = association_series(&periods, "dude", &poles, &params).map_err(|e| e.to_string())?;
    let ys: Vec<f64> = points.iter().map(|p| p.difference).collect();
    check!(
        ys.windows(2).all(|w| w[0] < w[1]),
        "series not strictly increasing: {ys:?}"
    );
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let t = pearson(&xs, &ys).map_err(|e| e.to_string())?;
    check!(
        t.r > 0.9 && t.p_value < 0.05,
        "r = {}, p = {} over {ys:?}",
        t.r,
        t.p_value
    );
    let shown: Vec<String> = ys.iter().map(|y| format!("{y:.3}")).collect();
    Ok(format!(
        "diffs {}; r = {:.4}, p = {:.4}",
        shown.join(" < "),
        t.r,
        t.p_value
    ))
}

// 10 ----------------------------------------------------------------------

fn output_hashes(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = e.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            out.insert(name, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}

fn run_pipeline(out: &Path) -> Result<f64, String> {
    let config: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fixtures", "config.json"].iter().collect();
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_sociolex"))
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check!(
        status.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    Ok(secs)
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ta = run_pipeline(&a)?;
    let tb = run_pipeline(&b)?;
    let (ha, hb) = (output_hashes(&a)?, output_hashes(&b)?);
    check!(ha.len() >= 10, "only {} CSVs produced", ha.len());
    check!(ha == hb, "CSV checksums differ between runs");
    let slowest = ta.max(tb);
    check!(slowest < 60.0, "pipeline took {slowest:.1} s");
    Ok(format!(
        "{} CSVs byte-identical across two runs; slowest run {slowest:.1} s",
        ha.len()
    ))
}
