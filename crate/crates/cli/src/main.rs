//! `sociolex`: corpus extraction, rate estimation, event studies and
//! embedding association analyses from one command.
//!
//! Exit codes: 0 success, 1 analysis failure, 2 validation failure.

mod analyses;
mod config;
mod fsutil;
mod pipeline;
mod report;

use std::fmt::Debug;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use sociolex_core::corpus::{load_messages_sharded, Granularity, LabelMap, ReadOptions};
use sociolex_core::embedshift::BootstrapOver;
use sociolex_core::estimation::Filter;
use sociolex_core::eventstudy::{Conditioning, StandardErrors, TreatmentTable};
use sociolex_core::variables::{load_variable_spec, Extractor, VariableSpec};

use config::{Analysis, DidBlock, RatesBlock, RunConfig, ShiftBlock, TrendBlock, TrendMode, ValidationError};

#[derive(Parser)]
#[command(
    name = "sociolex",
    version,
    about = "Sociolinguistic lexical-variable analyses over social-media corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis in a config file and write a manifest.
    Run(RunArgs),
    /// Extract variable occurrences from JSON-lines corpora.
    Extract(ExtractArgs),
    /// Rate of a target variant per time bucket.
    Rates(RatesArgs),
    /// Pearson trend of a rate series.
    Trend(TrendArgs),
    /// Staggered event-study regression around treatment dates.
    Did(DidArgs),
    /// Pole association of a target word across yearly embedding spaces.
    Shift(ShiftArgs),
    /// Render SVG charts for the result CSVs in a directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Variable spec files; the bundled SigOther and Person specs when omitted.
    #[arg(long, num_args = 1..)]
    spec: Vec<PathBuf>,
    /// Community label map; the bundled map when omitted.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strict: bool,
}

/// Loads a base block from a config file; flags then override its fields.
#[derive(Args, Clone)]
struct FromConfig {
    /// Take defaults from the first matching analysis in this config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Analysis name to pick from the config.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct RatesArgs {
    #[command(flatten)]
    from: FromConfig,
    #[arg(long)]
    occurrences: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variable: Option<String>,
    /// `partner`, `partner+spouse` or `gender:neutral`.
    #[arg(long)]
    target: Option<String>,
    /// Filter as JSON, e.g. '{"labels_all":["lgbt"]}'.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    granularity: Option<Granularity>,
    #[arg(long)]
    min_n: Option<u64>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrendArgs {
    #[command(flatten)]
    from: FromConfig,
    /// A rates CSV; prints the trend of that series.
    #[arg(long, conflicts_with = "occurrences")]
    series: Option<PathBuf>,
    #[arg(long)]
    occurrences: Option<PathBuf>,
    #[arg(long)]
    variable: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    granularity: Option<Granularity>,
    #[arg(long)]
    min_n: Option<u64>,
    /// Correlate the mean of per-community rates instead of the pooled rate.
    #[arg(long)]
    community_mean: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DidArgs {
    #[command(flatten)]
    from: FromConfig,
    #[arg(long)]
    occurrences: PathBuf,
    /// `state,month` table; the bundled marriage-equality dates when omitted.
    #[arg(long)]
    treatments: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variable: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    window: Option<i64>,
    #[arg(long)]
    min_n: Option<u64>,
    /// Count every variant in the denominator instead of spousal terms only.
    #[arg(long)]
    all_variants: bool,
    /// Weight cells by their use counts.
    #[arg(long)]
    weighted: bool,
    /// Standard errors clustered by state.
    #[arg(long)]
    clustered: bool,
}

#[derive(Args)]
struct ShiftArgs {
    #[command(flatten)]
    from: FromConfig,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    target: Option<String>,
    /// `terms`, `names` or a pole-set JSON file.
    #[arg(long)]
    poles: Option<String>,
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<String>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Bootstrap over pole words instead of run values.
    #[arg(long)]
    pole_bootstrap: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    min_tokens: Option<u64>,
    /// Threads per embedding space; above 1 training is not bit-reproducible.
    #[arg(long)]
    train_threads: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    anchors: Option<Vec<String>>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
}

/// Applies command-line values over config values, warning on conflicts.
struct Overrides {
    from_config: bool,
}

impl Overrides {
    fn set<T: PartialEq + Debug>(&self, field: &str, slot: &mut T, flag: Option<T>) {
        if let Some(v) = flag {
            if self.from_config && *slot != v {
                eprintln!("warning: --{field} {v:?} overrides config value {:?}", slot);
            }
            *slot = v;
        }
    }

    fn flag(&self, field: &str, slot: &mut bool, set: bool) {
        self.set(field, slot, set.then_some(true));
    }
}

fn config_block(from: &FromConfig, kind: &str) -> Result<Option<(Analysis, PathBuf)>> {
    let Some(path) = &from.config else { return Ok(None) };
    let cfg = RunConfig::load(path)?.resolve();
    let found = cfg
        .analyses
        .into_iter()
        .find(|a| a.kind() == kind && from.name.as_deref().is_none_or(|n| a.name() == n))
        .ok_or_else(|| ValidationError {
            field: "analyses".into(),
            message: format!(
                "{}: no {kind} analysis{}",
                path.display(),
                from.name.as_ref().map(|n| format!(" named {n:?}")).unwrap_or_default()
            ),
        })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Some((found, base)))
}

fn blank<T: serde::de::DeserializeOwned>() -> T {
    serde_json::from_value(serde_json::json!({ "target": "" })).expect("blocks default from a target")
}

fn parse_filter(s: Option<String>) -> Result<Option<Filter>> {
    s.map(|s| {
        serde_json::from_str(&s).map_err(|e| {
            ValidationError {
                field: "filter".into(),
                message: e.to_string(),
            }
            .into()
        })
    })
    .transpose()
}

fn need_target(t: &str) -> Result<()> {
    if t.is_empty() {
        return Err(ValidationError {
            field: "target".into(),
            message: "a target is required".into(),
        }
        .into());
    }
    t.parse::<sociolex_core::estimation::Target>().map(|_| ()).map_err(|e| {
        ValidationError {
            field: "target".into(),
            message: e,
        }
        .into()
    })
}

fn need_file(field: &str, p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(ValidationError {
            field: field.into(),
            message: format!("file not found: {}", p.display()),
        }
        .into());
    }
    Ok(())
}

fn setup_threads(requested: Option<usize>) -> Result<()> {
    let mut n = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(v) = std::env::var("SOCIOLEX_THREADS") {
        let cap: usize = v.parse().map_err(|_| ValidationError {
            field: "SOCIOLEX_THREADS".into(),
            message: format!("not a positive integer: {v:?}"),
        })?;
        if cap == 0 {
            return Err(ValidationError {
                field: "SOCIOLEX_THREADS".into(),
                message: "must be positive".into(),
            }
            .into());
        }
        n = n.min(cap);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .ok();
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    let o = Overrides { from_config: true };
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    o.set("seed", &mut cfg.seed, a.seed);
    if a.threads.is_some() {
        o.set("threads", &mut cfg.threads, Some(a.threads));
    }
    let cfg = cfg.resolve();
    let res = cfg.validate(&base)?;
    setup_threads(cfg.threads)?;
    let out_dir = match a.out {
        Some(out) => {
            if out != config::resolve_path(&base, &cfg.output_dir) {
                eprintln!(
                    "warning: --out {} overrides config output_dir {}",
                    out.display(),
                    cfg.output_dir.display()
                );
            }
            out
        }
        None => config::resolve_path(&base, &cfg.output_dir),
    };
    let outcome = pipeline::run(&cfg, &base, &res, &out_dir)?;
    eprintln!(
        "wrote {} ({} analyses, extraction {})",
        outcome.output_dir.join(pipeline::MANIFEST_FILE).display(),
        cfg.analyses.len(),
        if outcome.cache_hit { "cached" } else { "computed" }
    );
    if outcome.failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed analyses: {}", outcome.failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_extract(a: ExtractArgs) -> Result<ExitCode> {
    setup_threads(None)?;
    for (i, p) in a.input.iter().enumerate() {
        need_file(&format!("input[{i}]"), p)?;
    }
    let specs: Vec<VariableSpec> = if a.spec.is_empty() {
        vec![VariableSpec::sigother(), VariableSpec::person()]
    } else {
        a.spec
            .iter()
            .enumerate()
            .map(|(i, p)| {
                need_file(&format!("spec[{i}]"), p)?;
                load_variable_spec(p).map_err(|e| {
                    ValidationError {
                        field: format!("spec[{i}]"),
                        message: e.to_string(),
                    }
                    .into()
                })
            })
            .collect::<Result<_>>()?
    };
    let labels = match &a.labels {
        Some(p) => {
            need_file("labels", p)?;
            LabelMap::load(p).map_err(|e| ValidationError {
                field: "labels".into(),
                message: e.to_string(),
            })?
        }
        None => LabelMap::reddit_communities(),
    };
    let labels = Arc::new(labels);
    let extractor = Extractor::new(&specs);
    let mut occ = Vec::new();
    let mut rejects = 0;
    for p in &a.input {
        let corpus = load_messages_sharded(
            p,
            Some(Arc::clone(&labels)),
            ReadOptions { strict: a.strict },
            rayon::current_num_threads(),
        )
        .with_context(|| format!("reading {}", p.display()))?;
        rejects += corpus.rejects;
        occ.extend(extractor.extract_all(&corpus.messages));
    }
    let mut buf = Vec::new();
    sociolex_core::variables::write_occurrences_csv(&mut buf, &occ)?;
    fsutil::write_atomic(&a.out, &buf)?;
    let mut demo = Vec::new();
    sociolex_core::variables::write_demographics_csv(&mut demo, &occ)?;
    if demo.iter().filter(|&&b| b == b'\n').count() > 1 {
        fsutil::write_atomic(&analyses::demographics_path(&a.out), &demo)?;
    }
    eprintln!(
        "{} occurrences written to {} ({rejects} rejected lines)",
        occ.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_rates(a: RatesArgs) -> Result<ExitCode> {
    let (mut b, o) = match config_block(&a.from, "rates")? {
        Some((Analysis::Rates(b), _)) => (b, Overrides { from_config: true }),
        _ => (blank::<RatesBlock>(), Overrides { from_config: false }),
    };
    o.set("variable", &mut b.variable, a.variable);
    o.set("target", &mut b.target, a.target);
    o.set("filter", &mut b.filter, parse_filter(a.filter)?);
    o.set("granularity", &mut b.granularity, a.granularity);
    o.set("min-n", &mut b.min_n, a.min_n);
    o.set("resamples", &mut b.resamples, a.resamples);
    if a.seed.is_some() {
        o.set("seed", &mut b.seed, Some(a.seed));
    }
    need_target(&b.target)?;
    need_file("occurrences", &a.occurrences)?;
    let occ = analyses::load_occurrences(&a.occurrences)?;
    for f in analyses::rates(&b, &occ, &a.out)? {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_trend(a: TrendArgs) -> Result<ExitCode> {
    let t = if let Some(series) = &a.series {
        need_file("series", series)?;
        analyses::trend_from_rates(&std::fs::read(series)?).with_context(|| format!("reading {}", series.display()))?
    } else {
        let (mut b, o) = match config_block(&a.from, "trend")? {
            Some((Analysis::Trend(b), _)) => (b, Overrides { from_config: true }),
            _ => (blank::<TrendBlock>(), Overrides { from_config: false }),
        };
        o.set("variable", &mut b.variable, a.variable);
        o.set("target", &mut b.target, a.target);
        o.set("filter", &mut b.filter, parse_filter(a.filter)?);
        o.set("granularity", &mut b.granularity, a.granularity);
        o.set("min-n", &mut b.min_n, a.min_n);
        o.set(
            "community-mean",
            &mut b.mode,
            a.community_mean.then_some(TrendMode::CommunityMean),
        );
        if a.seed.is_some() {
            o.set("seed", &mut b.seed, Some(a.seed));
        }
        need_target(&b.target)?;
        let occ_path = a.occurrences.ok_or_else(|| ValidationError {
            field: "occurrences".into(),
            message: "give --series or --occurrences".into(),
        })?;
        need_file("occurrences", &occ_path)?;
        analyses::trend_result(&b, &analyses::load_occurrences(&occ_path)?)?
    };
    println!("r={}, p={}, n={}", t.r, t.p_value, t.n);
    Ok(ExitCode::SUCCESS)
}

fn cmd_did(a: DidArgs) -> Result<ExitCode> {
    let (mut b, o, base) = match config_block(&a.from, "did")? {
        Some((Analysis::Did(b), base)) => (b, Overrides { from_config: true }, base),
        _ => (blank::<DidBlock>(), Overrides { from_config: false }, PathBuf::new()),
    };
    o.set("variable", &mut b.variable, a.variable);
    o.set("target", &mut b.target, a.target);
    o.set("window", &mut b.window, a.window);
    o.set("min-n", &mut b.min_n, a.min_n);
    o.set(
        "all-variants",
        &mut b.conditioning,
        a.all_variants.then_some(Conditioning::AllVariants),
    );
    o.flag("weighted", &mut b.weighted, a.weighted);
    o.set(
        "clustered",
        &mut b.standard_errors,
        a.clustered.then_some(StandardErrors::ClusteredByState),
    );
    let config_treatments = b.treatments.as_ref().map(|p| config::resolve_path(&base, p));
    let treatments_path = match (a.treatments, config_treatments) {
        (Some(flag), Some(cfg)) => {
            if flag != cfg {
                eprintln!(
                    "warning: --treatments {} overrides config value {}",
                    flag.display(),
                    cfg.display()
                );
            }
            Some(flag)
        }
        (flag, cfg) => flag.or(cfg),
    };
    need_target(&b.target)?;
    if b.window < 1 {
        return Err(ValidationError {
            field: "window".into(),
            message: "must be at least 1".into(),
        }
        .into());
    }
    need_file("occurrences", &a.occurrences)?;
    let table = match &treatments_path {
        Some(p) => {
            need_file("treatments", p)?;
            TreatmentTable::load(p).map_err(|e| ValidationError {
                field: "treatments".into(),
                message: format!("{}: {e}", p.display()),
            })?
        }
        None => TreatmentTable::marriage_equality(),
    };
    let occ = analyses::load_occurrences(&a.occurrences)?;
    for f in analyses::did(&b, &table, &occ, &a.out)? {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_shift(a: ShiftArgs) -> Result<ExitCode> {
    let (mut b, o, base) = match config_block(&a.from, "shift")? {
        Some((Analysis::Shift(b), base)) => (b, Overrides { from_config: true }, base),
        _ => (blank::<ShiftBlock>(), Overrides { from_config: false }, PathBuf::new()),
    };
    o.set("target", &mut b.target, a.target);
    o.set("poles", &mut b.poles, a.poles);
    o.set("periods", &mut b.periods, a.periods);
    o.set("runs", &mut b.runs, a.runs);
    o.set("resamples", &mut b.resamples, a.resamples);
    o.set(
        "pole-bootstrap",
        &mut b.bootstrap,
        a.pole_bootstrap.then_some(BootstrapOver::PoleWords),
    );
    if a.seed.is_some() {
        o.set("seed", &mut b.seed, Some(a.seed));
    }
    o.set("dim", &mut b.train.dim, a.dim);
    o.set("epochs", &mut b.train.epochs, a.epochs);
    o.set("window", &mut b.train.window, a.window);
    o.set("min-count", &mut b.train.min_count, a.min_count);
    o.set("min-tokens", &mut b.train.min_tokens, a.min_tokens);
    o.set("train-threads", &mut b.train.threads, a.train_threads);
    o.set("anchors", &mut b.anchors, a.anchors);
    if b.target.is_empty() {
        return Err(ValidationError {
            field: "target".into(),
            message: "a target is required".into(),
        }
        .into());
    }
    need_file("corpus", &a.corpus)?;
    let poles = config::load_poles(&base, &b.poles).map_err(|e| ValidationError {
        field: "poles".into(),
        message: e,
    })?;
    setup_threads(None)?;
    for f in analyses::shift(&b, &a.corpus, &poles, &a.out)? {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    if !a.dir.is_dir() {
        return Err(ValidationError {
            field: "dir".into(),
            message: format!("not a directory: {}", a.dir.display()),
        }
        .into());
    }
    for f in report::render_dir(&a.dir)? {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Trend(a) => cmd_trend(a),
        Command::Did(a) => cmd_did(a),
        Command::Shift(a) => cmd_shift(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => match e.downcast_ref::<ValidationError>() {
            Some(v) => {
                eprintln!("invalid: {v}");
                ExitCode::from(2)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
