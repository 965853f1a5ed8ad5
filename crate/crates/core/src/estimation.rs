//! Conditional variant rates, grouped comparisons, bootstrap intervals and
//! significance tests.
//!
//! A rate is always relative: the share of one variant (or gender class)
//! among all uses of its variable that survive the same filter. Grouped
//! comparisons average per-community rates without weighting, so a large
//! community cannot dominate its category; an occurrence-weighted mean is
//! available through [`Weighting::Occurrences`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{Granularity, StateCode, TimeBucket};
use crate::variables::{GenderClass, Occurrence, Perspective};

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("rate undefined: no occurrences of {0} pass the filter")]
    UndefinedRate(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("no bucket reaches min_n = {min_n}")]
    EmptySeries { min_n: u64 },
    #[error("correlation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("quartiles need at least 4 distinct values, got {0}")]
    TooFewDistinct(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T, E = EstimationError> = std::result::Result<T, E>;

/// `k` target uses out of `n` uses of the variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub k: u64,
    pub n: u64,
}

impl Rate {
    pub fn new(k: u64, n: u64) -> Self {
        assert!(k <= n, "rate numerator exceeds denominator");
        Rate { k, n }
    }

    pub fn p(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

/// What the numerator of a rate counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Variant(String),
    Variants(BTreeSet<String>),
    Gender(GenderClass),
}

impl Target {
    pub fn matches(&self, o: &Occurrence) -> bool {
        match self {
            Target::Variant(v) => o.variant == *v,
            Target::Variants(vs) => vs.contains(&o.variant),
            Target::Gender(g) => o.gender == *g,
        }
    }

    /// Short name usable in file names.
    pub fn slug(&self) -> String {
        match self {
            Target::Variant(v) => v.clone(),
            Target::Variants(vs) => vs.iter().cloned().collect::<Vec<_>>().join("+"),
            Target::Gender(g) => g.to_string(),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    /// `partner`, `partner+spouse` or `gender:neutral`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(g) = s.strip_prefix("gender:") {
            return g.parse().map(Target::Gender).map_err(|e| e.to_string());
        }
        if s.is_empty() {
            return Err("empty target".into());
        }
        if s.contains('+') {
            Ok(Target::Variants(s.split('+').map(String::from).collect()))
        } else {
            Ok(Target::Variant(s.to_string()))
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Gender(g) => write!(f, "gender:{g}"),
            other => f.write_str(&other.slug()),
        }
    }
}

/// Conjunction of optional constraints on occurrences. Empty fields do not
/// constrain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Filter {
    /// Every listed label must be present.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub labels_all: Vec<String>,
    /// At least one listed label must be present.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub labels_any: Vec<String>,
    /// Further disjunctions, each of which must be satisfied.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub any_of: Vec<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perspectives: Option<BTreeSet<Perspective>>,
    /// Restricts the conditioning set to these variants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<BTreeSet<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<BTreeSet<StateCode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub communities: Option<BTreeSet<String>>,
    /// First month included.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub since: Option<TimeBucket>,
    /// First month excluded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub until: Option<TimeBucket>,
}

fn intersect<T: Ord + Clone>(a: &Option<BTreeSet<T>>, b: &Option<BTreeSet<T>>) -> Option<BTreeSet<T>> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.intersection(y).cloned().collect()),
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    }
}

impl Filter {
    pub fn matches(&self, o: &Occurrence) -> bool {
        if !self.labels_all.iter().all(|l| o.has_label(l)) {
            return false;
        }
        if !self.labels_any.is_empty() && !self.labels_any.iter().any(|l| o.has_label(l)) {
            return false;
        }
        if !self.any_of.iter().all(|g| g.iter().any(|l| o.has_label(l))) {
            return false;
        }
        if self.perspectives.as_ref().is_some_and(|p| !p.contains(&o.perspective)) {
            return false;
        }
        if self.variants.as_ref().is_some_and(|v| !v.contains(&o.variant)) {
            return false;
        }
        if let Some(states) = &self.states {
            if !o.state.is_some_and(|s| states.contains(&s)) {
                return false;
            }
        }
        if let Some(cs) = &self.communities {
            if !o.community.as_ref().is_some_and(|c| cs.contains(c)) {
                return false;
            }
        }
        if self.since.is_some_and(|s| o.month.end() <= s.start()) {
            return false;
        }
        if self.until.is_some_and(|u| o.month.start() >= u.start()) {
            return false;
        }
        true
    }

    /// Filter passing exactly the occurrences both filters pass.
    pub fn and(&self, other: &Filter) -> Filter {
        let mut labels_all = self.labels_all.clone();
        labels_all.extend(other.labels_all.iter().cloned());
        labels_all.sort();
        labels_all.dedup();
        let mut labels_any = self.labels_any.clone();
        let mut any_of = self.any_of.clone();
        any_of.extend(other.any_of.iter().cloned());
        if labels_any.is_empty() {
            labels_any = other.labels_any.clone();
        } else if !other.labels_any.is_empty() {
            any_of.push(other.labels_any.clone());
        }
        let later = |a: Option<TimeBucket>, b: Option<TimeBucket>| match (a, b) {
            (Some(x), Some(y)) => Some(if x.start() >= y.start() { x } else { y }),
            (x, y) => x.or(y),
        };
        let earlier = |a: Option<TimeBucket>, b: Option<TimeBucket>| match (a, b) {
            (Some(x), Some(y)) => Some(if x.start() <= y.start() { x } else { y }),
            (x, y) => x.or(y),
        };
        Filter {
            labels_all,
            labels_any,
            perspectives: intersect(&self.perspectives, &other.perspectives),
            variants: intersect(&self.variants, &other.variants),
            states: intersect(&self.states, &other.states),
            communities: intersect(&self.communities, &other.communities),
            any_of,
            since: later(self.since, other.since),
            until: earlier(self.until, other.until),
        }
    }
}

fn count(occurrences: &[Occurrence], variable: &str, target: &Target, filter: &Filter) -> Rate {
    let (mut k, mut n) = (0, 0);
    for o in occurrences {
        if o.variable == variable && filter.matches(o) {
            n += 1;
            if target.matches(o) {
                k += 1;
            }
        }
    }
    Rate { k, n }
}

/// Share of `target` among all uses of `variable` passing `filter`.
pub fn variant_rate(occurrences: &[Occurrence], variable: &str, target: &Target, filter: &Filter) -> Result<Rate> {
    let r = count(occurrences, variable, target, filter);
    if r.n == 0 {
        return Err(EstimationError::UndefinedRate(variable.to_string()));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Every community contributes equally.
    #[default]
    Communities,
    /// Pooled rate over all occurrences in the resample.
    Occurrences,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_units: usize,
}

/// Nearest-rank percentile of a sorted slice; always returns a sample value.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn weighted_stat(rates: &[&Rate], weighting: Weighting) -> f64 {
    match weighting {
        Weighting::Communities => rates.iter().map(|r| r.p()).sum::<f64>() / rates.len() as f64,
        Weighting::Occurrences => {
            let k: u64 = rates.iter().map(|r| r.k).sum();
            let n: u64 = rates.iter().map(|r| r.n).sum();
            k as f64 / n as f64
        }
    }
}

/// Percentile bootstrap over communities: resample communities with
/// replacement `resamples` times and take the 2.5/97.5 percentiles of the
/// resampled mean rate.
pub fn bootstrap_group_mean(
    rates: &[(String, Rate)],
    resamples: usize,
    seed: u64,
    weighting: Weighting,
) -> Result<GroupEstimate> {
    if rates.is_empty() {
        return Err(EstimationError::Empty("community list"));
    }
    if resamples < 100 {
        return Err(EstimationError::TooFewResamples(resamples));
    }
    let all: Vec<&Rate> = rates.iter().map(|(_, r)| r).collect();
    let mean = weighted_stat(&all, weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw: Vec<&Rate> = Vec::with_capacity(all.len());
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            draw.clear();
            draw.extend((0..all.len()).map(|_| all[rng.random_range(0..all.len())]));
            weighted_stat(&draw, weighting)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(GroupEstimate {
        mean,
        ci_low: percentile_sorted(&stats, 0.025),
        ci_high: percentile_sorted(&stats, 0.975),
        n_units: rates.len(),
    })
}

/// Per-community rates for occurrences that carry a community name.
/// Communities with fewer than `min_n` uses are left out.
pub fn community_rates(
    occurrences: &[Occurrence],
    variable: &str,
    target: &Target,
    filter: &Filter,
    min_n: u64,
) -> Vec<(String, Rate)> {
    let mut per: BTreeMap<&str, Rate> = BTreeMap::new();
    for o in occurrences {
        let Some(c) = o.community.as_deref() else {
            continue;
        };
        if o.variable != variable || !filter.matches(o) {
            continue;
        }
        let r = per.entry(c).or_insert(Rate { k: 0, n: 0 });
        r.n += 1;
        if target.matches(o) {
            r.k += 1;
        }
    }
    per.into_iter()
        .filter(|(_, r)| r.n >= min_n.max(1))
        .map(|(c, r)| (c.to_string(), r))
        .collect()
}

/// Group label -> bootstrap estimate of the mean community rate.
pub type GroupComparison = BTreeMap<String, GroupEstimate>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub seed: u64,
    #[serde(default)]
    pub weighting: Weighting,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            resamples: 1000,
            seed: 0,
            weighting: Weighting::Communities,
        }
    }
}

/// Compares identity groups: each group is the set of communities carrying
/// that label. Groups with no qualifying community are omitted.
pub fn group_comparison(
    occurrences: &[Occurrence],
    variable: &str,
    target: &Target,
    filter: &Filter,
    groups: &[String],
    min_n: u64,
    boot: &BootstrapParams,
) -> Result<GroupComparison> {
    let mut out = GroupComparison::new();
    for group in groups {
        let f = filter.and(&Filter {
            labels_all: vec![group.clone()],
            ..Filter::default()
        });
        let rates = community_rates(occurrences, variable, target, &f, min_n);
        if rates.is_empty() {
            continue;
        }
        out.insert(
            group.clone(),
            bootstrap_group_mean(&rates, boot.resamples, boot.seed, boot.weighting)?,
        );
    }
    if out.is_empty() {
        return Err(EstimationError::Empty("no group has a qualifying community"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub bucket: TimeBucket,
    pub rate: Rate,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub granularity: Granularity,
    pub points: Vec<SeriesPoint>,
    /// Buckets below `min_n`, with their counts.
    pub omitted: Vec<(TimeBucket, u64)>,
}

/// One point per time bucket with at least `min_n` uses of the variable.
pub fn rate_series(
    occurrences: &[Occurrence],
    variable: &str,
    target: &Target,
    filter: &Filter,
    granularity: Granularity,
    min_n: u64,
) -> Result<RateSeries> {
    if occurrences.is_empty() {
        return Err(EstimationError::Empty("occurrences"));
    }
    let mut per: BTreeMap<TimeBucket, Rate> = BTreeMap::new();
    for o in occurrences {
        if o.variable != variable || !filter.matches(o) {
            continue;
        }
        let r = per.entry(o.month.coarsen(granularity)).or_insert(Rate { k: 0, n: 0 });
        r.n += 1;
        if target.matches(o) {
            r.k += 1;
        }
    }
    let mut points = Vec::new();
    let mut omitted = Vec::new();
    for (bucket, rate) in per {
        if rate.n >= min_n.max(1) {
            points.push(SeriesPoint { bucket, rate, ci: None });
        } else {
            omitted.push((bucket, rate.n));
        }
    }
    if points.is_empty() {
        return Err(EstimationError::EmptySeries { min_n });
    }
    Ok(RateSeries {
        granularity,
        points,
        omitted,
    })
}

impl RateSeries {
    /// Fills percentile intervals by resampling each bucket's occurrences
    /// (a binomial resample of the bucket count).
    pub fn with_binomial_ci(mut self, resamples: usize, seed: u64) -> Result<Self> {
        if resamples < 100 {
            return Err(EstimationError::TooFewResamples(resamples));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pt in &mut self.points {
            let p = pt.rate.p();
            let n = pt.rate.n;
            let dist = Binomial::new(n, p).expect("p is a probability");
            let mut stats: Vec<f64> = (0..resamples)
                .map(|_| dist.sample(&mut rng) as f64 / n as f64)
                .collect();
            stats.sort_by(f64::total_cmp);
            pt.ci = Some((percentile_sorted(&stats, 0.025), percentile_sorted(&stats, 0.975)));
        }
        Ok(self)
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.bucket.index as f64).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate.p()).collect()
    }
}

/// Per-bucket bootstrap of the mean community rate. Buckets where no
/// community reaches `min_n` are skipped.
pub fn community_mean_series(
    occurrences: &[Occurrence],
    variable: &str,
    target: &Target,
    filter: &Filter,
    granularity: Granularity,
    min_n: u64,
    boot: &BootstrapParams,
) -> Result<Vec<(TimeBucket, GroupEstimate)>> {
    let buckets: BTreeSet<TimeBucket> = occurrences
        .iter()
        .filter(|o| o.variable == variable)
        .map(|o| o.month.coarsen(granularity))
        .collect();
    let mut out = Vec::new();
    for b in buckets {
        let f = filter.and(&Filter {
            since: Some(b.coarsen(Granularity::Month)),
            until: Some(b.next().coarsen(Granularity::Month)),
            ..Filter::default()
        });
        let rates = community_rates(occurrences, variable, target, &f, min_n);
        if rates.is_empty() {
            continue;
        }
        let seed = boot.seed ^ (b.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        out.push((b, bootstrap_group_mean(&rates, boot.resamples, seed, boot.weighting)?));
    }
    if out.is_empty() {
        return Err(EstimationError::EmptySeries { min_n });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(EstimationError::NonFinite)
    }
}

/// Pearson correlation with a two-sided Student-t p-value on n-2 degrees
/// of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<TrendResult> {
    if xs.len() != ys.len() {
        return Err(EstimationError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(EstimationError::TooFewPoints(n));
    }
    check_finite(xs)?;
    check_finite(ys)?;
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if syy == 0.0 {
        return Err(EstimationError::ZeroVariance("y"));
    }
    if sxx == 0.0 {
        return Err(EstimationError::ZeroVariance("x"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(TrendResult { r, p_value, n })
}

/// Trend of a rate series against bucket index.
pub fn pearson_trend(series: &RateSeries) -> Result<TrendResult> {
    pearson(&series.xs(), &series.ys())
}

/// Two-sided permutation p-value for Pearson's r, for short series.
pub fn pearson_permutation_p(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    let observed = pearson(xs, ys)?.r.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = ys.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if pearson(xs, &shuffled)?.r.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi theta form converges fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * c).exp();
            sum += term;
            if term < 1e-18 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value at
/// effective size `nx*ny/(nx+ny)`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult> {
    if xs.is_empty() || ys.is_empty() {
        return Err(EstimationError::Empty("sample"));
    }
    check_finite(xs)?;
    check_finite(ys)?;
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    Ok(KsResult {
        d,
        p_value: kolmogorov_sf(ne.sqrt() * d),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    /// Upper bounds (inclusive) of the first three quartiles.
    pub breakpoints: [f64; 3],
    /// Quartile (1..=4) of each input unit, in input order.
    pub assignment: Vec<u8>,
}

impl Quartiles {
    pub fn quartile_of(&self, value: f64) -> u8 {
        self.breakpoints
            .iter()
            .position(|&b| value <= b)
            .map(|i| i as u8 + 1)
            .unwrap_or(4)
    }
}

/// Splits units into quartiles at the empirical 25/50/75th percentiles of
/// the unit values. Values equal to a breakpoint fall in the lower quartile.
pub fn quartile_assign(values: &[f64]) -> Result<Quartiles> {
    check_finite(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(EstimationError::TooFewDistinct(distinct.len()));
    }
    let breakpoints = [
        percentile_sorted(&sorted, 0.25),
        percentile_sorted(&sorted, 0.50),
        percentile_sorted(&sorted, 0.75),
    ];
    let mut q = Quartiles {
        breakpoints,
        assignment: Vec::new(),
    };
    q.assignment = values.iter().map(|&v| q.quartile_of(v)).collect();
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileComparison {
    pub attribute: String,
    pub quartiles: Quartiles,
    /// `Q1`..`Q4` -> bootstrap of the mean unit rate.
    pub groups: BTreeMap<String, GroupEstimate>,
    /// Top versus bottom quartile unit-rate distributions.
    pub ks_top_bottom: Option<KsResult>,
}

/// Stratifies by a demographic attribute. Units are the distinct attribute
/// values (one per census tract in tract-level data), so quartiles are
/// computed over units rather than weighted by occurrences.
pub fn quartile_comparison(
    occurrences: &[Occurrence],
    variable: &str,
    target: &Target,
    filter: &Filter,
    attribute: &str,
    min_n: u64,
    boot: &BootstrapParams,
) -> Result<QuartileComparison> {
    let mut per_unit: BTreeMap<u64, (f64, Rate)> = BTreeMap::new();
    for o in occurrences {
        if o.variable != variable || !filter.matches(o) {
            continue;
        }
        let Some(&v) = o.demographics.get(attribute) else {
            continue;
        };
        let e = per_unit.entry(v.to_bits()).or_insert((v, Rate { k: 0, n: 0 }));
        e.1.n += 1;
        if target.matches(o) {
            e.1.k += 1;
        }
    }
    let units: Vec<(f64, Rate)> = per_unit.into_values().filter(|(_, r)| r.n >= min_n.max(1)).collect();
    let values: Vec<f64> = units.iter().map(|(v, _)| *v).collect();
    let quartiles = quartile_assign(&values)?;
    let mut groups = BTreeMap::new();
    let mut by_q: [Vec<(String, Rate)>; 4] = Default::default();
    for ((v, r), q) in units.iter().zip(&quartiles.assignment) {
        by_q[*q as usize - 1].push((v.to_string(), *r));
    }
    for (i, rates) in by_q.iter().enumerate() {
        if !rates.is_empty() {
            groups.insert(
                format!("Q{}", i + 1),
                bootstrap_group_mean(rates, boot.resamples, boot.seed, boot.weighting)?,
            );
        }
    }
    let ps = |rs: &Vec<(String, Rate)>| rs.iter().map(|(_, r)| r.p()).collect::<Vec<_>>();
    let ks_top_bottom = ks_two_sample(&ps(&by_q[0]), &ps(&by_q[3])).ok();
    Ok(QuartileComparison {
        attribute: attribute.to_string(),
        quartiles,
        groups,
        ks_top_bottom,
    })
}
