//! Seeded synthetic data with known ground truth: planted variant choices,
//! community rate samples, staggered treatment panels, co-occurrence corpora
//! for embedding tests, and a small labeled message corpus.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde_json::json;

use crate::corpus::{Granularity, StateCode, TimeBucket};
use crate::embedshift::PoleSets;
use crate::estimation::Rate;
use crate::eventstudy::PanelRow;
use crate::variables::{GenderClass, Occurrence, Perspective, VariableSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn blank(variable: &str, variant: &str, gender: GenderClass, month: TimeBucket) -> Occurrence {
    Occurrence {
        message_id: String::new(),
        variable: variable.into(),
        variant: variant.into(),
        gender,
        precursor: "my".into(),
        perspective: Perspective::First,
        month,
        labels: BTreeSet::new(),
        community: None,
        state: None,
        demographics: Arc::new(Default::default()),
    }
}

/// `n` SigOther uses where `partner` is chosen with probability `p` and
/// otherwise one of the gendered spousal or dating terms. Returns the
/// occurrences and the exact number of `partner` draws.
pub fn planted_choice(n: usize, p: f64, seed: u64) -> (Vec<Occurrence>, u64) {
    let others = [
        ("wife", GenderClass::Feminine),
        ("husband", GenderClass::Masculine),
        ("girlfriend", GenderClass::Feminine),
        ("boyfriend", GenderClass::Masculine),
        ("spouse", GenderClass::Neutral),
    ];
    let mut r = rng(seed);
    let month = TimeBucket::from_year_month(2015, 1, Granularity::Month);
    let mut k = 0;
    let occ = (0..n)
        .map(|i| {
            let mut o = if r.random_bool(p) {
                k += 1;
                blank("SigOther", "partner", GenderClass::Neutral, month)
            } else {
                let (v, g) = *others.choose(&mut r).expect("non-empty");
                blank("SigOther", v, g, month)
            };
            o.message_id = format!("m{i}");
            o
        })
        .collect();
    (occ, k)
}

/// Random token streams over every precursor and surface of `specs` plus
/// distractor words, so that matches, near-misses and adjacent variants all
/// occur.
pub fn random_token_streams(count: usize, max_len: usize, specs: &[VariableSpec], seed: u64) -> Vec<Vec<String>> {
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for s in specs {
        vocab.extend(s.rule.precursors.iter().cloned());
        vocab.extend(s.variants.iter().map(|v| v.surface.clone()));
    }
    vocab.extend(
        [
            "business",
            "the",
            "and",
            "love",
            "<url>",
            "<mention>",
            "myself",
            "partners",
        ]
        .map(String::from),
    );
    let vocab: Vec<String> = vocab.into_iter().collect();
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let len = r.random_range(0..=max_len);
            (0..len)
                .map(|_| vocab.choose(&mut r).expect("non-empty").clone())
                .collect()
        })
        .collect()
}

/// Community rates whose underlying probabilities are `N(mean, sd)` clipped
/// to `[0, 1]`, each observed through `n_per` binomial draws.
pub fn community_rates(count: usize, mean: f64, sd: f64, n_per: u64, seed: u64) -> Vec<(String, Rate)> {
    let mut r = rng(seed);
    let normal = Normal::new(mean, sd).expect("finite parameters");
    (0..count)
        .map(|i| {
            let p = normal.sample(&mut r).clamp(0.0, 1.0);
            let k = Binomial::new(n_per, p).expect("valid probability").sample(&mut r);
            (format!("c{i:03}"), Rate::new(k, n_per))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredSpec {
    pub states: usize,
    /// Added to `y` for every `k >= 1`.
    pub effect: f64,
    pub sigma: f64,
    pub window: i64,
    pub first_treatment: TimeBucket,
    /// Mean months between consecutive treatment dates. Gaps alternate
    /// between `stagger` and `stagger + 1` so that dates are not all
    /// congruent modulo any period, which would make `k` and calendar
    /// month collinear beyond the one unavoidable linear dependence.
    pub stagger: i64,
    pub seed: u64,
}

impl Default for StaggeredSpec {
    fn default() -> Self {
        StaggeredSpec {
            states: 30,
            effect: 0.02,
            sigma: 0.001,
            window: 12,
            first_treatment: TimeBucket::from_year_month(2008, 1, Granularity::Month),
            stagger: 2,
            seed: 0,
        }
    }
}

impl StaggeredSpec {
    /// The first `states` codes in alphabetical order with their dates.
    pub fn treatments(&self) -> Vec<(StateCode, TimeBucket)> {
        StateCode::all()
            .take(self.states)
            .enumerate()
            .map(|(i, s)| {
                (
                    s,
                    TimeBucket {
                        index: self.first_treatment.index + self.stagger * i as i64 + (i as i64 + 1) / 2,
                        ..self.first_treatment
                    },
                )
            })
            .collect()
    }

    /// Calendar months spanned by all windows.
    fn month_effects(&self, r: &mut ChaCha8Rng) -> (i64, Vec<f64>) {
        let t = self.treatments();
        let lo = t.first().map_or(0, |x| x.1.index) - self.window;
        let hi = t.last().map_or(0, |x| x.1.index) + self.window;
        let fx = (lo..=hi).map(|_| r.random_range(-0.03..0.03)).collect();
        (lo, fx)
    }
}

/// Complete panel `y = alpha_i + lambda_j + effect * 1[k >= 1] + N(0, sigma)`.
pub fn staggered_panel(spec: &StaggeredSpec) -> Vec<PanelRow> {
    let mut r = rng(spec.seed);
    let (lo, lambda) = spec.month_effects(&mut r);
    let noise = Normal::new(0.0, spec.sigma).expect("finite sigma");
    let mut rows = Vec::new();
    for (state, t) in spec.treatments() {
        let alpha = r.random_range(0.1..0.3);
        for k in -spec.window..=spec.window {
            let month = TimeBucket {
                index: t.index + k,
                ..t
            };
            let y = alpha
                + lambda[(month.index - lo) as usize]
                + if k >= 1 { spec.effect } else { 0.0 }
                + noise.sample(&mut r);
            rows.push(PanelRow {
                state,
                month,
                k,
                y,
                n: 100,
            });
        }
    }
    rows
}

/// State-located SigOther uses for the staggered design: for every treated
/// state, cells from `window + 3` months before to `window + 3` after the
/// treatment with 0 to `max_cell` uses each, and an untreated state.
/// `partner` probability follows the same additive model as
/// [`staggered_panel`]; the rest are wife or husband.
pub fn staggered_occurrences(spec: &StaggeredSpec, max_cell: u64) -> Vec<Occurrence> {
    let mut r = rng(spec.seed);
    let (lo, lambda) = spec.month_effects(&mut r);
    let mut out = Vec::new();
    let mut treated = spec.treatments();
    let untreated = StateCode::all()
        .find(|s| treated.iter().all(|t| t.0 != *s))
        .expect("fewer than 51 treated states");
    treated.push((untreated, treated[0].1));
    for (i, (state, t)) in treated.iter().enumerate() {
        let alpha = r.random_range(0.1..0.3);
        for k in -(spec.window + 3)..=(spec.window + 3) {
            let month = TimeBucket {
                index: t.index + k,
                ..*t
            };
            let lam = lambda.get((month.index - lo) as usize).copied().unwrap_or(0.0);
            let p = (alpha + lam + if k >= 1 { spec.effect } else { 0.0 }).clamp(0.0, 1.0);
            let n = r.random_range(0..=max_cell);
            for j in 0..n {
                let (v, g) = if r.random_bool(p) {
                    ("partner", GenderClass::Neutral)
                } else if r.random_bool(0.5) {
                    ("wife", GenderClass::Feminine)
                } else {
                    ("husband", GenderClass::Masculine)
                };
                let mut o = blank("SigOther", v, g, month);
                o.message_id = format!("s{i}m{k}n{j}");
                o.state = Some(*state);
                out.push(o);
            }
        }
    }
    out.shuffle(&mut r);
    out
}

/// Co-occurrence corpus in which every pole word has its own companion
/// words and a gendered set of context words, and `target` shares the
/// set-a context in a fraction `share_a` of its sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationSpec {
    pub poles: PoleSets,
    pub target: String,
    pub share_a: f64,
    /// Approximate corpus size in tokens.
    pub tokens: usize,
    pub sentence_len: usize,
    /// Context words per gendered set.
    pub context_words: usize,
    pub fillers: usize,
    pub seed: u64,
}

impl AssociationSpec {
    pub fn new(poles: PoleSets, target: &str, share_a: f64, tokens: usize, seed: u64) -> Self {
        AssociationSpec {
            poles,
            target: target.to_string(),
            share_a,
            tokens,
            sentence_len: 10,
            context_words: 20,
            fillers: 200,
            seed,
        }
    }
}

fn companions(word: &str) -> [String; 3] {
    [0, 1, 2].map(|j| format!("{word}x{j}"))
}

/// Sentences (documents) of the association corpus.
pub fn association_corpus(spec: &AssociationSpec) -> Vec<Vec<String>> {
    let mut r = rng(spec.seed);
    let ctx_a: Vec<String> = (0..spec.context_words).map(|i| format!("actx{i}")).collect();
    let ctx_b: Vec<String> = (0..spec.context_words).map(|i| format!("bctx{i}")).collect();
    let fillers: Vec<String> = (0..spec.fillers).map(|i| format!("w{i}")).collect();
    // Zipf-like filler weights.
    let weights: Vec<f64> = (0..spec.fillers).map(|i| 1.0 / (i as f64 + 2.0)).collect();
    let filler_dist = rand::distr::weighted::WeightedIndex::new(&weights).expect("positive weights");
    let subjects: Vec<(&String, bool)> = spec
        .poles
        .set_a
        .iter()
        .map(|w| (w, true))
        .chain(spec.poles.set_b.iter().map(|w| (w, false)))
        .collect();
    let sentences = spec.tokens / spec.sentence_len.max(6);
    (0..sentences)
        .map(|_| {
            let (subject, side_a, comp) = if r.random_bool(0.12) {
                // The target borrows the companions of a pole word on its side.
                let side_a = r.random_bool(spec.share_a);
                let pool = if side_a { &spec.poles.set_a } else { &spec.poles.set_b };
                (
                    &spec.target,
                    side_a,
                    companions(pool.choose(&mut r).expect("non-empty poles")),
                )
            } else {
                let (w, a) = *subjects.choose(&mut r).expect("non-empty poles");
                (w, a, companions(w))
            };
            let ctx = if side_a { &ctx_a } else { &ctx_b };
            let mut s = vec![subject.clone()];
            s.extend(comp.choose_multiple(&mut r, 2).cloned());
            s.extend((0..3).map(|_| ctx.choose(&mut r).expect("non-empty").clone()));
            while s.len() < spec.sentence_len {
                s.push(fillers[filler_dist.sample(&mut r)].clone());
            }
            s.shuffle(&mut r);
            s
        })
        .collect()
}

/// Label-map communities used by [`fixture_messages`] with a planted
/// partner rate offset for each.
const FIXTURE_COMMUNITIES: [(&str, f64); 10] = [
    ("lgbt", 0.25),
    ("ainbow", 0.22),
    ("gaybros", 0.2),
    ("actuallesbians", 0.24),
    ("relationships", 0.0),
    ("dating", -0.02),
    ("daddit", -0.04),
    ("askwomen", 0.02),
    ("conservative", -0.03),
    ("politics", 0.03),
];

/// Treatment dates of the state-located posts in [`fixture_messages`].
pub fn fixture_treatments() -> Vec<(StateCode, TimeBucket)> {
    StaggeredSpec {
        states: 12,
        first_treatment: TimeBucket::from_year_month(2010, 1, Granularity::Month),
        stagger: 3,
        ..StaggeredSpec::default()
    }
    .treatments()
}

/// A JSON-lines corpus mixing labeled community posts with a rising
/// partner trend and state-located posts around staggered treatment dates
/// with a small post-treatment increase. Every post has a tract-level
/// `education` share. Lines are in id order.
pub fn fixture_messages(seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut lines = Vec::new();
    let fill = [
        "and i went to the lake",
        "said hi to you",
        "is the best",
        "cooked dinner tonight",
        "loves this song",
        "and me are moving",
        "just got home",
        "thinks so too",
    ];
    let person = [
        "a dude",
        "some guys",
        "a woman",
        "many people",
        "if dudes",
        "a fella",
        "a friend",
        "every person",
    ];
    let mut id = 0u64;
    let mut push = |r: &mut ChaCha8Rng,
                    platform: &str,
                    month: TimeBucket,
                    text: String,
                    community: Option<&str>,
                    state: Option<StateCode>| {
        id += 1;
        let ts = month.start() + r.random_range(0..27 * 86_400);
        let tract = r.random_range(0..40u32);
        let mut v = json!({
            "id": format!("p{id:06}"),
            "platform": platform,
            "ts": ts,
            "text": text,
            "demographics": {"education": 0.2 + 0.015 * tract as f64},
        });
        if let Some(c) = community {
            v["community"] = json!(c);
        }
        if let Some(s) = state {
            v["state"] = json!(s.as_str());
        }
        lines.push(v.to_string());
    };
    let spousal = |r: &mut ChaCha8Rng, p: f64| -> &'static str {
        if r.random_bool(p.clamp(0.0, 1.0)) {
            "partner"
        } else {
            ["wife", "husband", "spouse"][r.random_range(0..3)]
        }
    };
    // Community posts, 2012-01 .. 2019-12.
    for m in 0..96 {
        let month = TimeBucket::from_year_month(2012 + m / 12, (m % 12) as u32 + 1, Granularity::Month);
        for (c, offset) in FIXTURE_COMMUNITIES {
            for _ in 0..12 {
                let p = 0.15 + offset + 0.0015 * m as f64;
                let prec = ["my", "my", "her", "his", "your"][r.random_range(0..5)];
                let text = if r.random_bool(0.2) {
                    format!(
                        "honestly {} {}",
                        person.choose(&mut r).unwrap(),
                        fill.choose(&mut r).unwrap()
                    )
                } else {
                    format!("{prec} {} {}", spousal(&mut r, p), fill.choose(&mut r).unwrap())
                };
                push(&mut r, "reddit", month, text, Some(c), None);
            }
        }
    }
    // State-located posts around staggered dates.
    for (state, t) in fixture_treatments() {
        let base = r.random_range(0.15..0.3);
        for k in -14..=14 {
            let month = TimeBucket {
                index: t.index + k,
                ..t
            };
            for _ in 0..30 {
                let p = base + if k >= 1 { 0.06 } else { 0.0 };
                let text = format!("my {} {}", spousal(&mut r, p), fill.choose(&mut r).unwrap());
                push(&mut r, "twitter", month, text, None, Some(state));
            }
        }
    }
    lines
}

/// Yearly association corpora with a rising share of set-a contexts for
/// `target`, one per `(year, share)` pair.
pub fn drift_corpus(
    poles: &PoleSets,
    target: &str,
    years: &[(&str, f64)],
    tokens: usize,
    seed: u64,
) -> Vec<(String, Vec<Vec<String>>)> {
    years
        .iter()
        .enumerate()
        .map(|(i, (y, share))| {
            let spec = AssociationSpec::new(
                poles.clone(),
                target,
                *share,
                tokens,
                seed.wrapping_add(i as u64 * 7919),
            );
            (y.to_string(), association_corpus(&spec))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_choice_count_is_exact() {
        let (o, k) = planted_choice(1000, 0.3, 5);
        assert_eq!(o.iter().filter(|x| x.variant == "partner").count() as u64, k);
        assert_eq!(planted_choice(1000, 0.3, 5).1, k);
    }

    #[test]
    fn panel_shape() {
        let rows = staggered_panel(&StaggeredSpec::default());
        assert_eq!(rows.len(), 30 * 25);
        assert!(rows.iter().all(|r| (-12..=12).contains(&r.k)));
    }

    #[test]
    fn association_corpus_size() {
        let spec = AssociationSpec::new(PoleSets::terms(), "dude", 0.7, 10_000, 1);
        let c = association_corpus(&spec);
        assert_eq!(c.len(), 1000);
        assert!(c.iter().all(|s| s.len() == 10));
        assert_eq!(c, association_corpus(&spec));
    }

    #[test]
    fn fixture_is_deterministic() {
        let a = fixture_messages(3);
        assert_eq!(a, fixture_messages(3));
        assert!(a.len() > 10_000);
    }
}
