//! Lexical variables as data, and their context-restricted extraction.
//!
//! A variable is a set of alternate surface forms for one concept plus a
//! precursor rule: a variant counts only when the token immediately before
//! it belongs to the rule's precursor set (a possessive pronoun for
//! significant-other terms, an indefinite determiner or qualifier for
//! person terms). Possessives are the closed class
//! `{my, your, his, her, its, our, their}`; `whose` is deliberately absent.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, CorpusError, Demographics, Granularity, Label, Message, StateCode, TimeBucket};

/// Reserved label category used to carry the community name through the
/// occurrence table.
pub const COMMUNITY_CATEGORY: &str = "community";

pub const OCCURRENCE_HEADER: [&str; 9] = [
    "message_id",
    "variable",
    "variant",
    "gender",
    "precursor",
    "perspective",
    "month",
    "state",
    "labels",
];

#[derive(Debug, Error)]
pub enum VariableError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid variable spec: {0}")]
    Parse(String),
    #[error("duplicate surface {0:?}")]
    DuplicateSurface(String),
    #[error("unknown gender class {0:?}")]
    UnknownGender(String),
    #[error("unknown plurality {0:?}")]
    UnknownPlurality(String),
    #[error("unknown rule kind {0:?}")]
    UnknownRuleKind(String),
    #[error("empty precursor set")]
    EmptyPrecursors,
    #[error("{what} {token:?} is not a single normalized token")]
    NotAToken { what: &'static str, token: String },
    #[error("variable {0} has no variants")]
    NoVariants(String),
    #[error("occurrence table: {0}")]
    Table(String),
}

pub type Result<T, E = VariableError> = std::result::Result<T, E>;

macro_rules! str_enum {
    ($name:ident, $err:ident, { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }

        impl FromStr for $name {
            type Err = VariableError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => Err(VariableError::$err(other.to_string())),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderClass {
    Masculine,
    Feminine,
    Neutral,
}

str_enum!(GenderClass, UnknownGender, {
    Masculine => "masculine",
    Feminine => "feminine",
    Neutral => "neutral",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plurality {
    Singular,
    Plural,
    Either,
}

str_enum!(Plurality, UnknownPlurality, {
    Singular => "singular",
    Plural => "plural",
    Either => "either",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    PossessivePrecursor,
    DeterminerPrecursor,
}

str_enum!(RuleKind, UnknownRuleKind, {
    PossessivePrecursor => "possessive_precursor",
    DeterminerPrecursor => "determiner_precursor",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    First,
    Second,
    Third,
    Na,
}

str_enum!(Perspective, Table, {
    First => "first",
    Second => "second",
    Third => "third",
    Na => "na",
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSpec {
    pub surface: String,
    pub gender: GenderClass,
    pub plurality: Plurality,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextRule {
    pub kind: RuleKind,
    pub precursors: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    pub name: String,
    pub variants: Vec<VariantSpec>,
    pub rule: ContextRule,
}

#[derive(Deserialize)]
struct RawRule {
    kind: String,
    precursors: Vec<String>,
}

#[derive(Deserialize)]
struct RawVariant {
    surface: String,
    gender: String,
    #[serde(default)]
    plurality: Option<String>,
}

#[derive(Deserialize)]
struct RawSpec {
    name: String,
    rule: RawRule,
    variants: Vec<RawVariant>,
}

fn is_single_token(s: &str) -> bool {
    tokenize(s).tokens == [s]
}

impl VariableSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: RawSpec = serde_json::from_str(json).map_err(|e| VariableError::Parse(e.to_string()))?;
        let kind: RuleKind = raw.rule.kind.parse()?;
        if raw.rule.precursors.is_empty() {
            return Err(VariableError::EmptyPrecursors);
        }
        let mut precursors = BTreeSet::new();
        for p in raw.rule.precursors {
            if !is_single_token(&p) {
                return Err(VariableError::NotAToken {
                    what: "precursor",
                    token: p,
                });
            }
            precursors.insert(p);
        }
        if raw.variants.is_empty() {
            return Err(VariableError::NoVariants(raw.name));
        }
        let mut seen = HashSet::new();
        let mut variants = Vec::with_capacity(raw.variants.len());
        for v in raw.variants {
            if !is_single_token(&v.surface) {
                return Err(VariableError::NotAToken {
                    what: "variant",
                    token: v.surface,
                });
            }
            if !seen.insert(v.surface.clone()) {
                return Err(VariableError::DuplicateSurface(v.surface));
            }
            variants.push(VariantSpec {
                gender: v.gender.parse()?,
                plurality: match v.plurality {
                    Some(p) => p.parse()?,
                    None => Plurality::Either,
                },
                surface: v.surface,
            });
        }
        Ok(VariableSpec {
            name: raw.name,
            variants,
            rule: ContextRule { kind, precursors },
        })
    }

    /// Significant-other referents restricted to possessive constructions.
    pub fn sigother() -> Self {
        Self::from_json(include_str!("../data/sigother.json")).expect("bundled spec is valid")
    }

    /// Indefinite person referents restricted to determiner/qualifier precursors.
    pub fn person() -> Self {
        Self::from_json(include_str!("../data/person.json")).expect("bundled spec is valid")
    }

    pub fn variant(&self, surface: &str) -> Option<&VariantSpec> {
        self.variants.iter().find(|v| v.surface == surface)
    }

    pub fn surfaces_of(&self, gender: GenderClass) -> impl Iterator<Item = &str> {
        self.variants
            .iter()
            .filter(move |v| v.gender == gender)
            .map(|v| v.surface.as_str())
    }
}

pub fn load_variable_spec(path: &Path) -> Result<VariableSpec> {
    let text = std::fs::read_to_string(path).map_err(|source| VariableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    VariableSpec::from_json(&text)
}

/// my/our are first person, your second, his/her/its/their third.
pub fn classify_perspective(precursor: &str) -> Perspective {
    match precursor {
        "my" | "our" => Perspective::First,
        "your" => Perspective::Second,
        "his" | "her" | "its" | "their" => Perspective::Third,
        _ => Perspective::Na,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMatch {
    pub position: usize,
    pub precursor: String,
    pub variant: String,
}

/// Reports every position `i` where `tokens[i]` is a variant and
/// `tokens[i-1]` is one of the rule's precursors.
pub fn match_context(tokens: &[String], spec: &VariableSpec) -> Vec<ContextMatch> {
    let surfaces: HashSet<&str> = spec.variants.iter().map(|v| v.surface.as_str()).collect();
    tokens
        .windows(2)
        .enumerate()
        .filter(|(_, w)| surfaces.contains(w[1].as_str()) && spec.rule.precursors.contains(w[0].as_str()))
        .map(|(i, w)| ContextMatch {
            position: i + 1,
            precursor: w[0].clone(),
            variant: w[1].clone(),
        })
        .collect()
}

/// One extracted variable use.
#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence {
    pub message_id: String,
    pub variable: String,
    pub variant: String,
    pub gender: GenderClass,
    pub precursor: String,
    pub perspective: Perspective,
    pub month: TimeBucket,
    pub labels: BTreeSet<Label>,
    pub community: Option<String>,
    pub state: Option<StateCode>,
    pub demographics: Arc<Demographics>,
}

impl Occurrence {
    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l.as_str() == label)
    }
}

/// Matches several variables in a single pass over each message.
#[derive(Debug, Clone)]
pub struct Extractor {
    specs: Vec<VariableSpec>,
    // surface -> (spec index, variant index)
    by_surface: HashMap<String, Vec<(usize, usize)>>,
}

impl Extractor {
    pub fn new(specs: &[VariableSpec]) -> Self {
        let mut by_surface: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (si, spec) in specs.iter().enumerate() {
            for (vi, v) in spec.variants.iter().enumerate() {
                by_surface.entry(v.surface.clone()).or_default().push((si, vi));
            }
        }
        Extractor {
            specs: specs.to_vec(),
            by_surface,
        }
    }

    pub fn specs(&self) -> &[VariableSpec] {
        &self.specs
    }

    pub fn occurrences(&self, msg: &Message) -> Vec<Occurrence> {
        let tokens = tokenize(&msg.text).tokens;
        let mut out = Vec::new();
        if tokens.len() < 2 {
            return out;
        }
        let month = TimeBucket::of(msg.timestamp, Granularity::Month);
        for i in 1..tokens.len() {
            let Some(hits) = self.by_surface.get(&tokens[i]) else {
                continue;
            };
            let prev = &tokens[i - 1];
            for &(si, vi) in hits {
                let spec = &self.specs[si];
                if !spec.rule.precursors.contains(prev) {
                    continue;
                }
                let perspective = match spec.rule.kind {
                    RuleKind::PossessivePrecursor => classify_perspective(prev),
                    RuleKind::DeterminerPrecursor => Perspective::Na,
                };
                let variant = &spec.variants[vi];
                out.push(Occurrence {
                    message_id: msg.id.clone(),
                    variable: spec.name.clone(),
                    variant: variant.surface.clone(),
                    gender: variant.gender,
                    precursor: prev.clone(),
                    perspective,
                    month,
                    labels: msg.labels.clone(),
                    community: msg.community.clone(),
                    state: msg.state,
                    demographics: Arc::clone(&msg.demographics),
                });
            }
        }
        out
    }

    /// Order-preserving parallel extraction over an in-memory corpus.
    pub fn extract_all(&self, messages: &[Message]) -> Vec<Occurrence> {
        messages
            .par_chunks(1024)
            .flat_map_iter(|chunk| chunk.iter().flat_map(|m| self.occurrences(m)))
            .collect()
    }
}

/// Lazily extracts occurrences from a message stream, passing ingestion
/// errors through.
pub fn extract_occurrences<'a, I>(
    messages: I,
    specs: &[VariableSpec],
) -> impl Iterator<Item = Result<Occurrence, CorpusError>> + 'a
where
    I: IntoIterator<Item = Result<Message, CorpusError>> + 'a,
{
    let extractor = Extractor::new(specs);
    messages.into_iter().flat_map(move |m| {
        let batch: Vec<Result<Occurrence, CorpusError>> = match m {
            Ok(msg) => extractor.occurrences(&msg).into_iter().map(Ok).collect(),
            Err(e) => vec![Err(e)],
        };
        batch
    })
}

fn labels_cell(o: &Occurrence) -> String {
    let mut parts: Vec<String> = o.labels.iter().map(|l| l.to_string()).collect();
    if let Some(c) = &o.community {
        parts.push(format!("{COMMUNITY_CATEGORY}:{c}"));
    }
    parts.join(";")
}

/// Writes the occurrence table. The community travels in the `labels`
/// column as a `community:<name>` tag.
pub fn write_occurrences_csv<W: Write>(out: W, occurrences: &[Occurrence]) -> Result<()> {
    let table_err = |e: csv::Error| VariableError::Table(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OCCURRENCE_HEADER).map_err(table_err)?;
    for o in occurrences {
        let state = o.state.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([
            o.message_id.as_str(),
            o.variable.as_str(),
            o.variant.as_str(),
            o.gender.as_str(),
            o.precursor.as_str(),
            o.perspective.as_str(),
            o.month.label().as_str(),
            state.as_str(),
            labels_cell(o).as_str(),
        ])
        .map_err(table_err)?;
    }
    w.flush().map_err(|e| VariableError::Table(e.to_string()))
}

/// Reads an occurrence table written by [`write_occurrences_csv`].
/// Demographics are empty; attach them with [`attach_demographics`].
pub fn read_occurrences_csv<R: Read>(input: R) -> Result<Vec<Occurrence>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| VariableError::Table(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != OCCURRENCE_HEADER {
        return Err(VariableError::Table(format!("unexpected header {headers:?}")));
    }
    let empty = Arc::new(Demographics::new());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| VariableError::Table(e.to_string()))?;
        let row = i + 2;
        let bad = |what: &str| VariableError::Table(format!("row {row}: bad {what}"));
        let month = TimeBucket::parse(&rec[6]).map_err(|_| bad("month"))?;
        if month.granularity != Granularity::Month {
            return Err(bad("month"));
        }
        let state = match &rec[7] {
            "" => None,
            s => Some(StateCode::new(s).map_err(|_| bad("state"))?),
        };
        let mut labels = BTreeSet::new();
        let mut community = None;
        for part in rec[8].split(';').filter(|p| !p.is_empty()) {
            match part.split_once(':') {
                Some((COMMUNITY_CATEGORY, name)) => community = Some(name.to_string()),
                _ => {
                    labels.insert(Label::new(part).map_err(|_| bad("label"))?);
                }
            }
        }
        out.push(Occurrence {
            message_id: rec[0].to_string(),
            variable: rec[1].to_string(),
            variant: rec[2].to_string(),
            gender: rec[3].parse().map_err(|_| bad("gender"))?,
            precursor: rec[4].to_string(),
            perspective: rec[5].parse().map_err(|_| bad("perspective"))?,
            month,
            labels,
            community,
            state,
            demographics: Arc::clone(&empty),
        });
    }
    Ok(out)
}

/// Side table of per-message demographic attributes
/// (`message_id,attribute,value`), one row per attribute of each distinct
/// message in first-appearance order.
pub fn write_demographics_csv<W: Write>(out: W, occurrences: &[Occurrence]) -> Result<()> {
    let table_err = |e: csv::Error| VariableError::Table(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["message_id", "attribute", "value"])
        .map_err(table_err)?;
    let mut seen = HashSet::new();
    for o in occurrences {
        if o.demographics.is_empty() || !seen.insert(o.message_id.as_str()) {
            continue;
        }
        for (k, v) in o.demographics.iter() {
            w.write_record([o.message_id.as_str(), k.as_str(), v.to_string().as_str()])
                .map_err(table_err)?;
        }
    }
    w.flush().map_err(|e| VariableError::Table(e.to_string()))
}

pub fn attach_demographics<R: Read>(input: R, occurrences: &mut [Occurrence]) -> Result<()> {
    let mut r = csv::Reader::from_reader(input);
    let mut per_message: HashMap<String, Demographics> = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| VariableError::Table(e.to_string()))?;
        let value: f64 = rec[2]
            .parse()
            .map_err(|_| VariableError::Table(format!("bad demographic value {:?}", &rec[2])))?;
        per_message
            .entry(rec[0].to_string())
            .or_default()
            .insert(rec[1].to_string(), value);
    }
    let shared: HashMap<String, Arc<Demographics>> = per_message.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
    for o in occurrences.iter_mut() {
        if let Some(d) = shared.get(&o.message_id) {
            o.demographics = Arc::clone(d);
        }
    }
    Ok(())
}

/// Occurrence counts keyed by variant, for quick summaries.
pub fn variant_counts<'a>(occurrences: impl IntoIterator<Item = &'a Occurrence>) -> BTreeMap<(String, String), u64> {
    let mut counts = BTreeMap::new();
    for o in occurrences {
        *counts.entry((o.variable.clone(), o.variant.clone())).or_insert(0) += 1;
    }
    counts
}
