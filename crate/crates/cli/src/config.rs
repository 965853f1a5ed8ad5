//! Declarative run configuration: one JSON document naming inputs, variable
//! specs and the analyses to run.
//!
//! Relative paths resolve against the directory holding the config file.
//! After [`RunConfig::resolve`] every seed and iteration count is explicit,
//! and serializing the resolved config then parsing it again gives the same
//! value.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sociolex_core::corpus::{Granularity, LabelMap};
use sociolex_core::embedshift::{BootstrapOver, PoleSets, TrainParams};
use sociolex_core::estimation::{Filter, Target, Weighting};
use sociolex_core::eventstudy::{Conditioning, StandardErrors, TreatmentTable};
use sociolex_core::variables::{load_variable_spec, VariableSpec};

/// A validation failure pointing at one config field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.into(),
        message: message.into(),
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// JSON-lines corpora, concatenated in order.
    pub inputs: Vec<PathBuf>,
    /// Variable spec files.
    pub variables: Vec<PathBuf>,
    /// Community label map; the bundled map when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Base seed; analyses without their own seed use it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Abort on malformed corpus lines instead of skipping them.
    #[serde(default)]
    pub strict: bool,
    pub analyses: Vec<Analysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Analysis {
    Rates(RatesBlock),
    Trend(TrendBlock),
    Groups(GroupsBlock),
    Did(DidBlock),
    Shift(ShiftBlock),
}

fn sigother() -> String {
    "SigOther".into()
}
fn month() -> Granularity {
    Granularity::Month
}
fn thirty() -> u64 {
    30
}
fn twenty() -> u64 {
    20
}
fn thousand() -> usize {
    1000
}
fn twelve() -> i64 {
    12
}
fn five() -> usize {
    5
}
fn terms() -> String {
    "terms".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "sigother")]
    pub variable: String,
    pub target: String,
    #[serde(default)]
    pub filter: Filter,
    #[serde(default = "month")]
    pub granularity: Granularity,
    #[serde(default = "thirty")]
    pub min_n: u64,
    /// Binomial bootstrap resamples per bucket.
    #[serde(default = "thousand")]
    pub resamples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendMode {
    /// Pooled rate per bucket.
    #[default]
    Raw,
    /// Mean of per-community rates per bucket.
    CommunityMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "sigother")]
    pub variable: String,
    pub target: String,
    #[serde(default)]
    pub filter: Filter,
    #[serde(default = "month")]
    pub granularity: Granularity,
    #[serde(default = "thirty")]
    pub min_n: u64,
    #[serde(default)]
    pub mode: TrendMode,
    /// Bootstrap resamples, used by the community-mean mode.
    #[serde(default = "thousand")]
    pub resamples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "sigother")]
    pub variable: String,
    pub target: String,
    #[serde(default)]
    pub filter: Filter,
    /// Identity labels, one group each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<String>,
    /// Demographic attribute to stratify by quartile instead of labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    #[serde(default = "thirty")]
    pub min_n: u64,
    #[serde(default = "thousand")]
    pub resamples: usize,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "sigother")]
    pub variable: String,
    pub target: String,
    /// Treatment dates; the bundled table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatments: Option<PathBuf>,
    /// Months on each side of treatment.
    #[serde(default = "twelve")]
    pub window: i64,
    #[serde(default = "twenty")]
    pub min_n: u64,
    #[serde(default)]
    pub conditioning: Conditioning,
    #[serde(default)]
    pub weighted: bool,
    #[serde(default)]
    pub standard_errors: StandardErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Corpus to embed; the first input when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub target: String,
    /// `terms`, `names` or a pole-set file.
    #[serde(default = "terms")]
    pub poles: String,
    /// Year labels to keep; all years when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periods: Vec<String>,
    #[serde(default = "five")]
    pub runs: usize,
    #[serde(default = "thousand")]
    pub resamples: usize,
    #[serde(default)]
    pub bootstrap: BootstrapOver,
    #[serde(default)]
    pub train: TrainParams,
    /// Words whose cross-period stability is reported after alignment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Rates(_) => "rates",
            Analysis::Trend(_) => "trend",
            Analysis::Groups(_) => "groups",
            Analysis::Did(_) => "did",
            Analysis::Shift(_) => "shift",
        }
    }

    /// Name after resolution; used in output file names.
    pub fn name(&self) -> &str {
        let n = match self {
            Analysis::Rates(b) => &b.name,
            Analysis::Trend(b) => &b.name,
            Analysis::Groups(b) => &b.name,
            Analysis::Did(b) => &b.name,
            Analysis::Shift(b) => &b.name,
        };
        n.as_deref().unwrap_or("")
    }

    fn name_slot(&mut self) -> &mut Option<String> {
        match self {
            Analysis::Rates(b) => &mut b.name,
            Analysis::Trend(b) => &mut b.name,
            Analysis::Groups(b) => &mut b.name,
            Analysis::Did(b) => &mut b.name,
            Analysis::Shift(b) => &mut b.name,
        }
    }

    fn default_name(&self) -> String {
        let raw = match self {
            Analysis::Rates(b) => b.variable.clone(),
            Analysis::Trend(b) => b.variable.clone(),
            Analysis::Groups(b) => b.variable.clone(),
            Analysis::Did(b) => b.target.clone(),
            Analysis::Shift(b) => b.target.clone(),
        };
        sanitize(&raw)
    }

    /// The seed after resolution, if the analysis is randomized.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Analysis::Rates(b) => b.seed,
            Analysis::Trend(b) => b.seed,
            Analysis::Groups(b) => b.seed,
            Analysis::Did(_) => None,
            Analysis::Shift(b) => b.seed,
        }
    }

    fn seed_slot(&mut self) -> Option<&mut Option<u64>> {
        match self {
            Analysis::Rates(b) => Some(&mut b.seed),
            Analysis::Trend(b) => Some(&mut b.seed),
            Analysis::Groups(b) => Some(&mut b.seed),
            Analysis::Did(_) => None,
            Analysis::Shift(b) => Some(&mut b.seed),
        }
    }
}

/// Lowercase alphanumerics, `_` and `-`; everything else becomes `_`.
pub fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Pole sets named by a config value.
pub fn load_poles(base: &Path, spec: &str) -> Result<PoleSets, String> {
    match spec {
        "terms" => Ok(PoleSets::terms()),
        "names" => Ok(PoleSets::names()),
        path => {
            let p = resolve_path(base, Path::new(path));
            PoleSets::load(&p).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

/// Files and parsed resources the run needs, checked once.
#[derive(Debug, Clone)]
pub struct Resources {
    pub specs: Vec<VariableSpec>,
    pub labels: LabelMap,
}

fn check_file(base: &Path, field: &str, p: &Path) -> Result<PathBuf, ValidationError> {
    let full = resolve_path(base, p);
    if !full.is_file() {
        return Err(invalid(field, format!("file not found: {}", full.display())));
    }
    Ok(full)
}

fn check_target(field: &str, target: &str) -> Result<(), ValidationError> {
    target
        .parse::<Target>()
        .map(|_| ())
        .map_err(|e| invalid(format!("{field}.target"), e))
}

fn check_resamples(field: &str, n: usize) -> Result<(), ValidationError> {
    if n < 100 {
        return Err(invalid(
            format!("{field}.resamples"),
            format!("must be at least 100, got {n}"),
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ValidationError> {
        serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| invalid(e.field, format!("{}: {}", path.display(), e.message)))
    }

    /// SHA-256 of the compact serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Fills names and seeds.
    pub fn resolve(mut self) -> Self {
        for a in &mut self.analyses {
            if a.name_slot().is_none() {
                *a.name_slot() = Some(a.default_name());
            }
            let base_seed = self.seed;
            if let Some(slot) = a.seed_slot() {
                slot.get_or_insert(base_seed);
            }
        }
        self
    }

    /// Checks every referenced file and parameter. `base` is the config
    /// file's directory.
    pub fn validate(&self, base: &Path) -> Result<Resources, ValidationError> {
        if self.inputs.is_empty() {
            return Err(invalid("inputs", "at least one corpus is required"));
        }
        for (i, p) in self.inputs.iter().enumerate() {
            check_file(base, &format!("inputs[{i}]"), p)?;
        }
        if self.variables.is_empty() {
            return Err(invalid("variables", "at least one variable spec is required"));
        }
        let mut specs = Vec::new();
        for (i, p) in self.variables.iter().enumerate() {
            let field = format!("variables[{i}]");
            let full = check_file(base, &field, p)?;
            specs.push(load_variable_spec(&full).map_err(|e| invalid(&field, e.to_string()))?);
        }
        let labels = match &self.label_map {
            Some(p) => {
                let full = check_file(base, "label_map", p)?;
                LabelMap::load(&full).map_err(|e| invalid("label_map", e.to_string()))?
            }
            None => LabelMap::reddit_communities(),
        };
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be positive"));
        }
        let variables: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let check_variable = |field: &str, v: &str| {
            if variables.contains(v) {
                Ok(())
            } else {
                Err(invalid(
                    format!("{field}.variable"),
                    format!("no loaded spec defines {v:?}"),
                ))
            }
        };
        let mut names = BTreeSet::new();
        for (i, a) in self.analyses.iter().enumerate() {
            let field = format!("analyses[{i}]");
            let name = a.name();
            if !name.is_empty() && !names.insert((a.kind(), name.to_string())) {
                return Err(invalid(
                    format!("{field}.name"),
                    format!("duplicate {} analysis {name:?}", a.kind()),
                ));
            }
            match a {
                Analysis::Rates(b) => {
                    check_variable(&field, &b.variable)?;
                    check_target(&field, &b.target)?;
                    check_resamples(&field, b.resamples)?;
                }
                Analysis::Trend(b) => {
                    check_variable(&field, &b.variable)?;
                    check_target(&field, &b.target)?;
                    if b.mode == TrendMode::CommunityMean {
                        check_resamples(&field, b.resamples)?;
                    }
                }
                Analysis::Groups(b) => {
                    check_variable(&field, &b.variable)?;
                    check_target(&field, &b.target)?;
                    check_resamples(&field, b.resamples)?;
                    match (b.groups.is_empty(), &b.attribute) {
                        (true, None) => return Err(invalid(format!("{field}.groups"), "give groups or an attribute")),
                        (false, Some(_)) => {
                            return Err(invalid(
                                format!("{field}.attribute"),
                                "groups and attribute are exclusive",
                            ))
                        }
                        _ => {}
                    }
                }
                Analysis::Did(b) => {
                    check_variable(&field, &b.variable)?;
                    check_target(&field, &b.target)?;
                    if b.window < 1 {
                        return Err(invalid(format!("{field}.window"), "must be at least 1"));
                    }
                    if let Some(p) = &b.treatments {
                        let full = check_file(base, &format!("{field}.treatments"), p)?;
                        TreatmentTable::load(&full)
                            .map_err(|e| invalid(format!("{field}.treatments"), e.to_string()))?;
                    }
                }
                Analysis::Shift(b) => {
                    if let Some(p) = &b.corpus {
                        check_file(base, &format!("{field}.corpus"), p)?;
                    }
                    if b.target.is_empty() {
                        return Err(invalid(format!("{field}.target"), "empty target"));
                    }
                    load_poles(base, &b.poles).map_err(|e| invalid(format!("{field}.poles"), e))?;
                    if b.runs == 0 {
                        return Err(invalid(format!("{field}.runs"), "must be positive"));
                    }
                    check_resamples(&field, b.resamples)?;
                    if b.train.epochs == 0 || b.train.dim == 0 {
                        return Err(invalid(format!("{field}.train"), "dim and epochs must be positive"));
                    }
                }
            }
        }
        Ok(Resources { specs, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "inputs": ["corpus.jsonl"],
        "variables": ["sigother.json"],
        "analyses": [
            {"kind": "rates", "target": "partner"},
            {"kind": "did", "target": "partner", "window": 6},
            {"kind": "shift", "target": "dude", "runs": 2, "train": {"dim": 20}}
        ]
    }"#;

    #[test]
    fn defaults_are_filled_and_round_trip() {
        let c = RunConfig::from_json(MINIMAL).unwrap().resolve();
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.analyses[0].name(), "sigother");
        assert_eq!(c.analyses[0].seed(), Some(0));
        assert_eq!(c.analyses[1].name(), "partner");
        assert_eq!(c.analyses[1].seed(), None);
        match &c.analyses[2] {
            Analysis::Shift(s) => {
                assert_eq!(s.train.dim, 20);
                assert_eq!(s.train.epochs, 15);
                assert_eq!(s.resamples, 1000);
            }
            other => panic!("{other:?}"),
        }
        let again = RunConfig::from_json(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.resolve(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = MINIMAL.replace("\"window\": 6", "\"windw\": 6");
        let e = RunConfig::from_json(&bad).unwrap_err();
        assert!(e.message.contains("windw"), "{e}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap().resolve();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn missing_files_name_the_field_and_path() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let e = c.validate(dir.path()).unwrap_err();
        assert_eq!(e.field, "inputs[0]");
        assert!(e.message.contains("corpus.jsonl"));
        std::fs::write(dir.path().join("corpus.jsonl"), "").unwrap();
        let e = c.validate(dir.path()).unwrap_err();
        assert_eq!(e.field, "variables[0]");
        assert!(e.message.contains("sigother.json"));
    }

    #[test]
    fn sanitized_names() {
        assert_eq!(sanitize("SigOther"), "sigother");
        assert_eq!(sanitize("partner+spouse"), "partner_spouse");
    }
}
