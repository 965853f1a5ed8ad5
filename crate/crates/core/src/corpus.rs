//! Message ingestion, tokenization and calendar bucketing.
//!
//! Corpora arrive as JSON-Lines, one message object per line:
//!
//! ```text
//! {"id": "a1", "platform": "reddit", "ts": 1496275200, "text": "...",
//!  "community": "relationships", "state": "MA", "demographics": {"per_capita_income": 41000.0}}
//! ```
//!
//! Demographic attributes are carried as raw reals; stratification happens
//! downstream. Every record is treated as one message (retweets and quotes
//! are not special-cased) and the input is assumed to be pre-filtered for
//! language.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Placeholder emitted for URLs.
pub const URL_TOKEN: &str = "<url>";
/// Placeholder emitted for @-mentions.
pub const MENTION_TOKEN: &str = "<mention>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: unknown platform {value:?}")]
    UnknownPlatform { line: u64, value: String },
    #[error("invalid label {0:?}: expected category:identity")]
    InvalidLabel(String),
    #[error("invalid state code {0:?}")]
    InvalidState(String),
    #[error("label map {path}: {reason}")]
    LabelMap { path: PathBuf, reason: String },
    #[error("invalid time bucket {0:?}")]
    InvalidBucket(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Reddit,
    Twitter,
    Other,
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "reddit" => Ok(Platform::Reddit),
            "twitter" => Ok(Platform::Twitter),
            "other" => Ok(Platform::Other),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Reddit => "reddit",
            Platform::Twitter => "twitter",
            Platform::Other => "other",
        })
    }
}

/// A `category:identity` tag such as `sexuality:lgbt`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            Some((cat, ident))
                if !cat.is_empty() && !ident.is_empty() && !s.contains(char::is_whitespace) && !s.contains(';') =>
            {
                Ok(Label(s.to_string()))
            }
            _ => Err(CorpusError::InvalidLabel(s.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn category(&self) -> &str {
        self.0.split_once(':').map(|(c, _)| c).unwrap_or("")
    }

    pub fn identity(&self) -> &str {
        self.0.split_once(':').map(|(_, i)| i).unwrap_or("")
    }
}

impl TryFrom<String> for Label {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        Label::new(&s)
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const STATE_CODES: [&str; 51] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN", "KS", "KY", "LA",
    "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR",
    "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
];

/// Two-letter code for one of the 50 US states or DC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StateCode([u8; 2]);

impl StateCode {
    pub fn new(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        if STATE_CODES.binary_search(&upper.as_str()).is_ok() {
            let b = upper.as_bytes();
            Ok(StateCode([b[0], b[1]]))
        } else {
            Err(CorpusError::InvalidState(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        // Only constructed from ASCII codes in STATE_CODES.
        std::str::from_utf8(&self.0).expect("state codes are ascii")
    }

    pub fn all() -> impl Iterator<Item = StateCode> {
        STATE_CODES.iter().map(|s| StateCode::new(s).expect("table entry"))
    }
}

impl TryFrom<String> for StateCode {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        StateCode::new(&s)
    }
}

impl From<StateCode> for String {
    fn from(s: StateCode) -> String {
        s.as_str().to_string()
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Demographics = BTreeMap<String, f64>;

/// One social-media post.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub id: String,
    pub platform: Platform,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub text: String,
    pub community: Option<String>,
    pub labels: BTreeSet<Label>,
    pub state: Option<StateCode>,
    pub demographics: Arc<Demographics>,
}

/// Maps community names (lowercased) to identity labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelMap {
    map: HashMap<String, Vec<Label>>,
}

impl LabelMap {
    pub fn from_json(json: &str) -> std::result::Result<Self, String> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let mut map = HashMap::with_capacity(raw.len());
        for (community, labels) in raw {
            let mut parsed: Vec<Label> = Vec::with_capacity(labels.len());
            for l in labels {
                let label = Label::new(&l).map_err(|e| e.to_string())?;
                if !parsed.contains(&label) {
                    parsed.push(label);
                }
            }
            map.entry(community.to_lowercase())
                .or_insert_with(Vec::new)
                .extend(parsed);
        }
        Ok(LabelMap { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|reason| CorpusError::LabelMap {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// The community lists shipped with the crate (identity-aligned subreddits).
    pub fn reddit_communities() -> Self {
        Self::from_json(include_str!("../data/reddit_communities.json")).expect("bundled label map is valid")
    }

    pub fn labels_for(&self, community: &str) -> &[Label] {
        self.map
            .get(&community.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Abort on the first malformed line instead of counting it as a reject.
    pub strict: bool,
}

#[derive(Deserialize)]
struct RawMessage {
    id: String,
    platform: String,
    ts: i64,
    text: String,
    #[serde(default)]
    community: Option<String>,
    #[serde(default)]
    state: Option<String>,
    #[serde(default)]
    demographics: Option<Demographics>,
}

enum LineError {
    Malformed(String),
    UnknownPlatform(String),
}

fn parse_line(line: &str, labels: Option<&LabelMap>) -> std::result::Result<Message, LineError> {
    let raw: RawMessage = serde_json::from_str(line).map_err(|e| LineError::Malformed(e.to_string()))?;
    if raw.ts <= 0 {
        return Err(LineError::Malformed(format!("non-positive timestamp {}", raw.ts)));
    }
    if raw.text.trim().is_empty() {
        return Err(LineError::Malformed("empty text".into()));
    }
    if raw.id.is_empty() {
        return Err(LineError::Malformed("empty id".into()));
    }
    let platform = raw.platform.parse::<Platform>().map_err(LineError::UnknownPlatform)?;
    let state = match raw.state.as_deref() {
        None | Some("") => None,
        Some(s) => Some(StateCode::new(s).map_err(|e| LineError::Malformed(e.to_string()))?),
    };
    let mut label_set = BTreeSet::new();
    if let (Some(map), Some(c)) = (labels, raw.community.as_deref()) {
        label_set.extend(map.labels_for(c).iter().cloned());
    }
    let demographics = raw.demographics.unwrap_or_default();
    if let Some((k, _)) = demographics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(LineError::Malformed(format!("non-finite demographic {k}")));
    }
    Ok(Message {
        id: raw.id,
        platform,
        timestamp: raw.ts,
        text: raw.text,
        community: raw.community.filter(|c| !c.is_empty()),
        labels: label_set,
        state,
        demographics: Arc::new(demographics),
    })
}

/// Per-line state shared by the streaming and sharded readers.
struct LineParser {
    line_no: u64,
    rejects: u64,
    opts: ReadOptions,
    labels: Option<Arc<LabelMap>>,
}

impl LineParser {
    /// `None` means the line was rejected and skipped. `Some(Err)` is fatal.
    fn feed(&mut self, bytes: &[u8]) -> Option<Result<Message>> {
        self.line_no += 1;
        let parsed = match std::str::from_utf8(bytes) {
            Ok(line) => parse_line(line.trim_end_matches(['\n', '\r']), self.labels.as_deref()),
            Err(e) => Err(LineError::Malformed(format!("invalid utf-8: {e}"))),
        };
        match parsed {
            Ok(m) => Some(Ok(m)),
            Err(LineError::UnknownPlatform(value)) => Some(Err(CorpusError::UnknownPlatform {
                line: self.line_no,
                value,
            })),
            Err(LineError::Malformed(reason)) if self.opts.strict => Some(Err(CorpusError::Malformed {
                line: self.line_no,
                reason,
            })),
            Err(LineError::Malformed(_)) => {
                self.rejects += 1;
                None
            }
        }
    }
}

/// Streaming JSON-Lines reader. Holds one line buffer at a time.
pub struct MessageReader<R> {
    reader: R,
    buf: Vec<u8>,
    parser: LineParser,
    done: bool,
}

impl<R: BufRead> MessageReader<R> {
    pub fn new(reader: R, labels: Option<Arc<LabelMap>>, opts: ReadOptions) -> Self {
        MessageReader {
            reader,
            buf: Vec::with_capacity(4096),
            parser: LineParser {
                line_no: 0,
                rejects: 0,
                opts,
                labels,
            },
            done: false,
        }
    }

    /// Malformed lines skipped so far.
    pub fn rejects(&self) -> u64 {
        self.parser.rejects
    }

    /// Lines consumed so far.
    pub fn lines_read(&self) -> u64 {
        self.parser.line_no
    }
}

impl<R: BufRead> Iterator for MessageReader<R> {
    type Item = Result<Message>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => match self.parser.feed(&self.buf) {
                    Some(Ok(m)) => return Some(Ok(m)),
                    Some(Err(e)) => {
                        self.done = true;
                        return Some(Err(e));
                    }
                    None => {}
                },
                Err(e) => {
                    self.done = true;
                    return Some(Err(CorpusError::Io {
                        path: PathBuf::from("<stream>"),
                        source: e,
                    }));
                }
            }
        }
        None
    }
}

/// Opens a JSON-Lines corpus as a lazy message stream.
pub fn load_messages(
    path: &Path,
    labels: Option<Arc<LabelMap>>,
    opts: ReadOptions,
) -> Result<MessageReader<BufReader<File>>> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(MessageReader::new(BufReader::new(file), labels, opts))
}

/// Fully materialized corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub messages: Vec<Message>,
    pub rejects: u64,
    pub lines: u64,
}

struct ShardOutput {
    messages: Vec<Message>,
    rejects: u64,
    lines: u64,
    // Carries a shard-local line number; fixed up after the merge.
    error: Option<CorpusError>,
}

/// Parses every line whose first byte lies in `[start, end)`.
fn read_shard(
    path: &Path,
    start: u64,
    end: u64,
    labels: Option<Arc<LabelMap>>,
    opts: ReadOptions,
) -> Result<ShardOutput> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::open(path).map_err(io_err)?;
    let mut pos = 0;
    if start > 0 {
        file.seek(SeekFrom::Start(start - 1)).map_err(io_err)?;
        pos = start - 1;
    }
    let mut reader = BufReader::new(file);
    let mut buf = Vec::with_capacity(4096);
    if start > 0 {
        // Skip to the first line starting at or after `start`.
        pos += reader.read_until(b'\n', &mut buf).map_err(io_err)? as u64;
    }
    let mut parser = LineParser {
        line_no: 0,
        rejects: 0,
        opts,
        labels,
    };
    let mut out = ShardOutput {
        messages: Vec::new(),
        rejects: 0,
        lines: 0,
        error: None,
    };
    while pos < end {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        pos += n as u64;
        match parser.feed(&buf) {
            Some(Ok(m)) => out.messages.push(m),
            Some(Err(e)) => {
                out.error = Some(e);
                break;
            }
            None => {}
        }
    }
    out.rejects = parser.rejects;
    out.lines = parser.line_no;
    Ok(out)
}

/// Reads a corpus in `shards` byte-range shards in parallel. Messages keep
/// file order regardless of thread scheduling.
pub fn load_messages_sharded(
    path: &Path,
    labels: Option<Arc<LabelMap>>,
    opts: ReadOptions,
    shards: usize,
) -> Result<Corpus> {
    let len = std::fs::metadata(path)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .len();
    let shards = shards.max(1) as u64;
    let bounds: Vec<(u64, u64)> = (0..shards)
        .map(|i| (len * i / shards, len * (i + 1) / shards))
        .collect();
    let outputs: Vec<Result<ShardOutput>> = bounds
        .par_iter()
        .map(|&(s, e)| read_shard(path, s, e, labels.clone(), opts))
        .collect();
    let mut corpus = Corpus::default();
    for out in outputs {
        let out = out?;
        if let Some(err) = out.error {
            let offset = corpus.lines;
            return Err(match err {
                CorpusError::Malformed { line, reason } => CorpusError::Malformed {
                    line: offset + line,
                    reason,
                },
                CorpusError::UnknownPlatform { line, value } => CorpusError::UnknownPlatform {
                    line: offset + line,
                    value,
                },
                other => other,
            });
        }
        corpus.lines += out.lines;
        corpus.rejects += out.rejects;
        corpus.messages.extend(out.messages);
    }
    Ok(corpus)
}

/// Ordered lowercase tokens of one text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    pub source: Option<String>,
}

impl TokenStream {
    pub fn for_message(msg: &Message) -> Self {
        TokenStream {
            tokens: tokenize(&msg.text).tokens,
            source: Some(msg.id.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }
}

fn is_url(tok: &str) -> bool {
    let t = tok.trim_start_matches(|c: char| "([{<\"'".contains(c));
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.") || t.contains("://")
}

fn is_mention(tok: &str) -> bool {
    let t = tok.trim_start_matches(|c: char| !c.is_alphanumeric() && c != '@');
    let mut chars = t.chars();
    chars.next() == Some('@') && chars.next().is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Lowercases, NFC-normalizes, splits on whitespace and trims punctuation
/// from token edges. Internal apostrophes and accented letters survive.
pub fn tokenize(text: &str) -> TokenStream {
    let lowered: String = text.to_lowercase().nfc().collect();
    let tokens = lowered
        .split_whitespace()
        .filter_map(|raw| {
            if raw == URL_TOKEN || raw == MENTION_TOKEN {
                return Some(raw.to_string());
            }
            if is_url(raw) {
                return Some(URL_TOKEN.to_string());
            }
            if is_mention(raw) {
                return Some(MENTION_TOKEN.to_string());
            }
            let t = raw.trim_matches(|c: char| !c.is_alphanumeric());
            (!t.is_empty()).then(|| t.to_string())
        })
        .collect();
    TokenStream { tokens, source: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Month,
    Quarter,
    Year,
}

impl Granularity {
    fn months(self) -> i64 {
        match self {
            Granularity::Month => 1,
            Granularity::Quarter => 3,
            Granularity::Year => 12,
        }
    }
}

impl FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "month" => Ok(Granularity::Month),
            "quarter" => Ok(Granularity::Quarter),
            "year" => Ok(Granularity::Year),
            _ => Err(format!("unknown granularity {s:?}")),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Month => "month",
            Granularity::Quarter => "quarter",
            Granularity::Year => "year",
        })
    }
}

/// A half-open UTC calendar interval. `index` counts buckets since 1970-01.
/// Serializes as its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TimeBucket {
    pub granularity: Granularity,
    pub index: i64,
}

impl TimeBucket {
    pub fn of(timestamp: i64, granularity: Granularity) -> Self {
        let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
        Self::from_year_month(dt.year(), dt.month(), granularity)
    }

    pub fn from_year_month(year: i32, month: u32, granularity: Granularity) -> Self {
        let months = (year as i64 - 1970) * 12 + (month as i64 - 1);
        TimeBucket {
            granularity,
            index: months.div_euclid(granularity.months()),
        }
    }

    /// First calendar month of the bucket as (year, month).
    pub fn year_month(&self) -> (i32, u32) {
        let months = self.index * self.granularity.months();
        (
            (1970 + months.div_euclid(12)) as i32,
            (months.rem_euclid(12) + 1) as u32,
        )
    }

    fn month_start(months: i64) -> i64 {
        let year = (1970 + months.div_euclid(12)) as i32;
        let month = (months.rem_euclid(12) + 1) as u32;
        NaiveDate::from_ymd_opt(year, month, 1)
            .expect("valid calendar month")
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp()
    }

    pub fn start(&self) -> i64 {
        Self::month_start(self.index * self.granularity.months())
    }

    pub fn end(&self) -> i64 {
        Self::month_start((self.index + 1) * self.granularity.months())
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        self.start() <= timestamp && timestamp < self.end()
    }

    pub fn next(&self) -> Self {
        TimeBucket {
            index: self.index + 1,
            ..*self
        }
    }

    /// `2015-03`, `2015-Q1` or `2015`.
    pub fn label(&self) -> String {
        let (y, m) = self.year_month();
        match self.granularity {
            Granularity::Month => format!("{y:04}-{m:02}"),
            Granularity::Quarter => format!("{y:04}-Q{}", (m - 1) / 3 + 1),
            Granularity::Year => format!("{y:04}"),
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        let bad = || CorpusError::InvalidBucket(label.to_string());
        if let Some((y, rest)) = label.split_once('-') {
            let year: i32 = y.parse().map_err(|_| bad())?;
            if let Some(q) = rest.strip_prefix('Q') {
                let q: u32 = q.parse().map_err(|_| bad())?;
                if !(1..=4).contains(&q) {
                    return Err(bad());
                }
                return Ok(Self::from_year_month(year, (q - 1) * 3 + 1, Granularity::Quarter));
            }
            let m: u32 = rest.parse().map_err(|_| bad())?;
            if !(1..=12).contains(&m) {
                return Err(bad());
            }
            Ok(Self::from_year_month(year, m, Granularity::Month))
        } else {
            let year: i32 = label.parse().map_err(|_| bad())?;
            Ok(Self::from_year_month(year, 1, Granularity::Year))
        }
    }

    /// Re-buckets a monthly bucket at a coarser granularity.
    pub fn coarsen(&self, granularity: Granularity) -> Self {
        let months = self.index * self.granularity.months();
        TimeBucket {
            granularity,
            index: months.div_euclid(granularity.months()),
        }
    }
}

impl TryFrom<String> for TimeBucket {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        TimeBucket::parse(&s)
    }
}

impl From<TimeBucket> for String {
    fn from(b: TimeBucket) -> String {
        b.label()
    }
}

impl fmt::Display for TimeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn time_bucket(timestamp: i64, granularity: Granularity) -> TimeBucket {
    TimeBucket::of(timestamp, granularity)
}
