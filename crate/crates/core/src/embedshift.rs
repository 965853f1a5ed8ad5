//! Per-period word embeddings, pole association differences and
//! orthogonal Procrustes alignment between periods.
//!
//! The trainer is continuous bag of words with negative sampling. For a
//! center word `o` with context words `c_1..c_C`, `h = (1/C) sum v_c`, and
//! the loss is
//!
//! `L = -log s(u_o . h) - sum_n log s(-u_n . h)`
//!
//! with `s` the logistic function, `v` input vectors and `u` output vectors.
//! Updates are exact gradient steps: each context vector receives `dL/dh / C`.
//!
//! Weights live in relaxed atomics so several threads may update them
//! without locks. With one thread the update order is fixed and training is
//! bit-reproducible per seed; with more threads results differ between runs
//! at roughly the 1e-3 level of association values.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::percentile_sorted;
use crate::plot::{Chart, Series};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("epochs = 0: no training performed")]
    NoTraining,
    #[error("vocabulary has {size} words at min_count {min_count}; need at least 2")]
    VocabularyTooSmall { size: usize, min_count: u64 },
    #[error("{period}: {have} tokens, below the minimum of {need}")]
    InsufficientTokens { period: String, have: u64, need: u64 },
    #[error("pole set {set} has under 50% coverage; missing: {}", .missing.join(", "))]
    PoleCoverage { set: String, missing: Vec<String> },
    #[error("{0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("invalid pole sets: {0}")]
    InvalidPoles(String),
    #[error("need at least {need} periods, got {have}")]
    TooFewPeriods { have: usize, need: usize },
    #[error("procrustes needs at least 2 shared words, got {0}")]
    TooFewShared(usize),
    #[error("cross-covariance is degenerate (rank 0)")]
    Degenerate,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("vector file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: u64,
    pub epochs: usize,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub alpha: f64,
    pub min_alpha: f64,
    /// Fewer raw tokens than this is an error.
    pub min_tokens: u64,
    /// Worker threads for one space; 1 gives bit-reproducible training.
    pub threads: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dim: 300,
            window: 5,
            negatives: 5,
            min_count: 5,
            epochs: 15,
            subsample: 1e-3,
            alpha: 0.025,
            min_alpha: 1e-4,
            min_tokens: 1_000_000,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub params: TrainParams,
    pub seed: u64,
    /// Raw tokens in the training slice.
    pub tokens: u64,
    /// Mean negative-sampling loss per processed center word, per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Word vectors for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub period: String,
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major, `words.len() * dim`.
    data: Vec<f64>,
    pub meta: Option<TrainingMeta>,
}

impl EmbeddingSpace {
    pub fn from_rows(period: &str, words: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if words.len() != rows.len() {
            return Err(EmbedError::DimensionMismatch(words.len(), rows.len()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(EmbedError::DimensionMismatch(dim, r.len()));
        }
        let index = index_of(&words)?;
        Ok(EmbeddingSpace {
            period: period.to_string(),
            dim,
            words,
            index,
            data: rows.into_iter().flatten().collect(),
            meta: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.vector(a).ok_or_else(|| EmbedError::OutOfVocabulary(a.into()))?;
        let vb = self.vector(b).ok_or_else(|| EmbedError::OutOfVocabulary(b.into()))?;
        Ok(cosine(va, vb))
    }

    /// Every vector multiplied on the right by `w` (`d x d`).
    pub fn transformed(&self, w: &DMatrix<f64>) -> Result<Self> {
        if w.nrows() != self.dim || w.ncols() != self.dim {
            return Err(EmbedError::DimensionMismatch(self.dim, w.nrows()));
        }
        let m = DMatrix::from_row_slice(self.len(), self.dim, &self.data) * w;
        let mut out = self.clone();
        for i in 0..self.len() {
            for j in 0..self.dim {
                out.data[i * self.dim + j] = m[(i, j)];
            }
        }
        Ok(out)
    }

    /// Plain-text format: a `vocab_size dim` header, then `token v1 .. vd`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, w) in self.words.iter().enumerate() {
            out.write_all(w.as_bytes())?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(input: R, period: &str) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let bad = |line: usize, reason: &str| EmbedError::Format {
            line,
            reason: reason.to_string(),
        };
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (n, dim) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(n)), Some(Ok(d)), None) => (n, d),
            _ => return Err(bad(1, "header must be `vocab_size dim`")),
        };
        let mut words = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts
                .next()
                .filter(|w| !w.is_empty())
                .ok_or_else(|| bad(i + 2, "missing token"))?;
            let row: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|_| bad(i + 2, "bad number")))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(bad(i + 2, &format!("expected {dim} values, got {}", row.len())));
            }
            words.push(word.to_string());
            rows.push(row);
        }
        if words.len() != n {
            return Err(bad(1, &format!("header says {n} words, found {}", words.len())));
        }
        let mut s = Self::from_rows(period, words, rows)?;
        s.dim = dim;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, period: &str) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?, period)
    }
}

fn index_of(words: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        if index.insert(w.clone(), i).is_some() {
            return Err(EmbedError::InvalidParameter(format!("duplicate word {w:?}")));
        }
    }
    Ok(index)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Vocabulary ordered by descending count, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub words: Vec<String>,
    pub counts: Vec<u64>,
    pub index: HashMap<String, u32>,
    /// Raw tokens counted, including those below `min_count`.
    pub total_tokens: u64,
}

impl Vocab {
    pub fn build<D: AsRef<[S]>, S: AsRef<str>>(docs: &[D], min_count: u64) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut total = 0u64;
        for d in docs {
            for t in d.as_ref() {
                *counts.entry(t.as_ref()).or_default() += 1;
                total += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> = kept.iter().map(|(w, _)| w.to_string()).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocab {
            counts: kept.iter().map(|(_, c)| *c).collect(),
            words,
            index,
            total_tokens: total,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Dense `rows x dim` f32 matrix of relaxed atomics.
struct Weights {
    dim: usize,
    cells: Vec<AtomicU32>,
}

impl Weights {
    fn from_fn(rows: usize, dim: usize, mut f: impl FnMut() -> f32) -> Self {
        Weights {
            dim,
            cells: (0..rows * dim).map(|_| AtomicU32::new(f().to_bits())).collect(),
        }
    }

    fn load(&self, row: usize, buf: &mut [f32]) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (b, c) in buf.iter_mut().zip(cells) {
            *b = f32::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn store(&self, row: usize, buf: &[f32]) {
        let cells = &self.cells[row * self.dim..(row + 1) * self.dim];
        for (b, c) in buf.iter().zip(cells) {
            c.store(b.to_bits(), Ordering::Relaxed);
        }
    }

    fn row_f64(&self, row: usize) -> impl Iterator<Item = f64> + '_ {
        self.cells[row * self.dim..(row + 1) * self.dim]
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)) as f64)
    }
}

struct Scratch {
    h: Vec<f32>,
    grad_h: Vec<f32>,
    row: Vec<f32>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            h: vec![0.0; dim],
            grad_h: vec![0.0; dim],
            row: vec![0.0; dim],
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// One gradient step on a single CBOW example. `targets` pairs each output
/// word with its label (1 for the center word, 0 for negatives). Returns
/// the loss before the step.
fn cbow_step(
    input: &Weights,
    output: &Weights,
    context: &[u32],
    targets: &[(u32, f32)],
    alpha: f32,
    s: &mut Scratch,
) -> f64 {
    let inv_c = 1.0 / context.len() as f32;
    s.h.fill(0.0);
    for &c in context {
        input.load(c as usize, &mut s.row);
        for (h, v) in s.h.iter_mut().zip(&s.row) {
            *h += v;
        }
    }
    for h in &mut s.h {
        *h *= inv_c;
    }
    s.grad_h.fill(0.0);
    let mut loss = 0.0f64;
    for &(t, label) in targets {
        output.load(t as usize, &mut s.row);
        let f: f32 = s.h.iter().zip(&s.row).map(|(a, b)| a * b).sum();
        let p = sigmoid(f);
        let q = if label > 0.5 { p } else { 1.0 - p };
        loss -= (q as f64).max(1e-12).ln();
        // Descent direction for this score: -(dL/df) * alpha.
        let g = (label - p) * alpha;
        for (gh, u) in s.grad_h.iter_mut().zip(&s.row) {
            *gh += g * u;
        }
        for (u, h) in s.row.iter_mut().zip(&s.h) {
            *u += g * h;
        }
        output.store(t as usize, &s.row);
    }
    for &c in context {
        input.load(c as usize, &mut s.row);
        for (v, gh) in s.row.iter_mut().zip(&s.grad_h) {
            *v += gh * inv_c;
        }
        input.store(c as usize, &s.row);
    }
    loss
}

/// Cumulative unigram^0.75 distribution for negative sampling.
struct NoiseTable(Vec<f64>);

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        NoiseTable(
            counts
                .iter()
                .map(|&c| {
                    acc += (c as f64).powf(0.75);
                    acc
                })
                .collect(),
        )
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let total = *self.0.last().expect("non-empty vocabulary");
        let x = rng.random::<f64>() * total;
        self.0.partition_point(|&c| c <= x).min(self.0.len() - 1) as u32
    }
}

/// Trains one space on `docs` (token sequences; context windows never
/// cross document boundaries).
pub fn train_embeddings<D: AsRef<[S]>, S: AsRef<str>>(
    docs: &[D],
    params: &TrainParams,
    seed: u64,
    period: &str,
) -> Result<EmbeddingSpace> {
    if params.epochs == 0 {
        return Err(EmbedError::NoTraining);
    }
    if params.dim == 0 || params.window == 0 || params.threads == 0 {
        return Err(EmbedError::InvalidParameter(
            "dim, window and threads must be positive".into(),
        ));
    }
    let vocab = Vocab::build(docs, params.min_count);
    if vocab.total_tokens < params.min_tokens {
        return Err(EmbedError::InsufficientTokens {
            period: period.to_string(),
            have: vocab.total_tokens,
            need: params.min_tokens,
        });
    }
    if vocab.len() < 2 {
        return Err(EmbedError::VocabularyTooSmall {
            size: vocab.len(),
            min_count: params.min_count,
        });
    }
    let ids: Vec<Vec<u32>> = docs
        .iter()
        .map(|d| {
            d.as_ref()
                .iter()
                .filter_map(|t| vocab.index.get(t.as_ref()).copied())
                .collect()
        })
        .collect();
    let train_words: u64 = vocab.counts.iter().sum();
    // Keep probability per word, as in the reference word2vec tool.
    let keep: Vec<f32> = vocab
        .counts
        .iter()
        .map(|&c| {
            if params.subsample <= 0.0 {
                1.0
            } else {
                let st = params.subsample * train_words as f64;
                (((c as f64 / st).sqrt() + 1.0) * st / c as f64) as f32
            }
        })
        .collect();
    let noise = NoiseTable::new(&vocab.counts);
    let dim = params.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 / dim as f32;
    let input = Weights::from_fn(vocab.len(), dim, || init_rng.random_range(-half..half));
    let output = Weights::from_fn(vocab.len(), dim, || 0.0);

    let total_work = train_words * params.epochs as u64 + 1;
    let progress = AtomicU64::new(0);
    let threads = params.threads.min(ids.len().max(1));
    let chunk = ids.len().div_ceil(threads).max(1);
    let mut epoch_loss = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        let run_chunk = |t: usize, part: &[Vec<u32>]| -> (f64, u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    ^ (t as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
            );
            let mut s = Scratch::new(dim);
            let mut ctx: Vec<u32> = Vec::with_capacity(2 * params.window);
            let mut targets: Vec<(u32, f32)> = Vec::with_capacity(params.negatives + 1);
            let mut sent: Vec<u32> = Vec::new();
            let (mut loss, mut steps) = (0.0f64, 0u64);
            for doc in part {
                let done = progress.fetch_add(doc.len() as u64, Ordering::Relaxed);
                let alpha = (params.alpha * (1.0 - done as f64 / total_work as f64)).max(params.min_alpha) as f32;
                sent.clear();
                sent.extend(
                    doc.iter()
                        .copied()
                        .filter(|&w| keep[w as usize] >= 1.0 || rng.random::<f32>() < keep[w as usize]),
                );
                for i in 0..sent.len() {
                    let b = rng.random_range(0..params.window);
                    let reach = params.window - b;
                    ctx.clear();
                    let lo = i.saturating_sub(reach);
                    let hi = (i + reach).min(sent.len() - 1);
                    ctx.extend((lo..=hi).filter(|&j| j != i).map(|j| sent[j]));
                    if ctx.is_empty() {
                        continue;
                    }
                    targets.clear();
                    targets.push((sent[i], 1.0));
                    for _ in 0..params.negatives {
                        let n = noise.sample(&mut rng);
                        if n != sent[i] {
                            targets.push((n, 0.0));
                        }
                    }
                    loss += cbow_step(&input, &output, &ctx, &targets, alpha, &mut s);
                    steps += 1;
                }
            }
            (loss, steps)
        };
        let parts: Vec<(f64, u64)> = if threads == 1 {
            vec![run_chunk(0, &ids)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = ids
                    .chunks(chunk)
                    .enumerate()
                    .map(|(t, part)| {
                        let f = &run_chunk;
                        scope.spawn(move || f(t, part))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("trainer thread")).collect()
            })
        };
        let (loss, steps): (f64, u64) = parts.iter().fold((0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1));
        epoch_loss.push(if steps > 0 { loss / steps as f64 } else { f64::NAN });
    }
    let data: Vec<f64> = (0..vocab.len())
        .flat_map(|i| input.row_f64(i).collect::<Vec<_>>())
        .collect();
    let index = vocab.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(EmbeddingSpace {
        period: period.to_string(),
        dim,
        words: vocab.words,
        index,
        data,
        meta: Some(TrainingMeta {
            params: params.clone(),
            seed,
            tokens: vocab.total_tokens,
            epoch_loss,
        }),
    })
}

/// A single CBOW training example over word indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbowExample {
    pub context: Vec<usize>,
    pub target: usize,
    pub negatives: Vec<usize>,
}

fn cbow_hidden(input: &DMatrix<f64>, ex: &CbowExample) -> Vec<f64> {
    let mut h = vec![0.0; input.ncols()];
    for &c in &ex.context {
        for (j, hj) in h.iter_mut().enumerate() {
            *hj += input[(c, j)];
        }
    }
    let n = ex.context.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

fn labeled(ex: &CbowExample) -> impl Iterator<Item = (usize, f64)> + '_ {
    std::iter::once((ex.target, 1.0)).chain(ex.negatives.iter().map(|&n| (n, 0.0)))
}

/// Negative-sampling loss of one example; rows of `input`/`output` are word
/// vectors.
pub fn cbow_loss(input: &DMatrix<f64>, output: &DMatrix<f64>, ex: &CbowExample) -> f64 {
    let h = cbow_hidden(input, ex);
    labeled(ex)
        .map(|(t, label)| {
            let f: f64 = (0..h.len()).map(|j| h[j] * output[(t, j)]).sum();
            let p = 1.0 / (1.0 + (-f).exp());
            -(if label > 0.5 { p } else { 1.0 - p }).ln()
        })
        .sum()
}

/// Analytic gradients of [`cbow_loss`] with respect to both matrices.
pub fn cbow_gradients(input: &DMatrix<f64>, output: &DMatrix<f64>, ex: &CbowExample) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = input.ncols();
    let h = cbow_hidden(input, ex);
    let mut g_in = DMatrix::zeros(input.nrows(), d);
    let mut g_out = DMatrix::zeros(output.nrows(), d);
    let mut g_h = vec![0.0; d];
    for (t, label) in labeled(ex) {
        let f: f64 = (0..d).map(|j| h[j] * output[(t, j)]).sum();
        let e = 1.0 / (1.0 + (-f).exp()) - label;
        for j in 0..d {
            g_out[(t, j)] += e * h[j];
            g_h[j] += e * output[(t, j)];
        }
    }
    let n = ex.context.len() as f64;
    for &c in &ex.context {
        for j in 0..d {
            g_in[(c, j)] += g_h[j] / n;
        }
    }
    (g_in, g_out)
}

/// Two disjoint reference word lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoleSets {
    pub name: String,
    #[serde(rename = "male")]
    pub set_a: Vec<String>,
    #[serde(rename = "female")]
    pub set_b: Vec<String>,
}

impl PoleSets {
    pub fn new(name: &str, set_a: Vec<String>, set_b: Vec<String>) -> Result<Self> {
        let p = PoleSets {
            name: name.to_string(),
            set_a,
            set_b,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.set_a.is_empty() || self.set_b.is_empty() {
            return Err(EmbedError::InvalidPoles("empty pole set".into()));
        }
        let a: BTreeSet<&String> = self.set_a.iter().collect();
        if let Some(w) = self.set_b.iter().find(|w| a.contains(w)) {
            return Err(EmbedError::InvalidPoles(format!("{w:?} is in both sets")));
        }
        if let Some(w) = self
            .set_a
            .iter()
            .chain(&self.set_b)
            .find(|w| w.to_lowercase() != **w || w.is_empty())
        {
            return Err(EmbedError::InvalidPoles(format!("{w:?} is not a lowercase token")));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let p: PoleSets = serde_json::from_str(json)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Gendered terms (11 + 11).
    pub fn terms() -> Self {
        Self::from_json(include_str!("../data/poles_terms.json")).expect("bundled poles parse")
    }

    /// Common first names (8 + 8).
    pub fn names() -> Self {
        Self::from_json(include_str!("../data/poles_names.json")).expect("bundled poles parse")
    }

    pub fn swapped(&self) -> Self {
        PoleSets {
            name: self.name.clone(),
            set_a: self.set_b.clone(),
            set_b: self.set_a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// `mean cos(target, a) - mean cos(target, b)`.
    pub difference: f64,
    /// Pole words absent from the space.
    pub missing: Vec<String>,
}

fn present<'a>(space: &EmbeddingSpace, words: &'a [String], set: &str) -> Result<(Vec<&'a String>, Vec<String>)> {
    let (inside, missing): (Vec<&String>, Vec<&String>) = words.iter().partition(|w| space.contains(w));
    if inside.len() * 2 < words.len() {
        return Err(EmbedError::PoleCoverage {
            set: set.to_string(),
            missing: missing.into_iter().cloned().collect(),
        });
    }
    Ok((inside, missing.into_iter().cloned().collect()))
}

fn mean_cos(space: &EmbeddingSpace, t: &[f64], words: &[&String]) -> f64 {
    words
        .iter()
        .map(|w| cosine(t, space.vector(w).expect("checked present")))
        .sum::<f64>()
        / words.len() as f64
}

/// Mean cosine of `target` with set a minus the same with set b; positive
/// means closer to set a.
pub fn association_difference(space: &EmbeddingSpace, target: &str, poles: &PoleSets) -> Result<Association> {
    let t = space
        .vector(target)
        .ok_or_else(|| EmbedError::OutOfVocabulary(target.to_string()))?;
    let (a, mut missing) = present(space, &poles.set_a, &format!("{}/a", poles.name))?;
    let (b, missing_b) = present(space, &poles.set_b, &format!("{}/b", poles.name))?;
    missing.extend(missing_b);
    Ok(Association {
        difference: mean_cos(space, t, &a) - mean_cos(space, t, &b),
        missing,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapOver {
    /// Resample the per-run differences.
    #[default]
    Runs,
    /// Resample pole words within each set, averaging over runs.
    PoleWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesParams {
    pub runs: usize,
    pub train: TrainParams,
    pub seed: u64,
    pub resamples: usize,
    pub bootstrap: BootstrapOver,
}

impl Default for SeriesParams {
    fn default() -> Self {
        SeriesParams {
            runs: 5,
            train: TrainParams::default(),
            seed: 0,
            resamples: 1000,
            bootstrap: BootstrapOver::Runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationPoint {
    pub period: String,
    pub target: String,
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub run_values: Vec<f64>,
    pub missing: Vec<String>,
}

/// A period label and its documents.
pub type PeriodCorpus = (String, Vec<Vec<String>>);

/// Seed for one (period, run) pair; independent of period order.
pub fn period_seed(seed: u64, period: &str, run: usize) -> u64 {
    // FNV-1a over the label keeps seeds independent of period order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in period.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }
    seed ^ h ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffles documents with a seeded RNG and deals them into `runs`
/// disjoint, near-equal splits.
pub fn split_documents(docs: &[Vec<String>], runs: usize, seed: u64) -> Vec<Vec<&Vec<String>>> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); runs];
    for (i, &d) in order.iter().enumerate() {
        out[i % runs].push(&docs[d]);
    }
    out
}

/// Association of `target` per period: one space per (period, split),
/// spaces trained in parallel, point = mean over splits.
pub fn association_series(
    periods: &[PeriodCorpus],
    target: &str,
    poles: &PoleSets,
    params: &SeriesParams,
) -> Result<Vec<AssociationPoint>> {
    if periods.len() < 2 {
        return Err(EmbedError::TooFewPeriods {
            have: periods.len(),
            need: 2,
        });
    }
    if params.runs == 0 {
        return Err(EmbedError::InvalidParameter("runs must be positive".into()));
    }
    if params.resamples < 100 {
        return Err(EmbedError::InvalidParameter("resamples must be at least 100".into()));
    }
    let mut jobs = Vec::new();
    for (p, (label, docs)) in periods.iter().enumerate() {
        let splits = split_documents(docs, params.runs, period_seed(params.seed, label, 0));
        for (r, split) in splits.into_iter().enumerate() {
            let tokens: u64 = split.iter().map(|d| d.len() as u64).sum();
            if tokens < params.train.min_tokens {
                return Err(EmbedError::InsufficientTokens {
                    period: format!("{label} split {r}"),
                    have: tokens,
                    need: params.train.min_tokens,
                });
            }
            jobs.push((p, r, split));
        }
    }
    let spaces: Vec<(usize, EmbeddingSpace)> = jobs
        .into_par_iter()
        .map(|(p, r, split)| {
            train_embeddings(
                &split,
                &params.train,
                period_seed(params.seed, &periods[p].0, r + 1),
                &periods[p].0,
            )
            .map(|s| (p, s))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(periods.len());
    for (p, (label, _)) in periods.iter().enumerate() {
        let mine: Vec<&EmbeddingSpace> = spaces.iter().filter(|(q, _)| *q == p).map(|(_, s)| s).collect();
        let assoc: Vec<Association> = mine
            .iter()
            .map(|s| association_difference(s, target, poles))
            .collect::<Result<_>>()?;
        let run_values: Vec<f64> = assoc.iter().map(|a| a.difference).collect();
        let mean = run_values.iter().sum::<f64>() / run_values.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(period_seed(params.seed, label, usize::MAX - 1));
        let mut stats: Vec<f64> = match params.bootstrap {
            BootstrapOver::Runs => (0..params.resamples)
                .map(|_| {
                    (0..run_values.len())
                        .map(|_| run_values[rng.random_range(0..run_values.len())])
                        .sum::<f64>()
                        / run_values.len() as f64
                })
                .collect(),
            BootstrapOver::PoleWords => {
                let a: Vec<&String> = poles
                    .set_a
                    .iter()
                    .filter(|w| mine.iter().all(|s| s.contains(w)))
                    .collect();
                let b: Vec<&String> = poles
                    .set_b
                    .iter()
                    .filter(|w| mine.iter().all(|s| s.contains(w)))
                    .collect();
                if a.is_empty() || b.is_empty() {
                    return Err(EmbedError::PoleCoverage {
                        set: poles.name.clone(),
                        missing: vec!["no pole word shared by every run".into()],
                    });
                }
                (0..params.resamples)
                    .map(|_| {
                        let ra: Vec<&String> = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).collect();
                        let rb: Vec<&String> = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).collect();
                        mine.iter()
                            .map(|s| {
                                let t = s.vector(target).expect("target checked");
                                mean_cos(s, t, &ra) - mean_cos(s, t, &rb)
                            })
                            .sum::<f64>()
                            / mine.len() as f64
                    })
                    .collect()
            }
        };
        stats.sort_by(f64::total_cmp);
        let mut missing: Vec<String> = assoc.iter().flat_map(|a| a.missing.iter().cloned()).collect();
        missing.sort();
        missing.dedup();
        out.push(AssociationPoint {
            period: label.clone(),
            target: target.to_string(),
            difference: mean,
            ci_low: percentile_sorted(&stats, 0.025).min(mean),
            ci_high: percentile_sorted(&stats, 0.975).max(mean),
            run_values,
            missing,
        });
    }
    Ok(out)
}

/// `year,target,diff,ci_low,ci_high`.
pub fn write_series_csv<W: Write>(out: W, points: &[AssociationPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "target", "diff", "ci_low", "ci_high"])
        .map_err(csv_io)?;
    for p in points {
        w.write_record([
            p.period.clone(),
            p.target.clone(),
            p.difference.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> EmbedError {
    EmbedError::Io(std::io::Error::other(e))
}

/// Association series with its interval band.
pub fn series_chart(points: &[AssociationPoint], title: &str) -> Chart {
    let xs: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| p.period.parse::<f64>().unwrap_or(i as f64))
        .collect();
    Chart {
        title: title.to_string(),
        x_label: "period".into(),
        y_label: "association difference".into(),
        series: vec![Series {
            name: points.first().map_or(String::new(), |p| p.target.clone()),
            points: xs.iter().zip(points).map(|(&x, p)| (x, p.difference)).collect(),
            band: xs.iter().zip(points).map(|(&x, p)| (x, p.ci_low, p.ci_high)).collect(),
            markers_only: false,
        }],
        x_ticks: xs.iter().zip(points).map(|(&x, p)| (x, p.period.clone())).collect(),
        hline: Some(0.0),
        ..Chart::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Orthogonal `d x d` map from space a to space b.
    pub w: DMatrix<f64>,
    pub shared: Vec<String>,
    /// `||A - B||_F` and `||A W - B||_F` on the normalized shared rows.
    pub residual_before: f64,
    pub residual_after: f64,
}

/// Shared rows, mean-centered, then scaled to unit length.
fn normalized_rows(space: &EmbeddingSpace, words: &[String]) -> DMatrix<f64> {
    let d = space.dim();
    let mut m = DMatrix::from_fn(words.len(), d, |i, j| space.vector(&words[i]).expect("shared word")[j]);
    let mean = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &mean;
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}

/// Orthogonal `W` minimizing `||A W - B||_F` over the shared vocabulary
/// (all common words when `shared` is `None`).
pub fn procrustes_align(a: &EmbeddingSpace, b: &EmbeddingSpace, shared: Option<&[String]>) -> Result<Alignment> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch(a.dim(), b.dim()));
    }
    let words: Vec<String> = match shared {
        Some(ws) => {
            if let Some(w) = ws.iter().find(|w| !a.contains(w) || !b.contains(w)) {
                return Err(EmbedError::OutOfVocabulary(w.clone()));
            }
            ws.to_vec()
        }
        None => a.words().iter().filter(|w| b.contains(w)).cloned().collect(),
    };
    if words.len() < 2 {
        return Err(EmbedError::TooFewShared(words.len()));
    }
    let am = normalized_rows(a, &words);
    let bm = normalized_rows(b, &words);
    let m = am.transpose() * &bm;
    let scale = m.abs().max();
    let svd = m.svd(true, true);
    if scale == 0.0 || svd.singular_values.max() <= 1e-12 * scale.max(1e-300) {
        return Err(EmbedError::Degenerate);
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let w = u * v_t;
    Ok(Alignment {
        residual_before: (&am - &bm).norm(),
        residual_after: (&am * &w - &bm).norm(),
        w,
        shared: words,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub pair: String,
    pub cosines: Vec<(String, f64)>,
    pub min: f64,
    pub mean: f64,
}

impl AnchorReport {
    /// `word,year_pair,cosine` rows.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            w.write_record(["word", "year_pair", "cosine"]).map_err(csv_io)?;
        }
        for (word, c) in &self.cosines {
            w.write_record([word.as_str(), &self.pair, &c.to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cosine between each anchor's vector in `a`, mapped by the Procrustes
/// transform, and its vector in `b`.
pub fn anchor_stability(
    a: &EmbeddingSpace,
    b: &EmbeddingSpace,
    anchors: &[String],
    alignment: Option<&Alignment>,
) -> Result<AnchorReport> {
    if anchors.is_empty() {
        return Err(EmbedError::InvalidParameter("no anchors".into()));
    }
    if let Some(w) = anchors.iter().find(|w| !a.contains(w) || !b.contains(w)) {
        return Err(EmbedError::OutOfVocabulary(w.clone()));
    }
    let owned;
    let al = match alignment {
        Some(al) => al,
        None => {
            owned = procrustes_align(a, b, None)?;
            &owned
        }
    };
    let d = a.dim();
    let cosines: Vec<(String, f64)> = anchors
        .iter()
        .map(|w| {
            let va = nalgebra::RowDVector::from_row_slice(a.vector(w).expect("checked"));
            let mapped = va * &al.w;
            let vb = b.vector(w).expect("checked");
            let mapped: Vec<f64> = (0..d).map(|j| mapped[j]).collect();
            (w.clone(), cosine(&mapped, vb))
        })
        .collect();
    let min = cosines.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let mean = cosines.iter().map(|c| c.1).sum::<f64>() / cosines.len() as f64;
    Ok(AnchorReport {
        pair: format!("{}-{}", a.period, b.period),
        cosines,
        min,
        mean,
    })
}
