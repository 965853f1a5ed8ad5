//! State-by-month panels around dated treatments and the staggered
//! event-study regression
//!
//! `y_ij = a + alpha_i + lambda_j + sum_{k<0} pi_k D_ij^k + sum_{k>0} phi_k D_ij^k + e_ij`
//!
//! with `D_ij^k = 1[j - t_i = k]` and `k = 0` (the treatment month) as the
//! omitted reference period.
//!
//! Every state in the panel is treated and every row lies inside its
//! state's window, so `k = j - t_i` is a linear function of the two fixed
//! effects. The event-time indicators therefore carry one exact collinearity
//! beyond `k = 0`; [`build_design`] resolves it by dropping a second
//! reference period (the lowest pre-period offset present, or the highest
//! post-period offset when there is no pre-period) and reports it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Granularity, StateCode, TimeBucket};
use crate::estimation::Target;
use crate::plot::{Chart, Series};
use crate::variables::Occurrence;

#[derive(Debug, Error)]
pub enum EventStudyError {
    #[error("treatment table line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("state {0} listed twice in treatment table")]
    DuplicateState(StateCode),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no treated state has occurrences inside its window")]
    NoTreatedStates,
    #[error("every state-month cell is below min_n = {min_n} ({dropped} cells dropped)")]
    EmptyPanel { min_n: u64, dropped: usize },
    #[error("design needs at least one row with k != 0")]
    NoEventRows,
    #[error("design is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("{rows} rows for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("target {0} is outside the conditioning set")]
    TargetOutsideConditioning(String),
    #[error("invalid window {pre}..{post}")]
    InvalidWindow { pre: i64, post: i64 },
}

pub type Result<T, E = EventStudyError> = std::result::Result<T, E>;

/// State -> treatment month.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentTable(pub BTreeMap<StateCode, TimeBucket>);

impl TreatmentTable {
    /// Reads `state,year_month` rows. Lines starting with `#` and the header
    /// row are skipped.
    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.eq_ignore_ascii_case("state,year_month") {
                continue;
            }
            let bad = |reason: String| EventStudyError::Table { line: line_no, reason };
            let (s, m) = t
                .split_once(',')
                .ok_or_else(|| bad("expected state,year_month".into()))?;
            let state = StateCode::new(s).map_err(|e| bad(e.to_string()))?;
            let month = TimeBucket::parse(m.trim()).map_err(|e| bad(e.to_string()))?;
            if month.granularity != Granularity::Month {
                return Err(bad(format!("{m} is not a calendar month")));
            }
            if map.insert(state, month).is_some() {
                return Err(EventStudyError::DuplicateState(state));
            }
        }
        Ok(TreatmentTable(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// The shipped table of state marriage-equality dates.
    pub fn marriage_equality() -> Self {
        Self::from_reader(include_str!("../data/mea_dates.csv").as_bytes()).expect("bundled table parses")
    }

    /// Keeps states whose treatment month lies in `[first, last]`.
    pub fn within(&self, first: TimeBucket, last: TimeBucket) -> Self {
        TreatmentTable(
            self.0
                .iter()
                .filter(|(_, m)| m.start() >= first.start() && m.start() <= last.start())
                .map(|(s, m)| (*s, *m))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, state: StateCode) -> Option<TimeBucket> {
        self.0.get(&state).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub state: StateCode,
    pub month: TimeBucket,
    /// Months since treatment.
    pub k: i64,
    pub y: f64,
    pub n: u64,
}

/// Which uses of the variable form the denominator of `y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// partner, spouse, wife and husband only.
    #[default]
    Spousal,
    AllVariants,
}

pub const SPOUSAL_TERMS: [&str; 4] = ["partner", "spouse", "wife", "husband"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelOptions {
    pub variable: String,
    /// Earliest offset kept (negative).
    pub window_pre: i64,
    /// Latest offset kept.
    pub window_post: i64,
    pub min_n: u64,
    pub conditioning: Conditioning,
}

impl Default for PanelOptions {
    fn default() -> Self {
        PanelOptions {
            variable: "SigOther".into(),
            window_pre: -12,
            window_post: 12,
            min_n: 20,
            conditioning: Conditioning::Spousal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub rows: Vec<PanelRow>,
    /// In-window cells dropped for falling below `min_n`.
    pub dropped_cells: usize,
}

/// Months between two monthly buckets.
fn month_offset(a: TimeBucket, b: TimeBucket) -> i64 {
    a.coarsen(Granularity::Month).index - b.coarsen(Granularity::Month).index
}

/// Aggregates occurrences into treated state-month cells within the window.
/// Rows are ordered by state, then month.
pub fn build_panel(
    occurrences: &[Occurrence],
    treatments: &TreatmentTable,
    target: &Target,
    opts: &PanelOptions,
) -> Result<Panel> {
    if opts.window_pre > 0 || opts.window_post < 0 {
        return Err(EventStudyError::InvalidWindow {
            pre: opts.window_pre,
            post: opts.window_post,
        });
    }
    let spousal: BTreeSet<&str> = SPOUSAL_TERMS.into_iter().collect();
    if opts.conditioning == Conditioning::Spousal {
        let inside = match target {
            Target::Variant(v) => spousal.contains(v.as_str()),
            Target::Variants(vs) => vs.iter().all(|v| spousal.contains(v.as_str())),
            Target::Gender(_) => true,
        };
        if !inside {
            return Err(EventStudyError::TargetOutsideConditioning(target.to_string()));
        }
    }
    let mut by_state: BTreeMap<StateCode, Vec<&Occurrence>> = BTreeMap::new();
    for o in occurrences {
        if o.variable != opts.variable {
            continue;
        }
        if opts.conditioning == Conditioning::Spousal && !spousal.contains(o.variant.as_str()) {
            continue;
        }
        if let Some(s) = o.state.filter(|s| treatments.0.contains_key(s)) {
            by_state.entry(s).or_default().push(o);
        }
    }
    let per_state: Vec<(Vec<PanelRow>, usize)> = by_state
        .into_par_iter()
        .map(|(state, occ)| {
            let t = treatments.0[&state];
            let mut cells: BTreeMap<TimeBucket, (u64, u64)> = BTreeMap::new();
            for o in occ {
                let month = o.month.coarsen(Granularity::Month);
                let k = month_offset(month, t);
                if k < opts.window_pre || k > opts.window_post {
                    continue;
                }
                let c = cells.entry(month).or_insert((0, 0));
                c.1 += 1;
                if target.matches(o) {
                    c.0 += 1;
                }
            }
            let mut dropped = 0;
            let mut rows = Vec::new();
            for (month, (k, n)) in cells {
                if n >= opts.min_n.max(1) {
                    rows.push(PanelRow {
                        state,
                        month,
                        k: month_offset(month, t),
                        y: k as f64 / n as f64,
                        n,
                    });
                } else {
                    dropped += 1;
                }
            }
            (rows, dropped)
        })
        .collect();
    if per_state.is_empty() {
        return Err(EventStudyError::NoTreatedStates);
    }
    let dropped_cells = per_state.iter().map(|p| p.1).sum();
    let rows: Vec<PanelRow> = per_state.into_iter().flat_map(|p| p.0).collect();
    if rows.is_empty() {
        return Err(EventStudyError::EmptyPanel {
            min_n: opts.min_n,
            dropped: dropped_cells,
        });
    }
    Ok(Panel { rows, dropped_cells })
}

/// What a design column encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    Intercept,
    State(StateCode),
    Month(TimeBucket),
    /// Event-time indicator for offset `k`.
    Event(i64),
}

impl Column {
    pub fn label(&self) -> String {
        match self {
            Column::Intercept => "intercept".into(),
            Column::State(s) => format!("state:{s}"),
            Column::Month(m) => format!("month:{m}"),
            Column::Event(k) if *k < 0 => format!("pre:{k}"),
            Column::Event(k) => format!("post:{k}"),
        }
    }

    fn value(&self, row: &PanelRow) -> f64 {
        let hit = match self {
            Column::Intercept => true,
            Column::State(s) => row.state == *s,
            Column::Month(m) => row.month == *m,
            Column::Event(k) => row.k == *k,
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

/// Columns implied by the panel before any rank check: intercept, state
/// dummies without the first state, month dummies without the earliest
/// month, and one indicator per nonzero offset present.
pub fn design_columns(panel: &[PanelRow]) -> Vec<Column> {
    let states: BTreeSet<StateCode> = panel.iter().map(|r| r.state).collect();
    let months: BTreeSet<TimeBucket> = panel.iter().map(|r| r.month).collect();
    let ks: BTreeSet<i64> = panel.iter().map(|r| r.k).filter(|&k| k != 0).collect();
    std::iter::once(Column::Intercept)
        .chain(states.into_iter().skip(1).map(Column::State))
        .chain(months.into_iter().skip(1).map(Column::Month))
        .chain(ks.into_iter().map(Column::Event))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Cell sizes, aligned with rows.
    pub n: Vec<u64>,
    /// Cluster (state) of each row.
    pub states: Vec<StateCode>,
    pub columns: Vec<Column>,
    /// Event offset dropped as a second reference, if any.
    pub extra_reference: Option<i64>,
    pub warnings: Vec<String>,
}

impl Design {
    pub fn labels(&self) -> Vec<String> {
        self.columns.iter().map(Column::label).collect()
    }
}

/// Indices of columns that lie in the span of earlier columns.
fn dependent_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        // Two passes of modified Gram-Schmidt keep the residual accurate.
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0.max(1.0) {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

fn matrix(panel: &[PanelRow], columns: &[Column]) -> DMatrix<f64> {
    DMatrix::from_fn(panel.len(), columns.len(), |i, j| columns[j].value(&panel[i]))
}

/// Design matrix, response and labels for the event-study regression.
pub fn build_design(panel: &[PanelRow]) -> Result<Design> {
    if !panel.iter().any(|r| r.k != 0) {
        return Err(EventStudyError::NoEventRows);
    }
    let mut warnings = Vec::new();
    let mut columns = design_columns(panel);
    let has_pre = panel.iter().any(|r| r.k < 0);
    if !has_pre {
        warnings.push("panel has no pre-period rows; no pre-treatment coefficients".to_string());
    }
    if !panel.iter().any(|r| r.k > 0) {
        warnings.push("panel has no post-period rows; no post-treatment coefficients".to_string());
    }
    let mut x = matrix(panel, &columns);
    let mut extra_reference = None;
    let dependent = dependent_columns(&x);
    if !dependent.is_empty() {
        let event_ks: Vec<i64> = columns
            .iter()
            .filter_map(|c| match c {
                Column::Event(k) => Some(*k),
                _ => None,
            })
            .collect();
        let candidate = if has_pre { event_ks.first() } else { event_ks.last() };
        let resolved = match (dependent.len(), candidate) {
            (1, Some(&k)) => {
                let reduced: Vec<Column> = columns.iter().copied().filter(|c| *c != Column::Event(k)).collect();
                let rx = matrix(panel, &reduced);
                dependent_columns(&rx).is_empty().then_some((k, reduced, rx))
            }
            _ => None,
        };
        match resolved {
            Some((k, reduced, rx)) => {
                warnings.push(format!(
                    "event time is collinear with the fixed effects; offset {k} dropped as a second reference"
                ));
                extra_reference = Some(k);
                columns = reduced;
                x = rx;
            }
            None => {
                return Err(EventStudyError::RankDeficient(
                    dependent.iter().map(|&j| columns[j].label()).collect(),
                ))
            }
        }
    }
    Ok(Design {
        y: DVector::from_iterator(panel.len(), panel.iter().map(|r| r.y)),
        n: panel.iter().map(|r| r.n).collect(),
        states: panel.iter().map(|r| r.state).collect(),
        x,
        columns,
        extra_reference,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardErrors {
    /// `sigma^2 (X'X)^-1`.
    #[default]
    Classical,
    /// Sandwich estimator clustered by state.
    ClusteredByState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Weight each cell by its occurrence count.
    pub weighted: bool,
    pub standard_errors: StandardErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub coefficients: Vec<Coefficient>,
    pub columns: Vec<Column>,
    /// Residual variance `RSS / (rows - columns)`.
    pub sigma2: f64,
    pub n_rows: usize,
    pub extra_reference: Option<i64>,
    pub warnings: Vec<String>,
}

impl EventStudyResult {
    pub fn get(&self, label: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.label == label)
    }

    fn events(&self, pred: impl Fn(i64) -> bool) -> Vec<(i64, &Coefficient)> {
        self.columns
            .iter()
            .zip(&self.coefficients)
            .filter_map(|(col, c)| match col {
                Column::Event(k) if pred(*k) => Some((*k, c)),
                _ => None,
            })
            .collect()
    }

    /// Pre-treatment coefficients `pi_k`, ascending in `k`.
    pub fn pre(&self) -> Vec<(i64, &Coefficient)> {
        self.events(|k| k < 0)
    }

    /// Post-treatment coefficients `phi_k`, ascending in `k`.
    pub fn post(&self) -> Vec<(i64, &Coefficient)> {
        self.events(|k| k > 0)
    }

    /// `coef,estimate,se` rows in column order.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["coef", "estimate", "se"])?;
        for c in &self.coefficients {
            w.write_record([c.label.as_str(), &fmt_num(c.estimate), &fmt_num(c.se)])?;
        }
        w.flush()
    }

    /// Event-time estimates with a one-standard-error band; reference
    /// periods are drawn at zero.
    pub fn chart(&self, title: &str) -> Chart {
        let mut pts: Vec<(f64, f64, f64)> = self
            .pre()
            .into_iter()
            .chain(self.post())
            .map(|(k, c)| (k as f64, c.estimate, c.se))
            .collect();
        pts.push((0.0, 0.0, 0.0));
        if let Some(k) = self.extra_reference {
            pts.push((k as f64, 0.0, 0.0));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Chart {
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
        }
    }
}

/// Shortest round-trip representation; stable across runs.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Ordinary least squares by Householder QR.
pub fn fit_event_study(design: &Design, opts: &FitOptions) -> Result<EventStudyResult> {
    let (rows, cols) = design.x.shape();
    if rows < cols {
        return Err(EventStudyError::TooFewRows { rows, cols });
    }
    let (x, y) = if opts.weighted {
        let w: Vec<f64> = design.n.iter().map(|&n| (n as f64).sqrt()).collect();
        let mut x = design.x.clone();
        let mut y = design.y.clone();
        for i in 0..rows {
            x.row_mut(i).scale_mut(w[i]);
            y[i] *= w[i];
        }
        (x, y)
    } else {
        (design.x.clone(), design.y.clone())
    };
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..cols).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let weak: Vec<String> = (0..cols)
        .filter(|&i| r[(i, i)].abs() <= 1e-10 * scale.max(1.0))
        .map(|i| design.columns[i].label())
        .collect();
    if !weak.is_empty() {
        return Err(EventStudyError::RankDeficient(weak));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r.solve_upper_triangular(&qty).expect("nonzero diagonal checked above");
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(cols, cols))
        .expect("nonzero diagonal checked above");
    // (X'X)^-1 = R^-1 R^-T
    let xtx_inv = &r_inv * r_inv.transpose();
    let resid = &y - &x * &beta;
    let dof = rows - cols;
    let sigma2 = if dof > 0 {
        resid.norm_squared() / dof as f64
    } else {
        f64::NAN
    };
    let var: Vec<f64> = match opts.standard_errors {
        StandardErrors::Classical => (0..cols).map(|i| sigma2 * xtx_inv[(i, i)]).collect(),
        StandardErrors::ClusteredByState => {
            let mut meat = DMatrix::<f64>::zeros(cols, cols);
            let mut groups: BTreeMap<StateCode, DVector<f64>> = BTreeMap::new();
            for i in 0..rows {
                let score = x.row(i).transpose() * resid[i];
                *groups.entry(design.states[i]).or_insert_with(|| DVector::zeros(cols)) += score;
            }
            for s in groups.values() {
                meat += s * s.transpose();
            }
            let g = groups.len() as f64;
            let c = if g > 1.0 && dof > 0 {
                g / (g - 1.0) * (rows as f64 - 1.0) / dof as f64
            } else {
                f64::NAN
            };
            let v = &xtx_inv * meat * &xtx_inv;
            (0..cols).map(|i| c * v[(i, i)]).collect()
        }
    };
    let coefficients = design
        .columns
        .iter()
        .enumerate()
        .map(|(i, col)| Coefficient {
            label: col.label(),
            estimate: beta[i],
            se: var[i].max(0.0).sqrt(),
        })
        .collect();
    Ok(EventStudyResult {
        coefficients,
        columns: design.columns.clone(),
        sigma2,
        n_rows: rows,
        extra_reference: design.extra_reference,
        warnings: design.warnings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variables::{GenderClass, Perspective};
    use std::sync::Arc;

    fn m(s: &str) -> TimeBucket {
        TimeBucket::parse(s).unwrap()
    }

    fn st(s: &str) -> StateCode {
        StateCode::new(s).unwrap()
    }

    fn occ(state: &str, month: TimeBucket, variant: &str) -> Occurrence {
        Occurrence {
            message_id: "x".into(),
            variable: "SigOther".into(),
            variant: variant.into(),
            gender: GenderClass::Neutral,
            precursor: "my".into(),
            perspective: Perspective::First,
            month,
            labels: Default::default(),
            community: None,
            state: Some(st(state)),
            demographics: Arc::new(Default::default()),
        }
    }

    fn table(rows: &[(&str, &str)]) -> TreatmentTable {
        TreatmentTable(rows.iter().map(|(s, d)| (st(s), m(d))).collect())
    }

    #[test]
    fn bundled_table_parses() {
        let t = TreatmentTable::marriage_equality();
        assert_eq!(t.get(st("MA")), Some(m("2004-05")));
        assert!(t.len() >= 30);
        let recent = t.within(m("2012-01"), m("2015-06"));
        assert!(recent.get(st("MA")).is_none());
    }

    #[test]
    fn table_errors() {
        assert!(matches!(
            TreatmentTable::from_reader("MA,2004-05\nMA,2005-01\n".as_bytes()),
            Err(EventStudyError::DuplicateState(_))
        ));
        assert!(matches!(
            TreatmentTable::from_reader("# c\nstate,year_month\nZZ,2004-05\n".as_bytes()),
            Err(EventStudyError::Table { line: 3, .. })
        ));
    }

    #[test]
    fn one_state_full_window() {
        let t = table(&[("MA", "2010-06")]);
        let mut o = Vec::new();
        let mut month = m("2009-06");
        for _ in 0..26 {
            for i in 0..25 {
                o.push(occ("MA", month, if i % 5 == 0 { "partner" } else { "wife" }));
            }
            month = month.next();
        }
        // Outside any window or conditioning set.
        o.push(occ("NY", m("2010-06"), "partner"));
        o.push(occ("MA", m("2010-06"), "girlfriend"));
        let p = build_panel(&o, &t, &Target::Variant("partner".into()), &PanelOptions::default()).unwrap();
        assert_eq!(p.rows.len(), 25);
        let ks: Vec<i64> = p.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, (-12..=12).collect::<Vec<_>>());
        assert!(p.rows.iter().all(|r| r.n == 25 && (r.y - 0.2).abs() < 1e-15));
        // The 26th month is k = +13.
        assert!(p.rows.iter().all(|r| r.month != m("2011-07")));
    }

    #[test]
    fn small_cells_dropped_and_counted() {
        let t = table(&[("MA", "2010-06")]);
        let o: Vec<_> = (0..5).map(|_| occ("MA", m("2010-07"), "partner")).collect();
        let err = build_panel(&o, &t, &Target::Variant("partner".into()), &PanelOptions::default());
        assert!(matches!(err, Err(EventStudyError::EmptyPanel { dropped: 1, .. })));
        let none = build_panel(
            &o,
            &table(&[("NY", "2010-06")]),
            &Target::Variant("partner".into()),
            &PanelOptions::default(),
        );
        assert!(matches!(none, Err(EventStudyError::NoTreatedStates)));
        let outside = build_panel(&o, &t, &Target::Variant("girlfriend".into()), &PanelOptions::default());
        assert!(matches!(outside, Err(EventStudyError::TargetOutsideConditioning(_))));
    }

    fn row(state: &str, month: &str, treat: &str, y: f64) -> PanelRow {
        PanelRow {
            state: st(state),
            month: m(month),
            k: month_offset(m(month), m(treat)),
            y,
            n: 50,
        }
    }

    #[test]
    fn column_construction_rule() {
        // Two states, same treatment month, 25 months each.
        let mut panel = Vec::new();
        for s in ["MA", "CT"] {
            let mut month = m("2009-06");
            for _ in 0..25 {
                panel.push(row(s, &month.label(), "2010-06", 0.1));
                month = month.next();
            }
        }
        let cols = design_columns(&panel);
        assert_eq!(cols.len(), 50);
        assert_eq!(cols[0], Column::Intercept);
        assert_eq!(cols[1], Column::State(st("MA")));
        assert!(!cols.contains(&Column::Event(0)));
        // With identical dates, event time duplicates the month dummies.
        assert!(matches!(build_design(&panel), Err(EventStudyError::RankDeficient(_))));
    }

    #[test]
    fn staggered_design_drops_one_extra_reference() {
        let mut panel = Vec::new();
        for (s, t) in [("MA", "2010-06"), ("CT", "2010-09"), ("VT", "2011-01")] {
            for k in -12..=12 {
                let month = TimeBucket {
                    index: m(t).index + k,
                    ..m(t)
                };
                panel.push(row(s, &month.label(), t, 0.1));
            }
        }
        let d = build_design(&panel).unwrap();
        assert_eq!(d.extra_reference, Some(-12));
        assert!(!d.columns.contains(&Column::Event(-12)));
        assert_eq!(d.columns.len(), design_columns(&panel).len() - 1);
    }

    #[test]
    fn no_pre_period_warns() {
        let mut panel = Vec::new();
        for (s, t) in [("MA", "2010-06"), ("CT", "2010-09"), ("VT", "2011-01")] {
            for k in 0..=6 {
                let month = TimeBucket {
                    index: m(t).index + k,
                    ..m(t)
                };
                panel.push(row(s, &month.label(), t, 0.1 + 0.01 * k as f64));
            }
        }
        let d = build_design(&panel).unwrap();
        assert!(d.columns.iter().all(|c| !matches!(c, Column::Event(k) if *k < 0)));
        assert!(d.warnings.iter().any(|w| w.contains("no pre-period")));
        assert_eq!(d.extra_reference, Some(6));
    }

    #[test]
    fn single_state_has_no_state_dummies() {
        let panel: Vec<_> = (-2..=2)
            .map(|k| {
                let month = TimeBucket {
                    index: m("2010-06").index + k,
                    ..m("2010-06")
                };
                row("MA", &month.label(), "2010-06", 0.1)
            })
            .collect();
        let cols = design_columns(&panel);
        assert!(cols.iter().all(|c| !matches!(c, Column::State(_))));
    }

    #[test]
    fn exact_fit_recovers_single_coefficient() {
        let mut panel = Vec::new();
        for (s, t) in [
            ("MA", "2010-06"),
            ("CT", "2010-09"),
            ("VT", "2011-01"),
            ("NY", "2011-07"),
        ] {
            for k in -3..=3 {
                let month = TimeBucket {
                    index: m(t).index + k,
                    ..m(t)
                };
                panel.push(row(s, &month.label(), t, if k == 2 { 0.7 } else { 0.0 }));
            }
        }
        let d = build_design(&panel).unwrap();
        let f = fit_event_study(&d, &FitOptions::default()).unwrap();
        for c in &f.coefficients {
            let want = if c.label == "post:2" { 0.7 } else { 0.0 };
            assert!((c.estimate - want).abs() < 1e-10, "{} = {}", c.label, c.estimate);
        }
    }

    #[test]
    fn too_few_rows() {
        let d = Design {
            x: DMatrix::identity(2, 3),
            y: DVector::zeros(2),
            n: vec![1, 1],
            states: vec![st("MA"), st("MA")],
            columns: vec![Column::Intercept, Column::Event(1), Column::Event(2)],
            extra_reference: None,
            warnings: vec![],
        };
        assert!(matches!(
            fit_event_study(&d, &FitOptions::default()),
            Err(EventStudyError::TooFewRows { rows: 2, cols: 3 })
        ));
    }
}
