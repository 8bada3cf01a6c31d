//! Balanced panel ingestion and the difference / group structures built on it.
//!
//! Periods are re-indexed to `1..=T` and treatment groups are expressed on the
//! same scale, so a unit first treated in the third observed period has group 3.
//! Never-treated units carry [`Group::Never`], written as `inf` in CSV.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Period in which a unit is first treated.
///
/// Ordering puts every finite period before `Never`, which fixes the row order
/// of comparison sets and everything stacked from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Period(u32),
    Never,
}

impl Group {
    pub fn is_never(self) -> bool {
        matches!(self, Group::Never)
    }

    pub fn period(self) -> Option<u32> {
        match self {
            Group::Period(g) => Some(g),
            Group::Never => None,
        }
    }

    /// Whether the group is still untreated in period `t`.
    pub fn untreated_at(self, t: usize) -> bool {
        match self {
            Group::Period(g) => (g as usize) > t,
            Group::Never => true,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Period(g) => write!(f, "{g}"),
            Group::Never => f.write_str("inf"),
        }
    }
}

impl Serialize for Group {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Group::Period(g) => s.serialize_u32(*g),
            Group::Never => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) => Ok(Group::Period(g)),
            Raw::Text(s) if s.eq_ignore_ascii_case("inf") => Ok(Group::Never),
            Raw::Text(s) => s
                .parse::<u32>()
                .map(Group::Period)
                .map_err(|_| serde::de::Error::custom(format!("invalid group `{s}`"))),
        }
    }
}

/// Balanced panel: `n` units observed in periods `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    outcomes: DMatrix<f64>,
    groups: Vec<Group>,
    unit_ids: Vec<String>,
    first_period: i64,
    members: BTreeMap<Group, Vec<usize>>,
}

impl PanelDataset {
    /// Builds a panel from an `n x T` outcome matrix and per-unit groups.
    pub fn new(outcomes: DMatrix<f64>, groups: Vec<Group>) -> Result<Self> {
        let unit_ids = (0..groups.len()).map(|i| i.to_string()).collect();
        Self::with_labels(outcomes, groups, unit_ids, 1)
    }

    pub fn with_labels(
        outcomes: DMatrix<f64>,
        groups: Vec<Group>,
        unit_ids: Vec<String>,
        first_period: i64,
    ) -> Result<Self> {
        let (n, periods) = outcomes.shape();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if groups.len() != n || unit_ids.len() != n {
            return Err(Error::InvalidPanel(format!(
                "{n} outcome rows but {} groups and {} unit ids",
                groups.len(),
                unit_ids.len()
            )));
        }
        if periods < 3 {
            return Err(Error::InvalidPanel(format!("need at least 3 periods, found {periods}")));
        }
        if let Some(i) = outcomes.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidPanel(format!("unit {} has a non-finite outcome", unit_ids[i])));
        }
        let mut members: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
        for (i, &g) in groups.iter().enumerate() {
            if let Group::Period(p) = g {
                if p == 1 {
                    let count = groups.iter().filter(|&&x| x == Group::Period(1)).count();
                    return Err(Error::FirstPeriodTreated { unit: unit_ids[i].clone(), count });
                }
                if p < 1 || p as usize > periods {
                    return Err(Error::GroupOutOfRange {
                        unit: unit_ids[i].clone(),
                        group: p as i64,
                        max_period: periods,
                    });
                }
            }
            members.entry(g).or_default().push(i);
        }
        Ok(Self { outcomes, groups, unit_ids, first_period, members })
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    /// Number of periods `T`.
    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Outcome `Y_it` for unit `i` (0-based) in period `t` (1-based).
    #[inline]
    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.outcomes[(i, t - 1)]
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, i: usize) -> Group {
        self.groups[i]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Label of period 1 in the source data.
    pub fn first_period(&self) -> i64 {
        self.first_period
    }

    /// Distinct groups present, ascending with `Never` last.
    pub fn groups_present(&self) -> Vec<Group> {
        self.members.keys().copied().collect()
    }

    /// Unit indices belonging to `g` (empty when the group is absent).
    pub fn members(&self, g: Group) -> &[usize] {
        self.members.get(&g).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Periods in which no unit is still untreated.
    pub fn periods_without_untreated(&self) -> Vec<usize> {
        (1..=self.n_periods())
            .filter(|&t| !self.members.keys().any(|g| g.untreated_at(t)))
            .collect()
    }

    /// Copy with every outcome transformed by `f(i, t, y)`.
    pub fn map_outcomes(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_units() {
            for t in 1..=self.n_periods() {
                out.outcomes[(i, t - 1)] = f(i, t, self.y(i, t));
            }
        }
        out
    }
}

/// First differences `ΔY_it = Y_it - Y_i,t-1` for `t = 2..=T`.
#[derive(Debug, Clone)]
pub struct DiffPanel<'a> {
    diffs: DMatrix<f64>,
    source: &'a PanelDataset,
}

impl<'a> DiffPanel<'a> {
    /// `ΔY_it` with `t` in `2..=T`.
    #[inline]
    pub fn diff(&self, i: usize, t: usize) -> f64 {
        self.diffs[(i, t - 2)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.diffs
    }

    pub fn source(&self) -> &'a PanelDataset {
        self.source
    }
}

pub fn first_differences(data: &PanelDataset) -> DiffPanel<'_> {
    let (n, periods) = data.outcomes.shape();
    let diffs = DMatrix::from_fn(n, periods - 1, |i, c| data.outcomes[(i, c + 1)] - data.outcomes[(i, c)]);
    DiffPanel { diffs, source: data }
}

/// Empirical group frequencies `p̂_g`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupShares {
    probs: BTreeMap<Group, f64>,
}

impl GroupShares {
    /// Share of `g`; zero when the group is absent.
    pub fn get(&self, g: Group) -> f64 {
        self.probs.get(&g).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, f64)> + '_ {
        self.probs.iter().map(|(g, p)| (*g, *p))
    }
}

pub fn group_shares(data: &PanelDataset) -> GroupShares {
    let n = data.n_units() as f64;
    let probs = data.members.iter().map(|(g, m)| (*g, m.len() as f64 / n)).collect();
    GroupShares { probs }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Discard units treated in the first period instead of failing.
    pub drop_first_period: bool,
}

/// Result of [`load_panel`]: the dataset plus ingestion bookkeeping.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub data: PanelDataset,
    pub dropped_first_period: usize,
}

#[derive(Debug, Deserialize)]
struct Record {
    unit: String,
    period: String,
    outcome: String,
    group: String,
}

fn parse_group(raw: &str, line: u64) -> Result<Option<i64>> {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    raw.parse::<i64>()
        .map(Some)
        .map_err(|_| Error::Malformed { line, message: format!("group `{raw}` is neither an integer nor `inf`") })
}

/// Reads a long-format CSV with header `unit,period,outcome,group`.
pub fn load_panel<R: Read>(source: R, opts: &LoadOptions) -> Result<LoadedPanel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed { line: 1, message: e.to_string() })?
        .clone();
    for col in ["unit", "period", "outcome", "group"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Malformed { line: 1, message: format!("missing column `{col}`") });
        }
    }

    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_groups: Vec<Option<i64>> = Vec::new();
    let mut cells: Vec<(usize, i64, f64, u64)> = Vec::new();

    for row in reader.records() {
        let raw = row.map_err(|e| Error::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = raw.position().map(|p| p.line()).unwrap_or(0);
        let rec: Record = raw
            .deserialize(Some(&headers))
            .map_err(|e| Error::Malformed { line, message: e.to_string() })?;
        let period = rec.period.parse::<i64>().map_err(|_| Error::Malformed {
            line,
            message: format!("period `{}` is not an integer", rec.period),
        })?;
        let outcome = rec.outcome.parse::<f64>().map_err(|_| Error::Malformed {
            line,
            message: format!("outcome `{}` is not a number", rec.outcome),
        })?;
        if !outcome.is_finite() {
            return Err(Error::Malformed { line, message: "outcome is not finite".into() });
        }
        let group = parse_group(&rec.group, line)?;
        let idx = *unit_index.entry(rec.unit.clone()).or_insert_with(|| {
            unit_ids.push(rec.unit.clone());
            unit_groups.push(group);
            unit_ids.len() - 1
        });
        if unit_groups[idx] != group {
            return Err(Error::Malformed { line, message: format!("unit {} changes group over time", rec.unit) });
        }
        cells.push((idx, period, outcome, line));
    }
    if cells.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let first = cells.iter().map(|c| c.1).min().unwrap();
    let last = cells.iter().map(|c| c.1).max().unwrap();
    let periods = (last - first + 1) as usize;
    let n = unit_ids.len();
    let mut seen = vec![false; n * periods];
    let mut outcomes = DMatrix::<f64>::zeros(n, periods);
    for &(i, p, y, line) in &cells {
        let c = (p - first) as usize;
        if seen[i * periods + c] {
            return Err(Error::Malformed { line, message: format!("duplicate row for unit {} period {p}", unit_ids[i]) });
        }
        seen[i * periods + c] = true;
        outcomes[(i, c)] = y;
    }
    if let Some(pos) = seen.iter().position(|s| !s) {
        return Err(Error::MissingCell { unit: unit_ids[pos / periods].clone(), period: first + (pos % periods) as i64 });
    }

    // Map calendar groups onto the 1..=T period index.
    let mut groups = Vec::with_capacity(n);
    let mut keep = Vec::with_capacity(n);
    let mut dropped = 0usize;
    let first_treated: Vec<usize> = (0..n).filter(|&i| unit_groups[i] == Some(first)).collect();
    if !first_treated.is_empty() && !opts.drop_first_period {
        return Err(Error::FirstPeriodTreated { unit: unit_ids[first_treated[0]].clone(), count: first_treated.len() });
    }
    for i in 0..n {
        match unit_groups[i] {
            None => groups.push(Group::Never),
            Some(g) if g == first => {
                dropped += 1;
                continue;
            }
            Some(g) if g < first || g > last => {
                return Err(Error::GroupOutOfRange { unit: unit_ids[i].clone(), group: g, max_period: periods });
            }
            Some(g) => groups.push(Group::Period((g - first + 1) as u32)),
        }
        keep.push(i);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} unit(s) treated in the first period");
    }
    if keep.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outcomes = outcomes.select_rows(keep.iter());
    let unit_ids = keep.iter().map(|&i| unit_ids[i].clone()).collect();
    let data = PanelDataset::with_labels(outcomes, groups, unit_ids, first)?;
    for t in data.periods_without_untreated() {
        log::warn!("no untreated group remains in period {}; trim periods after universal treatment", t as i64 + first - 1);
    }
    Ok(LoadedPanel { data, dropped_first_period: dropped })
}

/// Writes the panel back out in the long CSV layout read by [`load_panel`].
pub fn write_panel<W: Write>(data: &PanelDataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["unit", "period", "outcome", "group"]).map_err(io)?;
    for i in 0..data.n_units() {
        let group = match data.group(i) {
            Group::Never => "inf".to_string(),
            Group::Period(g) => (g as i64 + data.first_period - 1).to_string(),
        };
        for t in 1..=data.n_periods() {
            let period = (t as i64 + data.first_period - 1).to_string();
            w.write_record([data.unit_ids[i].as_str(), &period, &data.y(i, t).to_string(), &group])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
