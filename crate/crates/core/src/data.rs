//! Possibly censored and truncated survival observations with covariates.

use alloc::collections::BTreeMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prelude::*;

/// An event time known exactly or only up to a window `(lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventTime {
    Exact(f64),
    /// Event after the given time: `(t, ∞)`.
    RightCensored(f64),
    /// Event at or before the given time: `(0, t]`.
    LeftCensored(f64),
    Interval(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CensoringKind {
    Exact,
    Right,
    Left,
    Interval,
}

fn positive(t: f64) -> Result<f64> {
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err(Error::InvalidTime(t))
    }
}

impl EventTime {
    pub fn exact(t: f64) -> Result<Self> {
        Ok(Self::Exact(positive(t)?))
    }

    pub fn right(t: f64) -> Result<Self> {
        Ok(Self::RightCensored(positive(t)?))
    }

    pub fn left(t: f64) -> Result<Self> {
        Ok(Self::LeftCensored(positive(t)?))
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        let lower = positive(lower)?;
        let upper = positive(upper)?;
        if lower >= upper {
            return Err(Error::MalformedRecord {
                row: None,
                reason: format!("interval lower bound {lower} is not below upper bound {upper}"),
            });
        }
        Ok(Self::Interval(lower, upper))
    }

    pub fn kind(&self) -> CensoringKind {
        match self {
            Self::Exact(_) => CensoringKind::Exact,
            Self::RightCensored(_) => CensoringKind::Right,
            Self::LeftCensored(_) => CensoringKind::Left,
            Self::Interval(..) => CensoringKind::Interval,
        }
    }

    /// The window `(lower, upper]`; exact times give the degenerate `(t, t)`.
    pub fn window(&self) -> (f64, f64) {
        match *self {
            Self::Exact(t) => (t, t),
            Self::RightCensored(t) => (t, f64::INFINITY),
            Self::LeftCensored(t) => (0.0, t),
            Self::Interval(a, b) => (a, b),
        }
    }

    /// Finite, strictly positive window bounds.
    pub fn finite_bounds(&self) -> impl Iterator<Item = f64> {
        let (lo, hi) = self.window();
        [lo, hi].into_iter().filter(|t| t.is_finite() && *t > 0.0)
    }

    /// Inverse of [`parse_interval2`]; `None` marks a missing entry.
    pub fn encode_interval2(&self) -> (Option<f64>, Option<f64>) {
        match *self {
            Self::Exact(t) => (Some(t), Some(t)),
            Self::RightCensored(t) => (Some(t), None),
            Self::LeftCensored(t) => (None, Some(t)),
            Self::Interval(a, b) => (Some(a), Some(b)),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Exact(t) | Self::RightCensored(t) | Self::LeftCensored(t) => {
                positive(t).map(|_| ())
            }
            Self::Interval(a, b) => Self::interval(a, b).map(|_| ()),
        }
    }
}

/// Two-column encoding: identical entries are exact, a missing (or infinite)
/// upper entry is right censoring, a missing (or zero) lower entry is left
/// censoring.
pub fn parse_interval2(time: Option<f64>, time2: Option<f64>) -> Result<EventTime> {
    let malformed = |reason: String| Error::MalformedRecord { row: None, reason };
    let time2 = time2.filter(|t| *t != f64::INFINITY);
    let time = time.filter(|t| *t != 0.0);
    match (time, time2) {
        (None, None) => Err(malformed("both time entries are missing".into())),
        (Some(a), Some(b)) if a == b => EventTime::exact(a),
        (Some(a), None) => EventTime::right(a),
        (None, Some(b)) => EventTime::left(b),
        (Some(a), Some(b)) => {
            if a > b {
                Err(malformed(format!("time {a} exceeds time2 {b}")))
            } else {
                EventTime::interval(a, b)
            }
        }
    }
}

/// Status-coded encoding: 0 right, 1 exact, 2 left, 3 interval `(t, t2]`.
pub fn parse_status_coded(t: f64, t2: Option<f64>, code: i64) -> Result<EventTime> {
    match code {
        0 => EventTime::right(t),
        1 => EventTime::exact(t),
        2 => EventTime::left(t),
        3 => {
            let upper = t2.ok_or_else(|| Error::MalformedRecord {
                row: None,
                reason: "status code 3 (interval) requires an upper time".into(),
            })?;
            EventTime::interval(t, upper)
        }
        other => Err(Error::MalformedRecord {
            row: None,
            reason: format!("unknown status code {other}"),
        }),
    }
}

/// Observation window `(left, right]` the event time is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub left: f64,
    pub right: f64,
}

impl Truncation {
    pub fn new(left: f64, right: f64) -> Result<Self> {
        if !(left >= 0.0 && left < right && left.is_finite()) || right.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "truncation window ({left}, {right}] requires 0 <= left < right"
            )));
        }
        Ok(Self { left, right })
    }

    pub fn contains(&self, time: &EventTime) -> bool {
        match *time {
            EventTime::Exact(t) => self.left < t && t <= self.right,
            _ => {
                let (lo, hi) = time.window();
                lo >= self.left && hi <= self.right
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.left == 0.0 && self.right == f64::INFINITY
    }
}

/// Event type of a row in the dependent-censoring (copula) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompetingStatus {
    EventOfInterest,
    DependentCensoring,
    AdministrativeCensoring,
}

impl CompetingStatus {
    /// Accepts integer codes (0 administrative, 1 event, 2 dependent) or the
    /// usual labels.
    pub fn parse(raw: &str) -> Result<Self> {
        let s = raw.trim().to_ascii_lowercase();
        let status = match s.as_str() {
            "0" => Self::AdministrativeCensoring,
            "1" => Self::EventOfInterest,
            "2" => Self::DependentCensoring,
            _ if s.starts_with("admin") || s.starts_with("independent") => {
                Self::AdministrativeCensoring
            }
            _ if s.starts_with("event") => Self::EventOfInterest,
            _ if s.starts_with("loss") || s.starts_with("dependent") => Self::DependentCensoring,
            _ => {
                return Err(Error::MalformedRecord {
                    row: None,
                    reason: format!("unrecognised competing status `{raw}`"),
                })
            }
        };
        Ok(status)
    }
}

/// A covariate cell; categorical values index into the column's levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    Level(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    /// Levels in order of first appearance; the first is the reference.
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    pub fn levels(&self) -> &[String] {
        match &self.kind {
            ColumnKind::Categorical { levels } => levels,
            ColumnKind::Numeric => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: EventTime,
    pub truncation: Option<Truncation>,
    pub status: Option<CompetingStatus>,
    /// One value per dataset column.
    pub values: Vec<Value>,
}

/// Raw covariate column used to assemble a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl RawColumn {
    fn len(&self) -> usize {
        match self {
            Self::Numeric(v) => v.len(),
            Self::Categorical(v) => v.len(),
        }
    }
}

/// Immutable collection of observations sharing one covariate schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Column>,
    rows: Vec<Observation>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, rows: Vec<Observation>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, row) in rows.iter().enumerate() {
            let at_row = |reason: String| Error::MalformedRecord {
                row: Some(i + 1),
                reason,
            };
            row.time.validate().map_err(|e| at_row(e.to_string()))?;
            if row.values.len() != columns.len() {
                return Err(at_row(format!(
                    "{} values for {} columns",
                    row.values.len(),
                    columns.len()
                )));
            }
            for (value, column) in row.values.iter().zip(&columns) {
                match (value, &column.kind) {
                    (Value::Num(x), ColumnKind::Numeric) if x.is_finite() => {}
                    (Value::Level(l), ColumnKind::Categorical { levels })
                        if (*l as usize) < levels.len() => {}
                    _ => {
                        return Err(at_row(format!(
                            "invalid value for column `{}`",
                            column.name
                        )))
                    }
                }
            }
            if let Some(tr) = &row.truncation {
                if !tr.contains(&row.time) {
                    return Err(at_row(
                        "event window not contained in truncation window".into(),
                    ));
                }
            }
        }
        Ok(Self { columns, rows })
    }

    /// Assemble from event times and named raw columns; categorical levels are
    /// recorded in order of first appearance.
    pub fn from_columns(times: Vec<EventTime>, raw: Vec<(String, RawColumn)>) -> Result<Self> {
        let n = times.len();
        let mut columns = Vec::with_capacity(raw.len());
        let mut encoded: Vec<Vec<Value>> = Vec::with_capacity(raw.len());
        for (name, col) in raw {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: col.len(),
                });
            }
            match col {
                RawColumn::Numeric(v) => {
                    encoded.push(v.into_iter().map(Value::Num).collect());
                    columns.push(Column {
                        name,
                        kind: ColumnKind::Numeric,
                    });
                }
                RawColumn::Categorical(v) => {
                    let mut levels: Vec<String> = Vec::new();
                    let mut codes = Vec::with_capacity(n);
                    for s in v {
                        let idx = match levels.iter().position(|l| *l == s) {
                            Some(i) => i,
                            None => {
                                levels.push(s);
                                levels.len() - 1
                            }
                        };
                        codes.push(Value::Level(idx as u32));
                    }
                    encoded.push(codes);
                    columns.push(Column {
                        name,
                        kind: ColumnKind::Categorical { levels },
                    });
                }
            }
        }
        let rows = times
            .into_iter()
            .enumerate()
            .map(|(i, time)| Observation {
                time,
                truncation: None,
                status: None,
                values: encoded.iter().map(|c| c[i]).collect(),
            })
            .collect();
        Self::new(columns, rows)
    }

    pub fn with_truncation(mut self, truncation: Vec<Option<Truncation>>) -> Result<Self> {
        if truncation.len() != self.rows.len() {
            return Err(Error::LengthMismatch {
                expected: self.rows.len(),
                actual: truncation.len(),
            });
        }
        for (row, tr) in self.rows.iter_mut().zip(truncation) {
            row.truncation = tr;
        }
        Self::new(self.columns, self.rows)
    }

    pub fn with_status(mut self, status: Vec<CompetingStatus>) -> Result<Self> {
        if status.len() != self.rows.len() {
            return Err(Error::LengthMismatch {
                expected: self.rows.len(),
                actual: status.len(),
            });
        }
        for (row, s) in self.rows.iter_mut().zip(status) {
            row.status = Some(s);
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.column_index(name)?])
    }

    /// Numeric view of a column; categorical columns yield level indices.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| match r.values[idx] {
                Value::Num(x) => x,
                Value::Level(l) => l as f64,
            })
            .collect())
    }

    /// Keep the given rows (in the given order), preserving the schema.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        Self::new(self.columns.clone(), rows)
    }

    /// Replace event times, keeping covariates.
    pub fn with_times(&self, times: &[EventTime]) -> Result<Self> {
        if times.len() != self.rows.len() {
            return Err(Error::LengthMismatch {
                expected: self.rows.len(),
                actual: times.len(),
            });
        }
        let rows = self
            .rows
            .iter()
            .zip(times)
            .map(|(r, t)| Observation {
                time: *t,
                ..r.clone()
            })
            .collect();
        Self::new(self.columns.clone(), rows)
    }

    /// Smallest and largest finite positive window bound.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in self.rows.iter().flat_map(|r| r.time.finite_bounds()) {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        (lo <= hi).then_some((lo, hi))
    }

    pub fn kind_counts(&self) -> CensoringCounts {
        let mut c = CensoringCounts::default();
        for r in &self.rows {
            c.add(r.time.kind());
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensoringCounts {
    pub exact: usize,
    pub right: usize,
    pub left: usize,
    pub interval: usize,
}

impl CensoringCounts {
    fn add(&mut self, kind: CensoringKind) {
        match kind {
            CensoringKind::Exact => self.exact += 1,
            CensoringKind::Right => self.right += 1,
            CensoringKind::Left => self.left += 1,
            CensoringKind::Interval => self.interval += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.exact + self.right + self.left + self.interval
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompetingCounts {
    pub admin: usize,
    pub event: usize,
    pub loss: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub censoring: CensoringCounts,
    pub competing: Option<CompetingCounts>,
}

/// Censoring-type (and competing-status) counts, optionally per level of a
/// grouping column. Every level of a categorical group appears, empty or not.
pub fn summarize(ds: &Dataset, group: Option<&str>) -> Result<Vec<GroupSummary>> {
    let has_status = ds.rows.iter().any(|r| r.status.is_some());
    let mut groups: BTreeMap<usize, (String, CensoringCounts, CompetingCounts)> = BTreeMap::new();
    let key_of: Vec<(usize, String)> = match group {
        None => ds.rows.iter().map(|_| (0, "all".to_string())).collect(),
        Some(name) => {
            let idx = ds.column_index(name)?;
            let column = &ds.columns[idx];
            if let ColumnKind::Categorical { levels } = &column.kind {
                for (i, l) in levels.iter().enumerate() {
                    groups.insert(i, (l.clone(), Default::default(), Default::default()));
                }
                ds.rows
                    .iter()
                    .map(|r| match r.values[idx] {
                        Value::Level(l) => (l as usize, levels[l as usize].clone()),
                        Value::Num(_) => unreachable!("validated categorical"),
                    })
                    .collect()
            } else {
                // numeric grouping: one group per distinct value, in sorted order
                let mut distinct: Vec<f64> = ds.numeric(name)?;
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                ds.rows
                    .iter()
                    .map(|r| match r.values[idx] {
                        Value::Num(x) => {
                            let k = distinct.iter().position(|d| *d == x).unwrap_or(0);
                            (k, format!("{x}"))
                        }
                        Value::Level(_) => unreachable!("validated numeric"),
                    })
                    .collect()
            }
        }
    };
    for (row, (k, label)) in ds.rows.iter().zip(key_of) {
        let entry = groups
            .entry(k)
            .or_insert_with(|| (label, Default::default(), Default::default()));
        entry.1.add(row.time.kind());
        match row.status {
            Some(CompetingStatus::AdministrativeCensoring) => entry.2.admin += 1,
            Some(CompetingStatus::EventOfInterest) => entry.2.event += 1,
            Some(CompetingStatus::DependentCensoring) => entry.2.loss += 1,
            None => {}
        }
    }
    Ok(groups
        .into_values()
        .map(|(group, censoring, competing)| GroupSummary {
            group,
            n: censoring.total(),
            censoring,
            competing: has_status.then_some(competing),
        })
        .collect())
}
