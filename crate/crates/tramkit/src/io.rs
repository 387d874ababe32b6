//! CSV input and output in the layout the command-line tools read and write.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use tramkit_core::data::{
    parse_interval2, parse_status_coded, ColumnKind, CompetingStatus, Dataset, EventTime,
    RawColumn, Truncation, Value,
};
use tramkit_core::model::{Covariate, ModelSpec};

/// Binds CSV columns to roles. Every column without a role is a covariate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// Lower (or only) time column.
    pub time: String,
    /// Upper time column of the two-column interval encoding.
    pub time2: Option<String>,
    /// Status code column: 0 right, 1 exact, 2 left, 3 interval (`time2` is
    /// then the upper time).
    pub event: Option<String>,
    /// Competing event type for the copula model.
    pub status: Option<String>,
    /// Left-truncation (entry) time.
    pub entry: Option<String>,
    /// Right-truncation time.
    pub exit: Option<String>,
    /// Covariates read as categorical even when every value is numeric.
    pub factors: Vec<String>,
    /// Covariate columns to read; every non-role column when unset.
    pub covariates: Option<Vec<String>>,
}

impl Schema {
    pub fn interval2(time: &str, time2: &str) -> Self {
        Self {
            time: time.into(),
            time2: Some(time2.into()),
            ..Default::default()
        }
    }

    fn roles(&self) -> Vec<&str> {
        let mut r = vec![self.time.as_str()];
        r.extend(
            [
                &self.time2,
                &self.event,
                &self.status,
                &self.entry,
                &self.exit,
            ]
            .into_iter()
            .flatten()
            .map(String::as_str),
        );
        r
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "na" | "NaN" | ".")
}

fn parse_num(s: &str) -> Option<std::result::Result<f64, ()>> {
    let s = s.trim();
    if is_missing(s) {
        return None;
    }
    Some(match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => s.parse::<f64>().map_err(|_| ()),
    })
}

fn malformed(row: usize, reason: impl Into<String>) -> Error {
    tramkit_core::Error::MalformedRecord {
        row: Some(row),
        reason: reason.into(),
    }
    .into()
}

/// Header and string cells of a CSV file.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::read(File::open(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| tramkit_core::Error::UnknownColumn(name.into()).into())
    }

    /// Cells of one row keyed by column name.
    pub fn record(&self, row: usize) -> HashMap<&str, &str> {
        self.header
            .iter()
            .map(String::as_str)
            .zip(self.rows[row].iter().map(String::as_str))
            .collect()
    }
}

/// Reads a dataset; rows are numbered from 1 (the first line after the
/// header) in error messages.
pub fn read_dataset(reader: impl Read, schema: &Schema) -> Result<Dataset> {
    let table = Table::read(reader)?;
    dataset_from_table(&table, schema)
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let table = Table::open(path)?;
    dataset_from_table(&table, schema)
}

fn dataset_from_table(table: &Table, schema: &Schema) -> Result<Dataset> {
    if table.rows.is_empty() {
        return Err(tramkit_core::Error::EmptyDataset.into());
    }
    if schema.time2.is_none() && schema.event.is_none() {
        log::info!("no upper time or status column given; every row is an exact event time");
    }
    let col = |name: &Option<String>| name.as_deref().map(|n| table.column(n)).transpose();
    let time = table.column(&schema.time)?;
    let (time2, event, status, entry, exit) = (
        col(&schema.time2)?,
        col(&schema.event)?,
        col(&schema.status)?,
        col(&schema.entry)?,
        col(&schema.exit)?,
    );
    for f in schema
        .factors
        .iter()
        .chain(schema.covariates.iter().flatten())
    {
        table.column(f)?;
    }

    let number = |row: usize, idx: usize| -> Result<Option<f64>> {
        match parse_num(&table.rows[row][idx]) {
            None => Ok(None),
            Some(Ok(x)) => Ok(Some(x)),
            Some(Err(())) => Err(malformed(
                row + 1,
                format!(
                    "column `{}`: `{}` is not a number",
                    table.header[idx], table.rows[row][idx]
                ),
            )),
        }
    };

    let mut times = Vec::with_capacity(table.rows.len());
    let mut truncation = Vec::with_capacity(table.rows.len());
    let mut statuses = Vec::new();
    for row in 0..table.rows.len() {
        let at = |e: tramkit_core::Error| match e {
            tramkit_core::Error::MalformedRecord { reason, .. } => malformed(row + 1, reason),
            other => malformed(row + 1, other.to_string()),
        };
        let t = number(row, time)?;
        let t2 = time2.map(|i| number(row, i)).transpose()?.flatten();
        let et = match event {
            Some(e) => {
                let code =
                    number(row, e)?.ok_or_else(|| malformed(row + 1, "missing status code"))?;
                if code.fract() != 0.0 {
                    return Err(malformed(
                        row + 1,
                        format!("status code {code} is not an integer"),
                    ));
                }
                let t = t.ok_or_else(|| malformed(row + 1, "missing time"))?;
                parse_status_coded(t, t2, code as i64)
            }
            None if time2.is_some() => parse_interval2(t, t2),
            None => match t {
                Some(t) => EventTime::exact(t),
                None => Err(tramkit_core::Error::MalformedRecord {
                    row: None,
                    reason: "missing time".into(),
                }),
            },
        }
        .map_err(at)?;
        times.push(et);

        let left = entry.map(|i| number(row, i)).transpose()?.flatten();
        let right = exit.map(|i| number(row, i)).transpose()?.flatten();
        truncation.push(match (left, right) {
            (None, None) => None,
            (l, r) => {
                Some(Truncation::new(l.unwrap_or(0.0), r.unwrap_or(f64::INFINITY)).map_err(at)?)
            }
        });
        if let Some(s) = status {
            statuses.push(CompetingStatus::parse(&table.rows[row][s]).map_err(at)?);
        }
    }

    let roles = schema.roles();
    let mut raw = Vec::new();
    for (idx, name) in table.header.iter().enumerate() {
        let wanted = schema.covariates.as_ref().is_none_or(|c| c.contains(name));
        if roles.contains(&name.as_str()) || !wanted {
            continue;
        }
        let cells: Vec<&str> = table.rows.iter().map(|r| r[idx].as_str()).collect();
        if let Some(row) = cells.iter().position(|c| is_missing(c)) {
            return Err(malformed(
                row + 1,
                format!("missing value in covariate `{name}`"),
            ));
        }
        let numeric: Option<Vec<f64>> = if schema.factors.contains(name) {
            None
        } else {
            cells
                .iter()
                .map(|c| c.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect()
        };
        raw.push((
            name.clone(),
            match numeric {
                Some(v) => RawColumn::Numeric(v),
                None => RawColumn::Categorical(cells.iter().map(|c| c.to_string()).collect()),
            },
        ));
    }
    let mut ds = Dataset::from_columns(times, raw)?;
    if truncation.iter().any(Option::is_some) {
        ds = ds.with_truncation(truncation)?;
    }
    if status.is_some() {
        ds = ds.with_status(statuses)?;
    }
    Ok(ds)
}

/// Shortest representation that parses back to the same value.
pub fn exact_number(x: f64) -> String {
    if x == f64::INFINITY {
        "Inf".into()
    } else {
        format!("{x}")
    }
}

/// Writes `times` with the covariates of `ds` in the two-column interval
/// layout (`time`, `time2`) that [`load_csv`] reads with
/// [`Schema::interval2`]. Values are written at full precision.
pub fn write_dataset(writer: impl Write, ds: &Dataset, times: &[EventTime]) -> Result<()> {
    if times.len() != ds.len() {
        return Err(tramkit_core::Error::LengthMismatch {
            expected: ds.len(),
            actual: times.len(),
        }
        .into());
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "time2".to_string()];
    header.extend(ds.columns().iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for (row, t) in ds.rows().iter().zip(times) {
        let (lo, hi) = t.encode_interval2();
        let mut rec = vec![
            lo.map_or("NA".into(), exact_number),
            hi.map_or("NA".into(), exact_number),
        ];
        for (v, c) in row.values.iter().zip(ds.columns()) {
            rec.push(match (v, &c.kind) {
                (Value::Num(x), _) => exact_number(*x),
                (Value::Level(l), ColumnKind::Categorical { levels }) => {
                    levels[*l as usize].clone()
                }
                (Value::Level(l), ColumnKind::Numeric) => l.to_string(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

/// Covariate lookup for one record of strings, typed by how `spec` uses each
/// variable: strata and categorical terms get labels, everything else numbers.
pub fn covariate_lookup<'a>(
    spec: &'a ModelSpec,
    cells: &'a HashMap<String, String>,
) -> impl Fn(&str) -> Option<Covariate> + 'a {
    move |var: &str| {
        let raw = cells.get(var)?;
        let categorical = spec.strata.as_ref().is_some_and(|s| s.var == var)
            || spec
                .shift
                .iter()
                .chain(&spec.scale)
                .chain(&spec.time_varying)
                .any(|t| t.var == var && t.level.is_some());
        if categorical {
            Some(Covariate::Label(raw.clone()))
        } else {
            raw.trim().parse().ok().map(Covariate::Num)
        }
    }
}

/// `name=value` pairs separated by commas.
pub fn parse_assignments(text: &str) -> Result<HashMap<String, String>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("expected name=value, got `{pair}`")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Rows of a covariate-only CSV as string records.
pub fn load_records(path: &Path) -> Result<Vec<HashMap<String, String>>> {
    let table = Table::open(path)?;
    Ok((0..table.rows.len())
        .map(|i| {
            table
                .record(i)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        })
        .collect())
}
