//! Report formatting and the JSON dump of fitted objects.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use tramkit_core::estimate::{FitStatus, FittedModel, TestResult};
use tramkit_core::extensions::CopulaFit;
use tramkit_core::model::BlockKind;
use tramkit_core::tree::TreeNode;

/// Six significant digits, fixed notation for moderate magnitudes.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if !(-4..6).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Anything the tools write as a JSON dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dump {
    Model { model: FittedModel },
    Copula { model: CopulaFit },
    Tree { tree: TreeNode },
}

impl Dump {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn into_model(self) -> Result<FittedModel> {
        match self {
            Self::Model { model } => Ok(model),
            _ => Err(Error::usage("expected a fitted transformation model dump")),
        }
    }
}

/// One line of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

fn shown(fm: &FittedModel, i: usize) -> bool {
    !matches!(
        fm.spec.layout.block_of(i).map(|b| b.kind),
        Some(BlockKind::Baseline { .. } | BlockKind::TimeVarying { .. })
    )
}

/// Effect rows of a fitted model; baseline and time-varying basis
/// coefficients only with `all`.
pub fn model_rows(fm: &FittedModel, all: bool) -> Vec<CoefRow> {
    fm.coefs()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| all || shown(fm, *i))
        .map(|(_, (name, estimate))| CoefRow {
            std_error: fm.std_error(&name).ok(),
            ci: fm.wald_ci(&name, 0.95).ok(),
            name,
            estimate,
        })
        .collect()
}

pub fn copula_rows(fit: &CopulaFit, all: bool) -> Vec<CoefRow> {
    let basis = |name: &str| {
        let bare = name.split_once(':').map_or(name, |(_, rest)| rest);
        bare.starts_with("theta")
    };
    fit.coefs()
        .into_iter()
        .filter(|(name, _)| all || !basis(name))
        .map(|(name, estimate)| CoefRow {
            std_error: fit.std_error(&name).ok(),
            ci: fit.wald_ci(&name, 0.95).ok(),
            name,
            estimate,
        })
        .collect()
}

/// Human-readable coefficient table with a log-likelihood footer.
pub fn coef_table(
    rows: &[CoefRow],
    loglik: f64,
    n_obs: usize,
    status: FitStatus,
    iterations: usize,
) -> String {
    let width = rows
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max("Coefficient".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>12}  {:>27}",
        "Coefficient", "Estimate", "Std. Error", "95%-Wald CI"
    );
    for r in rows {
        let se = r.std_error.map_or("NA".into(), sig6);
        let ci = r.ci.map_or("NA".into(), |(lo, hi)| {
            format!("({}, {})", sig6(lo), sig6(hi))
        });
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>12}  {:>27}",
            r.name,
            sig6(r.estimate),
            se,
            ci
        );
    }
    let state = match status {
        FitStatus::Converged => "converged",
        FitStatus::NotConverged => "NOT converged",
    };
    let _ = writeln!(
        out,
        "Log-Likelihood: {} (n = {n_obs}, {state} after {iterations} iterations)",
        sig6(loglik)
    );
    out
}

pub fn test_report(label: &str, t: &TestResult) -> String {
    format!(
        "{label}: statistic = {}, df = {}, p-value = {}\n",
        sig6(t.statistic),
        t.df,
        sig6(t.p_value)
    )
}

/// A cell of a CSV report.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Num(x) => sig6(*x),
            Self::Int(k) => k.to_string(),
            Self::Text(s) => s.clone(),
            Self::Missing => "NA".into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(k: usize) -> Self {
        Self::Int(k)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Self::Text(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Self::Text(s)
    }
}

/// Column-oriented report rendered as CSV (numbers at six significant
/// digits) or JSON (full precision).
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let obj = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| {
                        let v = match c {
                            Cell::Num(x) if x.is_finite() => serde_json::json!(x),
                            Cell::Num(x) => serde_json::json!(sig6(*x)),
                            Cell::Int(k) => serde_json::json!(k),
                            Cell::Text(s) => serde_json::json!(s),
                            Cell::Missing => serde_json::Value::Null,
                        };
                        (h.clone(), v)
                    })
                    .collect::<serde_json::Map<_, _>>();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(-2281.1734), "-2281.17");
        assert_eq!(sig6(0.2290004), "0.229");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.000012345678), "1.23457e-5");
        assert_eq!(sig6(0.00012345678), "0.000123457");
        assert_eq!(sig6(9.9999996), "10");
        assert_eq!(sig6(f64::INFINITY), "Inf");
    }
}
