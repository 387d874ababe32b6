//! Resolved model structure: link, baseline basis, strata, shift, scale and
//! time-varying terms, optional extension, and the flat parameter layout.

use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnKind, Dataset, Value};
use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::prelude::*;
use crate::transform::{Basis, BernsteinBasis, Link, TimeScaler, DEFAULT_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// `h(t) = theta1 + theta2 log t` (Weibull under the cloglog link).
    LogLinear,
    Bernstein {
        order: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extension {
    GammaFrailty,
    RandomIntercept { group: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindOptions {
    pub link: Link,
    pub baseline: BaselineKind,
    pub log_first: bool,
    /// Variables left of `~` that enter as time-varying shifts instead of strata.
    pub time_varying: Vec<String>,
    pub extension: Option<Extension>,
}

impl Default for BindOptions {
    fn default() -> Self {
        Self {
            link: Link::MinExtremeValue,
            baseline: BaselineKind::Bernstein {
                order: DEFAULT_ORDER,
            },
            log_first: false,
            time_varying: Vec::new(),
            extension: None,
        }
    }
}

/// One encoded design column: a numeric variable, or the indicator of a
/// non-reference level of a categorical variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub var: String,
    pub level: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strata {
    pub var: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Baseline { stratum: usize },
    TimeVarying { term: usize },
    Shift,
    Scale,
    LogFrailtyVariance,
    LogInterceptVariance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    /// Baseline blocks carry nondecreasing coefficients.
    pub fn is_monotone(&self) -> bool {
        matches!(self.kind, BlockKind::Baseline { .. })
    }
}

/// Map between the flat parameter vector and named model blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    names: Vec<String>,
}

impl ParamLayout {
    fn push(&mut self, kind: BlockKind, names: Vec<String>) {
        let start = self.names.len();
        self.blocks.push(Block {
            kind,
            start,
            len: names.len(),
        });
        self.names.extend(names);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn block_of(&self, index: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.range().contains(&index))
    }

    fn find(&self, kind: BlockKind) -> Range<usize> {
        self.blocks
            .iter()
            .find(|b| b.kind == kind)
            .map_or(0..0, Block::range)
    }

    pub fn baseline(&self, stratum: usize) -> Range<usize> {
        self.find(BlockKind::Baseline { stratum })
    }

    pub fn time_varying(&self, term: usize) -> Range<usize> {
        self.find(BlockKind::TimeVarying { term })
    }

    pub fn shift(&self) -> Range<usize> {
        self.find(BlockKind::Shift)
    }

    pub fn scale(&self) -> Range<usize> {
        self.find(BlockKind::Scale)
    }

    /// Index of the log-variance parameter of a frailty or random intercept.
    pub fn log_variance(&self) -> Option<usize> {
        self.blocks
            .iter()
            .find(|b| {
                matches!(
                    b.kind,
                    BlockKind::LogFrailtyVariance | BlockKind::LogInterceptVariance
                )
            })
            .map(|b| b.start)
    }
}

/// Covariate value supplied for prediction on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariate {
    Num(f64),
    Label(String),
}

/// Design values of one row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EncodedRow {
    pub stratum: usize,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub time_varying: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub formula: Formula,
    pub link: Link,
    pub baseline: BaselineKind,
    pub basis: Basis,
    pub support: TimeScaler,
    pub strata: Option<Strata>,
    pub shift: Vec<Term>,
    pub scale: Vec<Term>,
    pub time_varying: Vec<Term>,
    pub extension: Option<Extension>,
    pub layout: ParamLayout,
}

fn encode_terms(var: &str, column: &Column, out: &mut Vec<Term>) {
    match &column.kind {
        ColumnKind::Numeric => out.push(Term {
            label: var.into(),
            var: var.into(),
            level: None,
        }),
        ColumnKind::Categorical { levels } => {
            for level in levels.iter().skip(1) {
                out.push(Term {
                    label: format!("{var}{level}"),
                    var: var.into(),
                    level: Some(level.clone()),
                });
            }
        }
    }
}

pub fn bind(formula: &Formula, ds: &Dataset, opts: &BindOptions) -> Result<ModelSpec> {
    let role = |var: &str, message: &str| Error::Role {
        var: var.into(),
        message: message.into(),
    };

    for tv in &opts.time_varying {
        if !formula.left.contains(tv) {
            return Err(role(tv, "time-varying variables must appear left of `~`"));
        }
    }

    let mut strata = None;
    let mut time_varying = Vec::new();
    for var in &formula.left {
        let column = ds.column(var)?;
        if opts.time_varying.contains(var) {
            encode_terms(var, column, &mut time_varying);
        } else if let ColumnKind::Categorical { levels } = &column.kind {
            if strata.is_some() {
                return Err(role(var, "only one stratification variable is supported"));
            }
            strata = Some(Strata {
                var: var.clone(),
                levels: levels.clone(),
            });
        } else {
            return Err(role(
                var,
                "numeric variable left of `~` must be flagged time-varying",
            ));
        }
    }

    let mut shift = Vec::new();
    for var in &formula.shift {
        encode_terms(var, ds.column(var)?, &mut shift);
    }

    let mut scale = Vec::new();
    for var in &formula.scale {
        let column = ds.column(var)?;
        if column.is_categorical() && column.levels().len() != 2 {
            return Err(role(
                var,
                "categorical scale terms must have exactly two levels",
            ));
        }
        encode_terms(var, column, &mut scale);
    }

    match &opts.extension {
        Some(Extension::RandomIntercept { group }) => {
            if !ds.column(group)?.is_categorical() {
                return Err(role(group, "random-intercept groups must be categorical"));
            }
        }
        Some(Extension::GammaFrailty) if opts.link != Link::MinExtremeValue => {
            return Err(Error::InvalidArgument(
                "gamma frailty requires the cloglog link".into(),
            ));
        }
        _ => {}
    }

    let (lo, hi) = ds.time_range().ok_or(Error::EmptyDataset)?;
    let log_first = opts.log_first || opts.baseline == BaselineKind::LogLinear;
    let support = TimeScaler::new(lo, hi, log_first)?;
    let basis = match opts.baseline {
        BaselineKind::LogLinear => Basis::LogLinear,
        BaselineKind::Bernstein { order } => Basis::Bernstein(BernsteinBasis::new(
            order,
            TimeScaler::new(lo, hi, opts.log_first)?,
        )?),
    };

    let mut spec = ModelSpec {
        formula: formula.clone(),
        link: opts.link,
        baseline: opts.baseline,
        basis,
        support,
        strata,
        shift,
        scale,
        time_varying,
        extension: opts.extension.clone(),
        layout: ParamLayout {
            blocks: Vec::new(),
            names: Vec::new(),
        },
    };
    spec.layout = spec.build_layout();
    Ok(spec)
}

impl ModelSpec {
    /// The same model with the time support replaced by `[lo, hi]`.
    pub fn with_support(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.support = TimeScaler::new(lo, hi, self.support.log_first)?;
        if let Basis::Bernstein(b) = &self.basis {
            self.basis = Basis::Bernstein(BernsteinBasis::new(
                b.order,
                TimeScaler::new(lo, hi, b.scaler.log_first)?,
            )?);
        }
        Ok(self)
    }

    fn build_layout(&self) -> ParamLayout {
        let dim = self.basis.dim();
        let mut layout = ParamLayout {
            blocks: Vec::new(),
            names: Vec::new(),
        };
        match &self.strata {
            None => layout.push(
                BlockKind::Baseline { stratum: 0 },
                (1..=dim).map(|p| format!("theta{p}")).collect(),
            ),
            Some(s) => {
                for (k, level) in s.levels.iter().enumerate() {
                    layout.push(
                        BlockKind::Baseline { stratum: k },
                        (1..=dim).map(|p| format!("theta{p}[{level}]")).collect(),
                    );
                }
            }
        }
        for (j, term) in self.time_varying.iter().enumerate() {
            layout.push(
                BlockKind::TimeVarying { term: j },
                (1..=dim).map(|p| format!("{}:tv{p}", term.label)).collect(),
            );
        }
        if !self.shift.is_empty() {
            layout.push(
                BlockKind::Shift,
                self.shift.iter().map(|t| t.label.clone()).collect(),
            );
        }
        if !self.scale.is_empty() {
            layout.push(
                BlockKind::Scale,
                self.scale
                    .iter()
                    .map(|t| format!("scale:{}", t.label))
                    .collect(),
            );
        }
        match self.extension {
            Some(Extension::GammaFrailty) => {
                layout.push(BlockKind::LogFrailtyVariance, vec!["log(sigma2)".into()])
            }
            Some(Extension::RandomIntercept { .. }) => {
                layout.push(BlockKind::LogInterceptVariance, vec!["log(tau2)".into()])
            }
            None => {}
        }
        layout
    }

    pub fn n_strata(&self) -> usize {
        self.strata.as_ref().map_or(1, |s| s.levels.len())
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    /// Log-linear baselines report shift effects with the opposite sign
    /// (`h(t) - beta x`); this is the only place the orientation flips.
    pub fn reported_shift_sign(&self) -> f64 {
        match self.baseline {
            BaselineKind::LogLinear => -1.0,
            BaselineKind::Bernstein { .. } => 1.0,
        }
    }

    pub fn without_extension(&self) -> Self {
        let mut s = self.clone();
        s.extension = None;
        s.layout = s.build_layout();
        s
    }

    pub fn with_extension(&self, extension: Option<Extension>) -> Self {
        let mut s = self.clone();
        s.extension = extension;
        s.layout = s.build_layout();
        s
    }

    /// Copy with the named shift/scale/time-varying terms removed.
    pub fn dropping_terms(&self, labels: &[&str]) -> Self {
        let mut s = self.clone();
        s.shift.retain(|t| !labels.contains(&t.label.as_str()));
        s.scale
            .retain(|t| !labels.contains(&format!("scale:{}", t.label).as_str()));
        s.time_varying
            .retain(|t| !labels.contains(&t.label.as_str()));
        s.layout = s.build_layout();
        s
    }

    pub fn encode_dataset(&self, ds: &Dataset) -> Result<Vec<EncodedRow>> {
        let resolve = |terms: &[Term]| -> Result<Vec<(usize, Option<u32>)>> {
            terms
                .iter()
                .map(|t| {
                    let idx = ds.column_index(&t.var)?;
                    let code = match &t.level {
                        None => None,
                        Some(l) => Some(level_code(ds.columns()[idx].levels(), l, &t.var)?),
                    };
                    Ok((idx, code))
                })
                .collect()
        };
        let shift = resolve(&self.shift)?;
        let scale = resolve(&self.scale)?;
        let tv = resolve(&self.time_varying)?;
        let strata = match &self.strata {
            None => None,
            Some(s) => {
                let idx = ds.column_index(&s.var)?;
                let map = ds.columns()[idx]
                    .levels()
                    .iter()
                    .map(|l| level_code(&s.levels, l, &s.var))
                    .collect::<Result<Vec<_>>>();
                Some((idx, map))
            }
        };
        let value = |v: Value, code: Option<u32>| match (v, code) {
            (Value::Num(x), None) => x,
            (Value::Level(l), Some(c)) => f64::from(u8::from(l == c)),
            (Value::Level(l), None) => f64::from(l),
            (Value::Num(_), Some(_)) => f64::NAN,
        };
        ds.rows()
            .iter()
            .map(|row| {
                let pick = |cols: &[(usize, Option<u32>)]| {
                    cols.iter().map(|&(i, c)| value(row.values[i], c)).collect()
                };
                let stratum = match &strata {
                    None => 0,
                    Some((idx, map)) => match row.values[*idx] {
                        Value::Level(l) => match map {
                            Ok(m) => m[l as usize] as usize,
                            Err(e) => return Err(e.clone()),
                        },
                        Value::Num(_) => unreachable!("strata bound to a categorical column"),
                    },
                };
                Ok(EncodedRow {
                    stratum,
                    shift: pick(&shift),
                    scale: pick(&scale),
                    time_varying: pick(&tv),
                })
            })
            .collect()
    }

    /// Encode a single covariate record given by name lookup.
    pub fn encode_with(&self, lookup: impl Fn(&str) -> Option<Covariate>) -> Result<EncodedRow> {
        let get = |var: &str| lookup(var).ok_or_else(|| Error::UnknownColumn(var.into()));
        let encode = |terms: &[Term]| -> Result<Vec<f64>> {
            terms
                .iter()
                .map(|t| match (get(&t.var)?, &t.level) {
                    (Covariate::Num(x), None) => Ok(x),
                    (Covariate::Label(l), Some(level)) => Ok(f64::from(u8::from(&l == level))),
                    _ => Err(Error::Role {
                        var: t.var.clone(),
                        message: "value type does not match the fitted term".into(),
                    }),
                })
                .collect()
        };
        let stratum = match &self.strata {
            None => 0,
            Some(s) => match get(&s.var)? {
                Covariate::Label(l) => level_code(&s.levels, &l, &s.var)? as usize,
                Covariate::Num(_) => {
                    return Err(Error::Role {
                        var: s.var.clone(),
                        message: "stratum must be a label".into(),
                    })
                }
            },
        };
        Ok(EncodedRow {
            stratum,
            shift: encode(&self.shift)?,
            scale: encode(&self.scale)?,
            time_varying: encode(&self.time_varying)?,
        })
    }
}

fn level_code(levels: &[String], level: &str, var: &str) -> Result<u32> {
    levels
        .iter()
        .position(|l| l == level)
        .map(|p| p as u32)
        .ok_or_else(|| Error::Role {
            var: var.into(),
            message: format!("unknown level `{level}`"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EventTime, RawColumn};
    use crate::formula::parse_formula;
    use std::string::ToString;

    fn trial_like() -> Dataset {
        let n = 40;
        let times = (0..n)
            .map(|i| {
                let t = 10.0 + 7.0 * i as f64;
                match i % 3 {
                    0 => EventTime::exact(t),
                    1 => EventTime::right(t),
                    _ => EventTime::interval(t, t + 30.0),
                }
                .unwrap()
            })
            .collect();
        let arm = (0..n)
            .map(|i| if i % 2 == 0 { "ctrl" } else { "trt" }.to_string())
            .collect();
        let strat = (0..n)
            .map(|i| ["s1", "s2", "s3", "s4"][i % 4].to_string())
            .collect();
        let age = (0..n).map(|i| 40.0 + i as f64).collect();
        Dataset::from_columns(
            times,
            vec![
                ("arm".into(), RawColumn::Categorical(arm)),
                ("strat".into(), RawColumn::Categorical(strat)),
                ("age".into(), RawColumn::Numeric(age)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn stratified_layout() {
        let ds = trial_like();
        let f = parse_formula("y | strat ~ arm").unwrap();
        let spec = bind(&f, &ds, &BindOptions::default()).unwrap();
        let base: Vec<_> = spec
            .layout
            .blocks()
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Baseline { .. }))
            .collect();
        assert_eq!(base.len(), 4);
        assert!(base.iter().all(|b| b.len == 7));
        assert_eq!(spec.layout.shift().len(), 1);
        assert_eq!(spec.n_params(), 29);
        assert_eq!(spec.layout.names()[28], "armtrt");
    }

    #[test]
    fn weibull_layout() {
        let ds = trial_like();
        let opts = BindOptions {
            baseline: BaselineKind::LogLinear,
            ..Default::default()
        };
        let spec = bind(&parse_formula("y ~ arm").unwrap(), &ds, &opts).unwrap();
        assert_eq!(spec.layout.names(), ["theta1", "theta2", "armtrt"]);
        assert_eq!(spec.reported_shift_sign(), -1.0);
    }

    #[test]
    fn baseline_only() {
        let ds = trial_like();
        let spec = bind(
            &parse_formula("y ~ 1").unwrap(),
            &ds,
            &BindOptions::default(),
        )
        .unwrap();
        assert_eq!(spec.n_params(), 7);
        assert!(spec.layout.shift().is_empty());
    }

    #[test]
    fn roles_validated() {
        let ds = trial_like();
        let opts = BindOptions::default();
        assert!(matches!(
            bind(&parse_formula("y ~ nope").unwrap(), &ds, &opts),
            Err(Error::UnknownColumn(_))
        ));
        assert!(matches!(
            bind(&parse_formula("y ~ arm | strat").unwrap(), &ds, &opts),
            Err(Error::Role { .. })
        ));
        assert!(matches!(
            bind(&parse_formula("y | age ~ arm").unwrap(), &ds, &opts),
            Err(Error::Role { .. })
        ));
        let tv = BindOptions {
            time_varying: vec!["arm".into()],
            ..Default::default()
        };
        let spec = bind(&parse_formula("y | arm ~ 1").unwrap(), &ds, &tv).unwrap();
        assert_eq!(spec.time_varying.len(), 1);
        assert_eq!(spec.layout.time_varying(0).len(), 7);
        assert!(bind(&parse_formula("y ~ arm").unwrap(), &ds, &tv).is_err());
    }

    #[test]
    fn layout_is_bijective() {
        let ds = trial_like();
        let opts = BindOptions {
            time_varying: vec!["age".into()],
            extension: Some(Extension::RandomIntercept {
                group: "strat".into(),
            }),
            ..Default::default()
        };
        let spec = bind(&parse_formula("y | age ~ arm | arm").unwrap(), &ds, &opts).unwrap();
        let layout = &spec.layout;
        for (i, name) in layout.names().iter().enumerate() {
            assert_eq!(layout.index(name).unwrap(), i);
            assert!(layout.block_of(i).is_some());
        }
        let covered: usize = layout.blocks().iter().map(|b| b.len).sum();
        assert_eq!(covered, layout.len());
        assert!(layout.log_variance().is_some());
    }

    #[test]
    fn encoding_matches_lookup() {
        let ds = trial_like();
        let spec = bind(
            &parse_formula("y | strat ~ arm + age").unwrap(),
            &ds,
            &BindOptions::default(),
        )
        .unwrap();
        let rows = spec.encode_dataset(&ds).unwrap();
        assert_eq!(rows[1].shift, vec![1.0, 41.0]);
        assert_eq!(rows[1].stratum, 1);
        let one = spec
            .encode_with(|name| match name {
                "arm" => Some(Covariate::Label("trt".into())),
                "age" => Some(Covariate::Num(41.0)),
                "strat" => Some(Covariate::Label("s2".into())),
                _ => None,
            })
            .unwrap();
        assert_eq!(one, rows[1]);
    }
}
