//! Kaplan-Meier and Turnbull nonparametric survivor estimators.

use crate::data::{Dataset, EventTime, Value};
use crate::error::{Error, Result};
use crate::prelude::*;
use serde::{Deserialize, Serialize};

/// Survivor step function over support intervals.
///
/// Interval `j` carries the probability mass `S(before) - S(after)`;
/// `survivor[j]` is the survivor value just after it. Degenerate intervals
/// `[t, t]` are point masses; a proper interval `(lo, hi]` is an innermost
/// interval of a Turnbull fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub intervals: Vec<(f64, f64)>,
    pub survivor: Vec<f64>,
}

impl StepFunction {
    /// `P(T > t)`, or `None` when `t` lies strictly inside an interval that
    /// holds mass (the estimate does not say how mass is spread there).
    pub fn eval(&self, t: f64) -> Option<f64> {
        let mut s = 1.0;
        for (&(lo, hi), &after) in self.intervals.iter().zip(&self.survivor) {
            if hi <= t {
                s = after;
            } else if lo < t && s - after > 0.0 {
                return None;
            } else {
                break;
            }
        }
        Some(s)
    }
}

/// Kaplan-Meier estimate with its risk table at the distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub curve: StepFunction,
    pub n_risk: Vec<usize>,
    pub n_event: Vec<usize>,
    /// Sorted observed times (exact or right-censored) of all rows.
    times: Vec<f64>,
}

impl KaplanMeier {
    pub fn times(&self) -> Vec<f64> {
        self.curve.intervals.iter().map(|iv| iv.0).collect()
    }

    /// Number of rows still at risk (observed time `>= t`) at each time.
    pub fn at_risk(&self, at: &[f64]) -> Vec<usize> {
        at.iter()
            .map(|&t| self.times.len() - self.times.partition_point(|&s| s < t))
            .collect()
    }

    pub fn eval(&self, t: f64) -> f64 {
        // point masses only, so the value is always defined
        self.curve.eval(t).unwrap_or(0.0)
    }
}

/// Product-limit estimator; rows censored at an event time count as at risk
/// there.
pub fn kaplan_meier(times: &[EventTime]) -> Result<KaplanMeier> {
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut obs: Vec<(f64, bool)> = Vec::with_capacity(times.len());
    for (i, t) in times.iter().enumerate() {
        match *t {
            EventTime::Exact(v) => obs.push((v, true)),
            EventTime::RightCensored(v) => obs.push((v, false)),
            _ => {
                return Err(Error::UnsupportedCensoring(format!(
                    "Kaplan-Meier needs exact or right-censored times (row {i})"
                )))
            }
        }
    }
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = obs.len();
    let mut intervals = Vec::new();
    let mut survivor = Vec::new();
    let mut n_risk = Vec::new();
    let mut n_event = Vec::new();
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = obs[i].0;
        let mut j = i;
        let mut events = 0;
        while j < n && obs[j].0 == t {
            events += obs[j].1 as usize;
            j += 1;
        }
        if events > 0 {
            let risk = n - i;
            s *= 1.0 - events as f64 / risk as f64;
            intervals.push((t, t));
            survivor.push(s);
            n_risk.push(risk);
            n_event.push(events);
        }
        i = j;
    }
    Ok(KaplanMeier {
        curve: StepFunction {
            intervals,
            survivor,
        },
        n_risk,
        n_event,
        times: obs.iter().map(|o| o.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnbullOptions {
    /// Stop when no interval mass changes by more than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TurnbullOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Turnbull nonparametric maximum likelihood estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turnbull {
    pub curve: StepFunction,
    /// Mass of each innermost interval.
    pub mass: Vec<f64>,
    /// Log-likelihood after each EM iteration (starting value first).
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Endpoint of an observation window in the order used to find innermost
/// intervals. At equal values closed bounds of exact times come first, then
/// closed right bounds, then open left bounds; a left endpoint precedes a
/// right one with the same rank.
#[derive(Debug, Clone, Copy)]
struct Endpoint {
    value: f64,
    rank: i8,
    is_left: bool,
    row: usize,
}

fn endpoints(times: &[EventTime]) -> Vec<Endpoint> {
    let mut out = Vec::with_capacity(2 * times.len());
    for (row, t) in times.iter().enumerate() {
        let (lo, hi) = t.window();
        let (lrank, rrank) = if matches!(t, EventTime::Exact(_)) {
            (-1, -1)
        } else {
            (1, 0)
        };
        out.push(Endpoint {
            value: lo,
            rank: lrank,
            is_left: true,
            row,
        });
        out.push(Endpoint {
            value: hi,
            rank: rrank,
            is_left: false,
            row,
        });
    }
    out.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.rank.cmp(&b.rank))
            .then(b.is_left.cmp(&a.is_left))
    });
    out
}

/// Innermost intervals and, per row, the range of intervals its window
/// covers.
fn innermost(times: &[EventTime]) -> (Vec<(f64, f64)>, Vec<(usize, usize)>) {
    let ends = endpoints(times);
    let mut intervals = Vec::new();
    // position in the sorted list of each row's left and right endpoint
    let mut left_pos = vec![0usize; times.len()];
    let mut right_pos = vec![0usize; times.len()];
    let mut interval_pos = Vec::new();
    for (k, e) in ends.iter().enumerate() {
        if e.is_left {
            left_pos[e.row] = k;
        } else {
            right_pos[e.row] = k;
        }
        if k > 0 && !e.is_left && ends[k - 1].is_left {
            intervals.push((ends[k - 1].value, e.value));
            interval_pos.push(k);
        }
    }
    // interval with right endpoint at position p lies in a row window iff the
    // row's left endpoint is before p - 1 (inclusive) and its right at or after p
    let cover = (0..times.len())
        .map(|i| {
            let first = interval_pos.partition_point(|&p| p - 1 < left_pos[i]);
            let end = interval_pos.partition_point(|&p| p <= right_pos[i]);
            (first, end)
        })
        .collect();
    (intervals, cover)
}

/// One self-consistency (EM) update of the interval masses.
/// Neumaier summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

fn em_step(cover: &[(usize, usize)], mass: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &(a, b) in cover {
        let total: f64 = mass[a..b].iter().sum();
        for j in a..b {
            out[j] += mass[j] / total;
        }
    }
    let n = cover.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
}

/// Turnbull NPMLE by EM with SQUAREM extrapolation, stopping once no mass
/// moves by more than `opts.tol` in an iteration. Extrapolated points that
/// leave the simplex or lower the likelihood are replaced by two plain EM
/// steps, so the log-likelihood never decreases. Exact times are degenerate
/// windows `[t, t]`.
pub fn turnbull(times: &[EventTime], opts: &TurnbullOptions) -> Result<Turnbull> {
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(
            "Turnbull tolerance must be positive".into(),
        ));
    }
    let (intervals, cover) = innermost(times);
    let m = intervals.len();
    let loglik_of = |mass: &[f64]| -> f64 {
        compensated_sum(
            cover
                .iter()
                .map(|&(a, b)| compensated_sum(mass[a..b].iter().copied()).ln()),
        )
    };
    let mut mass = vec![1.0 / m as f64; m];
    let (mut p1, mut p2, mut jump, mut fixed) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut current = loglik_of(&mass);
    let mut loglik = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        em_step(&cover, &mass, &mut p1);
        em_step(&cover, &p1, &mut p2);
        let (mut rr, mut vv) = (0.0, 0.0);
        for j in 0..m {
            let r = p1[j] - mass[j];
            let v = p2[j] - 2.0 * p1[j] + mass[j];
            rr += r * r;
            vv += v * v;
        }
        let mut accepted = None;
        if vv > 0.0 {
            let alpha = -(rr / vv).sqrt();
            if alpha < -1.0 {
                for j in 0..m {
                    let r = p1[j] - mass[j];
                    let v = p2[j] - 2.0 * p1[j] + mass[j];
                    jump[j] = mass[j] - 2.0 * alpha * r + alpha * alpha * v;
                }
                if jump.iter().all(|&p| p > 0.0) {
                    let total: f64 = jump.iter().sum();
                    jump.iter_mut().for_each(|p| *p /= total);
                    em_step(&cover, &jump, &mut fixed);
                    let value = loglik_of(&fixed);
                    if value >= current {
                        accepted = Some(value);
                    }
                }
            }
        }
        let next = match accepted {
            Some(value) => {
                current = value;
                &fixed
            }
            None => {
                let value = loglik_of(&p2);
                if value < current {
                    // plain EM cannot decrease; this is rounding at the optimum
                    converged = true;
                    break;
                }
                current = value;
                &p2
            }
        };
        let change = next
            .iter()
            .zip(&mass)
            .fold(0.0f64, |c, (a, b)| c.max((a - b).abs()));
        mass.copy_from_slice(next);
        loglik.push(current);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Turnbull EM stopped after {iterations} iterations without converging");
    }
    // tail sums: exact zero after the last interval and no cancellation in
    // the upper tail
    let mut survivor = vec![0.0; mass.len()];
    for j in (0..mass.len().saturating_sub(1)).rev() {
        survivor[j] = survivor[j + 1] + mass[j + 1];
    }
    Ok(Turnbull {
        curve: StepFunction {
            intervals,
            survivor,
        },
        mass,
        loglik,
        iterations,
        converged,
    })
}

/// Row indices per level of a categorical column, in level order.
pub fn group_rows(ds: &Dataset, column: &str) -> Result<Vec<(String, Vec<usize>)>> {
    let idx = ds.column_index(column)?;
    let col = ds.column(column)?;
    if !col.is_categorical() {
        return Err(Error::Role {
            var: column.into(),
            message: "grouping variable must be categorical".into(),
        });
    }
    let mut groups: Vec<(String, Vec<usize>)> = col
        .levels()
        .iter()
        .map(|l| (l.clone(), Vec::new()))
        .collect();
    for (i, row) in ds.rows().iter().enumerate() {
        if let Value::Level(k) = row.values[idx] {
            groups[k as usize].1.push(i);
        }
    }
    groups.retain(|g| !g.1.is_empty());
    Ok(groups)
}
