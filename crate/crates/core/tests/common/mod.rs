#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tramkit_core::data::{Dataset, EventTime, RawColumn, Truncation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weibull draw with cumulative hazard `(t / scale)^shape * exp(lp)`.
pub fn weibull(rng: &mut ChaCha8Rng, shape: f64, scale: f64, lp: f64) -> f64 {
    let e: f64 = -(1.0 - rng.random::<f64>()).ln();
    scale * (e * (-lp).exp()).powf(1.0 / shape)
}

/// Rows with every censoring kind, a binary arm, a numeric age, three
/// strata, ten clusters and a share of left-truncated rows.
pub fn mixed(seed: u64, n: usize, truncate: bool) -> Dataset {
    let mut r = rng(seed);
    let mut times = Vec::with_capacity(n);
    let mut trunc = Vec::with_capacity(n);
    let (mut arm, mut age, mut strat, mut grp) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let a = i % 2;
        let x = r.random::<f64>() * 2.0 - 1.0;
        let t = weibull(&mut r, 1.3, 100.0, 0.4 * a as f64 + 0.3 * x);
        let c = 40.0 + 200.0 * r.random::<f64>();
        let time = match i % 5 {
            0 | 1 => {
                if t <= c {
                    EventTime::exact(t)
                } else {
                    EventTime::right(c)
                }
            }
            2 => EventTime::right(t.min(c)),
            3 => EventTime::interval(0.7 * t, 1.2 * t + 1.0),
            _ => EventTime::left(t + 5.0),
        }
        .unwrap();
        let tr = if truncate && i % 4 == 0 {
            let lower = match time {
                EventTime::Exact(v) | EventTime::RightCensored(v) => v,
                EventTime::Interval(lo, _) => lo,
                EventTime::LeftCensored(_) => 0.0,
            };
            (lower > 0.0).then(|| Truncation::new(0.5 * lower, f64::INFINITY).unwrap())
        } else {
            None
        };
        times.push(time);
        trunc.push(tr);
        arm.push(if a == 0 { "A" } else { "B" }.to_string());
        age.push(x);
        strat.push(["s1", "s2", "s3"][i % 3].to_string());
        grp.push(format!("g{}", (i / 3) % 10));
    }
    Dataset::from_columns(
        times,
        vec![
            ("arm".into(), RawColumn::Categorical(arm)),
            ("age".into(), RawColumn::Numeric(age)),
            ("strat".into(), RawColumn::Categorical(strat)),
            ("grp".into(), RawColumn::Categorical(grp)),
        ],
    )
    .unwrap()
    .with_truncation(trunc)
    .unwrap()
}

/// Single-covariate right-censored Weibull data with numeric 0/1 `w`.
pub fn weibull_data(
    seed: u64,
    n: usize,
    shape: f64,
    scale: f64,
    beta: f64,
    cens_scale: f64,
) -> Dataset {
    let mut r = rng(seed);
    let mut times = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let x = (i % 2) as f64;
        let t = weibull(&mut r, shape, scale, beta * x);
        let c = cens_scale * -(1.0 - r.random::<f64>()).ln();
        times.push(
            if t <= c {
                EventTime::exact(t)
            } else {
                EventTime::right(c)
            }
            .unwrap(),
        );
        w.push(x);
    }
    Dataset::from_columns(times, vec![("w".into(), RawColumn::Numeric(w))]).unwrap()
}

/// Nondecreasing coefficient vector of length `p`.
pub fn monotone(rng: &mut ChaCha8Rng, p: usize, start: f64) -> Vec<f64> {
    let mut v = vec![start];
    for _ in 1..p {
        let last = *v.last().unwrap();
        v.push(last + 0.2 + 0.8 * rng.random::<f64>());
    }
    v
}
