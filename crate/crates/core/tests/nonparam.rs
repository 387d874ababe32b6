mod common;

use proptest::prelude::*;
use rand::Rng;
use tramkit_core::data::EventTime;
use tramkit_core::nonparam::{group_rows, kaplan_meier, turnbull, TurnbullOptions};

fn right_censored(seed: u64, n: usize) -> Vec<EventTime> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|_| {
            // rounded times so ties between events and censorings occur
            let t = (common::weibull(&mut r, 1.2, 10.0, 0.0) * 4.0).ceil() / 4.0;
            let c = (r.random::<f64>() * 25.0 * 4.0).ceil() / 4.0;
            if t <= c {
                EventTime::exact(t)
            } else {
                EventTime::right(c)
            }
            .unwrap()
        })
        .collect()
}

fn interval_censored(seed: u64, n: usize) -> Vec<EventTime> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|_| {
            let t = common::weibull(&mut r, 1.5, 10.0, 0.0);
            let visit = 1.0 + 3.0 * r.random::<f64>();
            let k = (t / visit).floor();
            match r.random_range(0..6) {
                0 => EventTime::exact(t),
                1 if k > 0.0 => EventTime::left(k * visit),
                2 => EventTime::right(t.min(5.0 + 10.0 * r.random::<f64>())),
                _ if k > 0.0 => EventTime::interval(k * visit, (k + 1.0) * visit),
                _ => EventTime::left(visit),
            }
            .unwrap()
        })
        .collect()
}

#[test]
fn km_without_censoring_steps_by_one_over_n() {
    let times: Vec<EventTime> = [3.0, 1.0, 4.0, 1.5, 9.0]
        .iter()
        .map(|&t| EventTime::exact(t).unwrap())
        .collect();
    let km = kaplan_meier(&times).unwrap();
    let n = times.len() as f64;
    for (i, s) in km.curve.survivor.iter().enumerate() {
        assert!((s - (1.0 - (i + 1) as f64 / n)).abs() < 1e-15);
    }
    assert_eq!(km.times(), vec![1.0, 1.5, 3.0, 4.0, 9.0]);
}

#[test]
fn km_all_censored_stays_at_one() {
    let times: Vec<EventTime> = [3.0, 1.0, 4.0]
        .iter()
        .map(|&t| EventTime::right(t).unwrap())
        .collect();
    let km = kaplan_meier(&times).unwrap();
    assert!(km.curve.survivor.is_empty());
    for t in [0.5, 2.0, 10.0] {
        assert_eq!(km.eval(t), 1.0);
    }
}

#[test]
fn km_matches_hand_computation() {
    // 2, 3+, 3, 5, 7+, 8: risk sets 6, 5 (the censoring at 3 is still at
    // risk), 3, 1
    let times = vec![
        EventTime::exact(2.0).unwrap(),
        EventTime::right(3.0).unwrap(),
        EventTime::exact(3.0).unwrap(),
        EventTime::exact(5.0).unwrap(),
        EventTime::right(7.0).unwrap(),
        EventTime::exact(8.0).unwrap(),
    ];
    let km = kaplan_meier(&times).unwrap();
    let s1 = 5.0 / 6.0;
    let s2 = s1 * 4.0 / 5.0;
    let s3 = s2 * 2.0 / 3.0;
    let expected = [s1, s2, s3, 0.0];
    for (a, b) in km.curve.survivor.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(km.n_risk, vec![6, 5, 3, 1]);
    assert_eq!(km.n_event, vec![1, 1, 1, 1]);
    assert_eq!(km.at_risk(&[0.0, 3.0, 3.5, 8.0, 9.0]), vec![6, 5, 3, 1, 0]);
    assert!((km.eval(4.9) - s2).abs() < 1e-15);
    assert!((km.eval(5.0) - s3).abs() < 1e-15);
}

#[test]
fn km_rejects_interval_censoring() {
    let times = vec![
        EventTime::exact(2.0).unwrap(),
        EventTime::interval(1.0, 3.0).unwrap(),
    ];
    assert!(kaplan_meier(&times).is_err());
}

#[test]
fn turnbull_equals_km_on_right_censored_data() {
    for seed in 0..20 {
        let times = right_censored(seed, 150);
        let km = kaplan_meier(&times).unwrap();
        let tb = turnbull(&times, &TurnbullOptions::default()).unwrap();
        assert!(tb.converged);
        for &t in &km.times() {
            let s = tb.curve.eval(t).unwrap();
            assert!(
                (s - km.eval(t)).abs() < 1e-8,
                "seed {seed} t={t}: {s} vs {}",
                km.eval(t)
            );
        }
        for w in tb.loglik.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }
}

#[test]
fn single_window_takes_all_mass() {
    let tb = turnbull(
        &[EventTime::interval(2.0, 5.0).unwrap()],
        &TurnbullOptions::default(),
    )
    .unwrap();
    assert_eq!(tb.curve.intervals, vec![(2.0, 5.0)]);
    assert_eq!(tb.mass, vec![1.0]);
    assert_eq!(tb.curve.eval(1.0), Some(1.0));
    assert_eq!(tb.curve.eval(3.0), None);
    assert_eq!(tb.curve.eval(5.0), Some(0.0));
}

#[test]
fn disjoint_windows_split_mass_evenly() {
    let times = vec![
        EventTime::interval(1.0, 2.0).unwrap(),
        EventTime::interval(3.0, 4.0).unwrap(),
    ];
    let tb = turnbull(&times, &TurnbullOptions::default()).unwrap();
    assert_eq!(tb.mass.len(), 2);
    for p in &tb.mass {
        assert!((p - 0.5).abs() < 1e-15);
    }
    assert_eq!(tb.curve.eval(2.5), Some(0.5));
}

#[test]
fn turnbull_satisfies_self_consistency_conditions() {
    // NPMLE optimality: with d_j = sum_i a_ij / P_i, every interval has
    // d_j <= n and those carrying mass have d_j = n
    for seed in 0..10 {
        let times = interval_censored(100 + seed, 200);
        let opts = TurnbullOptions {
            tol: 1e-12,
            max_iter: 200_000,
        };
        let tb = turnbull(&times, &opts).unwrap();
        assert!((tb.mass.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let n = times.len() as f64;
        let covers = |t: &EventTime, (lo, hi): (f64, f64)| -> bool {
            match *t {
                EventTime::Exact(v) => lo == v && hi == v,
                _ => {
                    let (a, b) = t.window();
                    a <= lo && hi <= b && !(lo == a && hi == lo)
                }
            }
        };
        let prob: Vec<f64> = times
            .iter()
            .map(|t| {
                tb.curve
                    .intervals
                    .iter()
                    .zip(&tb.mass)
                    .filter(|(iv, _)| covers(t, **iv))
                    .map(|(_, p)| p)
                    .sum()
            })
            .collect();
        for (j, &iv) in tb.curve.intervals.iter().enumerate() {
            let d: f64 = times
                .iter()
                .zip(&prob)
                .filter(|(t, _)| covers(t, iv))
                .map(|(_, p)| 1.0 / p)
                .sum();
            assert!(d <= n * (1.0 + 1e-4), "seed {seed} interval {j}: {d}");
            if tb.mass[j] > 1e-4 {
                assert!((d / n - 1.0).abs() < 1e-4, "seed {seed} interval {j}: {d}");
            }
        }
    }
}

#[test]
fn turnbull_intervals_come_from_window_bounds() {
    let times = interval_censored(7, 80);
    let tb = turnbull(&times, &TurnbullOptions::default()).unwrap();
    let lefts: Vec<f64> = times.iter().map(|t| t.window().0).collect();
    let rights: Vec<f64> = times.iter().map(|t| t.window().1).collect();
    for &(lo, hi) in &tb.curve.intervals {
        assert!(lefts.contains(&lo) && rights.contains(&hi));
        assert!(lo <= hi);
        // no other bound strictly inside
        assert!(!lefts.iter().chain(&rights).any(|&b| lo < b && b < hi));
    }
}

#[test]
fn max_iter_is_flagged() {
    let times = interval_censored(3, 100);
    let tb = turnbull(
        &times,
        &TurnbullOptions {
            tol: 1e-14,
            max_iter: 3,
        },
    )
    .unwrap();
    assert!(!tb.converged);
    assert_eq!(tb.iterations, 3);
    assert_eq!(tb.loglik.len(), 4);
}

#[test]
fn groups_follow_level_order() {
    let ds = common::mixed(1, 30, false);
    let groups = group_rows(&ds, "arm").unwrap();
    assert_eq!(
        groups.iter().map(|g| g.0.as_str()).collect::<Vec<_>>(),
        vec!["A", "B"]
    );
    assert_eq!(groups[0].1.len() + groups[1].1.len(), 30);
    assert!(group_rows(&ds, "age").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn turnbull_is_a_proper_monotone_estimate(seed in 0u64..10_000, n in 1usize..60) {
        let times = interval_censored(seed, n);
        let tb = turnbull(&times, &TurnbullOptions::default()).unwrap();
        prop_assert!((tb.mass.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(tb.mass.iter().all(|&p| p >= 0.0));
        for w in tb.curve.survivor.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for w in tb.loglik.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs());
        }
    }

    #[test]
    fn km_is_nonincreasing_and_starts_at_one(seed in 0u64..10_000, n in 1usize..80) {
        let times = right_censored(seed, n);
        let km = kaplan_meier(&times).unwrap();
        let mut prev = 1.0;
        for &s in &km.curve.survivor {
            prop_assert!(s <= prev && s >= 0.0);
            prev = s;
        }
        prop_assert_eq!(km.eval(0.0), 1.0);
    }
}
