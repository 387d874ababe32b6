mod common;

use rand::Rng;
use tramkit_core::data::{Dataset, EventTime, RawColumn};
use tramkit_core::estimate::{fit, FitOptions, Quantity};
use tramkit_core::exec::Sequential;
use tramkit_core::formula::parse_formula;
use tramkit_core::model::{bind, BaselineKind, BindOptions, Covariate, Extension, ModelSpec};
use tramkit_core::tree::{grow_tree, predict_tree, TreeControl, TreeNode};

/// Treatment effect `effect(age)` under a Weibull baseline, right-censored,
/// with an unrelated numeric `noise` column.
fn trial(seed: u64, n: usize, effect: impl Fn(f64) -> f64) -> Dataset {
    let mut r = common::rng(seed);
    let (mut times, mut trt, mut age, mut noise) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let a = (i % 2) as f64;
        let x = 30.0 + 60.0 * r.random::<f64>();
        let t = common::weibull(&mut r, 1.2, 10.0, effect(x) * a);
        let c = 30.0 * r.random::<f64>();
        times.push(
            if t <= c {
                EventTime::exact(t)
            } else {
                EventTime::right(c)
            }
            .unwrap(),
        );
        trt.push(a);
        age.push(x);
        noise.push(r.random::<f64>());
    }
    Dataset::from_columns(
        times,
        vec![
            ("trt".into(), RawColumn::Numeric(trt)),
            ("age".into(), RawColumn::Numeric(age)),
            ("noise".into(), RawColumn::Numeric(noise)),
        ],
    )
    .unwrap()
}

fn spec(ds: &Dataset) -> ModelSpec {
    bind(
        &parse_formula("y ~ trt").unwrap(),
        ds,
        &BindOptions {
            log_first: true,
            baseline: BaselineKind::Bernstein { order: 4 },
            ..Default::default()
        },
    )
    .unwrap()
}

fn grow(ds: &Dataset, vars: &[&str], control: &TreeControl) -> TreeNode {
    grow_tree(
        &spec(ds),
        ds,
        vars,
        control,
        &FitOptions::default(),
        &Sequential,
    )
    .unwrap()
}

fn planted(age: f64) -> f64 {
    if age < 60.0 {
        0.6
    } else {
        -0.6
    }
}

#[test]
fn noise_variable_rarely_splits() {
    let reps = 20;
    let roots = (0..reps)
        .filter(|&s| {
            grow(
                &trial(s, 400, |_| 0.5),
                &["noise"],
                &TreeControl {
                    seed: s,
                    ..Default::default()
                },
            )
            .is_leaf()
        })
        .count();
    assert!(roots >= 16, "{roots} of {reps}");
}

#[test]
fn planted_threshold_is_found() {
    let reps = 8;
    let mut hits = 0;
    for s in 0..reps {
        let tree = grow(
            &trial(100 + s, 1500, planted),
            &["age", "noise"],
            &TreeControl {
                seed: s,
                ..Default::default()
            },
        );
        let split = tree.split.as_ref().expect("root should split");
        hits += (split.variable == "age" && (split.threshold - 60.0).abs() <= 5.0) as usize;
    }
    assert!(hits >= 7, "{hits} of {reps}");
}

#[test]
fn tree_structure_is_consistent() {
    let ds = trial(7, 1200, planted);
    let tree = grow(
        &ds,
        &["age", "noise"],
        &TreeControl {
            minbucket: 100,
            ..Default::default()
        },
    );
    assert!(!tree.is_leaf());
    // leaves partition the rows and respect minbucket
    let mut rows: Vec<usize> = tree.leaves().iter().flat_map(|l| l.rows.clone()).collect();
    rows.sort_unstable();
    assert_eq!(rows, (0..ds.len()).collect::<Vec<_>>());
    assert!(tree.leaves().iter().all(|l| l.n() >= 100));
    // preorder ids
    fn ids(node: &TreeNode, out: &mut Vec<usize>) {
        out.push(node.id);
        node.children.iter().for_each(|c| ids(c, out));
    }
    let mut seen = vec![];
    ids(&tree, &mut seen);
    assert_eq!(seen, (0..tree.n_nodes()).collect::<Vec<_>>());
    // splitting never lowers the summed log-likelihood
    let root_ll = tree.model.as_ref().unwrap().loglik;
    let leaf_ll: f64 = tree
        .leaves()
        .iter()
        .map(|l| l.model.as_ref().unwrap().loglik)
        .sum();
    assert!(leaf_ll >= root_ll - 1e-6);
    let split = tree.split.as_ref().unwrap();
    assert!(split.gain >= 0.0);
    let test = tree.test.as_ref().unwrap();
    assert!(test.p_value <= 0.05 && test.statistic > 0.0);
}

#[test]
fn node_model_matches_a_direct_fit() {
    let ds = trial(8, 600, planted);
    let tree = grow(&ds, &["age"], &TreeControl::default());
    let direct = fit(&spec(&ds), &ds, &FitOptions::default()).unwrap();
    assert!((tree.model.as_ref().unwrap().loglik - direct.loglik).abs() < 1e-6);
}

#[test]
fn minbucket_of_half_n_or_more_keeps_the_root() {
    let ds = trial(9, 300, planted);
    let tree = grow(
        &ds,
        &["age"],
        &TreeControl {
            minbucket: 151,
            ..Default::default()
        },
    );
    assert!(tree.is_leaf() && tree.test.is_none());
    let tree = grow(
        &ds,
        &["age"],
        &TreeControl {
            max_depth: 0,
            ..Default::default()
        },
    );
    assert!(tree.is_leaf());
}

#[test]
fn routing_and_prediction() {
    let ds = trial(10, 1500, planted);
    let tree = grow(
        &ds,
        &["age"],
        &TreeControl {
            max_depth: 1,
            ..Default::default()
        },
    );
    let split = tree.split.clone().unwrap();
    let at = |age: f64| {
        move |v: &str| match v {
            "age" => Some(Covariate::Num(age)),
            "trt" => Some(Covariate::Num(1.0)),
            _ => None,
        }
    };
    let grid = [0.5, 2.0, 8.0, 20.0];
    let (left, s_left) = predict_tree(&tree, at(split.threshold), &grid).unwrap();
    let (right, _) = predict_tree(&tree, at(split.threshold + 1e-9), &grid).unwrap();
    assert_eq!(left, tree.children[0].id);
    assert_eq!(right, tree.children[1].id);
    assert!(
        s_left.windows(2).all(|w| w[1] <= w[0]) && s_left.iter().all(|s| (0.0..=1.0).contains(s))
    );
    // leaf prediction is the leaf model's
    let leaf = tree.children[0].model.as_ref().unwrap();
    let enc = leaf.spec.encode_with(at(40.0)).unwrap();
    let (_, s) = tree.predict(at(40.0), &grid, Quantity::Survivor).unwrap();
    assert_eq!(s, leaf.predict(&enc, &grid, Quantity::Survivor).unwrap());
    assert!(predict_tree(
        &tree,
        |v: &str| (v == "trt").then_some(Covariate::Num(1.0)),
        &grid
    )
    .is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let ds = common::mixed(3, 200, false);
    let s = bind(
        &parse_formula("y ~ age").unwrap(),
        &ds,
        &BindOptions::default(),
    )
    .unwrap();
    let run = |s: &ModelSpec, vars: &[&str], c: &TreeControl| {
        grow_tree(s, &ds, vars, c, &FitOptions::default(), &Sequential)
    };
    assert!(run(&s, &["arm"], &TreeControl::default()).is_err());
    assert!(run(&s, &["missing"], &TreeControl::default()).is_err());
    assert!(run(&s, &[], &TreeControl::default()).is_err());
    assert!(run(
        &s,
        &["age"],
        &TreeControl {
            minbucket: 0,
            ..Default::default()
        }
    )
    .is_err());
    let ri = bind(
        &parse_formula("y ~ age").unwrap(),
        &ds,
        &BindOptions {
            extension: Some(Extension::RandomIntercept {
                group: "grp".into(),
            }),
            ..Default::default()
        },
    );
    if let Ok(ri) = ri {
        assert!(run(&ri, &["age"], &TreeControl::default()).is_err());
    }
}

#[test]
fn growth_is_reproducible() {
    let ds = trial(11, 500, planted);
    let c = TreeControl {
        seed: 5,
        ..Default::default()
    };
    assert_eq!(
        grow(&ds, &["age", "noise"], &c),
        grow(&ds, &["age", "noise"], &c)
    );
}
