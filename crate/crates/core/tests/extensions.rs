mod common;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use tramkit_core::data::{CompetingStatus, Dataset, EventTime, RawColumn};
use tramkit_core::estimate::{fit, FitOptions, FitStatus};
use tramkit_core::exec::Sequential;
use tramkit_core::extensions::{
    copula_term, fit_copula, fit_margins, gamma_frailty, marginalize_survivor, rho, CopulaDesign,
    CopulaModel,
};
use tramkit_core::formula::parse_formula;
use tramkit_core::likelihood::{Design, Noise};
use tramkit_core::model::{bind, BindOptions, EncodedRow, Extension};
use tramkit_core::special::norm_cdf;
use tramkit_core::transform::Link;

/// Event and dependent censoring times from a Gaussian copula with Weibull
/// margins, plus uniform administrative censoring.
fn copula_data(seed: u64, n: usize, xi: f64) -> Dataset {
    let mut r = common::rng(seed);
    let rh = rho(xi);
    let mut times = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut arm = Vec::with_capacity(n);
    for i in 0..n {
        let w = (i % 2) as f64;
        let x: f64 = StandardNormal.sample(&mut r);
        let e: f64 = StandardNormal.sample(&mut r);
        let y = rh * x + (1.0 - rh * rh).sqrt() * e;
        // F(t) = Phi(x) with cumulative hazard (t / scale)^shape exp(lp)
        let invert = |z: f64, shape: f64, scale: f64, lp: f64| {
            let cumhaz = -norm_cdf(-z).ln();
            scale * (cumhaz * (-lp).exp()).powf(1.0 / shape)
        };
        let t = invert(x, 1.3, 10.0, -0.3 * w);
        let c = invert(y, 0.9, 25.0, 0.2 * w);
        let a = 8.0 + 10.0 * r.random::<f64>();
        let (obs, st) = if t <= c && t <= a {
            (t, CompetingStatus::EventOfInterest)
        } else if c <= a {
            (c, CompetingStatus::DependentCensoring)
        } else {
            (a, CompetingStatus::AdministrativeCensoring)
        };
        times.push(
            if st == CompetingStatus::EventOfInterest {
                EventTime::exact(obs)
            } else {
                EventTime::right(obs)
            }
            .unwrap(),
        );
        status.push(st);
        arm.push(if w == 0.0 { "A" } else { "B" }.to_string());
    }
    Dataset::from_columns(times, vec![("arm".into(), RawColumn::Categorical(arm))])
        .unwrap()
        .with_status(status)
        .unwrap()
}

fn model(ds: &Dataset) -> CopulaModel {
    CopulaModel::bind(&parse_formula("y ~ arm").unwrap(), ds, 6).unwrap()
}

#[test]
fn independence_copula_factorizes() {
    for seed in [1, 2, 3] {
        let ds = copula_data(seed, 400, 0.0);
        let m = model(&ds);
        let (event, censoring) = fit_margins(&m, &ds, &FitOptions::default(), &Sequential).unwrap();
        let mut p = event.params.clone();
        p.extend(&censoring.params);
        p.push(0.0);
        let nll = CopulaDesign::new(&m, &ds)
            .unwrap()
            .nll(&p, &Sequential)
            .unwrap();
        assert!(
            (nll + event.loglik + censoring.loglik).abs() < 1e-6,
            "{nll} vs {}",
            -(event.loglik + censoring.loglik)
        );
    }
}

#[test]
fn copula_gradient_matches_finite_differences() {
    let ds = copula_data(4, 300, -0.8);
    let m = model(&ds);
    let d = CopulaDesign::new(&m, &ds).unwrap();
    let mut r = common::rng(5);
    for _ in 0..5 {
        let mut p = common::monotone(&mut r, 7, -3.0);
        p.push(r.random::<f64>() - 0.5);
        p.extend([
            -2.5 + 0.3 * r.random::<f64>(),
            0.8 + 0.4 * r.random::<f64>(),
            r.random::<f64>() - 0.5,
        ]);
        p.push(2.0 * r.random::<f64>() - 1.0);
        let mut g = vec![0.0; p.len()];
        d.nll_grad(&p, &Sequential, &mut g).unwrap();
        for i in 0..p.len() {
            let h = 1e-6 * p[i].abs().max(1.0);
            let mut up = p.clone();
            let mut dn = p.clone();
            up[i] += h;
            dn[i] -= h;
            let fd =
                (d.nll(&up, &Sequential).unwrap() - d.nll(&dn, &Sequential).unwrap()) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }
}

#[test]
fn administrative_branch_matches_monte_carlo() {
    // joint survival of the two margins at an administrative time, on the
    // normal-score scale: P(X > u, Y > v) with corr(X, Y) = rho
    let mut r = common::rng(6);
    let draws = 10_000_000;
    for &(ze, zc, xi) in &[(-0.4, -1.1, -0.9), (0.3, -0.2, 0.5)] {
        let term = copula_term(
            CompetingStatus::AdministrativeCensoring,
            (ze, 1.0),
            (zc, 1.0),
            rho(xi),
        )
        .unwrap();
        let u = -tramkit_core::special::norm_quantile(Link::MinExtremeValue.sf(ze));
        let v = -tramkit_core::special::norm_quantile(Link::MinExtremeValue.sf(zc));
        let rh = rho(xi);
        let s = (1.0 - rh * rh).sqrt();
        let mut hits = 0usize;
        for _ in 0..draws {
            let x: f64 = StandardNormal.sample(&mut r);
            let e: f64 = StandardNormal.sample(&mut r);
            hits += (x > u && rh * x + s * e > v) as usize;
        }
        let p = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            (term.ll.exp() - p).abs() < 3.0 * se,
            "{} vs {p} +/- {se}",
            term.ll.exp()
        );
    }
}

#[test]
fn copula_fit_recovers_independence() {
    // xi is only weakly identified through the margins, so a few replicates
    // wander far out; coverage is checked loosely
    let reps = 60;
    let mut covered = 0;
    for seed in 0..reps {
        let ds = copula_data(100 + seed, 1500, 0.0);
        let f = fit_copula(
            &parse_formula("y ~ arm").unwrap(),
            &ds,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(f.convergence.status, FitStatus::Converged, "seed {seed}");
        let (lo, hi) = f.wald_ci("xi", 0.95).unwrap();
        covered += (lo <= 0.0 && 0.0 <= hi) as usize;
    }
    assert!(covered >= 51, "{covered} of {reps}");
}

#[test]
fn copula_fit_detects_dependence() {
    let ds = copula_data(7, 3000, -1.5);
    let f = fit_copula(
        &parse_formula("y ~ arm").unwrap(),
        &ds,
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(f.convergence.status, FitStatus::Converged);
    let (xi, se) = (f.xi(), f.std_error("xi").unwrap());
    assert!((xi + 1.5).abs() < 3.0 * se, "{xi} +/- {se}");
    assert!((f.coef("T:armB").unwrap() + 0.3).abs() < 3.0 * f.std_error("T:armB").unwrap());
    // the Weibull margin reports the log-time orientation
    assert!((f.coef("C:armB").unwrap() + 0.2).abs() < 3.0 * f.std_error("C:armB").unwrap());
    assert!(f.kendall_tau() > 0.0);
    let ind = fit_copula(
        &parse_formula("y ~ arm").unwrap(),
        &ds,
        &FitOptions {
            fixed: vec![("xi".into(), 0.0)],
            ..Default::default()
        },
    )
    .unwrap();
    assert!(f.loglik > ind.loglik);
}

#[test]
fn copula_without_dependent_censoring_is_rejected() {
    let ds = copula_data(8, 200, 0.0);
    let status: Vec<CompetingStatus> = ds
        .rows()
        .iter()
        .map(|o| match o.status.unwrap() {
            CompetingStatus::DependentCensoring => CompetingStatus::AdministrativeCensoring,
            s => s,
        })
        .collect();
    let ds = ds.with_status(status).unwrap();
    assert!(fit_copula(
        &parse_formula("y ~ arm").unwrap(),
        &ds,
        &FitOptions::default()
    )
    .is_err());
    let plain = common::weibull_data(1, 20, 1.0, 1.0, 0.0, 3.0);
    assert!(CopulaModel::bind(&parse_formula("y ~ w").unwrap(), &plain, 6).is_err());
}

#[test]
fn frailty_reductions() {
    for z in [-4.0, -1.0, 0.0, 0.7, 2.5] {
        // unit variance gives the proportional-odds survivor
        let n = gamma_frailty(1.0).unwrap();
        assert!((n.sf(z) - 1.0 / (1.0 + f64::exp(z))).abs() < 1e-14);
        // tiny variance is the plain cloglog model
        let n = gamma_frailty(1e-8).unwrap();
        let mev = Noise::Link(Link::MinExtremeValue);
        assert!((n.log_sf(z) - mev.log_sf(z)).abs() < 1e-5);
        assert!((n.log_pdf(z) - mev.log_pdf(z)).abs() < 1e-5);
    }
}

#[test]
fn frailty_density_matches_survivor_derivative() {
    let ds = common::mixed(9, 200, false);
    let opts = BindOptions {
        extension: Some(Extension::GammaFrailty),
        log_first: true,
        ..Default::default()
    };
    let s = bind(&parse_formula("y ~ arm").unwrap(), &ds, &opts).unwrap();
    let mut r = common::rng(10);
    let mut p = common::monotone(&mut r, 7, -3.0);
    p.push(0.4);
    p.push(0.5f64.ln());
    let noise = tramkit_core::likelihood::noise(&s, &p);
    let enc = EncodedRow {
        shift: vec![1.0],
        ..Default::default()
    };
    let surv = |t: f64| noise.sf(tramkit_core::likelihood::trafo(&s, &p, &enc, t).unwrap().0);
    let mut prev = 1.0;
    for t in [0.5, 5.0, 20.0, 60.0, 120.0, 200.0] {
        let (z, zp) = tramkit_core::likelihood::trafo(&s, &p, &enc, t).unwrap();
        let dens = noise.log_pdf(z).exp() * zp;
        let h = 1e-5 * t;
        let fd = -(surv(t + h) - surv(t - h)) / (2.0 * h);
        assert!((dens - fd).abs() < 1e-6, "t={t}: {dens} vs {fd}");
        assert!(surv(t) <= prev);
        prev = surv(t);
    }
    assert!(surv(1e-6) > 0.99);
    assert!(surv(1e6) < 0.5 * surv(200.0));
}

#[test]
fn marginal_survivor_of_random_intercept_fit() {
    let ds = common::mixed(11, 300, false);
    let opts = BindOptions {
        extension: Some(Extension::RandomIntercept {
            group: "grp".into(),
        }),
        ..Default::default()
    };
    let s = bind(&parse_formula("y ~ arm").unwrap(), &ds, &opts).unwrap();
    let fm = fit(&s, &ds, &FitOptions::default()).unwrap();
    let enc = EncodedRow {
        shift: vec![1.0],
        ..Default::default()
    };
    let grid = [2.0, 10.0, 40.0, 100.0, 200.0];
    let cond = fm
        .predict(&enc, &grid, tramkit_core::estimate::Quantity::Survivor)
        .unwrap();

    let degenerate = fm.set_coef("log(tau2)", (1e-12f64).ln()).unwrap();
    let marg = marginalize_survivor(&degenerate, &enc, &grid).unwrap();
    for (a, b) in marg.iter().zip(&cond) {
        assert!((a - b).abs() < 1e-6);
    }

    let wide = fm.set_coef("log(tau2)", 0.8f64.ln()).unwrap();
    let marg = marginalize_survivor(&wide, &enc, &grid).unwrap();
    let noise = wide.noise();
    let tau = 0.8f64.sqrt();
    let mut r = common::rng(12);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut r);
            tau * x
        })
        .collect();
    for (i, &t) in grid.iter().enumerate() {
        let z = wide.trafo(&enc, t).unwrap().0;
        let (lo, hi) = (0..=16)
            .map(|k| noise.sf(z + (-4.0 + 0.5 * k as f64) * tau))
            .fold((1.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        assert!(lo <= marg[i] && marg[i] <= hi);
        let mc = draws.iter().map(|d| noise.sf(z + d)).sum::<f64>() / draws.len() as f64;
        assert!((marg[i] - mc).abs() < 1e-3, "t={t}: {} vs {mc}", marg[i]);
    }
    assert!(marginalize_survivor(
        &fit(&s.without_extension(), &ds, &FitOptions::default()).unwrap(),
        &enc,
        &grid
    )
    .is_err());
}

#[test]
fn random_intercept_degenerates_to_fixed_effects() {
    let ds = common::mixed(13, 300, true);
    let opts = BindOptions {
        extension: Some(Extension::RandomIntercept {
            group: "grp".into(),
        }),
        ..Default::default()
    };
    let s = bind(&parse_formula("y ~ arm + age").unwrap(), &ds, &opts).unwrap();
    let pinned = FitOptions {
        fixed: vec![("log(tau2)".into(), (1e-10f64).ln())],
        ..Default::default()
    };
    let ri = fit(&s, &ds, &pinned).unwrap();
    let fe = fit(&s.without_extension(), &ds, &FitOptions::default()).unwrap();
    assert!(
        (ri.loglik - fe.loglik).abs() < 1e-4,
        "{} vs {}",
        ri.loglik,
        fe.loglik
    );

    let free = fit(&s, &ds, &FitOptions::default()).unwrap();
    assert!(free.loglik >= fe.loglik - 1e-6);
    let design15 = Design::new(&s, &ds).unwrap().with_nodes(15);
    let design31 = Design::new(&s, &ds).unwrap().with_nodes(31);
    let a = design15.nll(&free.params, &Sequential).unwrap();
    let b = design31.nll(&free.params, &Sequential).unwrap();
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}
